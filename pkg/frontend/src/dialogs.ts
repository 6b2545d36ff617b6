// Modal property dialogs. A dialog validates on submit; a non-null reason is
// shown inline and nothing is sent anywhere.

export interface FieldSpec {
  key: string;
  label: string;
  kind: "text" | "number" | "select" | "color";
  options?: string[];
  value?: string;
}

export function showDialog(
  title: string,
  fields: FieldSpec[],
  validate: (values: Record<string, string>) => string | null,
  onSubmit: (values: Record<string, string>) => Promise<void> | void,
): HTMLElement {
  const overlay = document.createElement("div");
  overlay.className = "dialog-overlay";
  const box = document.createElement("div");
  box.className = "dialog";
  const heading = document.createElement("h3");
  heading.textContent = title;
  box.appendChild(heading);

  const inputs = new Map<string, HTMLInputElement | HTMLSelectElement>();
  for (const field of fields) {
    const row = document.createElement("label");
    row.className = "dialog-row";
    const span = document.createElement("span");
    span.textContent = field.label;
    row.appendChild(span);
    let input: HTMLInputElement | HTMLSelectElement;
    if (field.kind === "select") {
      input = document.createElement("select");
      for (const option of field.options ?? []) {
        const el = document.createElement("option");
        el.value = option;
        el.textContent = option;
        input.appendChild(el);
      }
      if (field.value) input.value = field.value;
    } else {
      input = document.createElement("input");
      input.type = field.kind === "color" ? "color" : field.kind;
      input.value = field.value ?? (field.kind === "color" ? "#e6194b" : "");
    }
    inputs.set(field.key, input);
    row.appendChild(input);
    box.appendChild(row);
  }

  const error = document.createElement("div");
  error.className = "dialog-error";
  box.appendChild(error);

  const buttons = document.createElement("div");
  buttons.className = "dialog-buttons";
  const save = document.createElement("button");
  save.textContent = "Save";
  const cancel = document.createElement("button");
  cancel.textContent = "Cancel";
  buttons.append(save, cancel);
  box.appendChild(buttons);
  overlay.appendChild(box);
  document.body.appendChild(overlay);

  const close = () => overlay.remove();
  cancel.addEventListener("click", close);
  save.addEventListener("click", async () => {
    const values: Record<string, string> = {};
    for (const [key, input] of inputs) values[key] = input.value;
    const reason = validate(values);
    if (reason) {
      error.textContent = reason;
      return;
    }
    try {
      await onSubmit(values);
      close();
    } catch (e) {
      error.textContent = e instanceof Error ? e.message : String(e);
    }
  });
  return overlay;
}

export interface MenuItem {
  label: string;
  enabled?: boolean;
  action: () => void;
}

export function showContextMenu(x: number, y: number, items: MenuItem[]): void {
  document.querySelectorAll(".context-menu").forEach((el) => el.remove());
  const menu = document.createElement("div");
  menu.className = "context-menu";
  menu.style.left = `${x}px`;
  menu.style.top = `${y}px`;
  for (const item of items) {
    const row = document.createElement("div");
    row.className = "context-menu-item" + (item.enabled === false ? " disabled" : "");
    row.textContent = item.label;
    if (item.enabled !== false) {
      row.addEventListener("click", () => {
        menu.remove();
        item.action();
      });
    }
    menu.appendChild(row);
  }
  document.body.appendChild(menu);
  const dismiss = (e: MouseEvent) => {
    if (!menu.contains(e.target as Node)) {
      menu.remove();
      document.removeEventListener("mousedown", dismiss);
    }
  };
  setTimeout(() => document.addEventListener("mousedown", dismiss), 0);
}

export function toast(message: string, level: "info" | "error" = "info"): void {
  const el = document.createElement("div");
  el.className = `toast toast-${level}`;
  el.textContent = message;
  document.body.appendChild(el);
  setTimeout(() => el.remove(), 4000);
}
