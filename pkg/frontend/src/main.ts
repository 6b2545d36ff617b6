// Application shell: tabbed editor/operator views over one graph store, one
// event-stream subscription, and a shared log console.

import { ApiClient } from "./api.js";
import { mountEditor } from "./editor.js";
import { EventStream, LogConsole } from "./events.js";
import type { EventSourceLike } from "./events.js";
import { mountOperator } from "./operator.js";
import { GraphStore } from "./state.js";

function main(): void {
  const api = new ApiClient("");
  const store = new GraphStore(api);
  const logs = new LogConsole();
  // MessageEvent carries .data, so the browser EventSource satisfies the
  // minimal interface structurally
  const stream = new EventStream(
    (url) => new EventSource(url) as unknown as EventSourceLike,
    "",
  );

  const editorRoot = document.getElementById("editor-view")!;
  const operatorRoot = document.getElementById("operator-view")!;
  mountEditor(editorRoot, store);
  mountOperator(operatorRoot, store, logs);

  const tabs = document.querySelectorAll<HTMLButtonElement>(".app-tab");
  tabs.forEach((tab) =>
    tab.addEventListener("click", () => {
      tabs.forEach((t) => t.classList.toggle("active", t === tab));
      editorRoot.hidden = tab.dataset.view !== "editor";
      operatorRoot.hidden = tab.dataset.view !== "operator";
    }),
  );

  stream.start((event) => logs.push(event));
  store.refresh().catch(() => undefined);
  store.refreshStatus().catch(() => undefined);
  setInterval(() => {
    store.refreshStatus().catch(() => undefined);
  }, 1500);
}

main();
