// Network graph editor view: instance and node lists with add/edit dialogs,
// double-click-to-add tiers on the canvas, drag-to-connect, save/load.

import { GraphCanvas } from "./canvas.js";
import { showContextMenu, showDialog, toast } from "./dialogs.js";
import {
  addConnection,
  addInstance,
  addNode,
  addTier,
  checkInstanceName,
  checkNode,
  checkTier,
  findTier,
  removeConnection,
  removeTier,
  updateNode,
  updateTier,
} from "./graphdoc.js";
import type { GraphStore } from "./state.js";
import type { GraphDoc, TierDoc, TierType } from "./types.js";

const TIER_TYPES: TierType[] = ["DST", "DGT", "DWT", "GMT"];

export function mountEditor(root: HTMLElement, store: GraphStore): void {
  root.innerHTML = `
    <div class="editor-layout">
      <aside class="side-panel">
        <section>
          <header><h3>Instances</h3><button id="add-instance">Add</button></header>
          <ul id="instance-list" class="entity-list"></ul>
        </section>
        <section>
          <header><h3>Nodes</h3><button id="add-node">Add</button></header>
          <ul id="node-list" class="entity-list"></ul>
        </section>
        <section>
          <header><h3>Graph file</h3></header>
          <div class="file-buttons">
            <button id="save-graph">Save</button>
            <label class="load-label">Load<input id="load-graph" type="file" hidden></label>
          </div>
        </section>
        <section>
          <header><h3>Findings</h3></header>
          <ul id="finding-list" class="finding-list"></ul>
        </section>
      </aside>
      <div class="canvas-wrap">
        <p class="hint">double-click the canvas to add a tier; drag between tiers to connect</p>
        <canvas id="editor-canvas" width="860" height="560"></canvas>
      </div>
    </div>`;

  const canvas = root.querySelector<HTMLCanvasElement>("#editor-canvas")!;
  const graphCanvas = new GraphCanvas(
    canvas,
    store,
    {
      onAddTier: () => tierDialog(store),
      onTierDoubleClick: (name) => tierDialog(store, name),
      onTierContextMenu: (name, x, y) =>
        showContextMenu(x, y, [
          { label: "Edit Tier Properties", action: () => tierDialog(store, name) },
          {
            label: "Disconnect All",
            action: () =>
              store
                .edit((doc) => {
                  let out = doc;
                  for (const conn of doc.connections) {
                    if (conn.from === name || conn.to === name)
                      out = removeConnection(out, conn.from, conn.to);
                  }
                  return out;
                })
                .catch((e) => toast(String(e), "error")),
          },
          {
            label: "Remove Tier",
            action: () =>
              store.edit((doc) => removeTier(doc, name)).catch((e) => toast(String(e), "error")),
          },
        ]),
      onConnect: (from, to) =>
        store.edit((doc) => addConnection(doc, from, to)).catch((e) => toast(String(e), "error")),
    },
    true,
  );

  store.subscribe(() => renderLists(root, store));
  renderLists(root, store);
  graphCanvas.render();

  root.querySelector("#add-instance")!.addEventListener("click", () =>
    showDialog(
      "Create Instance",
      [{ key: "name", label: "Name", kind: "text" }],
      (v) => (store.graph ? checkInstanceName(store.graph, v.name) : v.name ? null : "name required"),
      (v) => store.edit((doc) => addInstance(doc, v.name)),
    ),
  );

  root.querySelector("#add-node")!.addEventListener("click", () => nodeDialog(store));

  root.querySelector("#save-graph")!.addEventListener("click", async () => {
    try {
      const text = await store.saveText();
      const blob = new Blob([text], { type: "text/plain" });
      const anchor = document.createElement("a");
      anchor.href = URL.createObjectURL(blob);
      anchor.download = "network.graph";
      anchor.click();
      URL.revokeObjectURL(anchor.href);
      toast("graph saved");
    } catch (e) {
      toast(String(e), "error");
    }
  });

  const fileInput = root.querySelector<HTMLInputElement>("#load-graph")!;
  fileInput.addEventListener("change", async () => {
    const file = fileInput.files?.[0];
    if (!file) return;
    try {
      await store.loadText(await file.text());
      toast(`loaded ${file.name}`);
    } catch (e) {
      toast(String(e), "error");
    } finally {
      fileInput.value = "";
    }
  });
}

function renderLists(root: HTMLElement, store: GraphStore): void {
  const instances = root.querySelector("#instance-list");
  const nodes = root.querySelector("#node-list");
  const findings = root.querySelector("#finding-list");
  if (!instances || !nodes || !findings) return;
  instances.innerHTML = "";
  nodes.innerHTML = "";
  findings.innerHTML = "";
  const doc = store.graph;
  if (!doc) return;
  for (const instance of doc.instances) {
    const li = document.createElement("li");
    li.textContent = instance.name;
    li.title = "double-click to edit";
    li.addEventListener("dblclick", () =>
      showDialog(
        "Edit Instance",
        [{ key: "name", label: "Name", kind: "text", value: instance.name }],
        (v) => (v.name === instance.name ? null : checkInstanceName(doc, v.name)),
        (v) =>
          store.edit((g) => {
            const out = structuredClone(g);
            const target = out.instances.find((i) => i.name === instance.name);
            if (target) target.name = v.name;
            for (const tier of out.tiers) if (tier.instance === instance.name) tier.instance = v.name;
            return out;
          }),
      ),
    );
    instances.appendChild(li);
  }
  for (const node of doc.nodes) {
    const li = document.createElement("li");
    const swatch = document.createElement("span");
    swatch.className = "swatch";
    swatch.style.background = store.visuals?.node_colors[node.name] ?? node.color ?? "#ccc";
    li.append(swatch, ` ${node.name} (${node.host})`);
    li.addEventListener("dblclick", () => nodeDialog(store, node.name));
    nodes.appendChild(li);
  }
  for (const finding of store.findings) {
    const li = document.createElement("li");
    li.className = `finding-${finding.severity}`;
    li.textContent = `${finding.entity ?? finding.key ?? ""}: ${finding.reason}`;
    findings.appendChild(li);
  }
}

function nodeDialog(store: GraphStore, editing?: string): void {
  const existing = editing && store.graph ? store.graph.nodes.find((n) => n.name === editing) : null;
  showDialog(
    editing ? "Edit Node" : "Create New Node",
    [
      { key: "name", label: "Name", kind: "text", value: existing?.name },
      { key: "host", label: "IP address", kind: "text", value: existing?.host ?? "127.0.0.1" },
      { key: "color", label: "Color", kind: "color", value: existing?.color || "#e6194b" },
    ],
    (v) =>
      store.graph
        ? checkNode(store.graph, { name: v.name, host: v.host, color: v.color }, editing)
        : v.name
          ? null
          : "name required",
    (v) =>
      store.edit((doc) =>
        editing
          ? updateNode(doc, editing, { name: v.name, host: v.host, color: v.color })
          : addNode(doc, { name: v.name, host: v.host, color: v.color }),
      ),
  );
}

function tierDialog(store: GraphStore, editing?: string): void {
  const doc = store.graph;
  if (!doc) {
    toast("load or create a graph first", "error");
    return;
  }
  if (!doc.instances.length || !doc.nodes.length) {
    toast("add an instance and a node before adding tiers", "error");
    return;
  }
  const existing = editing ? findTier(doc, editing) : undefined;
  showDialog(
    editing ? "Edit Tier Properties" : "Create Tier",
    [
      { key: "name", label: "Tier name", kind: "text", value: existing?.name },
      { key: "type", label: "Tier type", kind: "select", options: TIER_TYPES, value: existing?.type },
      {
        key: "instance",
        label: "Instance",
        kind: "select",
        options: doc.instances.map((i) => i.name),
        value: existing?.instance,
      },
      {
        key: "node",
        label: "Node",
        kind: "select",
        options: doc.nodes.map((n) => n.name),
        value: existing?.node,
      },
      { key: "config", label: "Config file", kind: "text", value: existing?.config },
      { key: "count", label: "Instances to create", kind: "number", value: String(existing?.count ?? 1) },
    ],
    (v) => checkTier(doc, toTier(v), editing),
    (v) =>
      store.edit((g) => (editing ? updateTier(g, editing, toTier(v)) : addTier(g, toTier(v)))),
  );
}

function toTier(v: Record<string, string>): TierDoc {
  return {
    name: v.name,
    type: v.type as TierType,
    instance: v.instance,
    node: v.node,
    config: v.config,
    count: Number(v.count),
  };
}

export type { GraphDoc };
