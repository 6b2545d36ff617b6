// Operator view: context-menu driven lifecycle actions against the live
// network, a status-colored node list, the tier canvas, and the log console.
// Enabled only once the loaded graph validates.

import { GraphCanvas } from "./canvas.js";
import { showContextMenu, showDialog, toast } from "./dialogs.js";
import { findTier, registryTiersFor } from "./graphdoc.js";
import type { GraphStore } from "./state.js";
import type { LogConsole } from "./events.js";
import type { EventRecord } from "./types.js";

export function mountOperator(root: HTMLElement, store: GraphStore, logs: LogConsole): void {
  root.innerHTML = `
    <div class="operator-layout">
      <aside class="side-panel">
        <section>
          <header><h3>Manager</h3></header>
          <div id="gmt-status" class="gmt-status">not running</div>
          <div class="file-buttons"><button id="execute-plan">Execute bootstrap plan</button></div>
        </section>
        <section>
          <header><h3>Nodes</h3></header>
          <ul id="operator-nodes" class="entity-list"></ul>
        </section>
        <section>
          <header><h3>Stores</h3></header>
          <ul id="operator-dsts" class="entity-list"></ul>
        </section>
        <section>
          <header><h3>Evaluations</h3></header>
          <ul id="operator-evals" class="entity-list"></ul>
        </section>
      </aside>
      <div class="canvas-wrap">
        <p class="hint" id="operator-hint">right-click tiers for allocation and evaluation actions</p>
        <canvas id="operator-canvas" width="860" height="430"></canvas>
        <div class="log-console">
          <div id="log-tabs" class="log-tabs"></div>
          <pre id="log-pane" class="log-pane"></pre>
        </div>
      </div>
    </div>`;

  const canvas = new GraphCanvas(
    root.querySelector<HTMLCanvasElement>("#operator-canvas")!,
    store,
    {
      onTierContextMenu: (tier, x, y) => tierMenu(store, tier, x, y),
    },
    false,
  );
  canvas.render();

  let activeTab: string | null = null;
  const tabsEl = root.querySelector<HTMLElement>("#log-tabs")!;
  const paneEl = root.querySelector<HTMLElement>("#log-pane")!;

  const renderPane = () => {
    if (activeTab === null) return;
    const lines = logs
      .eventsFor(activeTab)
      .map((e) => `#${e.seq} [${e.level}] ${e.message}`);
    paneEl.textContent = lines.join("\n");
    paneEl.scrollTop = paneEl.scrollHeight;
  };
  const renderTabs = () => {
    tabsEl.innerHTML = "";
    for (const source of logs.sources()) {
      const tab = document.createElement("button");
      tab.className = "log-tab" + (source === activeTab ? " active" : "");
      tab.textContent = source;
      tab.addEventListener("click", () => {
        activeTab = source;
        renderTabs();
        renderPane();
      });
      tabsEl.appendChild(tab);
    }
  };
  logs.onNewPane = (source) => {
    if (activeTab === null) activeTab = source;
    renderTabs();
  };
  logs.onEvent = (pane: { source: string }, _event: EventRecord) => {
    if (pane.source === activeTab) renderPane();
  };
  renderTabs();
  renderPane();

  root.querySelector("#execute-plan")!.addEventListener("click", async () => {
    if (!store.valid) {
      toast("load a valid graph first", "error");
      return;
    }
    try {
      const result = await store.api.executePlan();
      if (result.ok) toast("bootstrap plan completed");
      else toast(`plan stopped at step ${result.stopped_at}`, "error");
    } catch (e) {
      toast(String(e), "error");
    }
    await store.refreshStatus();
  });

  store.subscribe(() => renderStatusPanels(root, store));
  renderStatusPanels(root, store);
}

function renderStatusPanels(root: HTMLElement, store: GraphStore): void {
  const hint = root.querySelector<HTMLElement>("#operator-hint");
  if (hint) {
    hint.textContent = store.valid
      ? "right-click tiers for allocation and evaluation actions"
      : "operator actions are enabled once a valid graph is loaded";
  }
  const gmt = root.querySelector<HTMLElement>("#gmt-status");
  const status = store.status;
  if (gmt) {
    gmt.textContent = status?.gmt.running
      ? `running on ${status.gmt.endpoint ?? "?"}`
      : "not running";
    gmt.className = "gmt-status" + (status?.gmt.running ? " up" : "");
  }

  const nodesEl = root.querySelector<HTMLElement>("#operator-nodes");
  if (nodesEl) {
    nodesEl.innerHTML = "";
    const registryNodes = status?.registry?.nodes ?? {};
    const registered = new Map(
      Object.values(registryNodes).map((n) => [n.name, n] as const),
    );
    for (const node of store.graph?.nodes ?? []) {
      const li = document.createElement("li");
      const record = registered.get(node.name);
      const running = status?.nodes?.[node.name]?.running ?? false;
      const swatch = document.createElement("span");
      swatch.className = "swatch";
      swatch.style.background = store.visuals?.node_colors[node.name] ?? "#ccc";
      const state = record
        ? record.status === "registered"
          ? `#${record.node_id} registered`
          : `#${record.node_id} lost`
        : running
          ? "starting"
          : "stopped";
      li.append(swatch, ` ${node.name} — ${state}`);
      li.addEventListener("contextmenu", (e) => {
        e.preventDefault();
        nodeMenu(store, node.name, e.clientX, e.clientY);
      });
      nodesEl.appendChild(li);
    }
  }

  const dstsEl = root.querySelector<HTMLElement>("#operator-dsts");
  if (dstsEl) {
    dstsEl.innerHTML = "";
    for (const dst of status?.dsts ?? []) {
      const li = document.createElement("li");
      const stats = dst.stats;
      const counts = stats
        ? ` p${sum(stats.counts["pending"])} w${sum(stats.counts["processing"])} c${sum(stats.counts["computed"])}`
        : " (unreachable)";
      li.textContent = `[${dst.index}] ${dst.endpoint}${counts}`;
      dstsEl.appendChild(li);
    }
  }

  const evalsEl = root.querySelector<HTMLElement>("#operator-evals");
  if (evalsEl) {
    evalsEl.innerHTML = "";
    for (const evaluation of Object.values(status?.registry?.evaluations ?? {})) {
      const li = document.createElement("li");
      const report = evaluation.report as { computed?: number; requested?: number } | null;
      li.textContent = `${evaluation.generator}: ${evaluation.status}${
        report ? ` (${report.computed}/${report.requested})` : ""
      }${evaluation.error ? ` — ${evaluation.error}` : ""}`;
      evalsEl.appendChild(li);
    }
  }
}

function sum(kinds: Record<string, number> | undefined): number {
  return kinds ? Object.values(kinds).reduce((a, b) => a + b, 0) : 0;
}

function nodeMenu(store: GraphStore, name: string, x: number, y: number): void {
  const enabled = store.valid;
  const guard = (fn: () => Promise<unknown>) => () => {
    fn()
      .then(() => store.refreshStatus())
      .catch((e) => toast(String(e), "error"));
  };
  showContextMenu(x, y, [
    { label: "Start Node", enabled, action: guard(() => store.api.startNode(name)) },
    { label: "Register", enabled, action: guard(() => store.api.registerNode(name)) },
    { label: "Stop Node", enabled, action: guard(() => store.api.stopNode(name)) },
  ]);
}

function tierMenu(store: GraphStore, tierName: string, x: number, y: number): void {
  const doc = store.graph;
  const tier = doc ? findTier(doc, tierName) : undefined;
  if (!doc || !tier) return;
  const enabled = store.valid;
  const registry = store.status?.registry;
  const nodeIds: Record<string, number> = {};
  for (const record of Object.values(registry?.nodes ?? {})) nodeIds[record.name] = record.node_id;
  const liveIds = registry
    ? registryTiersFor(tier, registry.tiers as never, nodeIds)
    : [];
  const nodeId = nodeIds[tier.node];
  const guard = (fn: () => Promise<unknown>) => () => {
    fn()
      .then(() => store.refreshStatus())
      .catch((e) => toast(String(e), "error"));
  };
  const items = [
    {
      label: `Allocate (${tier.count} on ${tier.node})`,
      enabled: enabled && nodeId !== undefined && tier.type !== "GMT",
      action: guard(() => allocateFromGraph(store, tierName)),
    },
    {
      label: "Deallocate",
      enabled: enabled && liveIds.length > 0,
      action: guard(() =>
        store.api.deallocate({ node_id: nodeId, tier_type: tier.type, tier_ids: liveIds }),
      ),
    },
  ];
  if (tier.type === "DGT") {
    items.push(
      {
        label: "Start Evaluation",
        enabled: enabled && liveIds.length > 0,
        action: guard(() => store.api.startEval(liveIds[0])),
      },
      {
        label: "Step Generator",
        enabled: enabled && liveIds.length > 0,
        action: () =>
          showDialog(
            "Step Generator",
            [{ key: "count", label: "Steps", kind: "number", value: "1" }],
            (v) => (Number(v.count) >= 1 ? null : "steps must be >= 1"),
            (v) => store.api.stepGenerator(liveIds[0], Number(v.count)).then(() => undefined),
          ),
      },
    );
  }
  showContextMenu(x, y, items);
}

async function allocateFromGraph(store: GraphStore, tierName: string): Promise<unknown> {
  const doc = store.graph!;
  const tier = findTier(doc, tierName)!;
  const registry = store.status?.registry;
  if (!registry) throw new Error("no live registry; start the manager first");
  const nodeRecord = Object.values(registry.nodes).find((n) => n.name === tier.node);
  if (!nodeRecord) throw new Error(`node ${tier.node} is not registered`);
  let dstIndex: number | null = null;
  if (tier.type !== "DST") {
    // resolve the store this tier connects to, mirroring plan translation
    const connected = doc.connections
      .map((c) => (c.from === tierName ? c.to : c.to === tierName ? c.from : null))
      .filter((n): n is string => n !== null)
      .map((n) => findTier(doc, n))
      .filter((t) => t?.type === "DST");
    if (!connected.length) throw new Error(`${tierName} has no store connection`);
    const storeTier = connected[0]!;
    const match = Object.values(registry.tiers).find(
      (r) => r.tier_type === "DST" && r.config_name === storeTier.config && r.endpoint,
    );
    if (!match?.endpoint) throw new Error(`allocate the store ${storeTier.name} first`);
    const index = registry.dsts.indexOf(match.endpoint);
    if (index < 0) throw new Error(`store ${match.endpoint} is not indexed yet`);
    dstIndex = index;
  }
  return store.api.allocate({
    node_id: nodeRecord.node_id,
    tier_type: tier.type,
    config: tier.config,
    dst_index: dstIndex,
    count: tier.count,
  });
}
