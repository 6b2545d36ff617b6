// Scripted walkthrough of the operator manual against the API contract
// double: build a network in the editor (instance, node, four tiers, three
// connections), save and reload it, then drive the operator actions (start
// node, allocate a store, deallocate it). After every step the rendered
// state must equal the server's snapshot, and the log console must receive
// the matching events in order.

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { LogConsole } from "../src/events.js";
import {
  addConnection,
  addInstance,
  addNode,
  addTier,
} from "../src/graphdoc.js";
import { GraphStore } from "../src/state.js";
import { FakeBackend } from "./fakeserver.js";
import type { EventRecord } from "../src/types.js";

describe("operator manual walkthrough", () => {
  let backend: FakeBackend;
  let client: ApiClient;
  let store: GraphStore;
  let logs: LogConsole;
  let pumpedSeq: number;

  beforeEach(() => {
    backend = new FakeBackend();
    client = new ApiClient("", backend.fetch);
    store = new GraphStore(client);
    logs = new LogConsole();
    pumpedSeq = 0;
  });

  /** Poll the events endpoint (as the console does) into the log panes. */
  async function pumpEvents(): Promise<EventRecord[]> {
    const events = await client.eventsAfter(pumpedSeq);
    for (const event of events) {
      logs.push(event);
      pumpedSeq = event.seq;
    }
    return events;
  }

  function expectRenderedStateMatchesServer(): void {
    // the client never invents entities: its state is the server's, verbatim
    expect(store.graph).toEqual(backend.graph);
    if (store.graph) {
      expect(store.visuals?.node_colors).toBeTruthy();
      for (const tier of store.graph.tiers) {
        expect(store.visuals!.tier_colors[tier.name]).toBe(
          store.visuals!.node_colors[tier.node],
        );
      }
    }
  }

  it("editor build, save/load, then operator actions", async () => {
    // I. create a new instance
    await store.edit((doc) => addInstance(doc, "i1"));
    expectRenderedStateMatchesServer();

    // II. create a node with name/address/color
    await store.edit((doc) => addNode(doc, { name: "node1", host: "127.0.0.1", color: "#3cb44b" }));
    expectRenderedStateMatchesServer();
    expect(store.visuals!.node_colors["node1"]).toBe("#3cb44b");

    // III. add four tiers (double-click gestures end in the same edit call)
    await store.edit((doc) =>
      addTier(doc, { name: "gmt1", type: "GMT", instance: "i1", node: "node1", config: "gmt.config", count: 1 }),
    );
    await store.edit((doc) =>
      addTier(doc, { name: "dst1", type: "DST", instance: "i1", node: "node1", config: "dst.config", count: 1 }),
    );
    await store.edit((doc) =>
      addTier(doc, { name: "dgt1", type: "DGT", instance: "i1", node: "node1", config: "dgt.config", count: 1 }),
    );
    await store.edit((doc) =>
      addTier(doc, { name: "dwt1", type: "DWT", instance: "i1", node: "node1", config: "dwt.config", count: 2 }),
    );
    expectRenderedStateMatchesServer();
    // tiers of one instance share a shape; all four live on node1's color
    const shapes = new Set(Object.values(store.visuals!.tier_shapes));
    expect(shapes.size).toBe(1);

    // IV. draw three connections
    await store.edit((doc) => addConnection(doc, "dgt1", "dst1"));
    await store.edit((doc) => addConnection(doc, "dwt1", "dst1"));
    await store.edit((doc) => addConnection(doc, "gmt1", "dst1"));
    expectRenderedStateMatchesServer();
    expect(store.graph!.connections).toHaveLength(3);
    expect(store.findings).toEqual([]); // valid: operator view unlocks

    // V. save, wipe, reload: identical rendered state
    const saved = await store.saveText();
    const beforeReload = JSON.stringify(store.graph);
    await store.loadText(saved);
    expectRenderedStateMatchesServer();
    expect(JSON.stringify(store.graph)).toBe(beforeReload);

    // VI. operator: start the manager, then the node (auto-registers)
    await client.startGmt("gmt.config");
    await client.startNode("node1");
    await store.refreshStatus();
    expect(store.status!.gmt.running).toBe(true);
    expect(store.status!.registry!.nodes["1"].name).toBe("node1");
    let events = await pumpEvents();
    expect(events.length).toBeGreaterThan(0);
    expect(logs.sources()).toContain("GMT");
    expect(logs.sources()).toContain("node:node1");
    expect(
      logs.eventsFor("GMT").some((e) => e.message.includes("registered")),
    ).toBe(true);

    // VII. allocate a store tier on the registered node
    await client.allocate({ node_id: 1, tier_type: "DST", config: "dst.config", count: 1 });
    await store.refreshStatus();
    expect(store.status!.registry!.tiers["1:DST:1"]).toMatchObject({
      tier_type: "DST",
      status: "running",
    });
    events = await pumpEvents();
    expect(events.some((e) => e.message.includes("1:DST:1 allocated"))).toBe(true);

    // VIII. deallocate it; the registry row disappears and events stream in
    await client.deallocate({ node_id: 1, tier_type: "DST", tier_ids: [1] });
    await store.refreshStatus();
    expect(store.status!.registry!.tiers["1:DST:1"]).toBeUndefined();
    events = await pumpEvents();
    expect(events.some((e) => e.message.includes("1:DST:1 deallocated"))).toBe(true);

    // every pane observed its events in sequence order throughout
    for (const source of logs.sources()) {
      const seqs = logs.eventsFor(source).map((e) => e.seq);
      expect([...seqs].sort((a, b) => a - b)).toEqual(seqs);
    }
  });

  it("inline validation blocks bad dialogs without any request", async () => {
    await store.edit((doc) => addInstance(doc, "i1"));
    const requestsBefore = backend.events.length;
    // empty node name: the dialog validator rejects before any API call
    const { checkNode } = await import("../src/graphdoc.js");
    expect(checkNode(store.graph!, { name: "", host: "h", color: "" })).toMatch(/non-empty/);
    expect(backend.events.length).toBe(requestsBefore);
  });

  it("server rejection leaves the rendered state untouched", async () => {
    await store.edit((doc) => addInstance(doc, "i1"));
    const before = JSON.stringify(store.graph);
    await expect(
      store.edit((doc) => {
        const out = structuredClone(doc);
        out.tiers.push({
          name: "bad", type: "DST", instance: "ghost", node: "ghost", config: "c", count: 1,
        });
        return out;
      }),
    ).rejects.toMatchObject({ code: "graph" });
    expect(JSON.stringify(store.graph)).toBe(before);
    expect(store.graph).toEqual(backend.graph);
  });
});
