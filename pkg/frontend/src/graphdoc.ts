// Pure mutators over the graph document plus the legality checks dialogs and
// drag-to-connect run before any request is made. The server revalidates
// everything; these mirrors only exist so obviously-bad gestures fail inline
// without a round trip.

import type { GraphDoc, NodeDoc, TierDoc, TierType } from "./types.js";

export function cloneGraph(doc: GraphDoc): GraphDoc {
  return JSON.parse(JSON.stringify(doc)) as GraphDoc;
}

export function instanceNames(doc: GraphDoc): string[] {
  return doc.instances.map((i) => i.name);
}

export function findTier(doc: GraphDoc, name: string): TierDoc | undefined {
  return doc.tiers.find((t) => t.name === name);
}

export function findNode(doc: GraphDoc, name: string): NodeDoc | undefined {
  return doc.nodes.find((n) => n.name === name);
}

export function checkInstanceName(doc: GraphDoc, name: string): string | null {
  if (!name.trim()) return "instance name must be non-empty";
  if (doc.instances.some((i) => i.name === name)) return `instance ${name} already exists`;
  return null;
}

export function addInstance(doc: GraphDoc, name: string): GraphDoc {
  const reason = checkInstanceName(doc, name);
  if (reason) throw new Error(reason);
  const out = cloneGraph(doc);
  out.instances.push({ name });
  return out;
}

export function checkNode(
  doc: GraphDoc,
  node: { name: string; host: string; color: string },
  editing?: string,
): string | null {
  if (!node.name.trim()) return "node name must be non-empty";
  if (doc.nodes.some((n) => n.name === node.name && n.name !== editing))
    return `node ${node.name} already exists`;
  if (
    node.color &&
    doc.nodes.some((n) => n.color === node.color && n.name !== (editing ?? node.name))
  )
    return `color ${node.color} already used by another node`;
  return null;
}

export function addNode(doc: GraphDoc, node: NodeDoc): GraphDoc {
  const reason = checkNode(doc, node);
  if (reason) throw new Error(reason);
  const out = cloneGraph(doc);
  out.nodes.push({ ...node });
  return out;
}

export function updateNode(doc: GraphDoc, name: string, node: NodeDoc): GraphDoc {
  const reason = checkNode(doc, node, name);
  if (reason) throw new Error(reason);
  const out = cloneGraph(doc);
  const index = out.nodes.findIndex((n) => n.name === name);
  if (index < 0) throw new Error(`node ${name} not found`);
  out.nodes[index] = { ...node };
  if (node.name !== name) {
    for (const tier of out.tiers) if (tier.node === name) tier.node = node.name;
  }
  return out;
}

export function checkTier(doc: GraphDoc, tier: TierDoc, editing?: string): string | null {
  if (!tier.name.trim()) return "tier name must be non-empty";
  if (doc.tiers.some((t) => t.name === tier.name && t.name !== editing))
    return `tier ${tier.name} already exists`;
  if (!doc.instances.some((i) => i.name === tier.instance))
    return `unknown instance ${tier.instance}`;
  if (!doc.nodes.some((n) => n.name === tier.node)) return `unknown node ${tier.node}`;
  if (!tier.config.trim()) return "configuration file must be set";
  if (!Number.isInteger(tier.count) || tier.count < 1) return "count must be >= 1";
  return null;
}

export function addTier(doc: GraphDoc, tier: TierDoc): GraphDoc {
  const reason = checkTier(doc, tier);
  if (reason) throw new Error(reason);
  const out = cloneGraph(doc);
  out.tiers.push({ ...tier });
  return out;
}

export function updateTier(doc: GraphDoc, name: string, tier: TierDoc): GraphDoc {
  const reason = checkTier(doc, tier, name);
  if (reason) throw new Error(reason);
  const out = cloneGraph(doc);
  const index = out.tiers.findIndex((t) => t.name === name);
  if (index < 0) throw new Error(`tier ${name} not found`);
  out.tiers[index] = { ...tier };
  if (tier.name !== name) {
    for (const conn of out.connections) {
      if (conn.from === name) conn.from = tier.name;
      if (conn.to === name) conn.to = tier.name;
    }
  }
  return out;
}

export function removeTier(doc: GraphDoc, name: string): GraphDoc {
  const out = cloneGraph(doc);
  out.tiers = out.tiers.filter((t) => t.name !== name);
  out.connections = out.connections.filter((c) => c.from !== name && c.to !== name);
  return out;
}

// Drag-to-connect legality: only existing, distinct, not-yet-connected tiers.
export function checkConnection(doc: GraphDoc, from: string, to: string): string | null {
  if (!findTier(doc, from)) return `unknown tier ${from}`;
  if (!findTier(doc, to)) return `unknown tier ${to}`;
  if (from === to) return "a tier cannot connect to itself";
  const dup = doc.connections.some(
    (c) => (c.from === from && c.to === to) || (c.from === to && c.to === from),
  );
  if (dup) return `${from} and ${to} are already connected`;
  return null;
}

export function addConnection(doc: GraphDoc, from: string, to: string): GraphDoc {
  const reason = checkConnection(doc, from, to);
  if (reason) throw new Error(reason);
  const out = cloneGraph(doc);
  out.connections.push({ from, to });
  return out;
}

export function removeConnection(doc: GraphDoc, from: string, to: string): GraphDoc {
  const out = cloneGraph(doc);
  out.connections = out.connections.filter(
    (c) => !((c.from === from && c.to === to) || (c.from === to && c.to === from)),
  );
  return out;
}

export function legalConnectTargets(doc: GraphDoc, from: string): string[] {
  return doc.tiers
    .map((t) => t.name)
    .filter((name) => checkConnection(doc, from, name) === null);
}

// Tier ids as the operator view needs them: nodeId:type:index resolved from
// the live registry for a given graph tier definition.
export function registryTiersFor(
  tierDoc: TierDoc,
  registryTiers: Record<string, { tier_type: TierType; node_id: number; config_name: string }>,
  nodeIdsByName: Record<string, number>,
): string[] {
  const nodeId = nodeIdsByName[tierDoc.node];
  if (nodeId === undefined) return [];
  return Object.entries(registryTiers)
    .filter(
      ([, record]) =>
        record.tier_type === tierDoc.type &&
        record.node_id === nodeId &&
        record.config_name === tierDoc.config,
    )
    .map(([tierId]) => tierId);
}
