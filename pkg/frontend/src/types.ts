// JSON shapes exchanged with the management API. These mirror the server's
// documented field names exactly; the client never invents fields of its own.

export type TierType = "DST" | "DGT" | "DWT" | "GMT";

export interface InstanceDoc {
  name: string;
}

export interface NodeDoc {
  name: string;
  host: string;
  color: string;
}

export interface TierDoc {
  name: string;
  type: TierType;
  instance: string;
  node: string;
  config: string;
  count: number;
}

export interface ConnectionDoc {
  from: string;
  to: string;
}

export interface GraphDoc {
  instances: InstanceDoc[];
  nodes: NodeDoc[];
  tiers: TierDoc[];
  connections: ConnectionDoc[];
}

export interface Visuals {
  node_colors: Record<string, string>;
  tier_colors: Record<string, string>;
  tier_shapes: Record<string, string>;
  tier_badges: Record<string, number>;
}

export interface Finding {
  entity?: string;
  key?: string;
  reason: string;
  severity: "error" | "warning";
}

export interface GraphResponse {
  graph: GraphDoc | null;
  visuals: Visuals | null;
  findings: Finding[];
}

export interface EventRecord {
  seq: number;
  source: string;
  level: "info" | "warn" | "error";
  message: string;
  timestamp: number;
}

export interface NodeRecordDoc {
  node_id: number;
  name: string;
  endpoint: string;
  color: string;
  status: "registered" | "lost";
  registered_at: number;
}

export interface TierRecordDoc {
  tier_id: string;
  tier_type: TierType;
  node_id: number;
  config_name: string;
  dst_index: number | null;
  endpoint: string | null;
  status: string;
}

export interface EvaluationDoc {
  generator: string;
  status: "idle" | "running" | "done";
  report: Record<string, unknown> | null;
  error: string | null;
}

export interface RegistryDoc {
  nodes: Record<string, NodeRecordDoc>;
  tiers: Record<string, TierRecordDoc>;
  dsts: string[];
  evaluations?: Record<string, EvaluationDoc>;
}

export interface StoreStatsDoc {
  counts: Record<string, Record<string, number>>;
  total_deposits: number;
  cache_hits: number;
}

export interface DstStatusDoc {
  index: number;
  endpoint: string;
  stats: StoreStatsDoc | null;
}

export interface StatusDoc {
  gmt: { running: boolean; endpoint?: string };
  nodes: Record<string, { running: boolean; mode: string }>;
  registry: RegistryDoc | null;
  dsts: DstStatusDoc[];
  events_seq: number;
}

export interface PlanResult {
  ok: boolean;
  stopped_at?: number;
  results: {
    position: number;
    command: string;
    ok: boolean;
    error?: string;
    outcome?: unknown;
  }[];
}

export function emptyGraph(): GraphDoc {
  return { instances: [], nodes: [], tiers: [], connections: [] };
}
