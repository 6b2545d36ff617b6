"""The network-as-graph model: instances, nodes, tiers, and connections, with
visual attribute assignment, file persistence, and translation into the
bootstrap command sequence.

Graphs are immutable snapshots; every edit returns a new graph or raises
GraphError with the reason. Structural invariants (unique names, live
references, no duplicate or self connections) hold on every snapshot;
`validate_graph` adds the runnability checks (exactly one manager tier,
every generator/worker connected to a store) that translation requires.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from .commands import Allocate, Register, StartGmt, StartNode
from .config import make_config, parse_config, serialize_config
from .demand import TierType
from .errors import GraphError, TranslationError

PALETTE = (
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#46f0f0",
    "#f032e6", "#bcf60c", "#fabebe", "#008080", "#9a6324", "#800000",
)
SHAPES = ("circle", "square", "triangle", "diamond", "hexagon", "star")


@dataclass(frozen=True)
class InstanceDef:
    name: str


@dataclass(frozen=True)
class NodeDef:
    name: str
    host: str = "127.0.0.1"
    color: str = ""  # empty = assign from palette


@dataclass(frozen=True)
class TierDef:
    name: str
    tier_type: TierType
    instance: str
    node: str
    config: str
    count: int = 1


@dataclass(frozen=True)
class NodeConnection:
    from_tier: str
    to_tier: str

    def pair(self) -> frozenset:
        return frozenset((self.from_tier, self.to_tier))


@dataclass(frozen=True)
class NetworkGraph:
    instances: tuple = ()
    nodes: tuple = ()
    tiers: tuple = ()
    connections: tuple = ()

    def instance(self, name: str) -> Optional[InstanceDef]:
        return next((i for i in self.instances if i.name == name), None)

    def node(self, name: str) -> Optional[NodeDef]:
        return next((n for n in self.nodes if n.name == name), None)

    def tier(self, name: str) -> Optional[TierDef]:
        return next((t for t in self.tiers if t.name == name), None)

    def connected_tiers(self, name: str) -> list:
        out = []
        for c in self.connections:
            if c.from_tier == name:
                out.append(c.to_tier)
            elif c.to_tier == name:
                out.append(c.from_tier)
        return out


# --- edit operations -----------------------------------------------------------


def add_instance(g: NetworkGraph, name: str) -> NetworkGraph:
    if not name:
        raise GraphError("instance name must be non-empty")
    if g.instance(name) is not None:
        raise GraphError(f"duplicate instance name {name!r}")
    return replace(g, instances=g.instances + (InstanceDef(name),))


def add_node(g: NetworkGraph, name: str, host: str = "127.0.0.1", color: str = "") -> NetworkGraph:
    if not name:
        raise GraphError("node name must be non-empty")
    if g.node(name) is not None:
        raise GraphError(f"duplicate node name {name!r}")
    if color and any(n.color == color for n in g.nodes):
        raise GraphError(f"color {color!r} already used by another node")
    return replace(g, nodes=g.nodes + (NodeDef(name, host, color),))


def add_tier(
    g: NetworkGraph,
    name: str,
    tier_type,
    instance: str,
    node: str,
    config: str,
    count: int = 1,
) -> NetworkGraph:
    if not name:
        raise GraphError("tier name must be non-empty")
    if g.tier(name) is not None:
        raise GraphError(f"duplicate tier name {name!r}")
    if g.instance(instance) is None:
        raise GraphError(f"tier {name!r} references unknown instance {instance!r}")
    if g.node(node) is None:
        raise GraphError(f"tier {name!r} references unknown node {node!r}")
    if count < 1:
        raise GraphError(f"tier {name!r} count must be >= 1")
    tier = TierDef(name, TierType(tier_type), instance, node, config, count)
    return replace(g, tiers=g.tiers + (tier,))


def connect(g: NetworkGraph, from_tier: str, to_tier: str) -> NetworkGraph:
    if g.tier(from_tier) is None:
        raise GraphError(f"unknown tier {from_tier!r}")
    if g.tier(to_tier) is None:
        raise GraphError(f"unknown tier {to_tier!r}")
    if from_tier == to_tier:
        raise GraphError(f"tier {from_tier!r} cannot connect to itself")
    pair = frozenset((from_tier, to_tier))
    if any(c.pair() == pair for c in g.connections):
        raise GraphError(f"connection {from_tier!r} -- {to_tier!r} already exists")
    return replace(g, connections=g.connections + (NodeConnection(from_tier, to_tier),))


def disconnect(g: NetworkGraph, from_tier: str, to_tier: str) -> NetworkGraph:
    pair = frozenset((from_tier, to_tier))
    remaining = tuple(c for c in g.connections if c.pair() != pair)
    if len(remaining) == len(g.connections):
        raise GraphError(f"no connection {from_tier!r} -- {to_tier!r}")
    return replace(g, connections=remaining)


def remove_instance(g: NetworkGraph, name: str) -> NetworkGraph:
    if g.instance(name) is None:
        raise GraphError(f"unknown instance {name!r}")
    if any(t.instance == name for t in g.tiers):
        raise GraphError(f"instance {name!r} still has tiers")
    return replace(g, instances=tuple(i for i in g.instances if i.name != name))


def remove_node(g: NetworkGraph, name: str) -> NetworkGraph:
    if g.node(name) is None:
        raise GraphError(f"unknown node {name!r}")
    if any(t.node == name for t in g.tiers):
        raise GraphError(f"node {name!r} still hosts tiers")
    return replace(g, nodes=tuple(n for n in g.nodes if n.name != name))


def remove_tier(g: NetworkGraph, name: str) -> NetworkGraph:
    if g.tier(name) is None:
        raise GraphError(f"unknown tier {name!r}")
    connections = tuple(c for c in g.connections if name not in c.pair())
    return replace(g, tiers=tuple(t for t in g.tiers if t.name != name), connections=connections)


# --- validity --------------------------------------------------------------------


@dataclass(frozen=True)
class GraphFinding:
    entity: str
    reason: str
    severity: str = "error"

    def as_dict(self) -> dict:
        return {"entity": self.entity, "reason": self.reason, "severity": self.severity}


def validate_graph(g: NetworkGraph) -> list:
    """Runnability findings beyond the structural invariants edits enforce."""
    findings = []
    gmts = [t for t in g.tiers if t.tier_type is TierType.GMT]
    if not gmts:
        findings.append(GraphFinding("graph", "no manager (GMT) tier"))
    elif len(gmts) > 1 or any(t.count > 1 for t in gmts):
        findings.append(GraphFinding("graph", "more than one manager (GMT) tier"))
    for t in g.tiers:
        if t.tier_type in (TierType.DGT, TierType.DWT):
            stores = [
                n for n in g.connected_tiers(t.name)
                if g.tier(n) is not None and g.tier(n).tier_type is TierType.DST
            ]
            if not stores:
                findings.append(GraphFinding(t.name, f"{t.tier_type} has no store connection"))
    return findings


# --- visual attributes --------------------------------------------------------------


@dataclass(frozen=True)
class VisualAttrs:
    node_colors: dict  # node name -> color
    tier_colors: dict  # tier name -> color (from hosting node)
    tier_shapes: dict  # tier name -> shape (from instance)
    tier_badges: dict  # tier name -> int badge (0 = none; shape list wrapped)

    def as_dict(self) -> dict:
        return {
            "node_colors": dict(self.node_colors),
            "tier_colors": dict(self.tier_colors),
            "tier_shapes": dict(self.tier_shapes),
            "tier_badges": dict(self.tier_badges),
        }


def assign_visuals(g: NetworkGraph) -> VisualAttrs:
    """Deterministic mapping: i-th node takes the i-th palette color unless it
    carries an explicit color; i-th instance takes the i-th shape, wrapping
    with a numbered badge when instances outnumber shapes. Tiers inherit by
    name from their node and instance."""
    node_colors = {}
    for i, node in enumerate(g.nodes):
        node_colors[node.name] = node.color or PALETTE[i % len(PALETTE)]
    instance_shapes = {}
    instance_badges = {}
    for i, instance in enumerate(g.instances):
        instance_shapes[instance.name] = SHAPES[i % len(SHAPES)]
        instance_badges[instance.name] = i // len(SHAPES)
    tier_colors = {}
    tier_shapes = {}
    tier_badges = {}
    for tier in g.tiers:
        tier_colors[tier.name] = node_colors[tier.node]
        tier_shapes[tier.name] = instance_shapes[tier.instance]
        tier_badges[tier.name] = instance_badges[tier.instance]
    return VisualAttrs(node_colors, tier_colors, tier_shapes, tier_badges)


# --- persistence -----------------------------------------------------------------------

_HEADER = "# network graph"


def save_graph(g: NetworkGraph) -> str:
    pairs = []
    for i, instance in enumerate(g.instances):
        pairs.append((f"net.graph.instance.{i}.name", instance.name))
    for i, node in enumerate(g.nodes):
        pairs.append((f"net.graph.node.{i}.name", node.name))
        pairs.append((f"net.graph.node.{i}.host", node.host))
        if node.color:
            pairs.append((f"net.graph.node.{i}.color", node.color))
    for i, tier in enumerate(g.tiers):
        pairs.append((f"net.graph.tier.{i}.name", tier.name))
        pairs.append((f"net.graph.tier.{i}.type", str(tier.tier_type)))
        pairs.append((f"net.graph.tier.{i}.instance", tier.instance))
        pairs.append((f"net.graph.tier.{i}.node", tier.node))
        pairs.append((f"net.graph.tier.{i}.config", tier.config))
        pairs.append((f"net.graph.tier.{i}.count", str(tier.count)))
    for i, conn in enumerate(g.connections):
        pairs.append((f"net.graph.conn.{i}.from", conn.from_tier))
        pairs.append((f"net.graph.conn.{i}.to", conn.to_tier))
    config = make_config(pairs)
    return _HEADER + "\n" + serialize_config(config)


def load_graph(text: str, source_name: str = "<graph>") -> NetworkGraph:
    """Parse a saved graph; rejects exactly what the edit operations reject,
    plus unknown keys (with their line) and broken references."""
    config = parse_config(text, source_name=source_name)
    groups: dict = {}
    for lineno, line in enumerate(config.lines, start=1):
        if line.kind != "pair":
            continue
        key = line.key
        parts = key.split(".")
        if (
            len(parts) != 5
            or parts[0] != "net"
            or parts[1] != "graph"
            or parts[2] not in ("instance", "node", "tier", "conn")
            or not parts[3].isdigit()
        ):
            raise GraphError(f"{source_name}:{lineno}: unknown graph key {key!r}")
        category, index, attr = parts[2], int(parts[3]), parts[4]
        groups.setdefault(category, {}).setdefault(index, {})[attr] = line.value

    def ordered(category: str) -> list:
        return [v for _, v in sorted(groups.get(category, {}).items())]

    g = NetworkGraph()
    try:
        for attrs in ordered("instance"):
            g = add_instance(g, attrs.get("name", ""))
        for attrs in ordered("node"):
            g = add_node(
                g,
                attrs.get("name", ""),
                host=attrs.get("host", "127.0.0.1"),
                color=attrs.get("color", ""),
            )
        for attrs in ordered("tier"):
            missing = [k for k in ("name", "type", "instance", "node", "config") if k not in attrs]
            if missing:
                raise GraphError(
                    f"{source_name}: tier {attrs.get('name', '?')!r} missing {', '.join(missing)}"
                )
            try:
                tier_type = TierType(attrs["type"])
            except ValueError:
                raise GraphError(f"{source_name}: unknown tier type {attrs['type']!r}") from None
            g = add_tier(
                g,
                attrs["name"],
                tier_type,
                attrs["instance"],
                attrs["node"],
                attrs["config"],
                count=int(attrs.get("count", "1")),
            )
        for attrs in ordered("conn"):
            if "from" not in attrs or "to" not in attrs:
                raise GraphError(f"{source_name}: connection missing from/to")
            g = connect(g, attrs["from"], attrs["to"])
    except GraphError:
        raise
    except ValueError as e:
        raise GraphError(f"{source_name}: {e}") from None
    return g


# --- graph <-> JSON (management API wire form) -------------------------------------------


def graph_as_dict(g: NetworkGraph) -> dict:
    return {
        "instances": [{"name": i.name} for i in g.instances],
        "nodes": [{"name": n.name, "host": n.host, "color": n.color} for n in g.nodes],
        "tiers": [
            {
                "name": t.name,
                "type": str(t.tier_type),
                "instance": t.instance,
                "node": t.node,
                "config": t.config,
                "count": t.count,
            }
            for t in g.tiers
        ],
        "connections": [{"from": c.from_tier, "to": c.to_tier} for c in g.connections],
    }


def graph_from_dict(data: dict) -> NetworkGraph:
    g = NetworkGraph()
    try:
        for i in data.get("instances", []):
            g = add_instance(g, i["name"])
        for n in data.get("nodes", []):
            g = add_node(g, n["name"], host=n.get("host", "127.0.0.1"), color=n.get("color", ""))
        for t in data.get("tiers", []):
            g = add_tier(
                g,
                t["name"],
                TierType(t["type"]),
                t["instance"],
                t["node"],
                t["config"],
                count=int(t.get("count", 1)),
            )
        for c in data.get("connections", []):
            g = connect(g, c["from"], c["to"])
    except (KeyError, ValueError, TypeError) as e:
        raise GraphError(f"malformed graph document: {e}") from None
    return g


# --- translation ------------------------------------------------------------------------


def translate(g: NetworkGraph) -> list:
    """Turn a valid graph into the ordered bootstrap command sequence:
    manager start, node starts and registrations, store allocations (indices
    assigned in order), then generator/worker allocations bound to the store
    each one connects to. Evaluation is never auto-started."""
    findings = validate_graph(g)
    if findings:
        raise TranslationError("; ".join(f.reason for f in findings))
    gmt = next(t for t in g.tiers if t.tier_type is TierType.GMT)
    commands = [StartGmt(config=gmt.config)]

    # Registration order determines node ids (sequential from 1). The manager
    # host's node registers too when it hosts workload tiers.
    hosts_workload = {t.node for t in g.tiers if t.tier_type is not TierType.GMT}
    register_order = []
    if gmt.node in hosts_workload:
        register_order.append(gmt.node)
    for node in g.nodes:
        if node.name in hosts_workload and node.name not in register_order:
            register_order.append(node.name)
    node_ids = {}
    for name in register_order:
        node_ids[name] = len(node_ids) + 1
        commands.append(StartNode(target=name))
        commands.append(Register(node=name))

    # Store allocations, in tier list order; index 0 is the registration store.
    dst_indices = {}
    next_index = 1
    for tier in g.tiers:
        if tier.tier_type is not TierType.DST:
            continue
        commands.append(
            Allocate(
                node_id=node_ids[tier.node],
                tier_type=TierType.DST,
                config=tier.config,
                dst_index=None,
                count=tier.count,
            )
        )
        dst_indices[tier.name] = next_index
        next_index += tier.count

    for tier in g.tiers:
        if tier.tier_type not in (TierType.DGT, TierType.DWT):
            continue
        stores = [
            n for n in g.connected_tiers(tier.name)
            if g.tier(n) is not None and g.tier(n).tier_type is TierType.DST
        ]
        commands.append(
            Allocate(
                node_id=node_ids[tier.node],
                tier_type=tier.tier_type,
                config=tier.config,
                dst_index=dst_indices[stores[0]],
                count=tier.count,
            )
        )
    return commands
