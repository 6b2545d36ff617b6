"""tiernet: a demand-driven multi-tier runtime (store, generator, worker, and
manager tiers hosted on node daemons) plus a graph-based management plane for
creating, persisting, bootstrapping, and reconfiguring the tier network."""

from .demand import (
    Context,
    Demand,
    DemandKind,
    DemandSignature,
    TierId,
    TierType,
    make_signature,
    transition,
)
from .config import Configuration, parse_config, serialize_config, validate
from .graph import NetworkGraph, assign_visuals, load_graph, save_graph, translate
from .manager import Manager, bootstrap_gmt
from .node import NodeDaemon
from .store import DemandStore
from .transport import Endpoint, StoreServer, connect

__version__ = "0.1.0"

__all__ = [
    "Configuration",
    "Context",
    "Demand",
    "DemandKind",
    "DemandSignature",
    "DemandStore",
    "Endpoint",
    "Manager",
    "NetworkGraph",
    "NodeDaemon",
    "StoreServer",
    "TierId",
    "TierType",
    "assign_visuals",
    "bootstrap_gmt",
    "connect",
    "load_graph",
    "make_signature",
    "parse_config",
    "save_graph",
    "serialize_config",
    "transition",
    "translate",
    "validate",
    "__version__",
]
