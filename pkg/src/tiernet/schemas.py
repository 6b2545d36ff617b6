"""Built-in validation schemas for DST/DGT/DWT/GMT tier configs and node
daemon configs. Schemas type the otherwise uninterpreted config values."""

from __future__ import annotations

from .config import (
    KEY_DGT_DISPATCHER,
    KEY_DWT_DISPATCHER,
    KEY_IMPL,
    KEY_SIM_MODE,
    KEY_SIM_NUMBER,
    KEY_SIM_PARAMETER,
    KEY_SIM_PAYLOAD,
    KeySpec,
    TierSchema,
    any_text,
    endpoint,
    enum_of,
    implementation_name,
    int_range,
    number,
)
from .demand import TierType
from .errors import ConfigError
from .tiers import (
    WORK_FUNCTION_NAMES,
    lookup_tier_impl,
    lookup_transport_impl,
)

_impl = implementation_name(lookup_tier_impl)
_dispatcher = implementation_name(lookup_transport_impl)

DGT_SCHEMA = TierSchema(
    tier_type="DGT",
    keys=(
        KeySpec(KEY_IMPL, True, _impl),
        KeySpec(KEY_DGT_DISPATCHER, False, _dispatcher),
        KeySpec(KEY_SIM_MODE, True, int_range(0, 3)),
        KeySpec(KEY_SIM_PARAMETER, True, int_range(0)),
        KeySpec(KEY_SIM_NUMBER, True, int_range(1)),
        KeySpec(KEY_SIM_PAYLOAD, True, int_range(0)),
        KeySpec("net.sim.max.demands", False, int_range(1)),
        KeySpec("net.sim.seed", False, int_range()),
        KeySpec("net.sim.poll.ms", False, int_range(1)),
        KeySpec("net.sim.program", False, any_text),
        KeySpec("net.keepalive.seconds", False, number),
    ),
)

DWT_SCHEMA = TierSchema(
    tier_type="DWT",
    keys=(
        KeySpec(KEY_IMPL, True, _impl),
        KeySpec(KEY_DWT_DISPATCHER, False, _dispatcher),
        KeySpec("net.work.function", False, enum_of(*WORK_FUNCTION_NAMES)),
        KeySpec("net.work.delay.ms", False, int_range(0)),
        KeySpec("net.worker.poll.ms", False, int_range(1)),
        KeySpec("net.keepalive.seconds", False, number),
    ),
)

DST_SCHEMA = TierSchema(
    tier_type="DST",
    keys=(
        KeySpec(KEY_IMPL, True, _impl),
        KeySpec("net.store.listen", False, endpoint),
        KeySpec("net.store.journal", False, any_text),
        KeySpec("net.store.heartbeat.seconds", False, number),
        KeySpec("net.store.missed.beats", False, int_range(1)),
    ),
)

GMT_SCHEMA = TierSchema(
    tier_type="GMT",
    keys=(
        KeySpec("net.gmt.listen", False, endpoint),
        KeySpec("net.gmt.heartbeat.seconds", False, number),
        KeySpec("net.gmt.missed.beats", False, int_range(1)),
        KeySpec("net.gmt.registration.timeout.seconds", False, number),
        KeySpec("net.gmt.allocation.timeout.seconds", False, number),
        KeySpec("net.config.dir", False, any_text),
    ),
)

NODE_SCHEMA = TierSchema(
    tier_type="node",
    keys=(
        KeySpec("net.node.name", True, any_text),
        KeySpec("net.node.gmt.endpoint", False, endpoint),
        KeySpec("net.node.color", False, any_text),
        KeySpec("net.node.host", False, any_text),
        KeySpec("net.node.hosts.gmt", False, enum_of("true", "false")),
        KeySpec("net.node.registration.timeout.seconds", False, number),
        KeySpec("net.keepalive.seconds", False, number),
    ),
)

_SCHEMAS = {
    TierType.DGT: DGT_SCHEMA,
    TierType.DWT: DWT_SCHEMA,
    TierType.DST: DST_SCHEMA,
    TierType.GMT: GMT_SCHEMA,
    "node": NODE_SCHEMA,
}


def schema_for(tier_type) -> TierSchema:
    schema = _SCHEMAS.get(tier_type)
    if schema is None:
        raise ConfigError(f"no schema for tier type {tier_type}")
    return schema
