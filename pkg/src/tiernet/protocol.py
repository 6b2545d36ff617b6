"""Construction helpers for the system demands the manager and node daemons
exchange over the registration store.

Routing rides on demand signatures: registrations carry a ("gmt", 1) context
dimension and are grabbed by the manager; node-addressed requests carry
("node", <id>) and are grabbed only by that node's daemon. A request and its
result are one store entry: the requester deposits the demand pending, the
serving side grabs it and returns the result body, so both share the same
signature and differ only in state.
"""

from __future__ import annotations

from .demand import (
    Demand,
    DemandKind,
    Pending,
    TierId,
    TierType,
    encode_system_body,
    make_signature,
    SYSTEM_PROGRAM_ID,
)

GMT_DIMENSION = ("gmt", 1)


def manager_tier_id() -> TierId:
    return TierId(0, TierType.GMT, 0)


def daemon_tier_id(node_id: int) -> TierId:
    """The management-agent identity a node daemon presents to the store."""
    return TierId(node_id, TierType.GMT, 0)


def unregistered_tier_id(nonce: int) -> TierId:
    return TierId(0, TierType.GMT, nonce)


def _system_demand(identifier: str, context, body: bytes, issued_by: TierId) -> Demand:
    return Demand(
        signature=make_signature(SYSTEM_PROGRAM_ID, identifier, context),
        kind=DemandKind.SYSTEM,
        state=Pending(),
        payload=body,
        issued_by=issued_by,
    )


def registration_demand(name: str, host: str, color: str, nonce: int, issued_by: TierId) -> Demand:
    body = encode_system_body("NodeRegistration", name=name, host=host, color=color)
    return _system_demand("register", [GMT_DIMENSION, ("reg", nonce)], body, issued_by)


def allocation_request(
    seq: int,
    node_id: int,
    tier_type: str,
    config_name: str,
    config_text: str,
    count: int,
    dst_index,
    dst_endpoint,
    issued_by: TierId,
) -> Demand:
    body = encode_system_body(
        "TierAllocationRequest",
        node_id=node_id,
        tier_type=tier_type,
        config_name=config_name,
        config_text=config_text,
        count=count,
        dst_index=dst_index,
        dst_endpoint=dst_endpoint,
    )
    return _system_demand("allocate", [("node", node_id), ("seq", seq)], body, issued_by)


def deallocation_request(
    seq: int, node_id: int, tier_type: str, tier_ids, issued_by: TierId
) -> Demand:
    body = encode_system_body(
        "TierDeallocationRequest",
        node_id=node_id,
        tier_type=tier_type,
        tier_ids=[str(t) for t in tier_ids],
    )
    return _system_demand("deallocate", [("node", node_id), ("seq", seq)], body, issued_by)


def start_evaluation_demand(seq: int, generator: TierId, issued_by: TierId) -> Demand:
    body = encode_system_body("StartEvaluation", generator=str(generator))
    return _system_demand("eval", [("node", generator.node_id), ("seq", seq)], body, issued_by)


def step_generator_demand(seq: int, generator: TierId, count: int, issued_by: TierId) -> Demand:
    body = encode_system_body("StepGenerator", generator=str(generator), count=count)
    return _system_demand("step", [("node", generator.node_id), ("seq", seq)], body, issued_by)


def stop_tier_demand(seq: int, tier: TierId, issued_by: TierId) -> Demand:
    body = encode_system_body("StopTier", tier=str(tier))
    return _system_demand("stop", [("node", tier.node_id), ("seq", seq)], body, issued_by)
