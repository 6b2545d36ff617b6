"""Demands: identity, kinds, and the pending/processing/computed state machine.

A demand is an immutable request for a value, uniquely identified by its
signature (program, identifier, context). State never mutates in place;
`transition` returns a new demand and rejects every move that is not one of
Pending->Processing, Processing->Computed, Processing->Pending.

The canonical binary encoding defined here is the one representation used on
the wire and in store journals:

    str     = u32 length + utf-8 bytes
    bytes   = u32 length + raw
    context = u32 count + (str name, i64 tag)*         entries sorted by name
    tier_id = i32 node_id + u8 tier_type + i32 local_index
    demand  = signature(program_id, identifier, context)
              + u8 kind + state + bytes payload + tier_id issued_by
              + i64 issued_at
    state   = u8 tag (1 pending / 2 processing / 3 computed)
              + processing: tier_id holder, i64 since
              + computed:   bytes result

All integers are big-endian. Signature hashes are 64-bit FNV-1a digests of
the signature's canonical bytes.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional

from .errors import InvalidContextError, StateMachineError

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a digest. Also used as the default work-function checksum."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64
    return h


def now_ms() -> int:
    return int(time.time() * 1000)


class TierType(str, Enum):
    DST = "DST"
    DGT = "DGT"
    DWT = "DWT"
    GMT = "GMT"

    def __str__(self) -> str:
        return self.value


_TIER_TYPE_CODE = {TierType.DST: 1, TierType.DGT: 2, TierType.DWT: 3, TierType.GMT: 4}
_TIER_TYPE_FROM_CODE = {v: k for k, v in _TIER_TYPE_CODE.items()}


@dataclass(frozen=True)
class TierId:
    node_id: int
    tier_type: TierType
    local_index: int

    def __str__(self) -> str:
        return f"{self.node_id}:{self.tier_type.value}:{self.local_index}"

    @classmethod
    def parse(cls, text: str) -> "TierId":
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"tier id must be nodeId:type:index, got {text!r}")
        try:
            tier_type = TierType(parts[1])
        except ValueError:
            raise ValueError(f"unknown tier type {parts[1]!r} in {text!r}") from None
        return cls(int(parts[0]), tier_type, int(parts[2]))


class DemandKind(Enum):
    INTENSIONAL = 1
    PROCEDURAL = 2
    SYSTEM = 3


@dataclass(frozen=True)
class Context:
    """Ordered (dimension, tag) entries, canonicalized by dimension name."""

    entries: tuple = ()

    @classmethod
    def of(cls, entries: Iterable) -> "Context":
        items = [(str(name), int(tag)) for name, tag in entries]
        names = [name for name, _ in items]
        for name in names:
            if not name:
                raise InvalidContextError("dimension names must be non-empty")
        if len(set(names)) != len(names):
            dup = sorted(n for n in set(names) if names.count(n) > 1)
            raise InvalidContextError(f"duplicate dimension name(s): {', '.join(dup)}")
        return cls(tuple(sorted(items)))

    def tag(self, name: str) -> Optional[int]:
        for dim, tag in self.entries:
            if dim == name:
                return tag
        return None

    def contains(self, required: Iterable) -> bool:
        have = set(self.entries)
        return all((str(n), int(t)) in have for n, t in required)


@dataclass(frozen=True)
class DemandSignature:
    program_id: str
    identifier: str
    context: Context

    def hash64(self) -> int:
        return fnv1a64(encode_signature(self))

    def __str__(self) -> str:
        ctx = ",".join(f"{n}={t}" for n, t in self.context.entries)
        return f"{self.program_id}/{self.identifier}[{ctx}]"


def make_signature(program_id: str, identifier: str, context) -> DemandSignature:
    """Build a canonical signature; equal inputs always compare and hash equal."""
    if not isinstance(context, Context):
        context = Context.of(context)
    else:
        context = Context.of(context.entries)
    return DemandSignature(str(program_id), str(identifier), context)


# --- states ---------------------------------------------------------------


@dataclass(frozen=True)
class Pending:
    name = "pending"


@dataclass(frozen=True)
class Processing:
    holder: TierId
    since: int
    name = "processing"


@dataclass(frozen=True)
class Computed:
    result: bytes
    name = "computed"


DemandState = object  # Pending | Processing | Computed


# --- transition events ----------------------------------------------------


@dataclass(frozen=True)
class Grab:
    tier: TierId


@dataclass(frozen=True)
class Complete:
    result: bytes


@dataclass(frozen=True)
class Requeue:
    pass


@dataclass(frozen=True)
class Demand:
    signature: DemandSignature
    kind: DemandKind
    state: object = field(default_factory=Pending)
    payload: bytes = b""
    issued_by: TierId = TierId(0, TierType.GMT, 0)
    issued_at: int = field(default_factory=now_ms)


def transition(demand: Demand, event) -> Demand:
    """Apply one event, returning the demand in its new state.

    Raises StateMachineError for anything outside the three legal moves,
    naming the current state and the offending event.
    """
    state = demand.state
    if isinstance(event, Grab):
        if isinstance(state, Pending):
            return replace(demand, state=Processing(holder=event.tier, since=now_ms()))
    elif isinstance(event, Complete):
        if isinstance(state, Processing):
            return replace(demand, state=Computed(result=bytes(event.result)))
    elif isinstance(event, Requeue):
        if isinstance(state, Processing):
            return replace(demand, state=Pending())
    else:
        raise StateMachineError(f"unknown event {event!r}")
    raise StateMachineError(
        f"illegal event {type(event).__name__} in state {state.name}"
    )


# --- system demand bodies ---------------------------------------------------

SYSTEM_PROGRAM_ID = "sysdemand.v1"

# Bodies ride inside Demand.payload as UTF-8 JSON with a "kind" discriminator.
SYSTEM_BODY_KINDS = (
    "NodeRegistration",
    "RegistrationResult",
    "TierAllocationRequest",
    "TierAllocationResult",
    "TierDeallocationRequest",
    "TierDeallocationResult",
    "StartEvaluation",
    "StepGenerator",
    "StopTier",
)


def encode_system_body(kind: str, **fields) -> bytes:
    if kind not in SYSTEM_BODY_KINDS:
        raise ValueError(f"unknown system body kind {kind!r}")
    body = {"kind": kind}
    body.update(fields)
    return json.dumps(body, sort_keys=True).encode("utf-8")


def decode_system_body(payload: bytes) -> dict:
    body = json.loads(payload.decode("utf-8"))
    if not isinstance(body, dict) or body.get("kind") not in SYSTEM_BODY_KINDS:
        raise ValueError("not a system demand body")
    return body


# --- canonical binary encoding ---------------------------------------------

_KIND_CODE = {DemandKind.INTENSIONAL: 1, DemandKind.PROCEDURAL: 2, DemandKind.SYSTEM: 3}
_KIND_FROM_CODE = {v: k for k, v in _KIND_CODE.items()}


def pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(">I", len(raw)) + raw


def pack_bytes(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + bytes(b)


class Cursor:
    """Streaming reader over a bytes buffer for the fixed-layout decoders."""

    def __init__(self, buf: bytes, pos: int = 0):
        self.buf = buf
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ValueError("truncated encoding")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def i32(self) -> int:
        return struct.unpack(">i", self.take(4))[0]

    def i64(self) -> int:
        return struct.unpack(">q", self.take(8))[0]

    def str_(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def bytes_(self) -> bytes:
        return bytes(self.take(self.u32()))

    def done(self) -> bool:
        return self.pos == len(self.buf)


def encode_tier_id(t: TierId) -> bytes:
    return struct.pack(">iBi", t.node_id, _TIER_TYPE_CODE[t.tier_type], t.local_index)


def decode_tier_id(cur: Cursor) -> TierId:
    node_id = cur.i32()
    code = cur.u8()
    local_index = cur.i32()
    if code not in _TIER_TYPE_FROM_CODE:
        raise ValueError(f"unknown tier type code {code}")
    return TierId(node_id, _TIER_TYPE_FROM_CODE[code], local_index)


def encode_context(ctx: Context) -> bytes:
    parts = [struct.pack(">I", len(ctx.entries))]
    for name, tag in ctx.entries:
        parts.append(pack_str(name))
        parts.append(struct.pack(">q", tag))
    return b"".join(parts)


def decode_context(cur: Cursor) -> Context:
    n = cur.u32()
    entries = []
    for _ in range(n):
        name = cur.str_()
        tag = cur.i64()
        entries.append((name, tag))
    return Context.of(entries)


def encode_signature(sig: DemandSignature) -> bytes:
    return pack_str(sig.program_id) + pack_str(sig.identifier) + encode_context(sig.context)


def decode_signature(cur: Cursor) -> DemandSignature:
    program_id = cur.str_()
    identifier = cur.str_()
    context = decode_context(cur)
    return DemandSignature(program_id, identifier, context)


def encode_state(state) -> bytes:
    if isinstance(state, Pending):
        return b"\x01"
    if isinstance(state, Processing):
        return b"\x02" + encode_tier_id(state.holder) + struct.pack(">q", state.since)
    if isinstance(state, Computed):
        return b"\x03" + pack_bytes(state.result)
    raise ValueError(f"unknown state {state!r}")


def decode_state(cur: Cursor):
    tag = cur.u8()
    if tag == 1:
        return Pending()
    if tag == 2:
        holder = decode_tier_id(cur)
        since = cur.i64()
        return Processing(holder=holder, since=since)
    if tag == 3:
        return Computed(result=cur.bytes_())
    raise ValueError(f"unknown state tag {tag}")


def encode_demand(d: Demand) -> bytes:
    return b"".join(
        (
            encode_signature(d.signature),
            bytes([_KIND_CODE[d.kind]]),
            encode_state(d.state),
            pack_bytes(d.payload),
            encode_tier_id(d.issued_by),
            struct.pack(">q", d.issued_at),
        )
    )


def decode_demand(buf, cur: Optional[Cursor] = None) -> Demand:
    own = cur is None
    if cur is None:
        cur = Cursor(buf)
    signature = decode_signature(cur)
    kind_code = cur.u8()
    if kind_code not in _KIND_FROM_CODE:
        raise ValueError(f"unknown demand kind code {kind_code}")
    state = decode_state(cur)
    payload = cur.bytes_()
    issued_by = decode_tier_id(cur)
    issued_at = cur.i64()
    if own and not cur.done():
        raise ValueError("trailing bytes after demand")
    return Demand(
        signature=signature,
        kind=_KIND_FROM_CODE[kind_code],
        state=state,
        payload=payload,
        issued_by=issued_by,
        issued_at=issued_at,
    )
