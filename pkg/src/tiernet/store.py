"""The demand store: deposit, exclusive grab, result return, memoized lookup,
and fail-safe requeue.

One store entry exists per demand signature. Deposits of an already-computed
signature are answered from cache; deposits of an in-flight signature are
idempotent no-ops. Grab hands each pending demand to exactly one tier (FIFO
by deposit time, ties broken by lower signature hash) and records the holder;
only that holder may return the result. When a tier goes out of service,
`requeue_tier` puts everything it held back to pending.

All operations are safe to call from any number of threads; each runs
atomically under the store lock, so any concurrent history is equivalent to
the sequential order in which operations acquired the lock.

An optional journal makes the store restartable: every state-changing event
is appended as a length-prefixed record and replayed on construction.
"""

from __future__ import annotations

import os
import struct
import threading
from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import demand as dm
from .demand import (
    Complete,
    Computed,
    Cursor,
    Demand,
    DemandKind,
    DemandSignature,
    Grab,
    Pending,
    Processing,
    Requeue,
    TierId,
    transition,
)
from .errors import NotFoundError, OwnershipError, ProtocolError, UnknownTierError

_STATE_NAMES = ("pending", "processing", "computed")
_KIND_NAMES = {
    DemandKind.INTENSIONAL: "intensional",
    DemandKind.PROCEDURAL: "procedural",
    DemandKind.SYSTEM: "system",
}


@dataclass(frozen=True)
class Accepted:
    pass


@dataclass(frozen=True)
class AlreadyComputed:
    result: bytes


@dataclass
class StoreEntry:
    demand: Demand
    deposit_ms: int
    history: list = field(default_factory=list)  # (event, timestamp_ms, actor)
    order_key: tuple = ()  # (deposit_ms, signature hash) — grab selection order

    def record(self, event: str, actor: TierId) -> None:
        self.history.append((event, dm.now_ms(), actor))


@dataclass(frozen=True)
class StoreStats:
    counts: dict  # state name -> kind name -> int
    total_deposits: int
    cache_hits: int

    def count(self, state: str, kind: Optional[str] = None) -> int:
        per_kind = self.counts.get(state, {})
        if kind is None:
            return sum(per_kind.values())
        return per_kind.get(kind, 0)

    @property
    def entries(self) -> int:
        return sum(self.count(s) for s in _STATE_NAMES)

    def as_dict(self) -> dict:
        return {
            "counts": {s: dict(k) for s, k in self.counts.items()},
            "total_deposits": self.total_deposits,
            "cache_hits": self.cache_hits,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StoreStats":
        return cls(
            counts=data.get("counts", {}),
            total_deposits=data.get("total_deposits", 0),
            cache_hits=data.get("cache_hits", 0),
        )


class DemandStore:
    def __init__(self, journal_path=None):
        self._lock = threading.Lock()
        self._entries: dict = {}  # DemandSignature -> StoreEntry
        self._pending: dict = {}  # subset of _entries currently pending
        self._tiers: set = set()
        self._total_deposits = 0
        self._cache_hits = 0
        self._journal_path = journal_path
        self._journal = None
        if journal_path is not None:
            if os.path.exists(journal_path) and os.path.getsize(journal_path) > 0:
                self._replay_journal(journal_path)
            self._journal = open(journal_path, "ab")
            # Holders cannot survive a restart: anything left processing is
            # put back to pending, same as a tier going out of service.
            for entry in self._entries.values():
                if isinstance(entry.demand.state, Processing):
                    holder = entry.demand.state.holder
                    entry.demand = transition(entry.demand, Requeue())
                    entry.record("requeue", holder)
                    self._pending[entry.demand.signature] = entry
                    self._log(
                        4,
                        dm.encode_signature(entry.demand.signature)
                        + dm.encode_tier_id(holder),
                    )

    # -- tier registry ------------------------------------------------------

    def connect_tier(self, tier: TierId) -> None:
        with self._lock:
            self._tiers.add(tier)

    def known_tiers(self) -> set:
        with self._lock:
            return set(self._tiers)

    # -- core operations ----------------------------------------------------

    def deposit(self, demand: Demand):
        """Insert a pending demand; answer from cache if already computed."""
        if not isinstance(demand.state, Pending):
            raise ProtocolError(
                f"deposit requires a pending demand, got state {demand.state.name}"
            )
        with self._lock:
            self._total_deposits += 1
            entry = self._entries.get(demand.signature)
            if entry is not None:
                if isinstance(entry.demand.state, Computed):
                    self._cache_hits += 1
                    return AlreadyComputed(entry.demand.state.result)
                # Pending or in flight: the existing entry is authoritative.
                return Accepted()
            deposit_ms = dm.now_ms()
            entry = StoreEntry(
                demand=demand,
                deposit_ms=deposit_ms,
                order_key=(deposit_ms, demand.signature.hash64()),
            )
            entry.record("deposit", demand.issued_by)
            self._entries[demand.signature] = entry
            self._pending[demand.signature] = entry
            self._log(1, dm.encode_demand(demand) + struct.pack(">q", entry.deposit_ms))
            return Accepted()

    def grab(
        self,
        tier: TierId,
        kind_filter: Iterable,
        context_filter: Optional[Iterable] = None,
    ) -> Optional[Demand]:
        """Atomically hand the oldest matching pending demand to `tier`.

        `kind_filter` selects demand kinds; `context_filter`, when given, is a
        set of (dimension, tag) pairs all of which must appear in the demand's
        context (this is how system demands are routed to one node).
        """
        kinds = set(kind_filter)
        required = list(context_filter) if context_filter else []
        with self._lock:
            if tier not in self._tiers:
                raise UnknownTierError(f"tier {tier} is not connected to this store")
            best = None
            for entry in self._pending.values():
                d = entry.demand
                if d.kind not in kinds:
                    continue
                if required and not d.signature.context.contains(required):
                    continue
                if best is None or entry.order_key < best.order_key:
                    best = entry
            if best is None:
                return None
            best.demand = transition(best.demand, Grab(tier))
            best.record("grab", tier)
            del self._pending[best.demand.signature]
            self._log(
                2,
                dm.encode_signature(best.demand.signature) + dm.encode_tier_id(tier),
            )
            return best.demand

    def return_result(self, tier: TierId, signature: DemandSignature, result: bytes) -> None:
        with self._lock:
            entry = self._entries.get(signature)
            if entry is None:
                raise NotFoundError(f"no entry for signature {signature}")
            state = entry.demand.state
            if not isinstance(state, Processing):
                raise ProtocolError(
                    f"result for {signature} in state {state.name}, expected processing"
                )
            if state.holder != tier:
                raise OwnershipError(
                    f"{tier} returned a result for {signature} held by {state.holder}"
                )
            entry.demand = transition(entry.demand, Complete(result))
            entry.record("complete", tier)
            self._log(
                3,
                dm.encode_signature(signature)
                + dm.pack_bytes(result)
                + dm.encode_tier_id(tier),
            )

    def requeue_tier(self, tier: TierId) -> int:
        """Put every demand held by `tier` back to pending; returns the count."""
        with self._lock:
            count = 0
            for entry in self._entries.values():
                state = entry.demand.state
                if isinstance(state, Processing) and state.holder == tier:
                    entry.demand = transition(entry.demand, Requeue())
                    entry.record("requeue", tier)
                    self._pending[entry.demand.signature] = entry
                    self._log(
                        4,
                        dm.encode_signature(entry.demand.signature)
                        + dm.encode_tier_id(tier),
                    )
                    count += 1
            return count

    def lookup(self, signature: DemandSignature) -> Optional[bytes]:
        with self._lock:
            entry = self._entries.get(signature)
            if entry is not None and isinstance(entry.demand.state, Computed):
                return entry.demand.state.result
            return None

    def stats(self) -> StoreStats:
        with self._lock:
            counts = {s: {} for s in _STATE_NAMES}
            for entry in self._entries.values():
                state = entry.demand.state.name
                kind = _KIND_NAMES[entry.demand.kind]
                counts[state][kind] = counts[state].get(kind, 0) + 1
            return StoreStats(
                counts=counts,
                total_deposits=self._total_deposits,
                cache_hits=self._cache_hits,
            )

    # -- introspection (tests, status views) ---------------------------------

    def entry(self, signature: DemandSignature) -> Optional[StoreEntry]:
        with self._lock:
            return self._entries.get(signature)

    def signatures(self) -> list:
        with self._lock:
            return list(self._entries.keys())

    def holders(self) -> dict:
        with self._lock:
            out = {}
            for sig, entry in self._entries.items():
                state = entry.demand.state
                if isinstance(state, Processing):
                    out[sig] = state.holder
            return out

    def close(self) -> None:
        if self._journal is not None:
            self._journal.close()
            self._journal = None

    # -- journal --------------------------------------------------------------

    def _log(self, tag: int, body: bytes) -> None:
        if self._journal is None:
            return
        record = bytes([tag]) + body
        self._journal.write(struct.pack(">I", len(record)) + record)
        self._journal.flush()

    def _replay_journal(self, path) -> None:
        with open(path, "rb") as f:
            buf = f.read()
        cur = Cursor(buf)
        while not cur.done():
            record = cur.take(cur.u32())
            rc = Cursor(record)
            tag = rc.u8()
            if tag == 1:
                d = dm.decode_demand(None, rc)
                deposit_ms = rc.i64()
                entry = StoreEntry(
                    demand=d,
                    deposit_ms=deposit_ms,
                    order_key=(deposit_ms, d.signature.hash64()),
                )
                entry.record("deposit", d.issued_by)
                self._entries[d.signature] = entry
                self._pending[d.signature] = entry
                self._total_deposits += 1
            elif tag == 2:
                sig = dm.decode_signature(rc)
                tier = dm.decode_tier_id(rc)
                entry = self._entries[sig]
                entry.demand = transition(entry.demand, Grab(tier))
                entry.record("grab", tier)
                self._pending.pop(sig, None)
                self._tiers.add(tier)
            elif tag == 3:
                sig = dm.decode_signature(rc)
                result = rc.bytes_()
                tier = dm.decode_tier_id(rc)
                entry = self._entries[sig]
                entry.demand = transition(entry.demand, Complete(result))
                entry.record("complete", tier)
            elif tag == 4:
                sig = dm.decode_signature(rc)
                tier = dm.decode_tier_id(rc)
                entry = self._entries[sig]
                entry.demand = transition(entry.demand, Requeue())
                entry.record("requeue", tier)
                self._pending[sig] = entry
            else:
                raise ProtocolError(f"corrupt journal: unknown record tag {tag}")
