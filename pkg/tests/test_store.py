import itertools
import random
import threading

import pytest

from tiernet.demand import DemandKind
from tiernet.errors import (
    NotFoundError,
    OwnershipError,
    ProtocolError,
    UnknownTierError,
)
from tiernet.store import Accepted, AlreadyComputed, DemandStore

from conftest import make_demand, worker_id

ALL_KINDS = set(DemandKind)


def connected(store, *tiers):
    for t in tiers:
        store.connect_tier(t)
    return store


class TestDeposit:
    def test_fresh_signature_accepted(self, store):
        assert store.deposit(make_demand()) == Accepted()

    def test_computed_signature_served_from_cache(self, store):
        w1 = worker_id(1)
        connected(store, w1)
        d = make_demand()
        store.deposit(d)
        grabbed = store.grab(w1, ALL_KINDS)
        store.return_result(w1, grabbed.signature, b"value")
        outcome = store.deposit(make_demand())
        assert outcome == AlreadyComputed(b"value")
        assert store.stats().cache_hits == 1

    def test_pending_duplicate_is_noop(self, store):
        d = make_demand()
        assert store.deposit(d) == Accepted()
        assert store.deposit(make_demand()) == Accepted()
        # Oracle: sequential replay keeps exactly one entry per signature.
        assert store.signatures() == [d.signature]
        assert store.stats().count("pending") == 1
        assert store.stats().total_deposits == 2

    def test_non_pending_deposit_rejected(self, store):
        from tiernet.demand import Grab, transition

        d = transition(make_demand(), Grab(worker_id(1)))
        with pytest.raises(ProtocolError):
            store.deposit(d)


class TestGrab:
    def test_empty_store(self, store):
        w1 = worker_id(1)
        connected(store, w1)
        assert store.grab(w1, ALL_KINDS) is None

    def test_unknown_tier_rejected(self, store):
        with pytest.raises(UnknownTierError):
            store.grab(worker_id(9), ALL_KINDS)

    def test_kind_filter_excludes(self, store):
        w1 = worker_id(1)
        connected(store, w1)
        store.deposit(make_demand(kind=DemandKind.PROCEDURAL))
        assert store.grab(w1, {DemandKind.SYSTEM}) is None
        assert store.grab(w1, {DemandKind.PROCEDURAL}) is not None

    def test_context_filter_routes(self, store):
        w1 = worker_id(1)
        connected(store, w1)
        store.deposit(make_demand(identifier="a", context=(("node", 1), ("seq", 1))))
        store.deposit(make_demand(identifier="b", context=(("node", 2), ("seq", 2))))
        got = store.grab(w1, ALL_KINDS, context_filter=[("node", 2)])
        assert got.signature.identifier == "b"
        assert store.grab(w1, ALL_KINDS, context_filter=[("node", 2)]) is None

    def test_fifo_by_deposit_time(self, store):
        w1 = worker_id(1)
        connected(store, w1)
        demands = [make_demand(identifier=f"d{k}") for k in range(5)]
        for k, d in enumerate(demands):
            store.deposit(d)
            store._entries[d.signature].order_key = (k, 0)  # distinct timestamps
        grabbed = [store.grab(w1, ALL_KINDS).signature.identifier for _ in range(5)]
        assert grabbed == [f"d{k}" for k in range(5)]

    def test_tie_break_on_equal_timestamps_is_lower_hash(self, store):
        w1 = worker_id(1)
        connected(store, w1)
        demands = [make_demand(identifier=f"t{k}") for k in range(4)]
        for d in demands:
            store.deposit(d)
            entry = store._entries[d.signature]
            entry.order_key = (1000, d.signature.hash64())  # force equal times
        expected = [
            str(s.identifier)
            for s in sorted((d.signature for d in demands), key=lambda s: s.hash64())
        ]
        grabbed = [store.grab(w1, ALL_KINDS).signature.identifier for _ in range(4)]
        assert grabbed == expected

    def test_one_demand_eight_concurrent_grabbers(self, store):
        # Oracle: across randomized repetitions, successful grabs == 1.
        for rep in range(25):
            s = DemandStore()
            workers = [worker_id(i) for i in range(1, 9)]
            connected(s, *workers)
            s.deposit(make_demand(identifier=f"rep{rep}"))
            wins = []
            barrier = threading.Barrier(8)

            def attempt(w):
                barrier.wait()
                got = s.grab(w, ALL_KINDS)
                if got is not None:
                    wins.append(w)

            threads = [threading.Thread(target=attempt, args=(w,)) for w in workers]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            assert len(wins) == 1


class TestReturnResult:
    def test_lookup_after_return(self, store):
        w1 = worker_id(1)
        connected(store, w1)
        d = make_demand()
        store.deposit(d)
        store.grab(w1, ALL_KINDS)
        store.return_result(w1, d.signature, b"v")
        assert store.lookup(d.signature) == b"v"

    def test_wrong_holder_rejected(self, store):
        w1, w2 = worker_id(1), worker_id(2)
        connected(store, w1, w2)
        d = make_demand()
        store.deposit(d)
        store.grab(w1, ALL_KINDS)
        with pytest.raises(OwnershipError):
            store.return_result(w2, d.signature, b"v")

    def test_unknown_signature_rejected(self, store):
        with pytest.raises(NotFoundError):
            store.return_result(worker_id(1), make_demand().signature, b"v")

    def test_return_on_pending_rejected(self, store):
        d = make_demand()
        store.deposit(d)
        with pytest.raises(ProtocolError):
            store.return_result(worker_id(1), d.signature, b"v")


class TestRequeue:
    def test_requeues_all_holdings(self, store):
        w1, w2 = worker_id(1), worker_id(2)
        connected(store, w1, w2)
        for k in range(3):
            store.deposit(make_demand(identifier=f"d{k}"))
        for _ in range(3):
            store.grab(w1, ALL_KINDS)
        assert store.requeue_tier(w1) == 3
        assert store.holders() == {}
        regrabbed = [store.grab(w2, ALL_KINDS) for _ in range(3)]
        assert all(g is not None for g in regrabbed)

    def test_requeue_none_held(self, store):
        assert store.requeue_tier(worker_id(1)) == 0

    def test_results_match_failure_free_run(self):
        # Oracle: single-worker sequential run over the same demands.
        def work(payload):
            return bytes(reversed(payload))

        demands = [make_demand(identifier=f"d{k}", payload=bytes([k] * 4)) for k in range(6)]

        sequential = DemandStore()
        w = worker_id(9)
        connected(sequential, w)
        for d in demands:
            sequential.deposit(d)
        expected = {}
        while True:
            got = sequential.grab(w, ALL_KINDS)
            if got is None:
                break
            sequential.return_result(w, got.signature, work(got.payload))
            expected[got.signature] = sequential.lookup(got.signature)

        faulty = DemandStore()
        w1, w2 = worker_id(1), worker_id(2)
        connected(faulty, w1, w2)
        for d in demands:
            faulty.deposit(d)
        faulty.grab(w1, ALL_KINDS)
        faulty.grab(w1, ALL_KINDS)  # w1 dies holding two demands
        assert faulty.requeue_tier(w1) == 2
        while True:
            got = faulty.grab(w2, ALL_KINDS)
            if got is None:
                break
            faulty.return_result(w2, got.signature, work(got.payload))
        actual = {d.signature: faulty.lookup(d.signature) for d in demands}
        assert actual == expected


class TestLookupAndStats:
    def test_lookup_states(self, store):
        w1 = worker_id(1)
        connected(store, w1)
        d = make_demand()
        assert store.lookup(d.signature) is None  # unknown
        store.deposit(d)
        assert store.lookup(d.signature) is None  # pending
        store.grab(w1, ALL_KINDS)
        store.return_result(w1, d.signature, b"r")
        assert store.lookup(d.signature) == b"r"

    def test_fresh_store_all_zeros(self, store):
        stats = store.stats()
        assert stats.entries == 0
        assert stats.total_deposits == 0
        assert stats.cache_hits == 0

    def test_counts_after_two_deposits_one_grab(self, store):
        w1 = worker_id(1)
        connected(store, w1)
        store.deposit(make_demand(identifier="a"))
        store.deposit(make_demand(identifier="b"))
        store.grab(w1, ALL_KINDS)
        stats = store.stats()
        assert stats.count("pending") == 1
        assert stats.count("processing") == 1
        assert stats.count("computed") == 0

    def test_randomized_sequence_matches_replay_oracle(self):
        # Oracle: a dict-based sequential replay of the same operation list.
        rng = random.Random(99)
        for _ in range(30):
            store = DemandStore()
            workers = [worker_id(i) for i in range(1, 4)]
            connected(store, *workers)
            model = {}  # sig -> [state, holder]
            deposits = cache_hits = 0
            signatures = [
                make_demand(identifier=f"s{i}", kind=rng.choice(list(DemandKind)))
                for i in range(8)
            ]
            for _ in range(60):
                op = rng.choice(["deposit", "grab", "return", "requeue"])
                if op == "deposit":
                    d = rng.choice(signatures)
                    outcome = store.deposit(d)
                    deposits += 1
                    state = model.get(d.signature)
                    if state is None:
                        model[d.signature] = ["pending", None]
                        assert outcome == Accepted()
                    elif state[0] == "computed":
                        cache_hits += 1
                        assert isinstance(outcome, AlreadyComputed)
                    else:
                        assert outcome == Accepted()
                elif op == "grab":
                    w = rng.choice(workers)
                    got = store.grab(w, ALL_KINDS)
                    pending = [s for s, st in model.items() if st[0] == "pending"]
                    if pending:
                        assert got is not None and got.signature in pending
                        model[got.signature] = ["processing", w]
                    else:
                        assert got is None
                elif op == "return":
                    w = rng.choice(workers)
                    held = [s for s, st in model.items() if st == ["processing", w]]
                    if held:
                        store.return_result(w, held[0], b"r")
                        model[held[0]] = ["computed", None]
                else:
                    w = rng.choice(workers)
                    count = store.requeue_tier(w)
                    held = [s for s, st in model.items() if st == ["processing", w]]
                    assert count == len(held)
                    for s in held:
                        model[s] = ["pending", None]
            stats = store.stats()
            for state in ("pending", "processing", "computed"):
                assert stats.count(state) == sum(1 for st in model.values() if st[0] == state)
            assert stats.total_deposits == deposits
            assert stats.cache_hits == cache_hits

    def test_memoization_is_stable(self, store):
        w1 = worker_id(1)
        connected(store, w1)
        d = make_demand()
        store.deposit(d)
        store.grab(w1, ALL_KINDS)
        store.return_result(w1, d.signature, b"first")
        for _ in range(5):
            assert store.deposit(make_demand()) == AlreadyComputed(b"first")
            assert store.lookup(d.signature) == b"first"

    def test_history_is_appended(self, store):
        w1 = worker_id(1)
        connected(store, w1)
        d = make_demand()
        store.deposit(d)
        store.grab(w1, ALL_KINDS)
        store.requeue_tier(w1)
        store.grab(w1, ALL_KINDS)
        store.return_result(w1, d.signature, b"v")
        events = [e for e, _, _ in store.entry(d.signature).history]
        assert events == ["deposit", "grab", "requeue", "grab", "complete"]


class TestJournal:
    def test_replay_restores_entries(self, tmp_path):
        path = tmp_path / "store.journal"
        store = DemandStore(journal_path=str(path))
        w1 = worker_id(1)
        connected(store, w1)
        d1 = make_demand(identifier="done")
        d2 = make_demand(identifier="waiting")
        store.deposit(d1)
        store.deposit(d2)
        store.grab(w1, ALL_KINDS)
        grabbed = store.grab(w1, ALL_KINDS)
        done, waiting = (d1, d2) if grabbed.signature == d2.signature else (d2, d1)
        store.return_result(w1, d1.signature, b"result")
        store.close()

        restored = DemandStore(journal_path=str(path))
        assert restored.lookup(d1.signature) == b"result"
        stats = restored.stats()
        assert stats.count("computed") == 1
        # The in-flight demand is requeued on restart (holder cannot survive).
        assert stats.count("pending") == 1
        assert stats.count("processing") == 0
        restored.close()

    def test_replayed_store_continues(self, tmp_path):
        path = tmp_path / "store.journal"
        store = DemandStore(journal_path=str(path))
        store.deposit(make_demand())
        store.close()
        restored = DemandStore(journal_path=str(path))
        w1 = worker_id(1)
        connected(restored, w1)
        got = restored.grab(w1, ALL_KINDS)
        restored.return_result(w1, got.signature, b"v")
        assert restored.lookup(got.signature) == b"v"
        restored.close()


# --- linearizability at desk scale ---------------------------------------------


class _SequentialModel:
    """Sequential model accepted by the demand state machine; used to check
    that a concurrent history linearizes."""

    def __init__(self):
        self.state = {}  # sig -> ("pending"|"processing"|"computed", holder, result)

    def copy(self):
        m = _SequentialModel()
        m.state = dict(self.state)
        return m

    def apply(self, op, args, result):
        """Return True iff applying op yields `result` legally."""
        if op == "deposit":
            (sig,) = args
            current = self.state.get(sig)
            if current is None:
                self.state[sig] = ("pending", None, None)
                return result == "accepted"
            if current[0] == "computed":
                return result == ("computed", current[2])
            return result == "accepted"
        if op == "grab":
            (tier,) = args
            if result is None:
                return not any(st[0] == "pending" for st in self.state.values())
            sig = result
            current = self.state.get(sig)
            if current is None or current[0] != "pending":
                return False
            self.state[sig] = ("processing", tier, None)
            return True
        if op == "return":
            tier, sig, value = args
            current = self.state.get(sig)
            ok = current is not None and current[0] == "processing" and current[1] == tier
            if result == "ok":
                if not ok:
                    return False
                self.state[sig] = ("computed", None, value)
                return True
            return not ok  # errored call must have been illegal
        if op == "requeue":
            (tier,) = args
            held = [s for s, st in self.state.items() if st[0] == "processing" and st[1] == tier]
            for s in held:
                self.state[s] = ("pending", None, None)
            return result == len(held)
        raise AssertionError(op)


def _linearizable(history, model=None):
    """Wing-Gong style search: find an order consistent with real time whose
    sequential replay matches every observed result."""
    model = model or _SequentialModel()
    remaining = list(range(len(history)))

    def precedes(a, b):
        return history[a]["end"] < history[b]["start"]

    def search(placed, model, remaining):
        if not remaining:
            return True
        for i in list(remaining):
            # i is linearizable next only if nothing remaining must precede it
            if any(precedes(j, i) for j in remaining if j != i):
                continue
            h = history[i]
            m = model.copy()
            if not m.apply(h["op"], h["args"], h["result"]):
                continue
            rest = [j for j in remaining if j != i]
            if search(placed + [i], m, rest):
                return True
        return False

    return search([], model, remaining)


class TestLinearizability:
    def test_concurrent_histories_linearize(self):
        rng = random.Random(5)
        for _ in range(15):
            store = DemandStore()
            workers = [worker_id(1), worker_id(2), worker_id(3)]
            connected(store, *workers)
            demands = [make_demand(identifier=f"l{i}") for i in range(3)]
            history = []
            lock = threading.Lock()
            counter = itertools.count()

            def run_ops(w, ops):
                for op, demand_index in ops:
                    start = next(counter)
                    if op == "deposit":
                        d = demands[demand_index]
                        outcome = store.deposit(d)
                        if isinstance(outcome, AlreadyComputed):
                            entry = ("deposit", (d.signature,), ("computed", outcome.result))
                        else:
                            entry = ("deposit", (d.signature,), "accepted")
                    elif op == "grab":
                        got = store.grab(w, ALL_KINDS)
                        entry = ("grab", (w,), got.signature if got else None)
                    elif op == "return":
                        holders = store.holders()
                        mine = [s for s, h in holders.items() if h == w]
                        if not mine:
                            continue
                        try:
                            store.return_result(w, mine[0], b"v")
                            entry = ("return", (w, mine[0], b"v"), "ok")
                        except (OwnershipError, ProtocolError, NotFoundError):
                            entry = ("return", (w, mine[0], b"v"), "error")
                    else:
                        count = store.requeue_tier(w)
                        entry = ("requeue", (w,), count)
                    end = next(counter)
                    with lock:
                        history.append(
                            {"op": entry[0], "args": entry[1], "result": entry[2],
                             "start": start, "end": end}
                        )

            plans = [
                [
                    (rng.choice(["deposit", "grab", "return", "requeue"]), rng.randrange(3))
                    for _ in range(4)
                ]
                for _ in workers
            ]
            threads = [
                threading.Thread(target=run_ops, args=(w, plan))
                for w, plan in zip(workers, plans)
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()

            assert _linearizable(history), f"history not linearizable: {history}"
