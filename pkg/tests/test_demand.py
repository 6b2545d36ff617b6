import random

import pytest

from tiernet.demand import (
    Complete,
    Computed,
    Context,
    Demand,
    DemandKind,
    Grab,
    Pending,
    Processing,
    Requeue,
    TierId,
    TierType,
    decode_demand,
    decode_system_body,
    encode_demand,
    encode_system_body,
    make_signature,
    transition,
)
from tiernet.errors import InvalidContextError, StateMachineError

from conftest import make_demand, worker_id


class TestSignature:
    def test_identity_same_inputs(self):
        a = make_signature("p1", "fib", [("n", 5)])
        b = make_signature("p1", "fib", [("n", 5)])
        assert a == b
        assert a.hash64() == b.hash64()

    def test_context_order_is_canonical(self):
        a = make_signature("p1", "f", [("y", 2), ("x", 1)])
        b = make_signature("p1", "f", [("x", 1), ("y", 2)])
        assert a == b
        assert a.hash64() == b.hash64()

    def test_duplicate_dimension_rejected(self):
        with pytest.raises(InvalidContextError):
            make_signature("p1", "f", [("x", 1), ("x", 2)])

    def test_empty_dimension_rejected(self):
        with pytest.raises(InvalidContextError):
            make_signature("p1", "f", [("", 1)])

    def test_hashes_distinct_over_generated_set(self):
        # Oracle: brute-force uniqueness over 1000 signatures differing in one tag.
        signatures = [make_signature("p1", "f", [("n", k)]) for k in range(1000)]
        hashes = {s.hash64() for s in signatures}
        assert len(hashes) == 1000

    def test_permutation_congruence(self):
        rng = random.Random(7)
        names = ["a", "b", "c", "d", "e"]
        for _ in range(200):
            entries = [(n, rng.randint(-99, 99)) for n in names]
            shuffled = entries[:]
            rng.shuffle(shuffled)
            s1 = make_signature("p", "id", entries)
            s2 = make_signature("p", "id", shuffled)
            assert s1 == s2
            assert s1.hash64() == s2.hash64()


class TestTransition:
    def test_grab_from_pending(self):
        d = make_demand()
        w1 = worker_id(1)
        out = transition(d, Grab(w1))
        assert isinstance(out.state, Processing)
        assert out.state.holder == w1
        assert isinstance(d.state, Pending)  # original untouched

    def test_requeue_from_processing(self):
        d = transition(make_demand(), Grab(worker_id(1)))
        out = transition(d, Requeue())
        assert isinstance(out.state, Pending)

    def test_complete_stores_result(self):
        d = transition(make_demand(), Grab(worker_id(1)))
        out = transition(d, Complete(b"\x01\x02"))
        assert isinstance(out.state, Computed)
        assert out.state.result == b"\x01\x02"

    def test_grab_from_computed_errors(self):
        d = transition(make_demand(), Grab(worker_id(1)))
        d = transition(d, Complete(b"v"))
        with pytest.raises(StateMachineError) as err:
            transition(d, Grab(worker_id(2)))
        assert "computed" in str(err.value)
        assert "Grab" in str(err.value)

    @pytest.mark.parametrize(
        "state_events,event",
        [
            ([], Complete(b"")),  # pending + complete
            ([], Requeue()),  # pending + requeue
            ([Grab(worker_id(1))], Grab(worker_id(2))),  # processing + grab
            ([Grab(worker_id(1)), Complete(b"v")], Complete(b"w")),
            ([Grab(worker_id(1)), Complete(b"v")], Requeue()),
        ],
    )
    def test_illegal_moves_error(self, state_events, event):
        d = make_demand()
        for e in state_events:
            d = transition(d, e)
        with pytest.raises(StateMachineError):
            transition(d, event)

    def test_random_sequences_stay_in_machine(self):
        # Property: under arbitrary event sequences the reachable states are
        # exactly the three machine states, and illegal events always raise.
        rng = random.Random(42)
        legal = {
            "pending": {"grab"},
            "processing": {"complete", "requeue"},
            "computed": set(),
        }
        for _ in range(2000):
            d = make_demand(context=(("n", rng.randint(0, 9)),))
            for _ in range(rng.randint(1, 8)):
                name = rng.choice(["grab", "complete", "requeue"])
                event = {
                    "grab": Grab(worker_id(rng.randint(1, 3))),
                    "complete": Complete(b"r"),
                    "requeue": Requeue(),
                }[name]
                before = d.state.name
                if name in legal[before]:
                    d = transition(d, event)
                    expected = {"grab": "processing", "complete": "computed", "requeue": "pending"}
                    assert d.state.name == expected[name]
                else:
                    with pytest.raises(StateMachineError):
                        transition(d, event)
                assert d.state.name in legal


class TestEncoding:
    def test_roundtrip_simple(self):
        d = make_demand()
        assert decode_demand(encode_demand(d)) == d

    def test_roundtrip_randomized(self):
        rng = random.Random(3)
        kinds = list(DemandKind)
        for _ in range(300):
            d = Demand(
                signature=make_signature(
                    f"p{rng.randint(0, 5)}",
                    rng.choice(["f", "g", "sim", ""]),
                    [(n, rng.randint(-(2**40), 2**40)) for n in rng.sample("abcdef", rng.randint(0, 4))],
                ),
                kind=rng.choice(kinds),
                payload=rng.randbytes(rng.randint(0, 64)),
                issued_by=TierId(
                    rng.randint(0, 100), rng.choice(list(TierType)), rng.randint(0, 50)
                ),
            )
            if rng.random() < 0.3:
                d = transition(d, Grab(worker_id(rng.randint(1, 5))))
            if not isinstance(d.state, Pending) and rng.random() < 0.5:
                d = transition(d, Complete(rng.randbytes(8)))
            assert decode_demand(encode_demand(d)) == d

    def test_payload_byte_exact(self):
        payload = bytes(range(256))
        d = make_demand(payload=payload)
        assert decode_demand(encode_demand(d)).payload == payload

    def test_trailing_bytes_rejected(self):
        with pytest.raises(ValueError):
            decode_demand(encode_demand(make_demand()) + b"x")


class TestTierId:
    def test_parse_render(self):
        t = TierId(3, TierType.DWT, 2)
        assert str(t) == "3:DWT:2"
        assert TierId.parse("3:DWT:2") == t

    def test_parse_rejects_garbage(self):
        for bad in ("3:DWT", "x:DWT:1", "1:XYZ:1", "1:DWT:z"):
            with pytest.raises(ValueError):
                TierId.parse(bad)


class TestSystemBody:
    def test_roundtrip(self):
        raw = encode_system_body("NodeRegistration", name="n1", host="127.0.0.1", color="")
        body = decode_system_body(raw)
        assert body["kind"] == "NodeRegistration"
        assert body["name"] == "n1"

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            encode_system_body("Nonsense")
        with pytest.raises(ValueError):
            decode_system_body(b'{"kind": "Nonsense"}')


def test_context_lookup_helpers():
    ctx = Context.of([("node", 2), ("seq", 9)])
    assert ctx.tag("node") == 2
    assert ctx.tag("missing") is None
    assert ctx.contains([("node", 2)])
    assert not ctx.contains([("node", 3)])
