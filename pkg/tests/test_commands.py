import random

import pytest

from tiernet.commands import (
    Allocate,
    Deallocate,
    Register,
    StartEval,
    StartGmt,
    StartNode,
    Step,
    parse_command,
    render_command,
)
from tiernet.demand import TierId, TierType
from tiernet.errors import UsageError


class TestGrammar:
    def test_start_gmt(self):
        assert parse_command("start GMT GMTConfigFile.config") == StartGmt(
            config="GMTConfigFile.config"
        )

    def test_allocate_worker_form(self):
        assert parse_command("allocate 1 DWT dwt.config 1 2") == Allocate(
            node_id=1, tier_type=TierType.DWT, config="dwt.config", dst_index=1, count=2
        )

    def test_allocate_store_form_has_no_index(self):
        assert parse_command("allocate 1 DST dst.config 1") == Allocate(
            node_id=1, tier_type=TierType.DST, config="dst.config", dst_index=None, count=1
        )

    def test_deallocate_lists_indices(self):
        assert parse_command("deallocate 1 DWT 1 2") == Deallocate(
            node_id=1, tier_type=TierType.DWT, indices=(1, 2)
        )

    def test_register_and_start_node(self):
        assert parse_command("register node1") == Register(node="node1")
        assert parse_command("start node node1") == StartNode(target="node1")

    def test_eval_and_step(self):
        assert parse_command("eval 1:DGT:1") == StartEval(tier=TierId(1, TierType.DGT, 1))
        assert parse_command("step 1:DGT:1") == Step(tier=TierId(1, TierType.DGT, 1))
        assert parse_command("step 1:DGT:1 3") == Step(tier=TierId(1, TierType.DGT, 1), count=3)

    @pytest.mark.parametrize(
        "line",
        [
            "",
            "unknownverb x",
            "start",
            "start GMT",
            "start GMT a b",
            "register",
            "allocate 1 DWT dwt.config 1",  # DGT/DWT arity without count
            "allocate x DST dst.config 1",
            "allocate 1 DST dst.config",
            "allocate 1 GMT gmt.config 1 1",
            "deallocate 1 DWT",
            "deallocate 1 XYZ 1",
            "eval nonsense",
            "eval 1:DGT:1 extra extra",
            "step",
        ],
    )
    def test_usage_errors(self, line):
        with pytest.raises(UsageError):
            parse_command(line)

    def test_usage_error_names_form(self):
        with pytest.raises(UsageError) as err:
            parse_command("deallocate 1")
        assert "deallocate NodeID TierType TierID" in str(err.value)


class TestRoundtrip:
    def random_command(self, rng: random.Random):
        kind = rng.randrange(7)
        if kind == 0:
            return StartGmt(config=f"gmt{rng.randint(0, 9)}.config")
        if kind == 1:
            return StartNode(target=f"node{rng.randint(0, 9)}")
        if kind == 2:
            return Register(node=f"node{rng.randint(0, 9)}")
        if kind == 3:
            tier_type = rng.choice([TierType.DGT, TierType.DWT, TierType.DST])
            if tier_type is TierType.DST:
                return Allocate(
                    node_id=rng.randint(1, 9), tier_type=tier_type,
                    config="dst.config", dst_index=None, count=rng.randint(1, 5),
                )
            return Allocate(
                node_id=rng.randint(1, 9), tier_type=tier_type,
                config=f"{tier_type.value.lower()}.config",
                dst_index=rng.randint(0, 4), count=rng.randint(1, 5),
            )
        if kind == 4:
            return Deallocate(
                node_id=rng.randint(1, 9),
                tier_type=rng.choice(list(TierType)),
                indices=tuple(rng.randint(1, 9) for _ in range(rng.randint(1, 4))),
            )
        if kind == 5:
            return StartEval(
                tier=TierId(rng.randint(1, 9), TierType.DGT, rng.randint(1, 9))
            )
        return Step(
            tier=TierId(rng.randint(1, 9), TierType.DGT, rng.randint(1, 9)),
            count=rng.choice([1, 1, 2, 5]),
        )

    def test_parse_render_identity(self):
        rng = random.Random(13)
        for _ in range(500):
            command = self.random_command(rng)
            assert parse_command(render_command(command)) == command
