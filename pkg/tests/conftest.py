import random

import pytest

from tiernet.demand import (
    Context,
    Demand,
    DemandKind,
    Pending,
    TierId,
    TierType,
    make_signature,
)
from tiernet.graph import NetworkGraph, add_instance, add_node, add_tier, connect
from tiernet.store import DemandStore
from tiernet.transport import StoreServer


def make_demand(
    program="p1",
    identifier="f",
    context=(("n", 1),),
    kind=DemandKind.PROCEDURAL,
    payload=b"payload",
    issued_by=TierId(1, TierType.DGT, 1),
):
    return Demand(
        signature=make_signature(program, identifier, context),
        kind=kind,
        state=Pending(),
        payload=payload,
        issued_by=issued_by,
    )


def worker_id(n=1, node=1):
    return TierId(node, TierType.DWT, n)


@pytest.fixture
def store():
    s = DemandStore()
    yield s
    s.close()


@pytest.fixture
def served_store():
    """A store behind a listening server with a fast failure detector."""
    s = DemandStore()
    server = StoreServer(s, heartbeat_seconds=0.2, missed_beats=3).start()
    yield s, server
    server.stop()
    s.close()


def example_graph():
    """Reference five-tier topology: a manager host node plus one workload
    node carrying a store, a generator, and two workers wired to the store."""
    g = NetworkGraph()
    g = add_instance(g, "i1")
    g = add_node(g, "gmthost", host="127.0.0.1")
    g = add_node(g, "node1", host="127.0.0.1")
    g = add_tier(g, "gmt1", TierType.GMT, "i1", "gmthost", "gmt.config")
    g = add_tier(g, "dst1", TierType.DST, "i1", "node1", "dst.config")
    g = add_tier(g, "dgt1", TierType.DGT, "i1", "node1", "dgt.config")
    g = add_tier(g, "dwt1", TierType.DWT, "i1", "node1", "dwt.config", count=2)
    g = connect(g, "dgt1", "dst1")
    g = connect(g, "dwt1", "dst1")
    return g


def random_context(rng: random.Random, max_dims=4):
    names = rng.sample(["a", "b", "c", "d", "e", "x", "y", "z"], k=rng.randint(0, max_dims))
    return Context.of([(n, rng.randint(-1000, 1000)) for n in names])


LISTING_DGT_CONFIG = """\
# Which implementation of the DGT class to instantiate.
gipsy.GEE.multitier.wrapper.impl=gipsy.tests.GEE.simulator.DGTSimulator
gipsy.GEE.multitier.DGT.DemandDispatcher.impl=gipsy.GEE.IDP.DemandGenerator.jini.rmi.JiniDemandDispatcher
# 0 Concurrent asynchronously
# 1 User-controlled asynchronously
# 2 Response time tester: synchronously
# 3 Space-scalability tester.
gipsy.tests.GEE.simulator.mode=2
gipsy.tests.GEE.simulator.tester.parameter=1
# Number of instances to be created.
gipsy.tests.GEE.simulator.tester.number=2
# Number of maximum demands.
gipsy.tests.GEE.simulator.demand.payload=32
"""
