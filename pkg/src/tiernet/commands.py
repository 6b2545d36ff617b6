"""Management commands: the parsed form, the textual grammar, and the
parse/render pair. Rendering and parsing are exact inverses.

Grammar:

    start GMT <configFile>
    start node <nameOrConfig>
    register <node>
    allocate <nodeId> DGT|DWT <configFile> <dstIndex> <howMany>
    allocate <nodeId> DST <configFile> <howMany>
    deallocate <nodeId> <tierType> <tierIndex>...
    eval <nodeId:type:index>
    step <nodeId:type:index> [count]
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .demand import TierId, TierType
from .errors import UsageError

USAGE = """commands:
  start GMT <configFile>
  start node <nameOrConfig>
  register <node>
  allocate <nodeId> DGT|DWT <configFile> <dstIndex> <howMany>
  allocate <nodeId> DST <configFile> <howMany>
  deallocate <nodeId> <tierType> <tierIndex> [<tierIndex> ...]
  eval <nodeId:type:index>
  step <nodeId:type:index> [count]"""


@dataclass(frozen=True)
class StartGmt:
    config: str


@dataclass(frozen=True)
class StartNode:
    target: str  # graph node name, or a node config file for a local daemon


@dataclass(frozen=True)
class Register:
    node: str


@dataclass(frozen=True)
class Allocate:
    node_id: int
    tier_type: TierType
    config: str
    dst_index: Optional[int]  # None for DST allocations
    count: int


@dataclass(frozen=True)
class Deallocate:
    node_id: int
    tier_type: TierType
    indices: tuple


@dataclass(frozen=True)
class StartEval:
    tier: TierId


@dataclass(frozen=True)
class Step:
    tier: TierId
    count: int = 1


Command = object  # union of the dataclasses above


def render_command(command) -> str:
    if isinstance(command, StartGmt):
        return f"start GMT {command.config}"
    if isinstance(command, StartNode):
        return f"start node {command.target}"
    if isinstance(command, Register):
        return f"register {command.node}"
    if isinstance(command, Allocate):
        if command.tier_type is TierType.DST:
            return f"allocate {command.node_id} DST {command.config} {command.count}"
        return (
            f"allocate {command.node_id} {command.tier_type} "
            f"{command.config} {command.dst_index} {command.count}"
        )
    if isinstance(command, Deallocate):
        ids = " ".join(str(i) for i in command.indices)
        return f"deallocate {command.node_id} {command.tier_type} {ids}"
    if isinstance(command, StartEval):
        return f"eval {command.tier}"
    if isinstance(command, Step):
        if command.count != 1:
            return f"step {command.tier} {command.count}"
        return f"step {command.tier}"
    raise UsageError(f"unknown command object {command!r}")


def _int_arg(text: str, what: str, form: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"{what} must be an integer in {form!r}, got {text!r}") from None


def _tier_type_arg(text: str, form: str) -> TierType:
    try:
        return TierType(text)
    except ValueError:
        raise UsageError(f"unknown tier type {text!r} in {form!r}") from None


def _tier_id_arg(text: str, form: str) -> TierId:
    try:
        return TierId.parse(text)
    except ValueError as e:
        raise UsageError(f"{e} in {form!r}") from None


def parse_command(line: str):
    """Parse one command line; raises UsageError naming the expected form."""
    words = line.split()
    if not words:
        raise UsageError("empty command\n" + USAGE)
    verb = words[0]
    if verb == "start":
        if len(words) == 3 and words[1] == "GMT":
            return StartGmt(config=words[2])
        if len(words) == 3 and words[1] == "node":
            return StartNode(target=words[2])
        raise UsageError("expected: start GMT <configFile> | start node <nameOrConfig>")
    if verb == "register":
        if len(words) != 2:
            raise UsageError("expected: register <node>")
        return Register(node=words[1])
    if verb == "allocate":
        if len(words) == 5 and words[2] == "DST":
            return Allocate(
                node_id=_int_arg(words[1], "NodeID", "allocate NodeID DST ConfigFile HowMany"),
                tier_type=TierType.DST,
                config=words[3],
                dst_index=None,
                count=_int_arg(words[4], "HowMany", "allocate NodeID DST ConfigFile HowMany"),
            )
        if len(words) == 6:
            form = "allocate NodeID TierType ConfigFile DSTIndex HowMany"
            tier_type = _tier_type_arg(words[2], form)
            if tier_type not in (TierType.DGT, TierType.DWT):
                raise UsageError(f"only DGT/DWT take a DSTIndex; got {tier_type} in {form!r}")
            return Allocate(
                node_id=_int_arg(words[1], "NodeID", form),
                tier_type=tier_type,
                config=words[3],
                dst_index=_int_arg(words[4], "DSTIndex", form),
                count=_int_arg(words[5], "HowMany", form),
            )
        raise UsageError(
            "expected: allocate NodeID DGT|DWT ConfigFile DSTIndex HowMany"
            " | allocate NodeID DST ConfigFile HowMany"
        )
    if verb == "deallocate":
        form = "deallocate NodeID TierType TierID..."
        if len(words) < 4:
            raise UsageError(f"expected: {form}")
        return Deallocate(
            node_id=_int_arg(words[1], "NodeID", form),
            tier_type=_tier_type_arg(words[2], form),
            indices=tuple(_int_arg(w, "TierID", form) for w in words[3:]),
        )
    if verb == "eval":
        if len(words) != 2:
            raise UsageError("expected: eval <nodeId:type:index>")
        return StartEval(tier=_tier_id_arg(words[1], "eval <tierId>"))
    if verb == "step":
        if len(words) == 2:
            return Step(tier=_tier_id_arg(words[1], "step <tierId>"))
        if len(words) == 3:
            return Step(
                tier=_tier_id_arg(words[1], "step <tierId> [count]"),
                count=_int_arg(words[2], "count", "step <tierId> [count]"),
            )
        raise UsageError("expected: step <nodeId:type:index> [count]")
    raise UsageError(f"unknown command {verb!r}\n" + USAGE)
