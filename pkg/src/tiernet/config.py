"""Key-value configuration files and per-tier-type schema validation.

The file format is plain `key=value` lines, `#` comments, and blank lines.
Values are uninterpreted text until `validate` types them against a schema.
Parsing keeps every raw line, so serializing an unmodified configuration
reproduces the input byte for byte (CRLF input is normalized to LF).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .errors import ConfigError

# Simulator keys (tier behaviour) and the implementation-selection keys.
KEY_IMPL = "gipsy.GEE.multitier.wrapper.impl"
KEY_DGT_DISPATCHER = "gipsy.GEE.multitier.DGT.DemandDispatcher.impl"
KEY_DWT_DISPATCHER = "gipsy.GEE.multitier.DWT.DemandDispatcher.impl"
KEY_SIM_MODE = "gipsy.tests.GEE.simulator.mode"
KEY_SIM_PARAMETER = "gipsy.tests.GEE.simulator.tester.parameter"
KEY_SIM_NUMBER = "gipsy.tests.GEE.simulator.tester.number"
KEY_SIM_PAYLOAD = "gipsy.tests.GEE.simulator.demand.payload"


@dataclass(frozen=True)
class Line:
    """One physical line: a key-value pair or passthrough text (comment/blank)."""

    kind: str  # "pair" | "raw"
    key: str = ""
    value: str = ""
    raw: Optional[str] = None  # original text, kept for byte-exact rewrite

    def render(self) -> str:
        if self.raw is not None:
            return self.raw
        return f"{self.key}={self.value}"


@dataclass(frozen=True)
class Configuration:
    lines: tuple = ()
    source_name: str = field(default="<memory>", compare=False)

    @property
    def pairs(self) -> list:
        return [(l.key, l.value) for l in self.lines if l.kind == "pair"]

    def keys(self) -> list:
        return [l.key for l in self.lines if l.kind == "pair"]

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        for l in self.lines:
            if l.kind == "pair" and l.key == key:
                return l.value
        return default

    def get_int(self, key: str, default: Optional[int] = None) -> Optional[int]:
        value = self.get(key)
        if value is None:
            return default
        try:
            return int(value.strip())
        except ValueError:
            raise ConfigError(f"{self.source_name}: key {key!r} is not an integer: {value!r}")

    def get_float(self, key: str, default: Optional[float] = None) -> Optional[float]:
        value = self.get(key)
        if value is None:
            return default
        try:
            return float(value.strip())
        except ValueError:
            raise ConfigError(f"{self.source_name}: key {key!r} is not a number: {value!r}")

    def set(self, key: str, value: str) -> "Configuration":
        """Return a copy with `key` set; existing pair keeps its position."""
        out = []
        found = False
        for l in self.lines:
            if l.kind == "pair" and l.key == key:
                out.append(Line("pair", key, str(value)))
                found = True
            else:
                out.append(l)
        if not found:
            out.append(Line("pair", key, str(value)))
        return replace(self, lines=tuple(out))

    def without(self, key: str) -> "Configuration":
        return replace(
            self,
            lines=tuple(l for l in self.lines if not (l.kind == "pair" and l.key == key)),
        )


def parse_config(text: str, source_name: str = "<memory>") -> Configuration:
    """Parse `key=value` lines; comments and blanks pass through unchanged.

    Raises ConfigError naming the line for duplicate keys and for lines that
    are neither pairs, comments, nor blank.
    """
    lines = []
    seen = {}
    for lineno, raw in enumerate(text.replace("\r\n", "\n").split("\n"), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            lines.append(Line("raw", raw=raw))
            continue
        if "=" not in raw:
            raise ConfigError(f"{source_name}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = raw.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source_name}:{lineno}: empty key")
        if key in seen:
            raise ConfigError(
                f"{source_name}:{lineno}: duplicate key {key!r} (first at line {seen[key]})"
            )
        seen[key] = lineno
        # Keep raw text only when it differs from the canonical rendering, so
        # a reparsed tool-produced file compares equal to its source value.
        lines.append(Line("pair", key, value, raw=None if raw == f"{key}={value}" else raw))
    # The final "" from splitting text that ends with a newline is not a line.
    if text.endswith("\n") and lines and lines[-1].kind == "raw" and lines[-1].raw == "":
        lines = lines[:-1]
    elif text == "":
        lines = []
    return Configuration(lines=tuple(lines), source_name=source_name)


def serialize_config(config: Configuration) -> str:
    if not config.lines:
        return ""
    return "\n".join(l.render() for l in config.lines) + "\n"


def load_config(path, source_name: Optional[str] = None) -> Configuration:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    return parse_config(text, source_name=source_name or str(path))


def save_config(config: Configuration, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(serialize_config(config))


def make_config(pairs, source_name: str = "<memory>") -> Configuration:
    cfg = Configuration(source_name=source_name)
    for key, value in pairs:
        cfg = cfg.set(key, value)
    return cfg


# --- validation --------------------------------------------------------------


@dataclass(frozen=True)
class Finding:
    key: str
    reason: str
    severity: str  # "error" | "warning"

    def as_dict(self) -> dict:
        return {"key": self.key, "reason": self.reason, "severity": self.severity}


@dataclass(frozen=True)
class KeySpec:
    key: str
    required: bool
    validator: Callable[[str], Optional[str]]  # returns a reason or None


@dataclass(frozen=True)
class TierSchema:
    tier_type: str
    keys: tuple = ()

    def known(self) -> set:
        return {k.key for k in self.keys}


def int_range(lo: Optional[int] = None, hi: Optional[int] = None):
    def check(value: str) -> Optional[str]:
        try:
            n = int(value.strip())
        except ValueError:
            return f"not an integer: {value!r}"
        if lo is not None and n < lo:
            return f"must be >= {lo}, got {n}"
        if hi is not None and n > hi:
            return f"must be <= {hi}, got {n}"
        return None

    return check


def number(value: str) -> Optional[str]:
    try:
        float(value.strip())
    except ValueError:
        return f"not a number: {value!r}"
    return None


def enum_of(*allowed):
    def check(value: str) -> Optional[str]:
        if value.strip() not in allowed:
            return f"must be one of {', '.join(allowed)}; got {value!r}"
        return None

    return check


def endpoint(value: str) -> Optional[str]:
    host, sep, port = value.strip().rpartition(":")
    if not sep or not host:
        return f"expected host:port, got {value!r}"
    try:
        p = int(port)
    except ValueError:
        return f"port is not an integer in {value!r}"
    if not (0 <= p <= 65535):
        return f"port out of range in {value!r}"
    return None


def any_text(value: str) -> Optional[str]:
    return None


def implementation_name(registry_lookup):
    def check(value: str) -> Optional[str]:
        if registry_lookup(value.strip()) is None:
            return f"unknown implementation {value.strip()!r}"
        return None

    return check


def validate(config: Configuration, schema: TierSchema) -> list:
    """Check `config` against `schema`; returns findings, never raises.

    Empty result means every required key is present and every known key's
    value passed its validator. Unknown keys are warnings.
    """
    findings = []
    present = dict(config.pairs)
    for spec in schema.keys:
        if spec.key not in present:
            if spec.required:
                findings.append(Finding(spec.key, "required key missing", "error"))
            continue
        reason = spec.validator(present[spec.key])
        if reason is not None:
            findings.append(Finding(spec.key, reason, "error"))
    known = schema.known()
    for key, _ in config.pairs:
        if key not in known:
            findings.append(Finding(key, "unknown key (ignored)", "warning"))
    return findings
