"""
Traffic normalizer
Stateless per-PDU rewrites and stateful flow rules (seq renumbering, reorder, IAT smoothing, rate cap).

Rule file:
    mode stateful
    buffer_limit 64
    ClearField kind:Reserved
    FixField ipv4_like.ttl value=64
    SmoothIAT target=2000
"""

import hashlib
import hmac
import logging
import shlex
from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ConfigurationError, ParseError
from ..protocol import FieldKind, FieldSpec, Pdu, PduStream, ProtocolSchema, read_uint, rebuild, recompute_derived, validate_pdu, write_field
from ..schemas import resolve_schema_name

logger = logging.getLogger(__name__)

DEFAULT_RANDOMIZE_KEY = b"cct-warden"


class RuleKind(str, Enum):
    CLEAR_FIELD = "ClearField"
    FIX_FIELD = "FixField"
    RECOMPUTE_DERIVED = "RecomputeDerived"
    DROP_INVALID = "DropInvalid"
    CANONICALIZE_ELEMENT_ORDER = "CanonicalizeElementOrder"
    STRIP_UNKNOWN_ELEMENTS = "StripUnknownElements"
    LOWERCASE_TOKENS = "LowercaseTokens"
    PAD_TO_FIXED_SIZE = "PadToFixedSize"
    RANDOMIZE_FIELD = "RandomizeField"
    REORDER_BY_SEQ = "ReorderBySeq"
    SMOOTH_IAT = "SmoothIAT"
    CAP_RATE = "CapRate"
    RENUMBER_SEQ = "RenumberSeq"


STATEFUL_KINDS = (RuleKind.RENUMBER_SEQ, RuleKind.REORDER_BY_SEQ, RuleKind.SMOOTH_IAT, RuleKind.CAP_RATE)
TARGETED_KINDS = (RuleKind.CLEAR_FIELD, RuleKind.FIX_FIELD, RuleKind.RANDOMIZE_FIELD)


class NormalizerRule(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: RuleKind
    target: Optional[str] = Field(default=None, description="Field name, kind:<FieldKind> or <schema>.<field>")
    value: Optional[int] = Field(default=None, ge=0, description="FixField value")
    target_us: Optional[int] = Field(default=None, ge=1, description="SmoothIAT gap")
    max: Optional[int] = Field(default=None, ge=1, description="CapRate PDUs per window")
    window: Optional[int] = Field(default=None, ge=1, description="CapRate window in microseconds")
    size: Optional[int] = Field(default=None, ge=0, description="PadToFixedSize payload bytes")
    allow: Optional[Tuple[int, ...]] = Field(default=None, description="StripUnknownElements kept ids")
    key: Optional[bytes] = Field(default=None, description="RandomizeField HMAC key")

    @model_validator(mode="after")
    def _check_params(self) -> "NormalizerRule":
        if self.kind in TARGETED_KINDS and not self.target:
            raise ValueError(f"{self.kind.value} needs a target field")
        if self.kind is RuleKind.FIX_FIELD and self.value is None:
            raise ValueError("FixField needs value=")
        if self.kind is RuleKind.SMOOTH_IAT and self.target_us is None:
            raise ValueError("SmoothIAT needs target=")
        if self.kind is RuleKind.CAP_RATE and (self.max is None or self.window is None):
            raise ValueError("CapRate needs max= and window=")
        if self.kind is RuleKind.PAD_TO_FIXED_SIZE and self.size is None:
            raise ValueError("PadToFixedSize needs size=")
        return self

    @property
    def stateful(self) -> bool:
        return self.kind in STATEFUL_KINDS

    def label(self) -> str:
        return f"{self.kind.value}({self.target})" if self.target else self.kind.value


class WardenConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    rules: Tuple[NormalizerRule, ...] = ()
    mode: Literal["stateless", "stateful"] = "stateful"
    buffer_limit: int = Field(default=64, ge=1, description="PDUs a stateful rule may hold per flow")

    @model_validator(mode="after")
    def _check_mode(self) -> "WardenConfig":
        if self.mode == "stateless":
            stateful = [r.kind.value for r in self.rules if r.stateful]
            if stateful:
                raise ValueError(f"stateless warden cannot run {stateful}")
        return self


class NormalizerAction(BaseModel):
    model_config = ConfigDict(frozen=True)

    rule: str
    changed: int = Field(default=0, ge=0, description="PDUs rewritten, dropped or re-timed")
    detail: str = ""


# ---------------------------------------------------------------------------
# Target selection
# ---------------------------------------------------------------------------

def select_fields(schema: ProtocolSchema, target: str) -> List[FieldSpec]:
    """Fields of schema matched by a selector; other schemas' qualified fields match nothing."""
    if target.startswith("kind:"):
        try:
            kind = FieldKind(target[5:])
        except ValueError:
            raise ConfigurationError(f"unknown field kind in selector '{target}'") from None
        return schema.fields_of_kind(kind)
    if "." in target:
        proto, _, name = target.partition(".")
        if resolve_schema_name(proto) != schema.name:
            return []
        return [schema.field(name)]
    if schema.textual:
        raise ConfigurationError(f"{schema.name} is textual and has no field '{target}'")
    return [schema.field(target)]


# ---------------------------------------------------------------------------
# Stateless rules
# ---------------------------------------------------------------------------

def _keyed_value(key: bytes, pdu: Pdu, spec: FieldSpec) -> int:
    message = pdu.seq.to_bytes(8, "big") + spec.name.encode("ascii")
    stream = b""
    counter = 0
    while len(stream) * 8 < spec.length:
        stream += hmac.new(key, message + counter.to_bytes(4, "big"), hashlib.sha256).digest()
        counter += 1
    return int.from_bytes(stream, "big") >> (len(stream) * 8 - spec.length)


def _set_fields(pdu: Pdu, specs: List[FieldSpec], values: Dict[str, int]) -> Pdu:
    for spec in specs:
        if read_uint(pdu, spec.name) != values[spec.name]:
            pdu = write_field(pdu, spec.name, values[spec.name])
    return pdu


def _apply_field_rule(rule: NormalizerRule, pdu: Pdu) -> Pdu:
    specs = select_fields(pdu.protocol, rule.target)
    if not specs:
        return pdu
    if rule.kind is RuleKind.CLEAR_FIELD:
        values = {s.name: 0 for s in specs}
    elif rule.kind is RuleKind.FIX_FIELD:
        for s in specs:
            if rule.value > s.max_value:
                raise ConfigurationError(f"FixField value {rule.value} does not fit {pdu.protocol.name}.{s.name}")
        values = {s.name: rule.value for s in specs}
    else:
        key = rule.key or DEFAULT_RANDOMIZE_KEY
        values = {s.name: _keyed_value(key, pdu, s) for s in specs}
    return _set_fields(pdu, specs, values)


def _lowercase(pdu: Pdu) -> Pdu:
    if not pdu.protocol.textual:
        return pdu
    options = []
    for element_id, raw in pdu.options:
        name, sep, rest = raw.partition(b":")
        options.append((element_id, name.lower() + sep + rest))
    options = tuple(options)
    return pdu if options == pdu.options else rebuild(pdu, options=options)


def _strip(rule: NormalizerRule, pdu: Pdu) -> Pdu:
    spec = pdu.protocol.options
    if spec is None:
        return pdu
    allow = set(rule.allow if rule.allow is not None else (e for e, _ in spec.defaults))
    seen = set()
    kept = []
    for element_id, value in pdu.options:
        if element_id in allow and element_id not in seen:
            seen.add(element_id)
            kept.append((element_id, value))
    kept = tuple(kept)
    return pdu if kept == pdu.options else rebuild(pdu, options=kept)


def _pad(rule: NormalizerRule, pdu: Pdu) -> Pdu:
    if len(pdu.payload) == rule.size:
        return pdu
    return rebuild(pdu, payload=pdu.payload[:rule.size].ljust(rule.size, b"\x00"))


def _apply_stateless(rule: NormalizerRule, pdu: Pdu) -> Optional[Pdu]:
    """Rewritten PDU, or None when the rule drops it."""
    kind = rule.kind
    if kind in TARGETED_KINDS:
        return _apply_field_rule(rule, pdu)
    if kind is RuleKind.RECOMPUTE_DERIVED:
        fixed = recompute_derived(pdu)
        if fixed.header == pdu.header and not pdu.corrupted:
            return pdu
        return fixed.replace(corrupted=False)
    if kind is RuleKind.DROP_INVALID:
        return None if validate_pdu(pdu) else pdu
    if kind is RuleKind.CANONICALIZE_ELEMENT_ORDER:
        ordered = tuple(sorted(pdu.options))
        return pdu if ordered == pdu.options else rebuild(pdu, options=ordered)
    if kind is RuleKind.STRIP_UNKNOWN_ELEMENTS:
        return _strip(rule, pdu)
    if kind is RuleKind.LOWERCASE_TOKENS:
        return _lowercase(pdu)
    if kind is RuleKind.PAD_TO_FIXED_SIZE:
        return _pad(rule, pdu)
    raise ConfigurationError(f"{kind.value} is not a per-PDU rule")


# ---------------------------------------------------------------------------
# Stateful rules
# ---------------------------------------------------------------------------

# 序号重编：按序号大小排名，间隙消失，相对顺序和重复序号保留
def renumber_seq(pdus: List[Pdu], actions: List[NormalizerAction]) -> List[Pdu]:
    """Map the flow's distinct seqs onto a dense run starting at the smallest one."""
    if not pdus:
        return pdus
    distinct = sorted({p.seq for p in pdus})
    first = distinct[0]
    rank = {seq: first + i for i, seq in enumerate(distinct)}
    out = [p if rank[p.seq] == p.seq else p.replace(seq=rank[p.seq]) for p in pdus]
    changed = sum(1 for a, b in zip(pdus, out) if a is not b)
    actions.append(NormalizerAction(rule=RuleKind.RENUMBER_SEQ.value, changed=changed,
                                    detail=f"gaps={distinct[-1] - first + 1 - len(distinct)}"))
    return out


def reorder_by_seq(pdus: List[Pdu], buffer_limit: int, actions: List[NormalizerAction]) -> List[Pdu]:
    """Release PDUs in seq order from a bounded buffer; output takes the sorted arrival times."""
    if not pdus:
        return pdus
    expected = min(p.seq for p in pdus)
    buffer: Dict[int, Pdu] = {}
    arrival: List[int] = []
    released: List[Pdu] = []
    overflows = 0

    def drain():
        nonlocal expected
        while expected in buffer:
            released.append(buffer.pop(expected))
            arrival.remove(expected)
            expected += 1

    for pdu in pdus:
        if pdu.seq < expected or pdu.seq in buffer:
            released.append(pdu)
            continue
        buffer[pdu.seq] = pdu
        arrival.append(pdu.seq)
        drain()
        if len(buffer) > buffer_limit:
            overflows += 1
            # give up on the missing seq: continue from the smallest buffered one
            expected = min(buffer)
            drain()
            while len(buffer) > buffer_limit:
                oldest = arrival.pop(0)
                released.append(buffer.pop(oldest))
    for seq in sorted(buffer):
        released.append(buffer[seq])
    stamps = sorted(p.timestamp for p in pdus)
    out = [p if p.timestamp == ts else p.replace(timestamp=ts) for p, ts in zip(released, stamps)]
    moved = sum(1 for a, b in zip(pdus, out) if a is not b)
    actions.append(NormalizerAction(rule=RuleKind.REORDER_BY_SEQ.value, changed=moved,
                                    detail=f"buffer_limit={buffer_limit} overflows={overflows}"))
    if overflows:
        logger.warning("[normalizer][reorder] buffer of %d PDUs overflowed %d times, order only partly restored",
                       buffer_limit, overflows)
    return out


def smooth_iat(pdus: List[Pdu], target: int, actions: List[NormalizerAction]) -> List[Pdu]:
    """Re-time the flow onto one constant-gap schedule.

    The schedule starts late enough that no PDU leaves before it arrived, so every
    released gap equals target and the hold time is the largest arrival lag.
    """
    if not pdus:
        return pdus
    offsets = np.arange(len(pdus), dtype=np.int64) * target
    stamps = np.array([p.timestamp for p in pdus], dtype=np.int64)
    base = int(np.max(stamps - offsets))
    out = []
    for pdu, offset in zip(pdus, offsets):
        ts = base + int(offset)
        out.append(pdu if pdu.timestamp == ts else pdu.replace(timestamp=ts))
    actions.append(NormalizerAction(rule=RuleKind.SMOOTH_IAT.value,
                                    changed=sum(1 for a, b in zip(pdus, out) if a is not b),
                                    detail=f"target={target} hold={int(np.max(base + offsets - stamps))}"))
    return out


def cap_rate(pdus: List[Pdu], max_count: int, window: int, actions: List[NormalizerAction]) -> List[Pdu]:
    """At most max_count PDUs per window; excess PDUs wait for the next window."""
    if not pdus:
        return pdus
    origin = pdus[0].timestamp
    counts: Dict[int, int] = {}
    out: List[Pdu] = []
    previous = origin
    for pdu in pdus:
        ts = max(pdu.timestamp, previous)
        slot = (ts - origin) // window
        while counts.get(slot, 0) >= max_count:
            slot += 1
            ts = origin + slot * window
        counts[slot] = counts.get(slot, 0) + 1
        previous = ts
        out.append(pdu if pdu.timestamp == ts else pdu.replace(timestamp=ts))
    actions.append(NormalizerAction(rule=RuleKind.CAP_RATE.value,
                                    changed=sum(1 for a, b in zip(pdus, out) if a is not b),
                                    detail=f"max={max_count} window={window}"))
    return out


# 流量规范化：按声明顺序执行规则，返回新流和动作日志
def normalize(config: WardenConfig, stream: PduStream) -> Tuple[PduStream, List[NormalizerAction]]:
    actions: List[NormalizerAction] = []
    pdus = list(stream.pdus)
    for rule in config.rules:
        if rule.kind is RuleKind.RENUMBER_SEQ:
            pdus = renumber_seq(pdus, actions)
        elif rule.kind is RuleKind.REORDER_BY_SEQ:
            pdus = reorder_by_seq(pdus, config.buffer_limit, actions)
        elif rule.kind is RuleKind.SMOOTH_IAT:
            pdus = smooth_iat(pdus, rule.target_us, actions)
        elif rule.kind is RuleKind.CAP_RATE:
            pdus = cap_rate(pdus, rule.max, rule.window, actions)
        else:
            out = []
            changed = 0
            for pdu in pdus:
                result = _apply_stateless(rule, pdu)
                if result is not pdu:
                    changed += 1
                if result is not None:
                    out.append(result)
            pdus = out
            actions.append(NormalizerAction(rule=rule.label(), changed=changed))
    logger.debug("[normalizer] rules=%d pdus=%d->%d", len(config.rules), len(stream), len(pdus))
    return stream.replace_pdus(pdus), actions


# ---------------------------------------------------------------------------
# Rule file
# ---------------------------------------------------------------------------

_PARAM_NAMES = {"value": "value", "target": "target_us", "max": "max", "window": "window", "size": "size",
                "allow": "allow", "key": "key"}


def _rule_from_tokens(tokens: List[str], lineno: int) -> NormalizerRule:
    try:
        kind = RuleKind(tokens[0])
    except ValueError:
        raise ParseError(f"unknown rule '{tokens[0]}'", line=lineno) from None
    fields: Dict[str, object] = {"kind": kind}
    for token in tokens[1:]:
        name, sep, value = token.partition("=")
        if not sep:
            if "target" in fields:
                raise ParseError(f"second target '{token}'", line=lineno)
            fields["target"] = token
            continue
        if name not in _PARAM_NAMES:
            raise ParseError(f"unknown rule parameter '{name}'", line=lineno)
        if name == "allow":
            fields["allow"] = tuple(int(v, 0) for v in value.split(",") if v)
        elif name == "key":
            fields["key"] = bytes.fromhex(value)
        else:
            fields[_PARAM_NAMES[name]] = int(value, 0)
    return NormalizerRule(**fields)


def parse_warden(text: str) -> WardenConfig:
    rules: List[NormalizerRule] = []
    settings: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = shlex.split(line)
        try:
            if tokens[0] == "mode":
                settings["mode"] = tokens[1]
            elif tokens[0] == "buffer_limit":
                settings["buffer_limit"] = int(tokens[1])
            else:
                rules.append(_rule_from_tokens(tokens, lineno))
        except (IndexError, ValueError) as e:
            message = e.errors()[0]["msg"] if isinstance(e, ValidationError) else str(e)
            raise ParseError(message or "missing value", line=lineno) from None
    try:
        return WardenConfig(rules=tuple(rules), **settings)
    except ValidationError as e:
        raise ConfigurationError(f"warden config: {e.errors()[0]['msg']}") from None


def load_warden(path: Union[str, Path]) -> WardenConfig:
    path = Path(path)
    config = parse_warden(path.read_text(encoding="utf-8"))
    logger.info("[normalizer][load] path=%s mode=%s rules=%d", path, config.mode, len(config.rules))
    return config


def format_warden(config: WardenConfig) -> str:
    lines = [f"mode {config.mode}", f"buffer_limit {config.buffer_limit}"]
    for rule in config.rules:
        parts = [rule.kind.value]
        if rule.target:
            parts.append(rule.target)
        for name, attr in _PARAM_NAMES.items():
            value = getattr(rule, attr)
            if value is None:
                continue
            if attr == "allow":
                value = ",".join(str(v) for v in value)
            elif attr == "key":
                value = value.hex()
            parts.append(f"{name}={value}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"
