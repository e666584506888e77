"""
Pattern combination and pattern hopping
Several patterns on one carrier: all of them on every PDU (parallel), a fixed
rotation (sequential), or a keyed pseudo-random choice per slot (hopping).
"""

import hashlib
import hmac
import json
import logging
from itertools import combinations
from pathlib import Path
from typing import FrozenSet, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_serializer, field_validator, model_validator

from . import codecs
from .catalog import PatternId
from .codecs.base import CovertMessage, EmbedResult, SlotCodec, SlotFrame, drain_slots, fill_slots
from .config import DEFAULT_PRF
from .errors import CapacityError, ConfigurationError, ConflictError, ParseError
from .protocol import PduStream, ProtocolSchema
from .settings import SettingsCatalog, VariationSettings

logger = logging.getLogger(__name__)

PRF_DIGESTS = {
    "hmac-sha256": hashlib.sha256,
    "hmac-sha512": hashlib.sha512,
    "hmac-blake2b": hashlib.blake2b,
}


class HoppingConfig(BaseModel):
    """Shared between sender and receiver; seed agreed out of band."""

    model_config = ConfigDict(frozen=True)

    patterns: Tuple[VariationSettings, ...] = Field(..., min_length=1, description="Hopping set, index i -> patterns[i]")
    seed: bytes = Field(..., min_length=1, description="Shared secret key, 32 bytes recommended")
    modulus: Optional[int] = Field(default=None, ge=1, description="m >= |P|; indices >= |P| are skipped slots")
    prf: str = DEFAULT_PRF

    @field_validator("seed", mode="before")
    @classmethod
    def _parse_seed(cls, value):
        if isinstance(value, str):
            try:
                return bytes.fromhex(value.strip().removeprefix("0x"))
            except ValueError:
                raise ValueError("seed must be hex encoded") from None
        return value

    @field_serializer("seed")
    def _dump_seed(self, value: bytes) -> str:
        return value.hex()

    @model_validator(mode="after")
    def _check(self) -> "HoppingConfig":
        if self.prf not in PRF_DIGESTS:
            raise ValueError(f"unknown prf '{self.prf}', expected one of {sorted(PRF_DIGESTS)}")
        if self.modulus is not None and self.modulus < len(self.patterns):
            raise ValueError(f"modulus {self.modulus} below the {len(self.patterns)} hopping patterns")
        return self

    @property
    def m(self) -> int:
        return self.modulus or len(self.patterns)


class HopRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    t: int = Field(..., ge=0)
    index: Optional[int] = Field(default=None, description="Chosen pattern index, None when skipped")
    pattern: Optional[PatternId] = None
    bits: int = Field(default=0, ge=0, description="Message bits carried at the slot")


class HopTranscript(BaseModel):
    model_config = ConfigDict(frozen=True)

    records: Tuple[HopRecord, ...] = ()

    @model_validator(mode="after")
    def _check_order(self) -> "HopTranscript":
        ts = [r.t for r in self.records]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("hop slots must be strictly increasing")
        return self

    def indices(self) -> List[Optional[int]]:
        return [r.index for r in self.records]


def prf(config: HoppingConfig, t: int) -> int:
    """Keyed hash of the 8-byte big-endian slot number, as an unsigned integer."""
    digest = hmac.new(config.seed, t.to_bytes(8, "big"), PRF_DIGESTS[config.prf]).digest()
    return int.from_bytes(digest, "big")


# 跳变选择：i = PRF(key, t) mod m，i >= |P| 时跳过该时隙
def hop_select(config: HoppingConfig, t: int) -> Optional[int]:
    if t < 0:
        raise ConfigurationError(f"hop slot {t} is negative")
    i = prf(config, t) % config.m
    return i if i < len(config.patterns) else None


# ---------------------------------------------------------------------------
# Compatibility
# ---------------------------------------------------------------------------

def _slot_codec(settings: VariationSettings, schema: ProtocolSchema) -> SlotCodec:
    codec = codecs.bind_codec(settings, schema)
    if not isinstance(codec, SlotCodec) or not codec.slot_ready(settings):
        raise ConfigurationError(
            f"{settings.pattern.value} works on whole streams and cannot share a carrier slot by slot")
    return codec


def check_compatibility(specs: Sequence[VariationSettings], schema: ProtocolSchema) -> None:
    """Raise ConflictError for the first pair of specs writing the same bits, element list or gaps."""
    prints = [codecs.bind_codec(s, schema).footprint(s, schema) for s in specs]
    for (a, fa), (b, fb) in combinations(list(enumerate(prints)), 2):
        reason = fa.conflicts(fb)
        if reason:
            pair = (specs[a].pattern.value, specs[b].pattern.value)
            raise ConflictError(f"{pair[0]} (#{a}) and {pair[1]} (#{b}) conflict: {reason}", pair=pair)


def _bound(specs: Sequence[VariationSettings], schema: ProtocolSchema) -> List[Tuple[SlotCodec, VariationSettings]]:
    if not specs:
        raise ConfigurationError("at least one pattern is required")
    return [(_slot_codec(s, schema), s) for s in specs]


# ---------------------------------------------------------------------------
# Combination
# ---------------------------------------------------------------------------

def combine_parallel(specs: Sequence[VariationSettings], message: CovertMessage, carrier: PduStream) -> EmbedResult:
    """Every PDU carries bits of every spec, in declared order."""
    bound = _bound(specs, carrier.protocol)
    check_compatibility(specs, carrier.protocol)
    result = fill_slots(SlotFrame.from_stream(carrier), lambda i: bound, message)
    logger.info("[orchestration][parallel] patterns=%s bits=%d",
                ",".join(s.pattern.value for s in specs), result.bits_embedded)
    return result


def extract_parallel(specs: Sequence[VariationSettings], stream: PduStream) -> CovertMessage:
    bound = _bound(specs, stream.protocol)
    return drain_slots(SlotFrame.from_stream(stream), lambda i: bound)


def parallel_capacity(specs: Sequence[VariationSettings], carrier: PduStream) -> int:
    check_compatibility(specs, carrier.protocol)
    return sum(codecs.capacity(s.pattern, s, carrier) for s in specs)


def _rotation(bound, frame: SlotFrame):
    return lambda i: [bound[frame.pdus[i].seq % len(bound)]]


def combine_sequential(specs: Sequence[VariationSettings], message: CovertMessage, carrier: PduStream) -> EmbedResult:
    """PDU t uses spec t mod |specs| (t = seq)."""
    bound = _bound(specs, carrier.protocol)
    frame = SlotFrame.from_stream(carrier)
    result = fill_slots(frame, _rotation(bound, frame), message)
    logger.info("[orchestration][sequential] patterns=%s bits=%d",
                ",".join(s.pattern.value for s in specs), result.bits_embedded)
    return result


def extract_sequential(specs: Sequence[VariationSettings], stream: PduStream) -> CovertMessage:
    bound = _bound(specs, stream.protocol)
    frame = SlotFrame.from_stream(stream)
    return drain_slots(frame, _rotation(bound, frame))


# ---------------------------------------------------------------------------
# Hopping
# ---------------------------------------------------------------------------

def _hop_plan(config: HoppingConfig, frame: SlotFrame):
    bound = _bound(config.patterns, frame.protocol)

    def plan(i: int):
        index = hop_select(config, frame.pdus[i].seq)
        return None if index is None else [bound[index]]

    return plan


def hop_embed(
    config: HoppingConfig,
    message: CovertMessage,
    carrier: PduStream,
    skip: FrozenSet[int] = frozenset(),
) -> Tuple[PduStream, HopTranscript]:
    """Slot t = PDU seq. Slots listed in skip (by seq) are written but their bits are sent again later."""
    frame = SlotFrame.from_stream(carrier)
    positions = frozenset(i for i, p in enumerate(frame.pdus) if p.seq in skip)
    try:
        result = fill_slots(frame, _hop_plan(config, frame), message, skip=positions, strict_slots=True)
    except CapacityError as e:
        t = frame.pdus[e.slot].seq if e.slot is not None else None
        raise CapacityError(f"hop slot t={t}: {e}", slot=t) from None
    carried = {r.slot: r.count for r in result.map}
    records = []
    for i, pdu in enumerate(frame.pdus):
        index = hop_select(config, pdu.seq)
        records.append(HopRecord(t=pdu.seq, index=index, pattern=config.patterns[index].pattern if index is not None else None,
                                 bits=carried.get(i, 0)))
    logger.info("[orchestration][hop] slots=%d bits=%d/%d", len(records), result.bits_embedded, len(message))
    return result.stream, HopTranscript(records=tuple(records))


def hop_read(config: HoppingConfig, stream: PduStream, skip: FrozenSet[int] = frozenset()) -> Tuple[CovertMessage, HopTranscript]:
    """Receiver side: message plus the slot selections it reproduced."""
    frame = SlotFrame.from_stream(stream)
    plan = _hop_plan(config, frame)

    def receiving(i: int):
        return None if frame.pdus[i].seq in skip else plan(i)

    message = drain_slots(frame, receiving)
    records = []
    for i, pdu in enumerate(frame.pdus):
        index = hop_select(config, pdu.seq)
        specs = receiving(i) or ()
        width = sum(codec.slot_capacity(s, frame, i) for codec, s in specs)
        records.append(HopRecord(t=pdu.seq, index=index, pattern=config.patterns[index].pattern if index is not None else None,
                                 bits=width))
    return message, HopTranscript(records=tuple(records))


def hop_extract(config: HoppingConfig, stream: PduStream, skip: FrozenSet[int] = frozenset()) -> CovertMessage:
    return hop_read(config, stream, skip)[0]


# ---------------------------------------------------------------------------
# Hopping config file
#
#   {"seed": "<hex>", "prf": "hmac-sha256", "modulus": 4,
#    "patterns": [{"pattern": "P7", "protocol": "ipv4"}, {"pattern": "P6b", "protocol": "ipv4", "Len": 1}]}
#
# An entry with only pattern/protocol refers to the settings catalog.
# ---------------------------------------------------------------------------

def _resolve_entry(entry: dict, catalog: Optional[SettingsCatalog], position: int) -> VariationSettings:
    if not isinstance(entry, dict) or "pattern" not in entry or "protocol" not in entry:
        raise ParseError("hopping entry needs pattern and protocol", record=str(position))
    if set(entry) == {"pattern", "protocol"}:
        found = catalog.get(entry["pattern"], entry["protocol"]) if catalog is not None else None
        if found is None:
            raise ConfigurationError(f"no settings for {entry['pattern']}/{entry['protocol']} in the catalog")
        return found
    try:
        return VariationSettings(**entry)
    except ValidationError as e:
        raise ParseError(e.errors()[0]["msg"], record=str(position)) from None


def parse_hopping_config(data: Union[str, dict], catalog: Optional[SettingsCatalog] = None) -> HoppingConfig:
    raw = json.loads(data) if isinstance(data, str) else data
    if not isinstance(raw, dict):
        raise ParseError("hopping config must be a JSON object")
    patterns = tuple(_resolve_entry(e, catalog, n) for n, e in enumerate(raw.get("patterns") or ()))
    try:
        return HoppingConfig(patterns=patterns, **{k: v for k, v in raw.items() if k != "patterns"})
    except ValidationError as e:
        err = e.errors()[0]
        raise ConfigurationError(f"hopping config {'.'.join(str(p) for p in err['loc'])}: {err['msg']}") from None


def load_hopping_config(path: Union[str, Path], catalog: Optional[SettingsCatalog] = None) -> HoppingConfig:
    path = Path(path)
    config = parse_hopping_config(path.read_text(encoding="utf-8"), catalog)
    logger.info("[orchestration][load] path=%s patterns=%d modulus=%d prf=%s",
                path, len(config.patterns), config.m, config.prf)
    return config


def dump_hopping_config(config: HoppingConfig) -> str:
    patterns = [{"pattern": s.pattern.value, "protocol": s.protocol, **{k: v for k, v in s.entries().items()}}
                for s in config.patterns]
    body = {"patterns": patterns, "seed": config.seed.hex(), "prf": config.prf, "modulus": config.m}
    return json.dumps(body, indent=2, sort_keys=True)
