"""
Codec plumbing
Covert messages, embed results, the per-slot engine shared by plain embedding,
combination and hopping, and the write footprints used for conflict checks.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from bitstring import Bits
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..catalog import PatternId
from ..errors import CapacityError, ConfigurationError
from ..protocol import Pdu, PduStream, ProtocolSchema
from ..settings import VariationSettings

logger = logging.getLogger(__name__)


class CovertMessage(BaseModel):
    """Hidden message as a bit vector. Zero length is allowed."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    bits: Bits = Field(default_factory=Bits)

    @property
    def length(self) -> int:
        return len(self.bits)

    def __len__(self) -> int:
        return len(self.bits)

    @classmethod
    def from_hex(cls, text: str) -> "CovertMessage":
        text = text.strip().lower().removeprefix("0x")
        return cls(bits=Bits(hex=text) if text else Bits())

    @classmethod
    def from_bytes(cls, data: bytes) -> "CovertMessage":
        return cls(bits=Bits(bytes=data))

    @classmethod
    def from_bin(cls, text: str) -> "CovertMessage":
        text = text.strip().removeprefix("0b")
        return cls(bits=Bits(bin=text) if text else Bits())

    @classmethod
    def random(cls, nbits: int, seed: int) -> "CovertMessage":
        rng = np.random.default_rng(seed)
        return cls(bits=Bits(rng.integers(0, 2, nbits).astype(bool).tolist()) if nbits else Bits())

    def prefix(self, n: int) -> "CovertMessage":
        return CovertMessage(bits=self.bits[:n])

    def padded(self, n: int) -> Bits:
        """First n bits, zero-filled when the message is shorter."""
        head = self.bits[:n]
        return head + Bits(n - len(head)) if len(head) < n else head


class SlotRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    slot: int = Field(..., description="Carrier position (or hop slot) the bits went into")
    pattern: PatternId
    start: int = Field(..., ge=0, description="Offset of the first carried bit in the message")
    count: int = Field(..., ge=0, description="Message bits carried, padding excluded")
    target: str = Field(default="", description="Field, element or gap written")


class EmbedResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    stream: PduStream
    bits_embedded: int = Field(..., ge=0)
    map: Tuple[SlotRecord, ...] = ()

    @model_validator(mode="after")
    def _check_map(self) -> "EmbedResult":
        if self.map and sum(r.count for r in self.map) != self.bits_embedded:
            raise ValueError("slot map does not cover exactly bits_embedded bits")
        return self


class Footprint(BaseModel):
    """What a pattern writes, for the combination compatibility predicate."""

    model_config = ConfigDict(frozen=True)

    header: Tuple[Tuple[int, int], ...] = Field(default=(), description="Written header bit ranges [start, end)")
    structural: bool = Field(default=False, description="Adds, removes or reorders list elements")
    elements: FrozenSet[int] = Field(default=frozenset(), description="Element ids whose values are edited")
    payload: bool = False
    gaps: bool = False
    duplicates: bool = Field(default=False, description="Inserts re-sent copies")
    raw_checksum: bool = Field(default=False, description="Relies on checksums staying unrepaired")

    def conflicts(self, other: "Footprint") -> Optional[str]:
        for a0, a1 in self.header:
            for b0, b1 in other.header:
                if a0 < b1 and b0 < a1:
                    return f"header bits {max(a0, b0)}..{min(a1, b1)} written twice"
        if self.structural and other.structural:
            return "both change the element list"
        if (self.structural and other.elements) or (other.structural and self.elements):
            return "element list changed under an edited element"
        if self.elements & other.elements:
            return f"element ids {sorted(self.elements & other.elements)} edited twice"
        if self.payload and other.payload:
            return "both resize the payload"
        if self.gaps and other.gaps:
            return "both re-time the same gaps"
        if self.duplicates and other.duplicates:
            return "both insert re-sent copies"
        if self.raw_checksum or other.raw_checksum:
            return "checksum corruption is undone by any other header write"
        return None


# ---------------------------------------------------------------------------
# Slot engine
# ---------------------------------------------------------------------------

@dataclass
class SlotFrame:
    """Working copy of a carrier while slots are filled or read.

    pdus are the original (non-retransmitted) PDUs in arrival order, gaps[i] is the
    gap after pdus[i], duplicates maps a position to the delay of its re-sent copy.
    """

    protocol: ProtocolSchema
    pdus: List[Pdu]
    gaps: List[int]
    duplicates: Dict[int, int] = field(default_factory=dict)

    @classmethod
    def from_stream(cls, stream: PduStream) -> "SlotFrame":
        originals: List[Pdu] = []
        position: Dict[int, int] = {}
        duplicates: Dict[int, int] = {}
        for pdu in stream.pdus:
            if pdu.seq in position:
                index = position[pdu.seq]
                duplicates.setdefault(index, pdu.timestamp - originals[index].timestamp)
                continue
            position[pdu.seq] = len(originals)
            originals.append(pdu)
        gaps = [b.timestamp - a.timestamp for a, b in zip(originals, originals[1:])]
        return cls(protocol=stream.protocol, pdus=originals, gaps=gaps, duplicates=duplicates)

    def __len__(self) -> int:
        return len(self.pdus)

    def assemble(self) -> PduStream:
        out: List[Pdu] = []
        if self.pdus:
            stamps = np.concatenate([[self.pdus[0].timestamp], self.pdus[0].timestamp + np.cumsum(self.gaps, dtype=np.int64)])
            for i, pdu in enumerate(self.pdus):
                ts = int(stamps[i])
                out.append(pdu if pdu.timestamp == ts else pdu.replace(timestamp=ts))
                if i in self.duplicates:
                    limit = int(stamps[i + 1]) if i + 1 < len(stamps) else None
                    dup_ts = ts + self.duplicates[i]
                    if limit is not None:
                        dup_ts = min(dup_ts, limit)
                    out.append(out[-1].replace(timestamp=dup_ts, retransmission=True))
        return PduStream(protocol=self.protocol, pdus=tuple(out))


class Codec(ABC):
    """Embed/extract pair of one pattern."""

    pattern: PatternId
    slotted = False

    def check(self, settings: VariationSettings, schema: ProtocolSchema) -> None:
        """Raise ConfigurationError when the settings cannot drive this codec on schema."""

    def footprint(self, settings: VariationSettings, schema: ProtocolSchema) -> Footprint:
        return Footprint()

    def slot_ready(self, settings: VariationSettings) -> bool:
        """Whether the codec can fill single carrier positions (combination, hopping)."""
        return self.slotted

    def modified_bits(self, settings: VariationSettings, schema: ProtocolSchema) -> float:
        """Header bits the codec may change in one PDU, the covertness proxy of settings selection."""
        return 1.0

    @abstractmethod
    def capacity(self, settings: VariationSettings, carrier: PduStream) -> int:
        ...

    @abstractmethod
    def embed(self, settings: VariationSettings, message: CovertMessage, carrier: PduStream) -> EmbedResult:
        ...

    @abstractmethod
    def extract(self, settings: VariationSettings, stream: PduStream) -> CovertMessage:
        ...

    def _require_capacity(self, total: int, settings: VariationSettings, carrier: PduStream) -> None:
        if total <= 0:
            raise CapacityError(f"{self.pattern.value} finds no room on {len(carrier)} {carrier.protocol.name} PDUs "
                                f"under settings for {settings.protocol}")


class SlotCodec(Codec):
    """Codec that hides a fixed, receiver-computable number of bits per carrier position."""

    slotted = True

    @abstractmethod
    def slot_capacity(self, settings: VariationSettings, frame: SlotFrame, index: int) -> int:
        """Bits at position index; identical before and after write_slot."""

    @abstractmethod
    def write_slot(self, settings: VariationSettings, frame: SlotFrame, index: int, value: int, nbits: int) -> str:
        """Store value (nbits wide) at position index; returns the written target."""

    @abstractmethod
    def read_slot(self, settings: VariationSettings, frame: SlotFrame, index: int, nbits: int) -> int:
        ...

    def capacity(self, settings: VariationSettings, carrier: PduStream) -> int:
        self.check(settings, carrier.protocol)
        frame = SlotFrame.from_stream(carrier)
        return sum(self.slot_capacity(settings, frame, i) for i in range(len(frame)))

    def embed(self, settings: VariationSettings, message: CovertMessage, carrier: PduStream) -> EmbedResult:
        self.check(settings, carrier.protocol)
        plan = [(self, settings)]
        frame = SlotFrame.from_stream(carrier)
        self._require_capacity(sum(self.slot_capacity(settings, frame, i) for i in range(len(frame))), settings, carrier)
        return fill_slots(frame, lambda i: plan, message)

    def extract(self, settings: VariationSettings, stream: PduStream) -> CovertMessage:
        self.check(settings, stream.protocol)
        plan = [(self, settings)]
        return drain_slots(SlotFrame.from_stream(stream), lambda i: plan)


SlotPlan = Callable[[int], Optional[Sequence[Tuple[SlotCodec, VariationSettings]]]]


def fill_slots(
    frame: SlotFrame,
    plan: SlotPlan,
    message: CovertMessage,
    skip: FrozenSet[int] = frozenset(),
    strict_slots: bool = False,
) -> EmbedResult:
    """Greedy per-position embedding.

    plan(i) names the codecs writing position i (None skips it). Positions in skip are
    written but do not advance the message cursor, so the bits are carried again later.
    With strict_slots a planned codec without room while bits remain raises CapacityError.
    """
    cursor = 0
    records: List[SlotRecord] = []
    bits = message.bits
    for i in range(len(frame)):
        if cursor >= len(bits):
            break
        specs = plan(i)
        if not specs:
            continue
        start = cursor
        for codec, settings in specs:
            width = codec.slot_capacity(settings, frame, i)
            if width <= 0:
                if strict_slots:
                    raise CapacityError(f"{codec.pattern.value} has no room at slot {i}", slot=i)
                continue
            chunk = bits[start:start + width]
            value = (chunk.uint << (width - len(chunk))) if len(chunk) else 0
            target = codec.write_slot(settings, frame, i, value, width)
            if i not in skip:
                records.append(SlotRecord(slot=i, pattern=codec.pattern, start=start, count=len(chunk), target=target))
            start += len(chunk)
        if i not in skip:
            cursor = start
    return EmbedResult(stream=frame.assemble(), bits_embedded=cursor, map=tuple(records))


def drain_slots(frame: SlotFrame, plan: SlotPlan) -> CovertMessage:
    chunks: List[Bits] = []
    for i in range(len(frame)):
        for codec, settings in plan(i) or ():
            width = codec.slot_capacity(settings, frame, i)
            if width > 0:
                chunks.append(Bits(uint=codec.read_slot(settings, frame, i, width), length=width))
    return CovertMessage(bits=Bits().join(chunks))


def truncate_rank(rank: int, nbits: int) -> int:
    """Fold a rank decoded from a perturbed carrier into nbits by keeping its top bits."""
    if rank < (1 << nbits):
        return rank
    return rank >> (rank.bit_length() - nbits)


def require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigurationError(message)
