"""
Storage pattern codecs
Size modulation, element sequence/position/count, added redundancy, corruption/loss,
random-value and reserved-field writes, value modulation (values, case, LSB).
"""

import logging
from typing import List, Optional, Tuple

import numpy as np
from bitstring import Bits

from ..catalog import PatternId
from ..config import LSB_RADIUS
from ..errors import ConfigurationError
from ..lehmer import bits_per_permutation, rank_permutation, unrank_permutation
from ..protocol import (
    FieldKind,
    Pdu,
    ProtocolSchema,
    checksum_ok,
    read_bits,
    read_uint,
    rebuild,
    write_bits,
    write_field,
)
from ..settings import VariationSettings
from .base import (
    CovertMessage,
    EmbedResult,
    Footprint,
    SlotCodec,
    SlotRecord,
    require,
    truncate_rank,
)

logger = logging.getLogger(__name__)

Element = Tuple[int, bytes]


def floor_log2(n: int) -> int:
    return n.bit_length() - 1 if n >= 1 else 0


def element_id_of(settings: VariationSettings, schema: ProtocolSchema) -> int:
    if settings.token is not None and schema.textual:
        return schema.token_id(settings.token)
    require(settings.element_id is not None, f"{settings.pattern.value}/{settings.protocol}: element_id not set")
    require(schema.options is not None and settings.element_id in schema.options.element_ids,
            f"{schema.name} has no element id {settings.element_id}")
    return settings.element_id


def filler_value(schema: ProtocolSchema, element_id: int) -> bytes:
    if schema.textual:
        return f"{schema.tokens[element_id]}: 1".encode("ascii")
    return b""


def fits(schema: ProtocolSchema, elements: List[Element]) -> bool:
    spec = schema.options
    return (
        len(elements) <= spec.max_count
        and spec.encoded_size(elements) <= spec.max_total_bytes
        and all(len(v) <= spec.max_element_bytes for _, v in elements)
    )


def header_region(settings: VariationSettings, schema: ProtocolSchema) -> Tuple[int, int]:
    """(offset, length) from a named field or from Offset/Len."""
    require(not schema.textual, f"{settings.pattern.value} needs a bit-layout header, {schema.name} is textual")
    if settings.field is not None:
        spec = schema.field(settings.field)
        return spec.offset, spec.length
    require(settings.offset is not None and settings.length is not None,
            f"{settings.pattern.value}/{settings.protocol}: Offset and Len or field required")
    require(settings.length > 0, f"{settings.pattern.value}/{settings.protocol}: Len must be positive")
    require(settings.offset + settings.length <= schema.header_bits,
            f"Offset+Len={settings.offset + settings.length} outside the {schema.name} header")
    return settings.offset, settings.length


def seeded_rng(settings: VariationSettings, pdu: Pdu) -> np.random.Generator:
    return np.random.default_rng([settings.whiten_seed or 0, pdu.seq])


# ---------------------------------------------------------------------------
# P1 Size Modulation
# ---------------------------------------------------------------------------

class SizeCodec(SlotCodec):
    """Payload size s = MinSize + value * granularity."""

    pattern = PatternId.P1_Size

    def _symbol_bits(self, settings: VariationSettings) -> int:
        span = (settings.max_size - settings.min_size) // (settings.granularity or 1)
        return floor_log2(span + 1)

    def check(self, settings, schema):
        require(settings.min_size is not None and settings.max_size is not None, "MinSize and MaxSize required")
        require(settings.min_size <= settings.max_size, "MinSize exceeds MaxSize")

    def footprint(self, settings, schema):
        return Footprint(payload=True)

    def modified_bits(self, settings, schema):
        return float(self._symbol_bits(settings))

    def slot_capacity(self, settings, frame, index):
        return self._symbol_bits(settings)

    def write_slot(self, settings, frame, index, value, nbits):
        pdu = frame.pdus[index]
        size = settings.min_size + value * (settings.granularity or 1)
        payload = pdu.payload[:size] + bytes(max(0, size - len(pdu.payload)))
        frame.pdus[index] = rebuild(pdu, payload=payload)
        return f"payload={size}"

    def read_slot(self, settings, frame, index, nbits):
        value = (len(frame.pdus[index].payload) - settings.min_size) // (settings.granularity or 1)
        return min(max(value, 0), (1 << nbits) - 1)


# ---------------------------------------------------------------------------
# P2 Sequence, P2a Position, P2b Number of Elements
# ---------------------------------------------------------------------------

class SequenceCodec(SlotCodec):
    """Element list order (full), marker position (position) or filler count (count)."""

    def __init__(self, pattern: PatternId, mode: Optional[str] = None):
        self.pattern = pattern
        self.fixed_mode = mode

    def mode(self, settings: VariationSettings) -> str:
        return self.fixed_mode or settings.mode or "full"

    def check(self, settings, schema):
        mode = self.mode(settings)
        require(mode in ("full", "position", "count"), f"unknown sequence mode '{mode}'")
        require(schema.options is not None, f"{schema.name} has no element list")
        if mode != "full":
            element_id_of(settings, schema)
        if mode == "count":
            require(settings.min_elements is not None and settings.max_elements is not None,
                    "count mode needs MinElements and MaxElements")

    def footprint(self, settings, schema):
        return Footprint(structural=True)

    def modified_bits(self, settings, schema):
        carrier_elements = len(schema.options.defaults) if schema.options else 0
        if self.mode(settings) == "count":
            return float(floor_log2(settings.max_elements - settings.min_elements + 1))
        return float(max(1, floor_log2(max(carrier_elements, 1))))

    # -- full ---------------------------------------------------------------

    def _full_width(self, settings: VariationSettings, pdu: Pdu) -> int:
        elements = list(pdu.options)
        if len(set(elements)) != len(elements):
            return 0
        n = min(len(elements), settings.max_elements or len(elements))
        if n < max(2, settings.min_elements or 0):
            return 0
        return n

    # -- position / count -----------------------------------------------------

    def _split(self, settings: VariationSettings, pdu: Pdu) -> Tuple[int, List[Element], List[Element]]:
        element_id = element_id_of(settings, pdu.protocol)
        marked = [e for e in pdu.options if e[0] == element_id]
        others = [e for e in pdu.options if e[0] != element_id]
        return element_id, marked, others

    def _marker(self, settings, pdu) -> Tuple[List[Element], Element]:
        element_id, marked, others = self._split(settings, pdu)
        return others, (marked[0] if marked else (element_id, filler_value(pdu.protocol, element_id)))

    def _positions(self, settings, pdu) -> int:
        others, marker = self._marker(settings, pdu)
        if not fits(pdu.protocol, others + [marker]):
            return 0
        n = min(len(others) + 1, settings.max_elements or len(others) + 1)
        return n if n >= max(2, settings.min_elements or 0) else 0

    def slot_capacity(self, settings, frame, index):
        pdu = frame.pdus[index]
        mode = self.mode(settings)
        if mode == "full":
            return bits_per_permutation(self._full_width(settings, pdu))
        if mode == "position":
            return floor_log2(self._positions(settings, pdu))
        element_id, _, others = self._split(settings, pdu)
        filler = (element_id, filler_value(pdu.protocol, element_id))
        if not fits(pdu.protocol, others + [filler] * settings.max_elements):
            return 0
        return floor_log2(settings.max_elements - settings.min_elements + 1)

    def write_slot(self, settings, frame, index, value, nbits):
        pdu = frame.pdus[index]
        mode = self.mode(settings)
        if mode == "full":
            n = self._full_width(settings, pdu)
            canonical = sorted(pdu.options)
            block = canonical[:n]
            options = [block[j] for j in unrank_permutation(value, range(n))] + canonical[n:]
            target = f"order of {n} elements"
        elif mode == "position":
            others, marker = self._marker(settings, pdu)
            options = others[:value] + [marker] + others[value:]
            target = f"element {marker[0]} at {value}"
        else:
            element_id, _, others = self._split(settings, pdu)
            count = settings.min_elements + value
            options = others + [(element_id, filler_value(pdu.protocol, element_id))] * count
            target = f"{count} x element {element_id}"
        frame.pdus[index] = rebuild(pdu, options=tuple(options))
        return target

    def read_slot(self, settings, frame, index, nbits):
        pdu = frame.pdus[index]
        mode = self.mode(settings)
        if mode == "full":
            n = self._full_width(settings, pdu)
            return truncate_rank(rank_permutation(list(pdu.options[:n])), nbits)
        element_id, _, _ = self._split(settings, pdu)
        if mode == "position":
            ids = [e[0] for e in pdu.options]
            position = ids.index(element_id) if element_id in ids else 0
            return truncate_rank(position, nbits)
        count = sum(1 for e in pdu.options if e[0] == element_id) - settings.min_elements
        return min(max(count, 0), (1 << nbits) - 1)


# ---------------------------------------------------------------------------
# P3 Add Redundancy
# ---------------------------------------------------------------------------

class RedundancyCodec(SlotCodec):
    """Appends one element of Len/8 bytes; textual schemas get a hex-valued header token."""

    pattern = PatternId.P3_AddRedundancy

    def _value(self, schema: ProtocolSchema, element_id: int, data: bytes) -> bytes:
        if schema.textual:
            return f"{schema.tokens[element_id]}: {data.hex()}".encode("ascii")
        return data

    def check(self, settings, schema):
        require(schema.options is not None, f"{schema.name} has no element list to extend")
        require(settings.length is not None and settings.length % 8 == 0, "Len must be a multiple of 8 bits")
        element_id = element_id_of(settings, schema)
        size = len(self._value(schema, element_id, bytes(settings.length // 8)))
        require(size <= schema.options.max_element_bytes,
                f"{size}-byte element exceeds the {schema.name} limit of {schema.options.max_element_bytes}")

    def footprint(self, settings, schema):
        return Footprint(structural=True)

    def modified_bits(self, settings, schema):
        return float(settings.length + 8 * (schema.options.element_overhead if schema.options else 0))

    def slot_capacity(self, settings, frame, index):
        pdu = frame.pdus[index]
        element_id = element_id_of(settings, pdu.protocol)
        base = [e for e in pdu.options if e[0] != element_id]
        added = (element_id, self._value(pdu.protocol, element_id, bytes(settings.length // 8)))
        return settings.length if settings.length and fits(pdu.protocol, base + [added]) else 0

    def write_slot(self, settings, frame, index, value, nbits):
        pdu = frame.pdus[index]
        element_id = element_id_of(settings, pdu.protocol)
        base = [e for e in pdu.options if e[0] != element_id]
        data = value.to_bytes(nbits // 8, "big")
        frame.pdus[index] = rebuild(pdu, options=tuple(base + [(element_id, self._value(pdu.protocol, element_id, data))]))
        return f"element {element_id}"

    def read_slot(self, settings, frame, index, nbits):
        pdu = frame.pdus[index]
        element_id = element_id_of(settings, pdu.protocol)
        carried = [v for e, v in pdu.options if e == element_id]
        if not carried:
            return 0
        raw = carried[-1]
        if pdu.protocol.textual:
            try:
                raw = bytes.fromhex(raw.split(b":", 1)[1].strip().decode("ascii"))
            except (IndexError, ValueError):
                return 0
        raw = raw[:nbits // 8].ljust(nbits // 8, b"\x00")
        return int.from_bytes(raw, "big")


# ---------------------------------------------------------------------------
# P4 PDU Corruption/Loss
# ---------------------------------------------------------------------------

class CorruptionCodec(SlotCodec):
    """corrupt: bit 1 invalidates the checksum (raw write). drop: bit 1 removes the PDU."""

    pattern = PatternId.P4_CorruptionLoss

    def mode(self, settings: VariationSettings) -> str:
        return settings.mode or "corrupt"

    def slot_ready(self, settings):
        return self.mode(settings) == "corrupt"

    def check(self, settings, schema):
        mode = self.mode(settings)
        require(mode in ("corrupt", "drop"), f"unknown corruption mode '{mode}'")
        if mode == "corrupt":
            require(bool(schema.fields_of_kind(FieldKind.CHECKSUM)), f"{schema.name} carries no checksum to corrupt")

    def footprint(self, settings, schema):
        if self.mode(settings) == "drop":
            return Footprint()
        ranges = tuple((f.offset, f.end) for f in schema.fields_of_kind(FieldKind.CHECKSUM))
        return Footprint(header=ranges, raw_checksum=True)

    def modified_bits(self, settings, schema):
        return 16.0 if self.mode(settings) == "corrupt" else 1.0

    def slot_capacity(self, settings, frame, index):
        return 1

    def write_slot(self, settings, frame, index, value, nbits):
        if not value:
            return "intact"
        pdu = frame.pdus[index]
        for spec in pdu.protocol.fields_of_kind(FieldKind.CHECKSUM):
            pdu = write_field(pdu, spec.name, read_uint(pdu, spec.name) ^ 0xFFFF, raw=True)
        frame.pdus[index] = pdu.replace(corrupted=True)
        return "checksum"

    def read_slot(self, settings, frame, index, nbits):
        return 0 if checksum_ok(frame.pdus[index]) else 1

    # drop mode works on the whole stream: the last PDU always survives as a terminator

    def capacity(self, settings, carrier):
        if self.mode(settings) == "corrupt":
            return super().capacity(settings, carrier)
        self.check(settings, carrier.protocol)
        return max(0, len(carrier) - 1)

    def embed(self, settings, message, carrier):
        if self.mode(settings) == "corrupt":
            return super().embed(settings, message, carrier)
        self.check(settings, carrier.protocol)
        room = self.capacity(settings, carrier)
        self._require_capacity(room, settings, carrier)
        bits = message.bits[:room]
        kept: List[Pdu] = []
        records = []
        for i, pdu in enumerate(carrier.pdus):
            if i < len(bits):
                records.append(SlotRecord(slot=i, pattern=self.pattern, start=i, count=1,
                                          target="dropped" if bits[i] else "kept"))
                if bits[i]:
                    continue
            kept.append(pdu)
        return EmbedResult(stream=carrier.replace_pdus(kept), bits_embedded=len(bits), map=tuple(records))

    def extract(self, settings, stream):
        if self.mode(settings) == "corrupt":
            return super().extract(settings, stream)
        seen = {p.seq for p in stream.pdus}
        if not seen:
            return CovertMessage()
        # flows are numbered from 0, a missing seq below the last one marks a 1
        return CovertMessage(bits=Bits([s not in seen for s in range(max(seen))]))


# ---------------------------------------------------------------------------
# P5 Random Value, P7 Reserved/Unused
# ---------------------------------------------------------------------------

ALLOWED_KINDS = {
    PatternId.P5_RandomValue: (FieldKind.RANDOM,),
    PatternId.P7_ReservedUnused: (FieldKind.RESERVED, FieldKind.PADDING),
}


class FieldValueCodec(SlotCodec):
    """Writes Len message bits at Offset; P5 may whiten them with a keyed keystream."""

    def __init__(self, pattern: PatternId):
        self.pattern = pattern

    def check(self, settings, schema):
        offset, length = header_region(settings, schema)
        if settings.whiten_seed is not None:
            require(settings.whiten_seed >= 0, "whiten_seed must be non-negative")
        if settings.strict is False:
            return
        allowed = ALLOWED_KINDS[self.pattern]
        covered = 0
        for spec in schema.fields_in_range(offset, length):
            if spec.kind not in allowed:
                raise ConfigurationError(
                    f"{self.pattern.value} on {schema.name}: bits {offset}..{offset + length} touch "
                    f"{spec.kind.value} field {spec.name}")
            covered += min(spec.end, offset + length) - max(spec.offset, offset)
        if self.pattern is PatternId.P5_RandomValue and covered != length:
            raise ConfigurationError(f"P5 on {schema.name}: bits {offset}..{offset + length} are not all random")

    def footprint(self, settings, schema):
        offset, length = header_region(settings, schema)
        return Footprint(header=((offset, offset + length),))

    def modified_bits(self, settings, schema):
        return float(header_region(settings, schema)[1])

    def slot_capacity(self, settings, frame, index):
        if settings.only_first_pkt and index != 0:
            return 0
        return header_region(settings, frame.protocol)[1]

    def _keystream(self, settings: VariationSettings, pdu: Pdu, nbits: int) -> int:
        if self.pattern is not PatternId.P5_RandomValue or settings.whiten_seed is None:
            return 0
        raw = seeded_rng(settings, pdu).bytes((nbits + 7) // 8)
        return int.from_bytes(raw, "big") >> ((-nbits) % 8)

    def write_slot(self, settings, frame, index, value, nbits):
        pdu = frame.pdus[index]
        offset, length = header_region(settings, pdu.protocol)
        bits = Bits(uint=value ^ self._keystream(settings, pdu, length), length=length)
        frame.pdus[index] = write_bits(pdu, offset, bits)
        return settings.field or f"bits {offset}..{offset + length}"

    def read_slot(self, settings, frame, index, nbits):
        pdu = frame.pdus[index]
        offset, length = header_region(settings, pdu.protocol)
        return read_bits(pdu, offset, length).uint ^ self._keystream(settings, pdu, length)


# ---------------------------------------------------------------------------
# P6 Value Modulation, P6a Case, P6b LSB
# ---------------------------------------------------------------------------

class ValueModulationCodec(SlotCodec):
    """values: index into ValuesAllowed. case: letter case of a token name. lsb: low bits or two-level bases."""

    def __init__(self, pattern: PatternId, mode: Optional[str] = None):
        self.pattern = pattern
        self.fixed_mode = mode

    def mode(self, settings: VariationSettings) -> str:
        return self.fixed_mode or settings.mode or "values"

    def _bounds(self, settings: VariationSettings, schema: ProtocolSchema) -> Tuple[int, int]:
        spec = schema.field(settings.field)
        if settings.value_range is not None:
            return settings.value_range
        if spec.value_range is not None:
            return spec.value_range
        return 0, spec.max_value

    def _radius(self, settings: VariationSettings) -> int:
        return LSB_RADIUS if settings.radius is None else settings.radius

    def check(self, settings, schema):
        mode = self.mode(settings)
        require(mode in ("values", "case", "lsb"), f"unknown value modulation mode '{mode}'")
        if mode == "case":
            require(schema.textual, f"case modulation needs a textual schema, {schema.name} is a bit layout")
            require(settings.token is not None, "case modulation needs a token")
            schema.token_id(settings.token)
            return
        offset, length = header_region(settings, schema)
        if mode == "values":
            values = settings.values_allowed or ()
            require(len(values) >= 2, "ValuesAllowed needs at least two values")
            require(len(set(values)) == len(values), "ValuesAllowed repeats a value")
            require(all(0 <= v < (1 << length) for v in values), f"ValuesAllowed does not fit {length} bits")
            if settings.strict is not False and settings.field is not None:
                spec = schema.field(settings.field)
                if spec.kind is FieldKind.ENUMERATED:
                    illegal = [v for v in values if v not in spec.legal_values]
                    require(not illegal, f"{spec.name} does not allow {illegal}")
            return
        require(settings.field is not None, "lsb modulation needs a field")
        if settings.bases is None:
            require(0 < (settings.length or 1) <= length, f"Len exceeds the {length}-bit field")
            return
        bases = settings.bases
        radius = self._radius(settings)
        lo, hi = self._bounds(settings, schema)
        require(len(bases) >= 2, "two-level modulation needs at least two bases")
        for b in bases:
            require(lo <= b - max(radius - 1, 0) and b + max(radius - 1, 0) <= hi,
                    f"base {b} with radius {radius} leaves {lo}..{hi}")
        ordered = sorted(bases)
        require(all(b - a >= 2 * radius for a, b in zip(ordered, ordered[1:])) and len(set(bases)) == len(bases),
                f"bases {bases} closer than twice the radius {radius}")

    def footprint(self, settings, schema):
        if self.mode(settings) == "case":
            return Footprint(elements=frozenset({schema.token_id(settings.token)}))
        offset, length = header_region(settings, schema)
        return Footprint(header=((offset, offset + length),))

    def modified_bits(self, settings, schema):
        mode = self.mode(settings)
        if mode == "case":
            return float(sum(c.isalpha() for c in settings.token))
        if mode == "lsb" and settings.bases is None:
            return float(settings.length or 1)
        return float(header_region(settings, schema)[1])

    def _token_element(self, settings, pdu: Pdu) -> Optional[int]:
        token_id = pdu.protocol.token_id(settings.token)
        for position, (element_id, _) in enumerate(pdu.options):
            if element_id == token_id:
                return position
        return None

    def slot_capacity(self, settings, frame, index):
        mode = self.mode(settings)
        if mode == "values":
            return floor_log2(len(settings.values_allowed))
        if mode == "lsb":
            return floor_log2(len(settings.bases)) if settings.bases else (settings.length or 1)
        pdu = frame.pdus[index]
        position = self._token_element(settings, pdu)
        if position is None:
            return 0
        name = pdu.options[position][1].split(b":", 1)[0]
        return sum(1 for c in name.decode("ascii", "replace") if c.isalpha())

    def write_slot(self, settings, frame, index, value, nbits):
        pdu = frame.pdus[index]
        mode = self.mode(settings)
        if mode == "case":
            position = self._token_element(settings, pdu)
            element_id, raw = pdu.options[position]
            name, sep, rest = raw.decode("ascii").partition(":")
            letters = iter(format(value, f"0{nbits}b"))
            cased = "".join((c.upper() if next(letters) == "1" else c.lower()) if c.isalpha() else c for c in name)
            options = list(pdu.options)
            options[position] = (element_id, f"{cased}{sep}{rest}".encode("ascii"))
            frame.pdus[index] = rebuild(pdu, options=tuple(options))
            return f"token {settings.token}"
        offset, length = header_region(settings, pdu.protocol)
        if mode == "values":
            field_value = settings.values_allowed[value]
        elif settings.bases is None:
            k = settings.length or 1
            field_value = (read_bits(pdu, offset, length).uint & ~((1 << k) - 1)) | value
        else:
            radius = self._radius(settings)
            jitter = int(seeded_rng(settings, pdu).integers(-radius + 1, radius)) if radius > 1 else 0
            field_value = settings.bases[value] + jitter
        frame.pdus[index] = write_bits(pdu, offset, Bits(uint=field_value, length=length))
        return settings.field or f"bits {offset}..{offset + length}"

    def read_slot(self, settings, frame, index, nbits):
        pdu = frame.pdus[index]
        mode = self.mode(settings)
        if mode == "case":
            position = self._token_element(settings, pdu)
            name = pdu.options[position][1].split(b":", 1)[0].decode("ascii", "replace")
            return int("".join("1" if c.isupper() else "0" for c in name if c.isalpha()) or "0", 2)
        offset, length = header_region(settings, pdu.protocol)
        current = read_bits(pdu, offset, length).uint
        if mode == "values":
            values = settings.values_allowed
            index_of = values.index(current) if current in values else min(
                range(len(values)), key=lambda j: abs(values[j] - current))
            return min(index_of, (1 << nbits) - 1)
        if settings.bases is None:
            return current & ((1 << (settings.length or 1)) - 1)
        bases = settings.bases
        nearest = min(range(len(bases)), key=lambda j: abs(bases[j] - current))
        return min(nearest, (1 << nbits) - 1)
