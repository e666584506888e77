"""
Protocol model
Declarative header schemas, PDUs and PDU streams every other module operates on.
Values are immutable: each operation returns new objects.
"""

from __future__ import annotations

import logging
from enum import Enum
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from bitstring import Bits
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator

from .errors import ConfigurationError, FieldError

logger = logging.getLogger(__name__)


class FieldKind(str, Enum):
    RESERVED = "Reserved"
    RANDOM = "Random"
    SEQUENTIAL = "Sequential"
    DECREMENTING = "Decrementing"
    CHECKSUM = "Checksum"
    ADDRESS = "Address"
    LENGTH = "Length"
    ENUMERATED = "Enumerated"
    PADDING = "Padding"
    TEXT_TOKEN = "TextToken"


# Fields recomputed from the rest of the PDU
DERIVED_KINDS = (FieldKind.CHECKSUM, FieldKind.LENGTH)

LengthBasis = Literal["header", "options", "payload", "body", "total"]


class FieldSpec(BaseModel):
    """One field of a bit-layout header."""

    model_config = ConfigDict(frozen=True)

    name: str = Field(..., description="Field name, unique within the schema")
    offset: int = Field(..., ge=0, description="Bits between the first header bit and the field")
    length: int = Field(..., ge=1, description="Field width in bits")
    kind: FieldKind
    legal_values: Optional[Tuple[int, ...]] = Field(default=None, description="Enumerated: allowed values")
    value_range: Optional[Tuple[int, int]] = Field(default=None, description="Decrementing: inclusive legal range")
    coverage: Optional[Tuple[int, int]] = Field(default=None, description="Checksum: covered header bits [start, end)")
    length_of: Optional[LengthBasis] = Field(default=None, description="Length: measured part of the PDU")
    unit: int = Field(default=1, ge=1, description="Length: bytes per counted unit")
    default: Optional[int] = Field(default=None, description="Initial value for generated carriers")

    @model_validator(mode="after")
    def _check_kind_parameters(self) -> "FieldSpec":
        top = self.max_value
        if self.kind is FieldKind.CHECKSUM:
            if self.coverage is None:
                raise ValueError(f"checksum field {self.name} must declare the bits it covers")
            if self.length != 16:
                raise ValueError(f"checksum field {self.name} must be 16 bits wide")
            start, end = self.coverage
            if not 0 <= start < end:
                raise ValueError(f"checksum field {self.name} has an empty coverage")
        if self.kind is FieldKind.ENUMERATED:
            if not self.legal_values:
                raise ValueError(f"enumerated field {self.name} needs at least one legal value")
            if any(v < 0 or v > top for v in self.legal_values):
                raise ValueError(f"enumerated field {self.name} lists values wider than {self.length} bits")
        if self.kind is FieldKind.DECREMENTING:
            if self.value_range is None:
                raise ValueError(f"decrementing field {self.name} needs a legal value range")
            lo, hi = self.value_range
            if not 0 <= lo <= hi <= top:
                raise ValueError(f"decrementing field {self.name} has an invalid range {lo}..{hi}")
        if self.kind is FieldKind.LENGTH and self.length_of is None:
            raise ValueError(f"length field {self.name} must say what it measures")
        if self.default is not None and not 0 <= self.default <= top:
            raise ValueError(f"default of {self.name} does not fit {self.length} bits")
        return self

    @property
    def end(self) -> int:
        return self.offset + self.length

    @property
    def max_value(self) -> int:
        return (1 << self.length) - 1


class OptionsSpec(BaseModel):
    """Variable element list attached to a header (IPv4 options, extension headers, tokens)."""

    model_config = ConfigDict(frozen=True, ser_json_bytes="base64", val_json_bytes="base64")

    element_ids: Tuple[int, ...] = Field(..., description="Legal element identifiers")
    min_count: int = Field(default=0, ge=0)
    max_count: int = Field(..., ge=1)
    max_total_bytes: int = Field(..., ge=1, description="Upper bound for the encoded list")
    element_overhead: int = Field(default=2, ge=0, description="Encoded bytes per element besides its payload")
    max_element_bytes: int = Field(default=253, ge=1)
    defaults: Tuple[Tuple[int, bytes], ...] = Field(default=(), description="Element list of generated carriers")

    @model_validator(mode="after")
    def _check_bounds(self) -> "OptionsSpec":
        if not self.element_ids:
            raise ValueError("element id space must not be empty")
        if self.min_count > self.max_count:
            raise ValueError("min_count exceeds max_count")
        if not self.min_count <= len(self.defaults) <= self.max_count:
            raise ValueError("default element list violates the count bounds")
        unknown = [e for e, _ in self.defaults if e not in self.element_ids]
        if unknown:
            raise ValueError(f"default elements use unknown ids {unknown}")
        return self

    def encoded_size(self, elements: Sequence[Tuple[int, bytes]]) -> int:
        return sum(self.element_overhead + len(value) for _, value in elements)


class ProtocolSchema(BaseModel):
    """Header layout of one protocol. Either a bit layout or a textual token list."""

    model_config = ConfigDict(frozen=True)

    name: str = Field(..., description="Schema identifier, e.g. ipv4_like")
    header_bits: int = Field(..., ge=0)
    fields: Tuple[FieldSpec, ...] = ()
    options: Optional[OptionsSpec] = None
    textual: bool = Field(default=False, description="Token-based header instead of a bit layout")
    tokens: Tuple[str, ...] = Field(default=(), description="Textual: token vocabulary, element id = index")
    default_payload: int = Field(default=0, ge=0, description="Payload bytes of generated carriers")

    _field_map: Dict[str, FieldSpec] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def _check_layout(self) -> "ProtocolSchema":
        if self.textual:
            if self.fields or self.header_bits:
                raise ValueError(f"textual schema {self.name} cannot carry a bit layout")
            if not self.tokens:
                raise ValueError(f"textual schema {self.name} needs a token list")
            if self.options is None:
                raise ValueError(f"textual schema {self.name} keeps its tokens in the element list")
            if tuple(self.options.element_ids) != tuple(range(len(self.tokens))):
                raise ValueError(f"textual schema {self.name} must number its tokens 0..{len(self.tokens) - 1}")
            return self
        if self.tokens:
            raise ValueError(f"bit-layout schema {self.name} cannot declare tokens")
        if not self.fields:
            raise ValueError(f"schema {self.name} declares no fields")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ValueError(f"schema {self.name} repeats field names")
        ordered = sorted(self.fields, key=lambda f: f.offset)
        for left, right in zip(ordered, ordered[1:]):
            if right.offset < left.end:
                raise ValueError(f"fields {left.name} and {right.name} overlap")
        if ordered[-1].end > self.header_bits:
            raise ValueError(f"field {ordered[-1].name} runs past header_bits={self.header_bits}")
        for f in self.fields:
            if f.coverage is not None and f.coverage[1] > self.header_bits:
                raise ValueError(f"checksum {f.name} covers bits past the header")
        return self

    def model_post_init(self, __context) -> None:
        self._field_map = {f.name: f for f in self.fields}

    def field(self, name: str) -> FieldSpec:
        try:
            return self._field_map[name]
        except KeyError:
            raise FieldError(f"schema {self.name} has no field '{name}'") from None

    def has_field(self, name: str) -> bool:
        return name in self._field_map

    def fields_of_kind(self, *kinds: FieldKind) -> List[FieldSpec]:
        return [f for f in self.fields if f.kind in kinds]

    def fields_in_range(self, offset: int, length: int) -> List[FieldSpec]:
        """Fields intersecting header bits [offset, offset+length)."""
        end = offset + length
        return [f for f in self.fields if f.offset < end and offset < f.end]

    def token_id(self, name: str) -> int:
        lowered = name.lower()
        for index, token in enumerate(self.tokens):
            if token.lower() == lowered:
                return index
        raise FieldError(f"schema {self.name} has no token '{name}'")

    @property
    def header_bytes(self) -> int:
        return (self.header_bits + 7) // 8


class Pdu(BaseModel):
    """One protocol data unit of the overt channel."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    protocol: ProtocolSchema
    header: Bits = Field(..., description="Header bit vector of protocol.header_bits")
    options: Tuple[Tuple[int, bytes], ...] = Field(default=(), description="Ordered (element_id, value) list")
    payload: bytes = b""
    timestamp: int = Field(..., ge=0, description="Microseconds since stream start")
    seq: int = Field(..., ge=0, description="PDU index assigned at generation")
    corrupted: bool = False
    retransmission: bool = False

    @model_validator(mode="after")
    def _check_header(self) -> "Pdu":
        if len(self.header) != self.protocol.header_bits:
            raise ValueError(f"header has {len(self.header)} bits, schema {self.protocol.name} expects {self.protocol.header_bits}")
        return self

    def size_bytes(self, basis: str = "total") -> int:
        opts = self.protocol.options.encoded_size(self.options) if self.protocol.options else 0
        header = self.protocol.header_bytes
        sizes = {
            "header": header + opts,
            "options": opts,
            "payload": len(self.payload),
            "body": opts + len(self.payload),
            "total": header + opts + len(self.payload),
        }
        return sizes[basis]

    def replace(self, **changes) -> "Pdu":
        return self.model_copy(update=changes)


class PduStream(BaseModel):
    """Ordered PDUs of one flow sharing a schema."""

    model_config = ConfigDict(frozen=True)

    protocol: ProtocolSchema
    pdus: Tuple[Pdu, ...] = ()

    @model_validator(mode="after")
    def _check_members(self) -> "PduStream":
        for pdu in self.pdus:
            if pdu.protocol.name != self.protocol.name:
                raise ValueError(f"PDU seq={pdu.seq} uses schema {pdu.protocol.name}, stream uses {self.protocol.name}")
        return self

    def __len__(self) -> int:
        return len(self.pdus)

    def replace_pdus(self, pdus: Sequence[Pdu]) -> "PduStream":
        return self.model_copy(update={"pdus": tuple(pdus)})

    def timestamps(self) -> np.ndarray:
        return np.array([p.timestamp for p in self.pdus], dtype=np.int64)

    def iats(self) -> np.ndarray:
        """Gaps between consecutive PDUs in arrival order."""
        return np.diff(self.timestamps())


class Violation(BaseModel):
    model_config = ConfigDict(frozen=True)

    code: str = Field(..., description="ChecksumMismatch, LengthMismatch, IllegalEnumValue, ...")
    target: str = Field(..., description="Field, element or token concerned")
    detail: str = ""


# ---------------------------------------------------------------------------
# Integer views of header bits
# ---------------------------------------------------------------------------

def _get_uint(value: int, total: int, offset: int, length: int) -> int:
    return (value >> (total - offset - length)) & ((1 << length) - 1)


def _set_uint(value: int, total: int, offset: int, length: int, field_value: int) -> int:
    shift = total - offset - length
    mask = ((1 << length) - 1) << shift
    return (value & ~mask) | (field_value << shift)


def _header_int(pdu: Pdu) -> int:
    return pdu.header.uint if pdu.protocol.header_bits else 0


def _to_bits(value: int, length: int) -> Bits:
    return Bits(uint=value, length=length) if length else Bits()


# 校验和：16 位反码求和（Internet checksum），覆盖范围不足 16 位整数倍时尾部补零
def internet_checksum(covered: int, nbits: int) -> int:
    pad = (-nbits) % 16
    data = (covered << pad).to_bytes((nbits + pad) // 8, "big")
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _length_value(pdu: Pdu, spec: FieldSpec) -> int:
    size = pdu.size_bytes(spec.length_of)
    return -(-size // spec.unit)


def _checksum_value(value: int, schema: ProtocolSchema, spec: FieldSpec) -> int:
    start, end = spec.coverage
    covered = _get_uint(value, schema.header_bits, start, end - start)
    # the checksum field itself counts as zero
    for other in schema.fields_of_kind(FieldKind.CHECKSUM):
        if start <= other.offset and other.end <= end:
            covered = _set_uint(covered, end - start, other.offset - start, other.length, 0)
    return internet_checksum(covered, end - start)


# 派生字段重算：先长度后校验和，保证校验和覆盖最新的长度字段
def recompute_derived(pdu: Pdu) -> Pdu:
    """Return pdu with every Length and Checksum field made consistent."""
    schema = pdu.protocol
    if schema.textual:
        return pdu
    total = schema.header_bits
    value = _header_int(pdu)
    for spec in schema.fields_of_kind(FieldKind.LENGTH):
        field_value = _length_value(pdu, spec)
        if field_value > spec.max_value:
            raise ConfigurationError(f"{schema.name}.{spec.name} cannot express a length of {field_value} units")
        value = _set_uint(value, total, spec.offset, spec.length, field_value)
    for spec in schema.fields_of_kind(FieldKind.CHECKSUM):
        value = _set_uint(value, total, spec.offset, spec.length, _checksum_value(value, schema, spec))
    return pdu.model_copy(update={"header": _to_bits(value, total)})


def rebuild(pdu: Pdu, **changes) -> Pdu:
    """Apply structural changes (options, payload, ...) and recompute derived fields."""
    return recompute_derived(pdu.model_copy(update=changes))


# ---------------------------------------------------------------------------
# Field access
# ---------------------------------------------------------------------------

def read_field(pdu: Pdu, field_name: str) -> Bits:
    spec = pdu.protocol.field(field_name)
    return pdu.header[spec.offset:spec.end]


def read_uint(pdu: Pdu, field_name: str) -> int:
    spec = pdu.protocol.field(field_name)
    return _get_uint(_header_int(pdu), pdu.protocol.header_bits, spec.offset, spec.length)


def read_bits(pdu: Pdu, offset: int, length: int) -> Bits:
    if offset < 0 or offset + length > pdu.protocol.header_bits:
        raise FieldError(f"bits {offset}..{offset + length} lie outside the {pdu.protocol.name} header")
    return pdu.header[offset:offset + length]


def write_bits(pdu: Pdu, offset: int, bits: Bits, raw: bool = False) -> Pdu:
    """Overwrite header bits [offset, offset+len(bits)); derived fields follow unless raw."""
    total = pdu.protocol.header_bits
    if offset < 0 or offset + len(bits) > total:
        raise FieldError(f"bits {offset}..{offset + len(bits)} lie outside the {pdu.protocol.name} header")
    if not len(bits):
        return pdu
    value = _set_uint(_header_int(pdu), total, offset, len(bits), bits.uint)
    updated = pdu.model_copy(update={"header": _to_bits(value, total)})
    return updated if raw else recompute_derived(updated)


def write_field(pdu: Pdu, field_name: str, bits: Union[Bits, int], raw: bool = False) -> Pdu:
    """Replace one field. Raw mode skips the Checksum/Length recomputation."""
    spec = pdu.protocol.field(field_name)
    if isinstance(bits, int):
        if not 0 <= bits <= spec.max_value:
            raise FieldError(f"value {bits} does not fit {field_name} ({spec.length} bits)")
        bits = Bits(uint=bits, length=spec.length)
    if len(bits) != spec.length:
        raise FieldError(f"{field_name} is {spec.length} bits wide, got {len(bits)}")
    return write_bits(pdu, spec.offset, bits, raw=raw)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _validate_elements(pdu: Pdu) -> List[Violation]:
    spec = pdu.protocol.options
    if spec is None:
        if pdu.options:
            return [Violation(code="UnknownElement", target="options", detail="schema has no element list")]
        return []
    found: List[Violation] = []
    if not spec.min_count <= len(pdu.options) <= spec.max_count:
        found.append(Violation(code="ElementCount", target="options",
                               detail=f"{len(pdu.options)} not in {spec.min_count}..{spec.max_count}"))
    if spec.encoded_size(pdu.options) > spec.max_total_bytes:
        found.append(Violation(code="OptionOverflow", target="options",
                               detail=f"{spec.encoded_size(pdu.options)} > {spec.max_total_bytes} bytes"))
    for element_id, value in pdu.options:
        if element_id not in spec.element_ids:
            found.append(Violation(code="UnknownElement", target=str(element_id)))
            continue
        if len(value) > spec.max_element_bytes:
            found.append(Violation(code="OptionOverflow", target=str(element_id),
                                   detail=f"{len(value)} > {spec.max_element_bytes} bytes"))
        if pdu.protocol.textual:
            name = pdu.protocol.tokens[element_id]
            head = value.split(b":", 1)[0]
            if b":" not in value or head.decode("ascii", "replace").lower() != name.lower():
                found.append(Violation(code="MalformedToken", target=name, detail=value[:32].decode("ascii", "replace")))
    return found


# PDU 校验：校验和、长度字段、枚举取值与元素列表，违规以数据形式返回
def validate_pdu(pdu: Pdu) -> List[Violation]:
    """Return the list of violations; empty means the PDU is well formed."""
    schema = pdu.protocol
    violations = _validate_elements(pdu)
    if schema.textual:
        return violations
    value = _header_int(pdu)
    for spec in schema.fields_of_kind(FieldKind.ENUMERATED):
        current = _get_uint(value, schema.header_bits, spec.offset, spec.length)
        if current not in spec.legal_values:
            violations.append(Violation(code="IllegalEnumValue", target=spec.name, detail=str(current)))
    for spec in schema.fields_of_kind(FieldKind.LENGTH):
        current = _get_uint(value, schema.header_bits, spec.offset, spec.length)
        expected = _length_value(pdu, spec)
        if current != expected:
            violations.append(Violation(code="LengthMismatch", target=spec.name, detail=f"{current} != {expected}"))
    for spec in schema.fields_of_kind(FieldKind.CHECKSUM):
        current = _get_uint(value, schema.header_bits, spec.offset, spec.length)
        expected = _checksum_value(value, schema, spec)
        if current != expected:
            violations.append(Violation(code="ChecksumMismatch", target=spec.name, detail=f"{current:#06x} != {expected:#06x}"))
    return violations


def checksum_ok(pdu: Pdu) -> bool:
    return not any(v.code == "ChecksumMismatch" for v in validate_pdu(pdu))


# ---------------------------------------------------------------------------
# Carrier generation
# ---------------------------------------------------------------------------

class IatModel(BaseModel):
    """Inter-arrival time model of a generated carrier."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["constant", "exponential", "empirical"]
    value: float = Field(default=0.0, ge=0, description="constant gap or exponential mean in microseconds")
    samples: Tuple[int, ...] = Field(default=(), description="empirical gaps to resample from")

    def __str__(self) -> str:
        if self.kind == "empirical":
            return "empirical:" + ",".join(str(s) for s in self.samples)
        return f"{self.kind}:{self.value:g}"


def parse_iat_model(model: Union[str, dict, IatModel]) -> IatModel:
    """Accept 'constant:1000', 'exponential:5000', 'empirical:900,1100,1500' or a mapping."""
    if isinstance(model, IatModel):
        return model
    if isinstance(model, dict):
        kind = model.get("kind")
        if kind not in ("constant", "exponential", "empirical"):
            raise ConfigurationError(f"unknown iat model '{kind}'")
        return IatModel(**model)
    kind, _, arg = str(model).partition(":")
    kind = kind.strip().lower()
    try:
        if kind in ("constant", "exponential"):
            return IatModel(kind=kind, value=float(arg))
        if kind == "empirical":
            samples = tuple(int(s) for s in arg.split(",") if s.strip())
            if not samples:
                raise ValueError("no samples")
            return IatModel(kind=kind, samples=samples)
    except ValueError as e:
        raise ConfigurationError(f"bad iat model '{model}': {e}") from None
    raise ConfigurationError(f"unknown iat model '{model}'")


def _draw_uint(rng: np.random.Generator, length: int) -> int:
    if length <= 62:
        return int(rng.integers(0, 1 << length))
    raw = int.from_bytes(rng.bytes((length + 7) // 8), "big")
    return raw >> ((-length) % 8)


def _gaps(iat: IatModel, count: int, rng: np.random.Generator) -> np.ndarray:
    if count <= 0:
        return np.zeros(0, dtype=np.int64)
    if iat.kind == "constant":
        return np.full(count, int(round(iat.value)), dtype=np.int64)
    if iat.kind == "exponential":
        # at least 1 us so relative gap differences stay defined
        return np.maximum(np.rint(rng.exponential(iat.value, count)), 1).astype(np.int64)
    return rng.choice(np.asarray(iat.samples, dtype=np.int64), size=count)


# 载体流生成：按字段类型生成默认值，时间戳按 IAT 模型累加
def make_carrier(schema: ProtocolSchema, n: int, iat_model: Union[str, dict, IatModel], rng_seed: int) -> PduStream:
    """Generate n schema-conformant PDUs with valid derived fields.

    Args:
        schema: protocol schema of the overt flow
        n: number of PDUs, at least 1
        iat_model: constant, exponential or empirical gap model
        rng_seed: seed for random-kind fields, payload bytes and gaps

    Returns:
        PduStream whose PDUs all pass validate_pdu
    """
    if n < 1:
        raise ConfigurationError("a carrier needs at least one PDU")
    iat = parse_iat_model(iat_model)
    rng = np.random.default_rng(rng_seed)
    total = schema.header_bits

    # per-flow constants
    flow_values: Dict[str, int] = {}
    for spec in schema.fields:
        if spec.kind is FieldKind.ADDRESS:
            flow_values[spec.name] = spec.default if spec.default is not None else _draw_uint(rng, spec.length)
        elif spec.kind is FieldKind.SEQUENTIAL:
            flow_values[spec.name] = spec.default if spec.default is not None else _draw_uint(rng, min(spec.length, 31))
        elif spec.kind is FieldKind.DECREMENTING:
            flow_values[spec.name] = spec.default if spec.default is not None else spec.value_range[1]
        elif spec.kind is FieldKind.ENUMERATED:
            flow_values[spec.name] = spec.default if spec.default is not None else spec.legal_values[0]
        elif spec.kind in (FieldKind.RESERVED, FieldKind.PADDING):
            flow_values[spec.name] = spec.default or 0

    timestamps = np.concatenate([[0], np.cumsum(_gaps(iat, n - 1, rng))]).astype(np.int64)
    defaults = schema.options.defaults if schema.options else ()

    pdus: List[Pdu] = []
    for i in range(n):
        value = 0
        for spec in schema.fields:
            if spec.kind is FieldKind.RANDOM:
                field_value = _draw_uint(rng, spec.length)
            elif spec.kind is FieldKind.SEQUENTIAL:
                field_value = (flow_values[spec.name] + i) & spec.max_value
            elif spec.kind in DERIVED_KINDS:
                continue
            else:
                field_value = flow_values[spec.name]
            value = _set_uint(value, total, spec.offset, spec.length, field_value)
        pdu = Pdu(
            protocol=schema,
            header=_to_bits(value, total),
            options=defaults,
            payload=rng.bytes(schema.default_payload),
            timestamp=int(timestamps[i]),
            seq=i,
        )
        pdus.append(recompute_derived(pdu))
    logger.debug("[carrier] schema=%s n=%d iat=%s seed=%d", schema.name, n, iat, rng_seed)
    return PduStream(protocol=schema, pdus=tuple(pdus))
