"""
Variation settings
Per-(pattern, protocol) parameter bundles and the settings file format

    [pattern P5]
    settings.ipv4.Offset=32
    settings.ipv4.Len=16
"""

import logging
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .catalog import PatternId
from .errors import ConfigurationError, ParseError
from .protocol import ProtocolSchema
from .schemas import get_schema, resolve_schema_name

logger = logging.getLogger(__name__)


class VariationSettings(BaseModel):
    """Settings of one pattern on one protocol. Keys use the settings-file spelling as aliases."""

    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    pattern: PatternId
    protocol: str = Field(..., description="Schema name or short alias as written, e.g. ipv4")

    offset: Optional[int] = Field(default=None, alias="Offset", ge=0,
                                  description="Bits between the first header bit and the utilized area")
    length: Optional[int] = Field(default=None, alias="Len", ge=0, description="Utilized bits")
    only_first_pkt: Optional[bool] = Field(default=None, alias="OnlyFirstPkt")
    min_size: Optional[int] = Field(default=None, alias="MinSize", ge=0)
    max_size: Optional[int] = Field(default=None, alias="MaxSize", ge=0)
    min_elements: Optional[int] = Field(default=None, alias="MinElements", ge=0)
    max_elements: Optional[int] = Field(default=None, alias="MaxElements", ge=0)
    value_range: Optional[Tuple[int, int]] = Field(default=None, alias="ValueRange")
    values_allowed: Optional[Tuple[int, ...]] = Field(default=None, alias="ValuesAllowed")
    min_ipg: Optional[int] = Field(default=None, alias="MinIPG", ge=0)
    max_ipg: Optional[int] = Field(default=None, alias="MaxIPG", ge=0)
    distribution_ipg: Optional[Tuple[int, ...]] = Field(default=None, alias="DistributionIPG",
                                                         description="Empirical offsets the IAT codec samples shaping jitter from")
    min_rate: Optional[int] = Field(default=None, alias="MinRate", ge=0)
    max_rate: Optional[int] = Field(default=None, alias="MaxRate", ge=0)
    element_id: Optional[int] = Field(default=None, ge=0)
    token: Optional[str] = None
    bases: Optional[Tuple[int, ...]] = None
    radius: Optional[int] = Field(default=None, ge=0)
    granularity: Optional[int] = Field(default=None, ge=1)
    window: Optional[int] = Field(default=None, ge=1, description="P9: microseconds, P10: PDUs")
    duplicate_gap: Optional[int] = Field(default=None, ge=0)
    whiten_seed: Optional[int] = None
    mode: Optional[str] = None
    field: Optional[str] = None
    strict: Optional[bool] = None
    d0: Optional[int] = Field(default=None, ge=0)
    d1: Optional[int] = Field(default=None, ge=0)
    jitter_guard: Optional[int] = Field(default=None, ge=0)
    r0: Optional[int] = Field(default=None, ge=0)
    r1: Optional[int] = Field(default=None, ge=0)

    @field_validator("values_allowed", "distribution_ipg", "bases", mode="before")
    @classmethod
    def _split_list(cls, value):
        if isinstance(value, str):
            return tuple(int(v, 0) for v in value.split(",") if v.strip())
        return value

    @field_validator("value_range", mode="before")
    @classmethod
    def _split_range(cls, value):
        if isinstance(value, str):
            lo, sep, hi = value.partition("..")
            if not sep:
                raise ValueError("ValueRange must look like lo..hi")
            return int(lo, 0), int(hi, 0)
        return value

    @field_validator("pattern", mode="before")
    @classmethod
    def _parse_pattern(cls, value):
        return PatternId.parse(value)

    @model_validator(mode="after")
    def _check_bounds(self) -> "VariationSettings":
        for lo, hi in (("min_size", "max_size"), ("min_elements", "max_elements"),
                       ("min_ipg", "max_ipg"), ("min_rate", "max_rate")):
            a, b = getattr(self, lo), getattr(self, hi)
            if a is not None and b is not None and a > b:
                fields = type(self).model_fields
                raise ValueError(f"{fields[lo].alias} exceeds {fields[hi].alias}")
        if self.value_range is not None and self.value_range[0] > self.value_range[1]:
            raise ValueError("ValueRange lower bound exceeds upper bound")
        return self

    @property
    def schema_name(self) -> str:
        return resolve_schema_name(self.protocol)

    @property
    def protocol_schema(self) -> ProtocolSchema:
        return get_schema(self.protocol)

    def entries(self) -> Dict[str, object]:
        """Set keys in settings-file spelling."""
        return self.model_dump(by_alias=True, exclude_none=True, exclude={"pattern", "protocol"})

    def retarget(self, protocol: str) -> "VariationSettings":
        return self.model_copy(update={"protocol": protocol})

    def validate_for(self, schema: ProtocolSchema) -> None:
        """Cross-check against a header layout (Offset+Len, field names)."""
        if self.offset is not None and self.length is not None:
            if self.offset + self.length > schema.header_bits:
                raise ConfigurationError(
                    f"{self.pattern.value}/{self.protocol}: Offset+Len={self.offset + self.length} "
                    f"exceeds {schema.name} header of {schema.header_bits} bits")
        if self.field is not None:
            schema.field(self.field)
        if self.token is not None and schema.textual:
            schema.token_id(self.token)


# 各模式必需的设置项；元组内为"任选其一"的替代组合
REQUIRED_KEYS: Dict[PatternId, List[Tuple[str, ...]]] = {
    PatternId.P1_Size: [("MinSize",), ("MaxSize",)],
    PatternId.P2_Sequence: [],
    PatternId.P2a_Position: [("element_id", "token")],
    PatternId.P2b_NumElements: [("element_id", "token"), ("MinElements",), ("MaxElements",)],
    PatternId.P3_AddRedundancy: [("Len",), ("element_id", "token")],
    PatternId.P4_CorruptionLoss: [],
    PatternId.P5_RandomValue: [("field", "Offset"), ("field", "Len")],
    PatternId.P6_ValueModulation: [("field", "Offset"), ("ValuesAllowed",)],
    PatternId.P6a_Case: [("token",)],
    PatternId.P6b_LSB: [("field",), ("Len", "bases")],
    PatternId.P7_ReservedUnused: [("field", "Offset"), ("field", "Len")],
    PatternId.P8_InterArrivalTime: [("d0",), ("d1",)],
    PatternId.P9_Rate: [("window",), ("r0",), ("r1",)],
    PatternId.P10_PduOrder: [("window",)],
    PatternId.P11_Retransmission: [("duplicate_gap",)],
}


def missing_keys(settings: VariationSettings) -> List[str]:
    present = settings.entries()
    return ["|".join(group) for group in REQUIRED_KEYS[settings.pattern] if not any(k in present for k in group)]


class SettingsCatalog(BaseModel):
    """(pattern, schema) -> settings; at most one entry per key."""

    model_config = ConfigDict(frozen=True)

    entries: Dict[Tuple[PatternId, str], VariationSettings] = Field(default_factory=dict)

    @classmethod
    def of(cls, settings: Iterable[VariationSettings]) -> "SettingsCatalog":
        entries: Dict[Tuple[PatternId, str], VariationSettings] = {}
        for s in settings:
            key = (s.pattern, s.schema_name)
            if key in entries:
                raise ConfigurationError(f"duplicate settings for {s.pattern.value} on {s.protocol}")
            entries[key] = s
        return cls(entries=entries)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, pattern: Union[str, PatternId], protocol: str) -> Optional[VariationSettings]:
        return self.entries.get((PatternId.parse(pattern), resolve_schema_name(protocol)))

    def for_pattern(self, pattern: Union[str, PatternId]) -> List[VariationSettings]:
        pid = PatternId.parse(pattern)
        return [s for (p, _), s in self.entries.items() if p is pid]

    def patterns(self) -> List[PatternId]:
        return [p for p in PatternId if any(k[0] is p for k in self.entries)]


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------

SECTION_RE = re.compile(r"^\[pattern\s+([A-Za-z0-9_.]+)\]$")
ENTRY_RE = re.compile(r"^settings\.([A-Za-z0-9_\-]+)\.([A-Za-z0-9_]+)\s*=\s*(.*?);?$")


def _format_value(value: object, key: str) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if key == "ValueRange":
        return f"{value[0]}..{value[1]}"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _build(pattern: PatternId, protocol: str, raw: Dict[str, str], line: int) -> VariationSettings:
    try:
        settings = VariationSettings(pattern=pattern, protocol=protocol, **raw)
    except ValidationError as e:
        err = e.errors()[0]
        where = ".".join(str(p) for p in err["loc"])
        raise ParseError(f"settings.{protocol}.{where}: {err['msg']}", line=line) from None
    missing = missing_keys(settings)
    if missing:
        raise ParseError(f"{pattern.value}/{protocol} lacks required keys {missing}", line=line)
    try:
        settings.validate_for(settings.protocol_schema)
    except ConfigurationError as e:
        raise ParseError(str(e), line=line) from None
    return settings


# 设置文件解析：[pattern Pxx] 分节，settings.<协议>.<键>=<值>，行尾分号可选
def parse_settings(text: str) -> SettingsCatalog:
    pattern: Optional[PatternId] = None
    pending: Dict[Tuple[PatternId, str], Dict[str, str]] = {}
    first_line: Dict[Tuple[PatternId, str], int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        section = SECTION_RE.match(line)
        if section:
            try:
                pattern = PatternId.parse(section.group(1))
            except ConfigurationError as e:
                raise ParseError(str(e), line=lineno) from None
            continue
        entry = ENTRY_RE.match(line)
        if entry is None:
            raise ParseError(f"cannot parse '{line}'", line=lineno)
        if pattern is None:
            raise ParseError("settings line outside a [pattern ...] section", line=lineno)
        protocol, key, value = entry.groups()
        if key in ("pattern", "protocol") or (key not in _KNOWN_KEYS):
            raise ParseError(f"unknown settings key '{key}'", line=lineno)
        bucket = pending.setdefault((pattern, protocol), {})
        first_line.setdefault((pattern, protocol), lineno)
        if key in bucket:
            raise ParseError(f"key '{key}' repeated for {pattern.value}/{protocol}", line=lineno)
        bucket[key] = value.strip()
    built = [_build(p, proto, raw, first_line[(p, proto)]) for (p, proto), raw in pending.items()]
    try:
        return SettingsCatalog.of(built)
    except ConfigurationError as e:
        raise ParseError(str(e)) from None


_KNOWN_KEYS = {
    (f.alias or name) for name, f in VariationSettings.model_fields.items() if name not in ("pattern", "protocol")
}


def load_settings(path: Union[str, Path]) -> SettingsCatalog:
    path = Path(path)
    catalog = parse_settings(path.read_text(encoding="utf-8"))
    logger.info("[settings][load] path=%s entries=%d", path, len(catalog))
    return catalog


def format_settings(catalog: SettingsCatalog) -> str:
    lines: List[str] = []
    for pattern in catalog.patterns():
        lines.append(f"[pattern {pattern.value}]")
        for settings in catalog.for_pattern(pattern):
            for key, value in settings.entries().items():
                lines.append(f"settings.{settings.protocol}.{key}={_format_value(value, key)}")
        lines.append("")
    return "\n".join(lines)


def save_settings(catalog: SettingsCatalog, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(format_settings(catalog), encoding="utf-8")
    logger.info("[settings][save] path=%s entries=%d", path, len(catalog))
    return path
