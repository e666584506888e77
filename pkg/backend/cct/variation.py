"""
Pattern variation
Retargeting a pattern to another protocol by swapping settings, and choosing
settings by requirement (throughput or covertness).
"""

import logging
from enum import Enum
from typing import List, Optional, Tuple, Union

from . import codecs
from .catalog import PatternId, descriptor
from .codecs.base import CovertMessage
from .errors import CapacityError, ConfigurationError, VariationError
from .protocol import PduStream, ProtocolSchema, make_carrier
from .schemas import get_schema, resolve_schema_name
from .settings import REQUIRED_KEYS, SettingsCatalog, VariationSettings

logger = logging.getLogger(__name__)

SELF_TEST_PDUS = 64
SELF_TEST_SEED = 7


class Requirement(str, Enum):
    MAX_THROUGHPUT = "max_throughput"
    MAX_COVERTNESS = "max_covertness"


def self_test_carrier(settings: VariationSettings, schema: ProtocolSchema, n: Optional[int] = None) -> PduStream:
    """Fresh carrier long enough for a few symbols of the pattern."""
    if n is None:
        n = SELF_TEST_PDUS
        if settings.pattern is PatternId.P9_Rate and settings.r1:
            n = max(n, 4 * settings.r1)
        if settings.pattern is PatternId.P10_PduOrder and settings.window:
            n = max(n, 4 * settings.window)
    return make_carrier(schema, n, "constant:1000", SELF_TEST_SEED)


def self_test(settings: VariationSettings, schema: ProtocolSchema) -> int:
    """Embed a random message on a fresh carrier and extract it again; returns the bits checked."""
    carrier = self_test_carrier(settings, schema)
    room = codecs.capacity(settings.pattern, settings, carrier)
    if room <= 0:
        raise VariationError(f"{settings.pattern.value} has no capacity on {schema.name} under the given settings")
    message = CovertMessage.random(min(room, 256), SELF_TEST_SEED)
    result = codecs.embed(settings, message, carrier)
    recovered = codecs.extract(settings, result.stream)
    if recovered.bits[:result.bits_embedded] != message.bits[:result.bits_embedded]:
        raise VariationError(f"{settings.pattern.value} self-test on {schema.name} did not round-trip")
    return result.bits_embedded


# 模式变体：只替换设置，不替换编解码代码
def vary(
    pattern: Union[str, PatternId],
    from_protocol: str,
    to_protocol: str,
    catalog: SettingsCatalog,
) -> VariationSettings:
    """Settings that carry pattern over to to_protocol.

    Timing patterns ignore header layout, so an entry for either protocol is reused.
    The returned settings have passed a self-test round-trip on a fresh to_protocol carrier.
    """
    pid = PatternId.parse(pattern)
    target = get_schema(to_protocol)
    settings = catalog.get(pid, to_protocol)
    if settings is None and descriptor(pid).is_timing:
        source = catalog.get(pid, from_protocol)
        if source is not None:
            settings = source.retarget(to_protocol)
    if settings is None:
        required = ["|".join(group) for group in REQUIRED_KEYS[pid]]
        raise VariationError(
            f"no {pid.value} settings for {target.name}; expected settings.{to_protocol}.<key> with {required or 'any keys'}",
            missing=required,
        )
    try:
        bits = self_test(settings, target)
    except CapacityError as e:
        raise VariationError(str(e)) from None
    logger.info("[variation][vary] pattern=%s %s -> %s self_test_bits=%d",
                pid.value, resolve_schema_name(from_protocol), target.name, bits)
    return settings


def _carrier_for(schema: ProtocolSchema, carrier: PduStream) -> PduStream:
    """The carrier itself, or one of equal length and spacing on another schema."""
    if schema.name == carrier.protocol.name:
        return carrier
    gaps = carrier.iats()
    model = "empirical:" + ",".join(str(int(g)) for g in gaps) if len(gaps) else "constant:1000"
    return make_carrier(schema, len(carrier), model, SELF_TEST_SEED)


def candidates(
    pattern: PatternId,
    catalog: SettingsCatalog,
    carrier: PduStream,
) -> List[Tuple[VariationSettings, int, float]]:
    """(settings, capacity, modified bits) for every usable entry of pattern."""
    out = []
    timing = descriptor(pattern).is_timing
    for settings in catalog.for_pattern(pattern):
        if timing:
            settings = settings.retarget(carrier.protocol.name)
        schema = settings.protocol_schema
        try:
            room = codecs.capacity(pattern, settings, _carrier_for(schema, carrier))
            cost = codecs.get_codec(pattern).modified_bits(settings, schema)
        except ConfigurationError as e:
            logger.debug("[variation][select] skip %s/%s: %s", pattern.value, settings.protocol, e)
            continue
        out.append((settings, room, cost))
    return out


# 按需求选择设置：吞吐量最大或修改位数最少，协议名字典序打破平局
def select_settings(
    requirement: Union[str, Requirement],
    pattern: Union[str, PatternId],
    catalog: SettingsCatalog,
    carrier: PduStream,
    needed_bits: Optional[int] = None,
) -> Tuple[str, VariationSettings]:
    requirement = Requirement(requirement)
    pid = PatternId.parse(pattern)
    found = candidates(pid, catalog, carrier)
    if needed_bits is not None:
        found = [c for c in found if c[1] >= needed_bits]
    found = [c for c in found if c[1] > 0]
    if not found:
        raise VariationError(f"no usable {pid.value} settings for a {len(carrier)}-PDU carrier")
    if requirement is Requirement.MAX_THROUGHPUT:
        best = min(found, key=lambda c: (-c[1], c[0].schema_name))
    else:
        best = min(found, key=lambda c: (c[2], c[0].schema_name))
    settings, room, cost = best
    logger.info("[variation][select] pattern=%s requirement=%s protocol=%s capacity=%d modified_bits=%.1f",
                pid.value, requirement.value, settings.schema_name, room, cost)
    return settings.schema_name, settings


def settings_matrix(catalog: SettingsCatalog) -> List[Tuple[PatternId, str, int]]:
    """Self-test every (pattern, schema) entry; (pattern, schema, bits checked) per entry."""
    rows = []
    for (pid, schema_name), settings in sorted(catalog.entries.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
        rows.append((pid, schema_name, self_test(settings, get_schema(schema_name))))
    return rows
