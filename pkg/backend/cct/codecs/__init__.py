"""
Codec registry
One codec object per pattern; embed_*/extract_* are the per-pattern entry points.
"""

import logging
from typing import Dict, Union

from ..catalog import PatternId, descriptor
from ..errors import ConfigurationError
from ..protocol import PduStream, ProtocolSchema
from ..settings import VariationSettings
from .base import (
    Codec,
    CovertMessage,
    EmbedResult,
    Footprint,
    SlotCodec,
    SlotFrame,
    SlotRecord,
    drain_slots,
    fill_slots,
)
from .storage import (
    CorruptionCodec,
    FieldValueCodec,
    RedundancyCodec,
    SequenceCodec,
    SizeCodec,
    ValueModulationCodec,
)
from .timing import IatCodec, OrderCodec, RateCodec, RetransmissionCodec

logger = logging.getLogger(__name__)

P = PatternId

CODECS: Dict[PatternId, Codec] = {
    P.P1_Size: SizeCodec(),
    P.P2_Sequence: SequenceCodec(P.P2_Sequence),
    P.P2a_Position: SequenceCodec(P.P2a_Position, "position"),
    P.P2b_NumElements: SequenceCodec(P.P2b_NumElements, "count"),
    P.P3_AddRedundancy: RedundancyCodec(),
    P.P4_CorruptionLoss: CorruptionCodec(),
    P.P5_RandomValue: FieldValueCodec(P.P5_RandomValue),
    P.P6_ValueModulation: ValueModulationCodec(P.P6_ValueModulation),
    P.P6a_Case: ValueModulationCodec(P.P6a_Case, "case"),
    P.P6b_LSB: ValueModulationCodec(P.P6b_LSB, "lsb"),
    P.P7_ReservedUnused: FieldValueCodec(P.P7_ReservedUnused),
    P.P8_InterArrivalTime: IatCodec(),
    P.P9_Rate: RateCodec(),
    P.P10_PduOrder: OrderCodec(),
    P.P11_Retransmission: RetransmissionCodec(),
}


def get_codec(pattern: Union[str, PatternId]) -> Codec:
    return CODECS[PatternId.parse(pattern)]


def bind_codec(settings: VariationSettings, schema: ProtocolSchema) -> Codec:
    """Codec of settings.pattern after checking the settings against schema."""
    codec = CODECS[settings.pattern]
    # timing entries apply to any schema, storage entries only to their own
    if not descriptor(settings.pattern).is_timing and settings.schema_name != schema.name:
        raise ConfigurationError(
            f"{settings.pattern.value} settings for {settings.schema_name} do not apply to {schema.name}")
    settings.validate_for(schema)
    codec.check(settings, schema)
    return codec


def capacity(pattern: Union[str, PatternId], settings: VariationSettings, carrier: PduStream) -> int:
    """Exact number of bits embed() places on carrier under settings."""
    if PatternId.parse(pattern) is not settings.pattern:
        raise ConfigurationError(f"settings are for {settings.pattern.value}, not {PatternId.parse(pattern).value}")
    return bind_codec(settings, carrier.protocol).capacity(settings, carrier)


def embed(settings: VariationSettings, message: CovertMessage, carrier: PduStream) -> EmbedResult:
    codec = bind_codec(settings, carrier.protocol)
    result = codec.embed(settings, message, carrier)
    logger.debug("[codecs][embed] pattern=%s protocol=%s pdus=%d bits=%d/%d",
                 settings.pattern.value, carrier.protocol.name, len(carrier), result.bits_embedded, len(message))
    return result


def extract(settings: VariationSettings, stream: PduStream) -> CovertMessage:
    codec = bind_codec(settings, stream.protocol)
    return codec.extract(settings, stream)


def _expect(settings: VariationSettings, *patterns: PatternId) -> None:
    if settings.pattern not in patterns:
        raise ConfigurationError(
            f"{settings.pattern.value} settings passed where {'/'.join(p.value for p in patterns)} is expected")


# ---------------------------------------------------------------------------
# Per-pattern entry points
# ---------------------------------------------------------------------------

def embed_size(settings, message, carrier):
    _expect(settings, P.P1_Size)
    return embed(settings, message, carrier)


def extract_size(settings, stream):
    _expect(settings, P.P1_Size)
    return extract(settings, stream)


_SEQUENCE = (P.P2_Sequence, P.P2a_Position, P.P2b_NumElements)


def embed_sequence(settings, message, carrier):
    _expect(settings, *_SEQUENCE)
    return embed(settings, message, carrier)


def extract_sequence(settings, stream):
    _expect(settings, *_SEQUENCE)
    return extract(settings, stream)


def embed_redundancy(settings, message, carrier):
    _expect(settings, P.P3_AddRedundancy)
    return embed(settings, message, carrier)


def extract_redundancy(settings, stream):
    _expect(settings, P.P3_AddRedundancy)
    return extract(settings, stream)


def embed_corruption(settings, message, carrier):
    _expect(settings, P.P4_CorruptionLoss)
    return embed(settings, message, carrier)


def extract_corruption(settings, stream):
    _expect(settings, P.P4_CorruptionLoss)
    return extract(settings, stream)


def embed_field_value(settings, message, carrier):
    _expect(settings, P.P5_RandomValue, P.P7_ReservedUnused)
    return embed(settings, message, carrier)


def extract_field_value(settings, stream):
    _expect(settings, P.P5_RandomValue, P.P7_ReservedUnused)
    return extract(settings, stream)


_VALUE = (P.P6_ValueModulation, P.P6a_Case, P.P6b_LSB)


def embed_value_modulation(settings, message, carrier):
    _expect(settings, *_VALUE)
    return embed(settings, message, carrier)


def extract_value_modulation(settings, stream):
    _expect(settings, *_VALUE)
    return extract(settings, stream)


def embed_iat(settings, message, carrier):
    _expect(settings, P.P8_InterArrivalTime)
    return embed(settings, message, carrier)


def extract_iat(settings, stream):
    _expect(settings, P.P8_InterArrivalTime)
    return extract(settings, stream)


def embed_rate(settings, message, carrier):
    _expect(settings, P.P9_Rate)
    return embed(settings, message, carrier)


def extract_rate(settings, stream):
    _expect(settings, P.P9_Rate)
    return extract(settings, stream)


def embed_order(settings, message, carrier):
    _expect(settings, P.P10_PduOrder)
    return embed(settings, message, carrier)


def extract_order(settings, stream):
    _expect(settings, P.P10_PduOrder)
    return extract(settings, stream)


def embed_retransmission(settings, message, carrier):
    _expect(settings, P.P11_Retransmission)
    return embed(settings, message, carrier)


def extract_retransmission(settings, stream):
    _expect(settings, P.P11_Retransmission)
    return extract(settings, stream)


__all__ = [
    "CODECS", "Codec", "CovertMessage", "EmbedResult", "Footprint", "SlotCodec", "SlotFrame", "SlotRecord",
    "bind_codec", "capacity", "drain_slots", "embed", "extract", "fill_slots", "get_codec",
    "embed_size", "extract_size", "embed_sequence", "extract_sequence", "embed_redundancy", "extract_redundancy",
    "embed_corruption", "extract_corruption", "embed_field_value", "extract_field_value",
    "embed_value_modulation", "extract_value_modulation", "embed_iat", "extract_iat", "embed_rate", "extract_rate",
    "embed_order", "extract_order", "embed_retransmission", "extract_retransmission",
]
