"""
Experiments
embed -> channel -> (warden) -> extract, with BER and detector scores in a JSON report.
"""

import json
import logging
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import codecs, orchestration
from .catalog import PatternId, descriptor
from .channel import ChannelConfig, loss_mask, transmit
from .codecs.base import CovertMessage
from .config import CARRIER_PRESETS, DEFAULT_SETTINGS_FILE, DEFAULT_WARDEN_FILE
from .countermeasures.detectors import DetectorReport, calibrate, load_thresholds, run_detectors
from .countermeasures.normalizer import NormalizerAction, WardenConfig, load_warden, normalize
from .errors import ConfigurationError, ParseError
from .protocol import PduStream, make_carrier
from .schemas import get_schema
from .settings import SettingsCatalog, VariationSettings, load_settings
from .trace import save_trace

logger = logging.getLogger(__name__)


class CarrierSpec(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    protocol: str = Field(..., alias="schema")
    n: int = Field(..., ge=1)
    iat_model: Optional[str] = None
    preset: Optional[str] = None
    seed: int = 0

    @model_validator(mode="after")
    def _check_model(self) -> "CarrierSpec":
        if (self.iat_model is None) == (self.preset is None):
            raise ValueError("carrier needs exactly one of iat_model or preset")
        if self.preset is not None and self.preset not in CARRIER_PRESETS:
            raise ValueError(f"unknown carrier preset '{self.preset}'")
        return self

    def build(self) -> PduStream:
        model = self.iat_model or CARRIER_PRESETS[self.preset]["iat_model"]
        return make_carrier(get_schema(self.protocol), self.n, model, self.seed)


class MessageSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    hex: Optional[str] = None
    random: Optional[int] = Field(default=None, ge=0, description="Random message of this many bits")
    seed: int = 0
    file: Optional[str] = None

    @model_validator(mode="after")
    def _check_source(self) -> "MessageSpec":
        if sum(v is not None for v in (self.hex, self.random, self.file)) != 1:
            raise ValueError("message needs exactly one of hex, random or file")
        return self

    def load(self, base_dir: Path = Path(".")) -> CovertMessage:
        if self.hex is not None:
            return CovertMessage.from_hex(self.hex)
        if self.random is not None:
            return CovertMessage.random(self.random, self.seed)
        return CovertMessage.from_bytes((base_dir / self.file).read_bytes())


class PatternRef(BaseModel):
    """A catalog entry (pattern + protocol) with optional inline overrides."""

    model_config = ConfigDict(frozen=True, extra="allow")

    pattern: str
    protocol: str


class EmbeddingSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["single", "parallel", "sequential", "hopping"] = "single"
    patterns: Tuple[PatternRef, ...] = ()
    seed: Optional[str] = Field(default=None, description="Hopping key, hex")
    modulus: Optional[int] = None
    prf: Optional[str] = None
    receiver_seed: Optional[str] = Field(default=None, description="Receiver key when it differs from the sender's")

    @model_validator(mode="after")
    def _check(self) -> "EmbeddingSpec":
        if not self.patterns:
            raise ValueError("embedding needs at least one pattern")
        if self.kind == "single" and len(self.patterns) != 1:
            raise ValueError("single embedding takes exactly one pattern")
        if self.kind == "hopping" and self.seed is None:
            raise ValueError("hopping needs a seed")
        return self


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    carrier: CarrierSpec
    embedding: EmbeddingSpec
    message: MessageSpec
    channel: ChannelConfig = Field(default_factory=ChannelConfig)
    channel_preset: Optional[str] = None
    warden: Optional[str] = Field(default=None, description="Rule file path, or 'default'")
    acknowledged: bool = Field(default=False, description="Sender skips slots the channel lost (hopping only)")
    detectors: Tuple[str, ...] = ()
    thresholds: Optional[str] = None
    settings: Optional[str] = None
    report: Optional[str] = None
    trace: Optional[str] = None

    @model_validator(mode="after")
    def _check(self) -> "ExperimentSpec":
        if self.acknowledged and self.embedding.kind != "hopping":
            raise ValueError("acknowledged slots are a hopping feature")
        return self


class ExperimentReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    embedding: str
    protocol: str
    pdus_sent: int
    pdus_delivered: int
    message_bits: int
    bits_embedded: int
    bit_errors: int
    ber: float
    detector: Optional[DetectorReport] = None
    normalizer_actions: List[NormalizerAction] = Field(default_factory=list)
    hop_mismatches: Optional[int] = Field(default=None, description="Slots where receiver and sender chose differently")

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def bit_errors(sent: CovertMessage, received: CovertMessage, nbits: int) -> int:
    """Hamming distance over the first nbits; missing received bits count as zeros."""
    if nbits == 0:
        return 0
    return (sent.padded(nbits) ^ received.padded(nbits)).count(1)


def _resolve(ref: PatternRef, catalog: SettingsCatalog, carrier_protocol: str) -> VariationSettings:
    overrides = dict(ref.model_extra or {})
    if overrides:
        try:
            return VariationSettings(pattern=ref.pattern, protocol=ref.protocol, **overrides)
        except ValidationError as e:
            raise ConfigurationError(f"inline settings for {ref.pattern}: {e.errors()[0]['msg']}") from None
    settings = catalog.get(ref.pattern, ref.protocol)
    if settings is None:
        raise ConfigurationError(f"no settings for {ref.pattern}/{ref.protocol}")
    if settings.schema_name != carrier_protocol and descriptor(settings.pattern).is_timing:
        settings = settings.retarget(carrier_protocol)
    return settings


def _hopping_config(spec: EmbeddingSpec, patterns: List[VariationSettings], seed: str) -> orchestration.HoppingConfig:
    fields = {"patterns": tuple(patterns), "seed": seed}
    if spec.modulus is not None:
        fields["modulus"] = spec.modulus
    if spec.prf is not None:
        fields["prf"] = spec.prf
    try:
        return orchestration.HoppingConfig(**fields)
    except ValidationError as e:
        raise ConfigurationError(f"hopping config: {e.errors()[0]['msg']}") from None


def _warden(spec: ExperimentSpec, base_dir: Path) -> Optional[WardenConfig]:
    if spec.warden is None:
        return None
    return load_warden(DEFAULT_WARDEN_FILE if spec.warden == "default" else base_dir / spec.warden)


# 实验流水线：嵌入 -> 信道 -> 规范化 -> 提取，报告 BER 与检测得分
def run_experiment(
    spec: ExperimentSpec,
    catalog: Optional[SettingsCatalog] = None,
    base_dir: Union[str, Path] = ".",
) -> Tuple[ExperimentReport, PduStream]:
    base_dir = Path(base_dir)
    if catalog is None:
        catalog = load_settings(base_dir / spec.settings if spec.settings else DEFAULT_SETTINGS_FILE)
    carrier = spec.carrier.build()
    message = spec.message.load(base_dir)
    channel = ChannelConfig.preset(spec.channel_preset, spec.channel.rng_seed) if spec.channel_preset else spec.channel
    embedding = spec.embedding
    patterns = [_resolve(ref, catalog, carrier.protocol.name) for ref in embedding.patterns]

    receiver_config = None
    if embedding.kind == "single":
        result = codecs.embed(patterns[0], message, carrier)
        sent, bits_embedded = result.stream, result.bits_embedded
    elif embedding.kind == "parallel":
        result = orchestration.combine_parallel(patterns, message, carrier)
        sent, bits_embedded = result.stream, result.bits_embedded
    elif embedding.kind == "sequential":
        result = orchestration.combine_sequential(patterns, message, carrier)
        sent, bits_embedded = result.stream, result.bits_embedded
    else:
        config = _hopping_config(embedding, patterns, embedding.seed)
        receiver_config = _hopping_config(embedding, patterns, embedding.receiver_seed or embedding.seed)
        skip = frozenset()
        if spec.acknowledged:
            if any(p.pattern is PatternId.P11_Retransmission for p in patterns):
                raise ConfigurationError("acknowledged slots need one PDU per slot; P11 adds copies")
            lost = loss_mask(channel, len(carrier))
            skip = frozenset(p.seq for p, gone in zip(carrier.pdus, lost) if gone)
        sent, transcript = orchestration.hop_embed(config, message, carrier, skip=skip)
        bits_embedded = sum(r.bits for r in transcript.records)

    received = transmit(channel, sent)
    actions: List[NormalizerAction] = []
    warden = _warden(spec, base_dir)
    if warden is not None:
        received, actions = normalize(warden, received)

    hop_mismatches = None
    if embedding.kind == "single":
        extracted = codecs.extract(patterns[0], received)
    elif embedding.kind == "parallel":
        extracted = orchestration.extract_parallel(patterns, received)
    elif embedding.kind == "sequential":
        extracted = orchestration.extract_sequential(patterns, received)
    else:
        extracted, seen = orchestration.hop_read(receiver_config, received)
        hop_mismatches = sum(1 for r in seen.records if orchestration.hop_select(config, r.t) != r.index)

    detector = None
    if spec.detectors:
        thresholds = load_thresholds(base_dir / spec.thresholds) if spec.thresholds else calibrate(carrier)
        detector = run_detectors(received, thresholds, spec.detectors)

    errors = bit_errors(message, extracted, bits_embedded)
    report = ExperimentReport(
        embedding=f"{embedding.kind}:" + "+".join(p.pattern.value for p in patterns),
        protocol=carrier.protocol.name,
        pdus_sent=len(sent),
        pdus_delivered=len(received),
        message_bits=len(message),
        bits_embedded=bits_embedded,
        bit_errors=errors,
        ber=errors / bits_embedded if bits_embedded else 0.0,
        detector=detector,
        normalizer_actions=actions,
        hop_mismatches=hop_mismatches,
    )
    logger.info("[experiment] %s protocol=%s bits=%d ber=%.4f", report.embedding, report.protocol,
                bits_embedded, report.ber)
    if spec.trace:
        save_trace(received, base_dir / spec.trace)
    return report, received


def load_experiment(path: Union[str, Path]) -> ExperimentSpec:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"experiment file is not JSON: {e.msg}", line=e.lineno) from None
    try:
        return ExperimentSpec(**raw)
    except ValidationError as e:
        err = e.errors()[0]
        raise ConfigurationError(f"experiment {'.'.join(str(p) for p in err['loc'])}: {err['msg']}") from None
