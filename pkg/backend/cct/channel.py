"""
Simulated network between covert sender and receiver
Loss, jitter, adjacent reordering and header bit flips, deterministic per seed.
"""

import logging
from typing import List

import numpy as np
from bitstring import Bits
from pydantic import BaseModel, ConfigDict, Field

from .config import CHANNEL_PRESETS
from .errors import ConfigurationError
from .protocol import Pdu, PduStream

logger = logging.getLogger(__name__)


class ChannelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    loss_prob: float = Field(default=0.0, ge=0.0, le=1.0)
    reorder_prob: float = Field(default=0.0, ge=0.0, le=1.0, description="Chance a PDU swaps with its successor")
    jitter: int = Field(default=0, ge=0, description="Max absolute timestamp perturbation in microseconds")
    bit_flip_prob: float = Field(default=0.0, ge=0.0, le=1.0, description="Per header bit")
    rng_seed: int = 0

    @classmethod
    def preset(cls, name: str, rng_seed: int = 0) -> "ChannelConfig":
        if name not in CHANNEL_PRESETS:
            raise ConfigurationError(f"unknown channel preset '{name}', expected one of {sorted(CHANNEL_PRESETS)}")
        return cls(rng_seed=rng_seed, **CHANNEL_PRESETS[name])

    @property
    def noiseless(self) -> bool:
        return not (self.loss_prob or self.reorder_prob or self.jitter or self.bit_flip_prob)


def loss_mask(config: ChannelConfig, n: int) -> np.ndarray:
    """True for positions transmit() drops; the first draw of the channel rng."""
    return np.random.default_rng(config.rng_seed).random(n) < config.loss_prob


def _jitter(pdus: List[Pdu], jitter: int, rng: np.random.Generator) -> List[Pdu]:
    offsets = np.rint(rng.uniform(-1.0, 1.0, len(pdus)) * jitter).astype(np.int64)
    out = []
    previous = 0
    for pdu, offset in zip(pdus, offsets):
        # receive order stays FIFO: a PDU cannot overtake its predecessor by jitter alone
        ts = max(pdu.timestamp + int(offset), previous, 0)
        previous = ts
        out.append(pdu if ts == pdu.timestamp else pdu.replace(timestamp=ts))
    return out


def _swap(pdus: List[Pdu], prob: float, rng: np.random.Generator) -> List[Pdu]:
    draws = rng.random(max(len(pdus) - 1, 0)) < prob
    out = list(pdus)
    i = 0
    while i < len(out) - 1:
        if draws[i]:
            a, b = out[i], out[i + 1]
            out[i], out[i + 1] = b.replace(timestamp=a.timestamp), a.replace(timestamp=b.timestamp)
            i += 2
            continue
        i += 1
    return out


def _flip(pdus: List[Pdu], prob: float, rng: np.random.Generator) -> List[Pdu]:
    out = []
    for pdu in pdus:
        nbits = pdu.protocol.header_bits
        mask = rng.random(nbits) < prob if nbits else np.zeros(0, dtype=bool)
        if mask.any():
            # checksums stay as they are: a flipped PDU is a corrupted PDU
            pdu = pdu.replace(header=pdu.header ^ Bits(mask.tolist()))
        out.append(pdu)
    return out


# 信道模拟：依次抽取丢包掩码、抖动、相邻交换、比特翻转
def transmit(config: ChannelConfig, stream: PduStream) -> PduStream:
    rng = np.random.default_rng(config.rng_seed)
    dropped = rng.random(len(stream)) < config.loss_prob
    pdus = [p for p, lost in zip(stream.pdus, dropped) if not lost]
    if config.jitter:
        pdus = _jitter(pdus, config.jitter, rng)
    if config.reorder_prob:
        pdus = _swap(pdus, config.reorder_prob, rng)
    if config.bit_flip_prob:
        pdus = _flip(pdus, config.bit_flip_prob, rng)
    logger.debug("[channel] sent=%d delivered=%d seed=%d", len(stream), len(pdus), config.rng_seed)
    return stream.replace_pdus(pdus)
