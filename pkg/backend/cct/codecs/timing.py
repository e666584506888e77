"""
Timing pattern codecs
Inter-arrival time, rate, PDU order and re-transmission
"""

import logging
from typing import List

import numpy as np
from bitstring import Bits

from ..catalog import PatternId
from ..lehmer import bits_per_permutation, rank_permutation, unrank_permutation
from ..protocol import Pdu, PduStream
from ..settings import VariationSettings
from .base import (
    Codec,
    CovertMessage,
    EmbedResult,
    Footprint,
    SlotCodec,
    SlotRecord,
    require,
    truncate_rank,
)

logger = logging.getLogger(__name__)


def originals(stream: PduStream) -> List[Pdu]:
    """Arrival-ordered PDUs without re-sent copies (first occurrence of each seq)."""
    seen = set()
    out = []
    for pdu in stream.pdus:
        if pdu.seq not in seen:
            seen.add(pdu.seq)
            out.append(pdu)
    return out


# ---------------------------------------------------------------------------
# P8 Inter-arrival Time
# ---------------------------------------------------------------------------

class IatCodec(SlotCodec):
    """One bit per gap: d0 or d1 microseconds, optionally shaped by up to jitter_guard."""

    pattern = PatternId.P8_InterArrivalTime

    def check(self, settings, schema):
        d0, d1, guard = settings.d0, settings.d1, settings.jitter_guard or 0
        require(d0 is not None and d1 is not None, "P8 needs d0 and d1")
        require(d0 < d1, f"d0={d0} must be below d1={d1}")
        require(d1 - d0 > 2 * guard, f"d1-d0={d1 - d0} leaves no margin for jitter_guard={guard}")
        require(d0 - guard >= 1, "shaped gaps must stay positive")
        if settings.min_ipg is not None:
            require(settings.min_ipg <= d0 - guard, f"d0-jitter_guard below MinIPG={settings.min_ipg}")
        if settings.max_ipg is not None:
            require(d1 + guard <= settings.max_ipg, f"d1+jitter_guard above MaxIPG={settings.max_ipg}")
        if settings.distribution_ipg is not None:
            require(len(settings.distribution_ipg) > 0, "DistributionIPG is empty")
            require(all(abs(v) <= guard for v in settings.distribution_ipg),
                    f"DistributionIPG offsets exceed jitter_guard={guard}")

    def footprint(self, settings, schema):
        return Footprint(gaps=True)

    def threshold(self, settings: VariationSettings) -> float:
        return (settings.d0 + settings.d1) / 2

    def slot_capacity(self, settings, frame, index):
        return 1 if index < len(frame) - 1 else 0

    def _shaping(self, settings: VariationSettings, pdu: Pdu) -> int:
        guard = settings.jitter_guard or 0
        if not guard and settings.distribution_ipg is None:
            return 0
        rng = np.random.default_rng([settings.whiten_seed or 0, pdu.seq])
        if settings.distribution_ipg is not None:
            return int(rng.choice(np.asarray(settings.distribution_ipg)))
        return int(rng.integers(-guard, guard + 1))

    def write_slot(self, settings, frame, index, value, nbits):
        gap = (settings.d1 if value else settings.d0) + self._shaping(settings, frame.pdus[index])
        frame.gaps[index] = gap
        return f"gap {gap}"

    def read_slot(self, settings, frame, index, nbits):
        return 1 if frame.gaps[index] > self.threshold(settings) else 0


# ---------------------------------------------------------------------------
# P9 Rate
# ---------------------------------------------------------------------------

class RateCodec(Codec):
    """One bit per window of W microseconds holding r0 or r1 PDUs."""

    pattern = PatternId.P9_Rate

    def check(self, settings, schema):
        r0, r1 = settings.r0, settings.r1
        require(settings.window is not None, "P9 needs a window")
        require(r0 is not None and r1 is not None, "P9 needs r0 and r1")
        require(r0 != r1, "r0 and r1 must differ")
        require(r0 < r1, f"r0={r0} must be below r1={r1}")
        if settings.min_rate is not None:
            require(r0 >= settings.min_rate, f"r0 below MinRate={settings.min_rate}")
        if settings.max_rate is not None:
            require(r1 <= settings.max_rate, f"r1 above MaxRate={settings.max_rate}")
        require(settings.window >= 2 * r1, "window too short for r1 PDUs")

    def footprint(self, settings, schema):
        return Footprint(gaps=True)

    def _lead(self, settings: VariationSettings) -> int:
        # first PDU of a window sits this far after the window start
        return settings.window // (2 * settings.r1)

    def capacity(self, settings, carrier):
        self.check(settings, carrier.protocol)
        return len(carrier) // settings.r1

    def embed(self, settings, message, carrier):
        room = self.capacity(settings, carrier)
        self._require_capacity(room, settings, carrier)
        bits = message.bits[:room]
        window, lead = settings.window, self._lead(settings)
        origin = carrier.pdus[0].timestamp
        pdus = list(carrier.pdus)
        cursor = 0
        records = []
        for j, bit in enumerate(bits):
            rate = settings.r1 if bit else settings.r0
            for q in range(rate):
                ts = origin + j * window + lead + (q * window) // rate
                pdus[cursor] = pdus[cursor].replace(timestamp=ts)
                cursor += 1
            records.append(SlotRecord(slot=j, pattern=self.pattern, start=j, count=1, target=f"{rate} PDUs"))
        if cursor < len(pdus):
            # leftover carrier keeps its own spacing after the last covert window
            base = origin + len(bits) * window + lead
            shift = pdus[cursor].timestamp
            for i in range(cursor, len(pdus)):
                pdus[i] = pdus[i].replace(timestamp=base + carrier.pdus[i].timestamp - shift)
        return EmbedResult(stream=carrier.replace_pdus(pdus), bits_embedded=len(bits), map=tuple(records))

    def extract(self, settings, stream):
        self.check(settings, stream.protocol)
        received = originals(stream)
        if not received:
            return CovertMessage()
        stamps = np.array([p.timestamp for p in received], dtype=np.int64)
        start = stamps[0] - self._lead(settings)
        counts = np.bincount(np.maximum(stamps - start, 0) // settings.window)
        return CovertMessage(bits=Bits([int(c) * 2 > settings.r0 + settings.r1 for c in counts]))


# ---------------------------------------------------------------------------
# P10 PDU Order
# ---------------------------------------------------------------------------

class OrderCodec(Codec):
    """floor(log2 n!) bits per window of n PDUs via the Lehmer rank of their order."""

    pattern = PatternId.P10_PduOrder

    def check(self, settings, schema):
        require(settings.window is not None and settings.window >= 2, "P10 needs a window of at least 2 PDUs")

    def footprint(self, settings, schema):
        return Footprint(gaps=True)

    def capacity(self, settings, carrier):
        self.check(settings, carrier.protocol)
        return (len(carrier) // settings.window) * bits_per_permutation(settings.window)

    def embed(self, settings, message, carrier):
        room = self.capacity(settings, carrier)
        self._require_capacity(room, settings, carrier)
        n, k = settings.window, bits_per_permutation(settings.window)
        bits = message.bits[:room]
        pdus = list(carrier.pdus)
        records = []
        for w, start in enumerate(range(0, len(bits), k)):
            chunk = bits[start:start + k]
            value = chunk.uint << (k - len(chunk))
            block = pdus[w * n:(w + 1) * n]
            stamps = sorted(p.timestamp for p in block)
            order = unrank_permutation(value, range(n))
            pdus[w * n:(w + 1) * n] = [block[j].replace(timestamp=stamps[pos]) for pos, j in enumerate(order)]
            records.append(SlotRecord(slot=w, pattern=self.pattern, start=start, count=len(chunk), target=f"window {w}"))
        return EmbedResult(stream=carrier.replace_pdus(pdus), bits_embedded=len(bits), map=tuple(records))

    def extract(self, settings, stream):
        self.check(settings, stream.protocol)
        n, k = settings.window, bits_per_permutation(settings.window)
        received = originals(stream)
        chunks = []
        for w in range(len(received) // n):
            seqs = [p.seq for p in received[w * n:(w + 1) * n]]
            chunks.append(Bits(uint=truncate_rank(rank_permutation(seqs), k), length=k))
        return CovertMessage(bits=Bits().join(chunks))


# ---------------------------------------------------------------------------
# P11 Re-Transmission
# ---------------------------------------------------------------------------

class RetransmissionCodec(SlotCodec):
    """Bit 1 re-sends the PDU duplicate_gap microseconds after the original."""

    pattern = PatternId.P11_Retransmission

    def check(self, settings, schema):
        require(settings.duplicate_gap is not None, "P11 needs duplicate_gap")

    def footprint(self, settings, schema):
        return Footprint(duplicates=True)

    def slot_capacity(self, settings, frame, index):
        return 1

    def write_slot(self, settings, frame, index, value, nbits):
        if value:
            frame.duplicates[index] = settings.duplicate_gap
            return "re-sent"
        frame.duplicates.pop(index, None)
        return "single"

    def read_slot(self, settings, frame, index, nbits):
        return 1 if index in frame.duplicates else 0
