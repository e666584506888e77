"""
Statistical detectors
Inter-arrival time scores (compressibility, epsilon-similarity, entropy, regularity,
distribution distance), a field-value hook for storage channels, and threshold calibration
from overt traffic.
"""

import logging
import lzma
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from ..config import (
    CALIBRATION_BINS,
    CALIBRATION_EPSILON,
    CALIBRATION_ROUNDING_US,
    CALIBRATION_WINDOW,
    COMPRESSION_LEVEL,
    COMPRESSOR,
    MIN_COMPRESSIBILITY_SAMPLES,
)
from ..errors import ConfigurationError, DetectorError
from ..protocol import PduStream, read_uint

logger = logging.getLogger(__name__)

COMPRESSORS: Dict[str, Callable[[bytes, int], bytes]] = {
    "zlib": lambda data, level: zlib.compress(data, level),
    "lzma": lambda data, level: lzma.compress(data, preset=level),
}


def _as_array(iats: Sequence[float]) -> np.ndarray:
    return np.asarray(iats, dtype=np.float64)


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------

# 可压缩性：取整后的 IAT 按首次出现顺序编码为符号串，压缩比越高越可疑
def detect_compressibility(iats: Sequence[float], rounding: int = CALIBRATION_ROUNDING_US) -> float:
    values = _as_array(iats)
    if len(values) < MIN_COMPRESSIBILITY_SAMPLES:
        raise DetectorError(f"compressibility needs at least {MIN_COMPRESSIBILITY_SAMPLES} gaps, got {len(values)}")
    if rounding < 1:
        raise ConfigurationError("rounding must be at least 1 us")
    rounded = np.rint(values / rounding).astype(np.int64)
    codes, uniques = pd.factorize(rounded)
    dtype = ">u1" if len(uniques) <= 256 else ">u4"
    raw = codes.astype(dtype).tobytes()
    try:
        compress = COMPRESSORS[COMPRESSOR]
    except KeyError:
        raise ConfigurationError(f"unknown compressor '{COMPRESSOR}'") from None
    return len(raw) / len(compress(raw, COMPRESSION_LEVEL))


def detect_epsilon_similarity(iats: Sequence[float], epsilon: float = CALIBRATION_EPSILON) -> float:
    """Fraction of sorted neighbouring gaps whose relative difference is below epsilon."""
    values = np.sort(_as_array(iats))
    if len(values) < 2:
        raise DetectorError("epsilon-similarity needs at least 2 gaps")
    if epsilon <= 0:
        raise ConfigurationError("epsilon must be positive")
    if np.any(values <= 0):
        raise DetectorError("a zero gap has no relative difference")
    relative = np.diff(values) / values[:-1]
    return float(np.mean(relative < epsilon))


def entropy_bin_edges(reference: Sequence[float], bins: int = CALIBRATION_BINS) -> np.ndarray:
    """Interior edges of equal-probability bins over a reference (overt) corpus."""
    values = _as_array(reference)
    if bins < 2:
        raise ConfigurationError("entropy needs at least 2 bins")
    if len(values) < bins:
        raise DetectorError(f"{len(values)} reference gaps cannot calibrate {bins} bins")
    if np.all(values == values[0]):
        raise DetectorError("reference gaps are all equal, bins are degenerate")
    return np.quantile(values, np.linspace(0, 1, bins + 1)[1:-1])


def detect_iat_entropy(iats: Sequence[float], edges: np.ndarray) -> float:
    """Shannon entropy in bits of bin occupancy under calibrated edges."""
    values = _as_array(iats)
    edges = np.asarray(edges, dtype=np.float64)
    bins = len(edges) + 1
    if len(values) < bins:
        raise DetectorError(f"{len(values)} gaps for {bins} bins")
    counts = np.bincount(np.searchsorted(edges, values, side="right"), minlength=bins)
    return float(stats.entropy(counts, base=2))


def detect_regularity(iats: Sequence[float], window: int = 20) -> float:
    """Spread of pairwise relative differences between per-window standard deviations; low is regular."""
    values = _as_array(iats)
    count = len(values) // window
    if count < 2:
        raise DetectorError(f"regularity needs at least {2 * window} gaps")
    sigmas = values[:count * window].reshape(count, window).std(axis=1)
    if np.any(sigmas == 0):
        return 0.0
    i, j = np.triu_indices(count, k=1)
    return float(np.std(np.abs(sigmas[i] - sigmas[j]) / sigmas[i]))


def detect_distribution_distance(iats: Sequence[float], reference: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov statistic against overt gaps."""
    values, ref = _as_array(iats), _as_array(reference)
    if len(values) < 2 or len(ref) < 2:
        raise DetectorError("distribution distance needs at least 2 gaps on each side")
    return float(stats.ks_2samp(values, ref).statistic)


def field_value_entropy(stream: PduStream, field: str) -> float:
    """Entropy in bits per PDU of one header field; scoring hook for storage channels."""
    if not len(stream):
        raise DetectorError("empty stream")
    values = pd.Series([read_uint(p, field) for p in stream.pdus])
    return float(stats.entropy(values.value_counts().to_numpy(), base=2))


# ---------------------------------------------------------------------------
# Thresholds
# ---------------------------------------------------------------------------

class Thresholds(BaseModel):
    """Calibrated on overt traffic; a flow beyond a bound is flagged."""

    model_config = ConfigDict(frozen=True)

    compressibility_max: Optional[float] = None
    epsilon_similarity_max: Optional[float] = None
    iat_entropy_min: Optional[float] = None
    regularity_min: Optional[float] = None
    bin_edges: Tuple[float, ...] = ()
    rounding: int = CALIBRATION_ROUNDING_US
    epsilon: float = CALIBRATION_EPSILON
    reference_gaps: int = Field(default=0, ge=0)


class DetectorReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    flow_id: str = "flow-0"
    scores: Dict[str, float] = Field(default_factory=dict)
    verdicts: Dict[str, bool] = Field(default_factory=dict, description="True means flagged as covert")


@dataclass(frozen=True)
class Detector:
    name: str
    score: Callable[[np.ndarray, Thresholds], float]
    flagged: Callable[[float, Thresholds], Optional[bool]]


DETECTORS: Dict[str, Detector] = {}


def register_detector(detector: Detector) -> Detector:
    DETECTORS[detector.name] = detector
    return detector


def _above(limit: Optional[float], score: float) -> Optional[bool]:
    return None if limit is None else score > limit


def _below(limit: Optional[float], score: float) -> Optional[bool]:
    return None if limit is None else score < limit


register_detector(Detector(
    "compressibility",
    lambda iats, t: detect_compressibility(iats, t.rounding),
    lambda s, t: _above(t.compressibility_max, s),
))
register_detector(Detector(
    "epsilon_similarity",
    lambda iats, t: detect_epsilon_similarity(iats, t.epsilon),
    lambda s, t: _above(t.epsilon_similarity_max, s),
))
register_detector(Detector(
    "iat_entropy",
    lambda iats, t: detect_iat_entropy(iats, np.asarray(t.bin_edges)),
    lambda s, t: _below(t.iat_entropy_min, s),
))
register_detector(Detector(
    "regularity",
    lambda iats, t: detect_regularity(iats),
    lambda s, t: _below(t.regularity_min, s),
))


def run_detectors(
    stream: PduStream,
    thresholds: Thresholds,
    names: Optional[Sequence[str]] = None,
    flow_id: str = "flow-0",
) -> DetectorReport:
    iats = stream.iats().astype(np.float64)
    scores: Dict[str, float] = {}
    verdicts: Dict[str, bool] = {}
    for name in names or sorted(DETECTORS):
        if name not in DETECTORS:
            raise ConfigurationError(f"unknown detector '{name}', expected one of {sorted(DETECTORS)}")
        if name == "iat_entropy" and not thresholds.bin_edges:
            raise DetectorError("iat_entropy needs calibrated bin edges")
        detector = DETECTORS[name]
        score = detector.score(iats, thresholds)
        scores[name] = score
        verdict = detector.flagged(score, thresholds)
        if verdict is not None:
            verdicts[name] = verdict
    logger.debug("[detectors] flow=%s scores=%s", flow_id, scores)
    return DetectorReport(flow_id=flow_id, scores=scores, verdicts=verdicts)


def _windows(iats: np.ndarray, window: int) -> List[np.ndarray]:
    count = len(iats) // window
    if count == 0:
        return [iats]
    return [iats[k * window:(k + 1) * window] for k in range(count)]


# 阈值标定：在正常流量的 IAT 窗口上计算各检测器得分，取上界或下界
def calibrate(
    trace: PduStream,
    bins: int = CALIBRATION_BINS,
    epsilon: float = CALIBRATION_EPSILON,
    rounding: int = CALIBRATION_ROUNDING_US,
    window: int = CALIBRATION_WINDOW,
) -> Thresholds:
    iats = trace.iats().astype(np.float64)
    if len(iats) == 0:
        raise DetectorError("cannot calibrate on an empty trace")
    edges = entropy_bin_edges(iats, bins)
    parts = _windows(iats, window)
    compress = [detect_compressibility(w, rounding) for w in parts]
    similar = [detect_epsilon_similarity(w, epsilon) for w in parts]
    entropy = [detect_iat_entropy(w, edges) for w in parts]
    regular = None
    if len(iats) >= 40:
        regular = detect_regularity(iats)
    thresholds = Thresholds(
        compressibility_max=max(compress),
        epsilon_similarity_max=max(similar),
        iat_entropy_min=min(entropy),
        regularity_min=regular,
        bin_edges=tuple(float(e) for e in edges),
        rounding=rounding,
        epsilon=epsilon,
        reference_gaps=len(iats),
    )
    logger.info("[detectors][calibrate] gaps=%d windows=%d compressibility<=%.3f epsilon<=%.3f entropy>=%.3f",
                len(iats), len(parts), thresholds.compressibility_max, thresholds.epsilon_similarity_max,
                thresholds.iat_entropy_min)
    return thresholds


# ---------------------------------------------------------------------------
# Thresholds file (KEY=VALUE)
# ---------------------------------------------------------------------------

_FILE_KEYS = {
    "COMPRESSIBILITY_MAX": "compressibility_max",
    "EPSILON_SIMILARITY_MAX": "epsilon_similarity_max",
    "IAT_ENTROPY_MIN": "iat_entropy_min",
    "REGULARITY_MIN": "regularity_min",
    "IAT_BIN_EDGES": "bin_edges",
    "ROUNDING_US": "rounding",
    "EPSILON": "epsilon",
    "REFERENCE_GAPS": "reference_gaps",
}


def format_thresholds(thresholds: Thresholds) -> str:
    lines = []
    for key in sorted(_FILE_KEYS):
        value = getattr(thresholds, _FILE_KEYS[key])
        if value is None:
            continue
        if isinstance(value, tuple):
            value = ",".join(repr(float(v)) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def save_thresholds(thresholds: Thresholds, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(format_thresholds(thresholds), encoding="utf-8")
    logger.info("[detectors][save] path=%s", path)
    return path


def load_thresholds(path: Union[str, Path]) -> Thresholds:
    raw = dotenv_values(path)
    values: Dict[str, object] = {}
    for key, value in raw.items():
        if key not in _FILE_KEYS:
            raise ConfigurationError(f"unknown thresholds key '{key}' in {path}")
        if value is None or value == "":
            continue
        if key == "IAT_BIN_EDGES":
            values["bin_edges"] = tuple(float(v) for v in value.split(","))
        else:
            values[_FILE_KEYS[key]] = value
    return Thresholds(**values)
