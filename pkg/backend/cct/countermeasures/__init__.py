from .applicability import Applicability, applicability, eliminated_by_normalization
from .detectors import (
    DETECTORS,
    Detector,
    DetectorReport,
    Thresholds,
    calibrate,
    detect_compressibility,
    detect_distribution_distance,
    detect_epsilon_similarity,
    detect_iat_entropy,
    detect_regularity,
    entropy_bin_edges,
    field_value_entropy,
    load_thresholds,
    register_detector,
    run_detectors,
    save_thresholds,
)
from .normalizer import (
    NormalizerAction,
    NormalizerRule,
    RuleKind,
    WardenConfig,
    load_warden,
    normalize,
    parse_warden,
)
