"""
Countermeasure tests: normalizer rules and warden files, statistical detectors,
threshold calibration and the applicability table.
"""

from __future__ import annotations

import numpy as np
import pytest

from cct import codecs
from cct.catalog import PatternId
from cct.channel import ChannelConfig, transmit
from cct.codecs.base import CovertMessage
from cct.countermeasures import (
    DETECTORS,
    Detector,
    NormalizerRule,
    RuleKind,
    Thresholds,
    WardenConfig,
    applicability,
    calibrate,
    detect_compressibility,
    detect_distribution_distance,
    detect_epsilon_similarity,
    detect_iat_entropy,
    eliminated_by_normalization,
    entropy_bin_edges,
    field_value_entropy,
    load_thresholds,
    normalize,
    parse_warden,
    register_detector,
    run_detectors,
    save_thresholds,
)
from cct.countermeasures.normalizer import format_warden
from cct.errors import ConfigurationError, DetectorError, ParseError
from cct.experiment import bit_errors
from cct.protocol import make_carrier, read_uint, validate_pdu
from cct.schemas import get_schema
from cct.settings import VariationSettings

MAX_BITS = 8000


def _ber_after(settings: VariationSettings, warden: WardenConfig, stream) -> float:
    room = min(codecs.capacity(settings.pattern, settings, stream), MAX_BITS)
    message = CovertMessage.random(room, 11)
    result = codecs.embed(settings, message, stream)
    cleaned, _ = normalize(warden, result.stream)
    received = codecs.extract(settings, cleaned)
    return bit_errors(message, received, result.bits_embedded) / result.bits_embedded


# =============================================================================
# Normalizer
# =============================================================================


ELIMINATED = [
    ("P5", "ipv4"), ("P7", "ipv4"), ("P6b", "ipv4"), ("P2", "tcp"), ("P2a", "tcp"),
    ("P2b", "ipv4"), ("P2b", "http"), ("P3", "ipv4"), ("P3", "tcp"), ("P4", "ipv4"), ("P4", "dhcp"),
    ("P6a", "http"),
]


class TestElimination:
    """The default warden turns storage channels into coin flips."""

    @pytest.mark.parametrize("pattern,schema", ELIMINATED, ids=[f"{p}-{s}" for p, s in ELIMINATED])
    def test_storage_channel_becomes_noise(self, settings_catalog, default_warden, carrier, pattern, schema) -> None:
        settings = settings_catalog.get(pattern, schema)
        assert PatternId.parse(pattern) in eliminated_by_normalization()
        ber = _ber_after(settings, default_warden, carrier(schema, n=2000))
        assert 0.45 <= ber <= 0.55

    def test_timing_channel_is_degraded(self, settings_catalog, default_warden, carrier) -> None:
        settings = settings_catalog.get("P8", "ipv4")
        assert _ber_after(settings, default_warden, carrier("ipv4", n=2000)) > 0.3

    def test_payload_size_survives_default_rules(self, settings_catalog, default_warden, carrier) -> None:
        settings = settings_catalog.get("P1", "ipv4")
        assert _ber_after(settings, default_warden, carrier("ipv4", n=500)) == 0.0

    def test_padding_removes_size_channel(self, settings_catalog, carrier) -> None:
        warden = WardenConfig(rules=(NormalizerRule(kind=RuleKind.PAD_TO_FIXED_SIZE, size=255),), mode="stateless")
        ber = _ber_after(settings_catalog.get("P1", "ipv4"), warden, carrier("ipv4", n=1000))
        assert 0.45 <= ber <= 0.55


class TestNormalizerProperties:

    def test_idempotent(self, default_warden, carrier) -> None:
        schemas = ["ipv4", "ipv6", "tcp", "dhcp", "http"]
        rng = np.random.default_rng(8)
        for trial in range(1000):
            schema = schemas[trial % len(schemas)]
            noise = ChannelConfig(loss_prob=float(rng.uniform(0, 0.2)), reorder_prob=float(rng.uniform(0, 0.2)),
                                  jitter=int(rng.integers(0, 1500)), rng_seed=trial)
            perturbed = transmit(noise, carrier(schema, n=int(rng.integers(2, 41)), iat="exponential:2000", seed=trial))
            once, _ = normalize(default_warden, perturbed)
            twice, _ = normalize(default_warden, once)
            assert twice == once, f"stream {trial} ({schema})"

    @pytest.mark.parametrize("schema", ["ipv4", "ipv6", "tcp", "dhcp", "http"])
    def test_clean_traffic_stays_valid(self, default_warden, carrier, schema: str) -> None:
        stream = carrier(schema, n=100, iat="exponential:3000")
        cleaned, _ = normalize(default_warden, stream)
        assert [p.seq for p in cleaned.pdus] == list(range(100))
        assert all(validate_pdu(p) == [] for p in cleaned.pdus)

    def test_reorder_restores_sequence(self, carrier) -> None:
        shuffled = transmit(ChannelConfig(reorder_prob=0.3, rng_seed=1), carrier("ipv4", n=200))
        warden = WardenConfig(rules=(NormalizerRule(kind=RuleKind.REORDER_BY_SEQ),))
        cleaned, actions = normalize(warden, shuffled)
        assert [p.seq for p in cleaned.pdus] == list(range(200))
        assert (np.diff(cleaned.timestamps()) >= 0).all()
        assert actions[0].changed > 0

    def test_smoothing_never_sends_early(self, carrier) -> None:
        stream = carrier("ipv4", n=1000, iat="exponential:2000", seed=3)
        warden = WardenConfig(rules=(NormalizerRule(kind=RuleKind.SMOOTH_IAT, target_us=2000),), buffer_limit=16)
        cleaned, _ = normalize(warden, stream)
        assert (cleaned.timestamps() >= stream.timestamps()).all()
        assert (cleaned.iats() == 2000).all()

    def test_smoothing_flattens_timing_channel(self, settings_catalog, carrier) -> None:
        settings = settings_catalog.get("P8", "ipv4")
        covert = codecs.embed(settings, CovertMessage.random(1199, 6), carrier("ipv4", n=1200)).stream
        assert set(np.unique(np.abs(covert.iats() - 2000) // 900).tolist()) == {1}
        warden = WardenConfig(rules=(NormalizerRule(kind=RuleKind.SMOOTH_IAT, target_us=2000),))
        cleaned, _ = normalize(warden, covert)
        assert (cleaned.iats() == 2000).all()

    def test_renumbering_closes_seq_gaps(self, settings_catalog, carrier) -> None:
        dropped = codecs.embed(settings_catalog.get("P4", "dhcp"), CovertMessage.from_bin("0110100"),
                               carrier("dhcp", n=10)).stream
        assert [p.seq for p in dropped.pdus] == [0, 3, 5, 6, 7, 8, 9]
        warden = parse_warden("RenumberSeq\n")
        cleaned, actions = normalize(warden, dropped)
        assert [p.seq for p in cleaned.pdus] == list(range(7))
        assert actions[0].changed == 6
        assert actions[0].detail == "gaps=3"
        assert codecs.extract(settings_catalog.get("P4", "dhcp"), cleaned).bits.bin == "000000"

    def test_renumbering_keeps_order_and_copies(self, carrier) -> None:
        stream = carrier("ipv4", n=4)
        shuffled = stream.replace_pdus([stream.pdus[0].replace(seq=40), stream.pdus[1].replace(seq=10),
                                        stream.pdus[2].replace(seq=40), stream.pdus[3].replace(seq=25)])
        cleaned, _ = normalize(parse_warden("RenumberSeq\n"), shuffled)
        assert [p.seq for p in cleaned.pdus] == [12, 10, 12, 11]

    def test_renumbering_needs_state(self) -> None:
        with pytest.raises(ConfigurationError, match="stateless"):
            parse_warden("mode stateless\nRenumberSeq\n")

    def test_rate_cap(self, carrier) -> None:
        stream = carrier("ipv4", n=100, iat="constant:100")
        warden = WardenConfig(rules=(NormalizerRule(kind=RuleKind.CAP_RATE, max=4, window=1000),))
        cleaned, _ = normalize(warden, stream)
        per_window = np.bincount(cleaned.timestamps() // 1000)
        assert per_window.max() <= 4

    def test_drop_invalid(self, carrier) -> None:
        corrupt = VariationSettings(pattern="P4", protocol="ipv4", mode="corrupt")
        result = codecs.embed(corrupt, CovertMessage.from_bin("1010"), carrier("ipv4", n=4))
        warden = WardenConfig(rules=(NormalizerRule(kind=RuleKind.DROP_INVALID),), mode="stateless")
        cleaned, actions = normalize(warden, result.stream)
        assert [p.seq for p in cleaned.pdus] == [1, 3]
        assert actions[0].changed == 2

    def test_action_log(self, carrier) -> None:
        settings = VariationSettings(pattern="P7", protocol="ipv4", field="flag_reserved")
        result = codecs.embed(settings, CovertMessage.from_bin("11001"), carrier("ipv4", n=5))
        warden = parse_warden("ClearField kind:Reserved\n")
        cleaned, actions = normalize(warden, result.stream)
        assert [(a.rule, a.changed) for a in actions] == [("ClearField(kind:Reserved)", 3)]
        assert all(read_uint(p, "flag_reserved") == 0 for p in cleaned.pdus)

    def test_randomize_is_keyed_by_seq(self, carrier) -> None:
        warden = parse_warden("RandomizeField identifier key=0102\n")
        a, _ = normalize(warden, carrier("ipv4", n=20, seed=1))
        b, _ = normalize(warden, carrier("ipv4", n=20, seed=2))
        assert [read_uint(p, "identifier") for p in a.pdus] == [read_uint(p, "identifier") for p in b.pdus]

    def test_qualified_target_skips_other_schemas(self, carrier) -> None:
        stream = carrier("ipv6", n=10)
        cleaned, actions = normalize(parse_warden("FixField ipv4_like.tos value=0\n"), stream)
        assert cleaned == stream
        assert actions[0].changed == 0

    def test_fix_value_too_wide(self, carrier) -> None:
        with pytest.raises(ConfigurationError, match="does not fit"):
            normalize(parse_warden("FixField flag_reserved value=2\n"), carrier("ipv4", n=2))


class TestWardenFile:

    def test_default_rules(self, default_warden) -> None:
        assert default_warden.mode == "stateful"
        assert default_warden.buffer_limit == 64
        assert len(default_warden.rules) == 13
        assert [r.kind for r in default_warden.rules if r.stateful] == [
            RuleKind.RENUMBER_SEQ, RuleKind.REORDER_BY_SEQ, RuleKind.SMOOTH_IAT, RuleKind.CAP_RATE]

    def test_format_parse_identity(self, default_warden) -> None:
        assert parse_warden(format_warden(default_warden)) == default_warden

    def test_unknown_rule(self) -> None:
        with pytest.raises(ParseError, match="line 2"):
            parse_warden("mode stateless\nScrambleEverything\n")

    def test_unknown_parameter(self) -> None:
        with pytest.raises(ParseError, match="unknown rule parameter"):
            parse_warden("FixField ttl speed=3\n")

    def test_missing_value(self) -> None:
        with pytest.raises(ParseError, match="line 1"):
            parse_warden("FixField ttl\n")

    def test_stateless_mode_refuses_buffers(self) -> None:
        with pytest.raises(ConfigurationError, match="stateless"):
            parse_warden("mode stateless\nSmoothIAT target=1000\n")


# =============================================================================
# Detectors
# =============================================================================


@pytest.fixture
def covert_gaps(carrier):
    settings = VariationSettings(pattern="P8", protocol="ipv4", d0=1000, d1=3000)
    stream = carrier("ipv4", n=1000, iat="exponential:2000", seed=4)
    return codecs.embed(settings, CovertMessage.random(999, 4), stream).stream


@pytest.fixture
def overt(carrier):
    return carrier("ipv4", n=1000, iat="exponential:2000", seed=5)


class TestDetectors:

    def test_compressibility_ranks_covert_higher(self, covert_gaps, overt) -> None:
        assert detect_compressibility(covert_gaps.iats()) > detect_compressibility(overt.iats())

    def test_epsilon_similarity_ranks_covert_higher(self, covert_gaps, overt) -> None:
        covert = detect_epsilon_similarity(covert_gaps.iats())
        assert covert >= 0.99
        assert covert > detect_epsilon_similarity(overt.iats())

    def test_entropy_separates(self, covert_gaps, overt, carrier) -> None:
        reference = carrier("ipv4", n=2000, iat="exponential:2000", seed=6)
        edges = entropy_bin_edges(reference.iats(), 16)
        assert detect_iat_entropy(covert_gaps.iats(), edges) <= 1.1
        assert detect_iat_entropy(overt.iats(), edges) >= 2.5

    def test_distribution_distance(self, covert_gaps, overt, carrier) -> None:
        other = carrier("ipv4", n=1000, iat="exponential:2000", seed=7)
        assert detect_distribution_distance(covert_gaps.iats(), overt.iats()) > 0.3
        assert detect_distribution_distance(other.iats(), overt.iats()) < 0.1

    def test_field_value_entropy(self, carrier) -> None:
        stream = carrier("ipv4", n=500)
        settings = VariationSettings(pattern="P6", protocol="ipv4", field="tos", ValuesAllowed="0,32")
        covert = codecs.embed(settings, CovertMessage.random(500, 2), stream).stream
        assert field_value_entropy(stream, "tos") == 0.0
        assert field_value_entropy(covert, "tos") > 0.9

    def test_too_few_gaps(self) -> None:
        with pytest.raises(DetectorError):
            detect_compressibility([1000.0] * 10)

    def test_zero_gap(self) -> None:
        with pytest.raises(DetectorError):
            detect_epsilon_similarity([0.0, 10.0, 20.0])

    def test_degenerate_reference(self) -> None:
        with pytest.raises(DetectorError, match="degenerate"):
            entropy_bin_edges([1000.0] * 100, 16)


TRIALS = 100


@pytest.fixture(scope="module")
def paired_gaps(settings_catalog):
    """(covert, overt) gap arrays of 1000 PDUs each, one pair per seed."""
    settings = settings_catalog.get("P8", "ipv4")
    schema = get_schema("ipv4")
    pairs = []
    for trial in range(TRIALS):
        stream = make_carrier(schema, 1000, "exponential:2000", 2 * trial)
        covert = codecs.embed(settings, CovertMessage.random(999, trial), stream).stream
        overt = make_carrier(schema, 1000, "exponential:2000", 2 * trial + 1)
        pairs.append((covert.iats(), overt.iats()))
    return pairs


class TestDetectorRanking:
    """Seeded covert/overt pairs: the covert side must score higher almost every time."""

    def test_compressibility_wins(self, paired_gaps) -> None:
        wins = sum(detect_compressibility(c) > detect_compressibility(o) for c, o in paired_gaps)
        assert wins >= 95

    def test_epsilon_similarity_wins(self, paired_gaps) -> None:
        wins = sum(detect_epsilon_similarity(c, 0.02) > detect_epsilon_similarity(o, 0.02) for c, o in paired_gaps)
        assert wins >= 95

    def test_scores_rise_as_guard_shrinks(self, carrier) -> None:
        stream = carrier("ipv4", n=1000, iat="exponential:2000", seed=4)
        message = CovertMessage.random(999, 4)
        compress, similar = [], []
        for guard in (900, 200, 0):
            settings = VariationSettings(pattern="P8", protocol="ipv4", d0=1000, d1=3000, jitter_guard=guard)
            gaps = codecs.embed(settings, message, stream).stream.iats()
            compress.append(detect_compressibility(gaps))
            similar.append(detect_epsilon_similarity(gaps, 0.02))
        assert compress == sorted(compress)
        assert similar == sorted(similar)
        assert compress[-1] > compress[0]


class TestCalibration:

    def test_flags_covert_flow(self, covert_gaps, overt) -> None:
        thresholds = calibrate(overt)
        report = run_detectors(covert_gaps, thresholds, ["compressibility", "epsilon_similarity", "iat_entropy"])
        assert report.verdicts == {"compressibility": True, "epsilon_similarity": True, "iat_entropy": True}

    def test_deterministic(self, overt) -> None:
        assert calibrate(overt) == calibrate(overt)

    def test_empty_trace(self, carrier) -> None:
        with pytest.raises(DetectorError, match="empty"):
            calibrate(carrier("ipv4", n=1))

    def test_thresholds_file(self, overt, tmp_path) -> None:
        thresholds = calibrate(overt, bins=8, epsilon=0.05)
        path = save_thresholds(thresholds, tmp_path / "thresholds.env")
        assert load_thresholds(path) == thresholds

    def test_thresholds_file_unknown_key(self, tmp_path) -> None:
        path = tmp_path / "bad.env"
        path.write_text("ENTROPY_FLOOR=2.0\n", encoding="utf-8")
        with pytest.raises(ConfigurationError, match="ENTROPY_FLOOR"):
            load_thresholds(path)

    def test_unknown_detector(self, overt) -> None:
        with pytest.raises(ConfigurationError, match="unknown detector"):
            run_detectors(overt, Thresholds(), ["spectral"])

    def test_entropy_needs_edges(self, overt) -> None:
        with pytest.raises(DetectorError):
            run_detectors(overt, Thresholds(), ["iat_entropy"])

    def test_registered_detector(self, overt) -> None:
        register_detector(Detector("mean_gap", lambda iats, t: float(np.mean(iats)), lambda s, t: None))
        try:
            report = run_detectors(overt, Thresholds(), ["mean_gap"])
            assert 1500 < report.scores["mean_gap"] < 2500
            assert report.verdicts == {}
        finally:
            DETECTORS.pop("mean_gap")


# =============================================================================
# Applicability
# =============================================================================


class TestApplicability:

    def test_normalization_eliminates(self) -> None:
        P = PatternId
        assert eliminated_by_normalization() == {
            P.P2_Sequence, P.P2a_Position, P.P2b_NumElements, P.P3_AddRedundancy, P.P4_CorruptionLoss,
            P.P5_RandomValue, P.P6a_Case, P.P6b_LSB, P.P7_ReservedUnused,
        }

    @pytest.mark.parametrize("pattern", ["P6", "P8", "P9", "P10"])
    def test_limited_only(self, pattern: str) -> None:
        row = applicability(pattern)
        assert not row.elimination
        assert row.limitation == {"TN (limited)", "NPRC"}

    def test_detection_everywhere(self) -> None:
        assert all(applicability(p).detection == {"SA/ML"} for p in PatternId)

    def test_row_spelling(self) -> None:
        assert applicability("p6b").as_row()["elimination"] == ["TN"]
