"""
Pattern codec tests

Round-trips over every shipped settings entry plus the per-pattern behaviour
each codec promises on the wire.
"""

from __future__ import annotations

import pytest

from cct import codecs
from cct.catalog import PatternId
from cct.codecs.base import CovertMessage
from cct.errors import CapacityError, ConfigurationError
from cct.protocol import checksum_ok, read_uint, validate_pdu
from cct.schemas import get_schema
from cct.settings import VariationSettings, load_settings
from cct.config import DEFAULT_SETTINGS_FILE
from cct.variation import self_test_carrier

SHIPPED = sorted(load_settings(DEFAULT_SETTINGS_FILE).entries.items(), key=lambda kv: (kv[0][0].value, kv[0][1]))


def _s(pattern: str, protocol: str, **entries) -> VariationSettings:
    return VariationSettings(pattern=pattern, protocol=protocol, **entries)


def _roundtrip(settings: VariationSettings, message: CovertMessage, carrier):
    result = codecs.embed(settings, message, carrier)
    recovered = codecs.extract(settings, result.stream)
    return result, recovered


# =============================================================================
# Universal round-trip
# =============================================================================


class TestShippedSettingsRoundTrip:
    """Every (pattern, schema) entry recovers random messages over a clean path."""

    @pytest.mark.parametrize("key,settings", SHIPPED, ids=[f"{k[0].value}-{k[1]}" for k, _ in SHIPPED])
    def test_random_messages(self, key, settings: VariationSettings) -> None:
        carrier = self_test_carrier(settings, get_schema(key[1]))
        room = codecs.capacity(settings.pattern, settings, carrier)
        assert room > 0
        for seed in range(100):
            message = CovertMessage.random(room, seed)
            result, recovered = _roundtrip(settings, message, carrier)
            assert result.bits_embedded == room
            assert recovered.bits[:room] == message.bits

    @pytest.mark.parametrize("key,settings", SHIPPED, ids=[f"{k[0].value}-{k[1]}" for k, _ in SHIPPED])
    def test_short_message(self, key, settings: VariationSettings) -> None:
        carrier = self_test_carrier(settings, get_schema(key[1]))
        message = CovertMessage.from_bin("1011")
        result, recovered = _roundtrip(settings, message, carrier)
        assert result.bits_embedded == 4
        assert recovered.bits[:4] == message.bits

    def test_slot_map_covers_message(self, carrier) -> None:
        result = codecs.embed(_s("P7", "ipv4", field="flag_reserved"), CovertMessage.from_hex("a5"), carrier("ipv4", n=16))
        assert [r.slot for r in result.map] == list(range(8))
        assert sum(r.count for r in result.map) == 8

    def test_empty_message_leaves_carrier(self, carrier) -> None:
        stream = carrier("ipv4", n=8)
        result = codecs.embed(_s("P7", "ipv4", field="flag_reserved"), CovertMessage(), stream)
        assert result.bits_embedded == 0
        assert result.stream == stream


# =============================================================================
# Storage patterns
# =============================================================================


class TestRandomValue:
    """Random-valued header fields."""

    def test_sixteen_bits_per_ipv4_pdu(self, carrier, message) -> None:
        settings = _s("P5", "ipv4", Offset=32, Len=16)
        stream = carrier("ipv4", n=10)
        assert codecs.capacity("P5", settings, stream) == 160
        result = codecs.embed_field_value(settings, message(400), stream)
        assert result.bits_embedded == 160

    @pytest.mark.parametrize("n", [1, 5, 300])
    def test_only_first_packet(self, carrier, message, n: int) -> None:
        settings = _s("P5", "tcp", Offset=32, Len=32, OnlyFirstPkt=True)
        stream = carrier("tcp", n=n)
        assert codecs.capacity("P5", settings, stream) == 32
        assert codecs.embed(settings, message(64), stream).bits_embedded == 32

    def test_identifier_holds_message(self, carrier) -> None:
        settings = _s("P5", "ipv4", field="identifier")
        result = codecs.embed(settings, CovertMessage.from_hex("beefcafe"), carrier("ipv4", n=2))
        assert [read_uint(p, "identifier") for p in result.stream.pdus] == [0xBEEF, 0xCAFE]
        assert all(validate_pdu(p) == [] for p in result.stream.pdus)

    def test_whitening(self, carrier) -> None:
        settings = _s("P5", "ipv4", field="identifier", whiten_seed=42)
        message = CovertMessage.from_hex("0000" * 4)
        result, recovered = _roundtrip(settings, message, carrier("ipv4", n=4))
        assert any(read_uint(p, "identifier") for p in result.stream.pdus)
        assert recovered.bits[:64] == message.bits

    def test_rejects_non_random_bits(self, carrier, message) -> None:
        with pytest.raises(ConfigurationError, match="not all random|touch"):
            codecs.embed(_s("P5", "ipv4", Offset=64, Len=8), message(8), carrier("ipv4", n=4))


class TestReservedUnused:

    def test_reserved_flag_carries_bits(self, carrier) -> None:
        result = codecs.embed(_s("P7", "ipv4", field="flag_reserved"), CovertMessage.from_bin("1101"),
                              carrier("ipv4", n=4))
        assert [read_uint(p, "flag_reserved") for p in result.stream.pdus] == [1, 1, 0, 1]
        assert all(checksum_ok(p) for p in result.stream.pdus)

    def test_strict_refuses_random_field(self, carrier, message) -> None:
        with pytest.raises(ConfigurationError, match="Random"):
            codecs.capacity("P7", _s("P7", "ipv4", Offset=32, Len=16), carrier("ipv4"))

    def test_strict_off(self, carrier) -> None:
        settings = _s("P7", "ipv4", Offset=32, Len=16, strict=False)
        assert codecs.capacity("P7", settings, carrier("ipv4", n=3)) == 48

    def test_textual_schema_has_no_bits(self, carrier) -> None:
        with pytest.raises(ConfigurationError):
            codecs.capacity("P7", _s("P7", "http", Offset=0, Len=1), carrier("http"))


class TestValueModulation:

    def test_two_level_ttl(self, carrier, message) -> None:
        settings = _s("P6b", "ipv4", field="ttl", bases="100,150")
        result, recovered = _roundtrip(settings, message(64), carrier("ipv4", n=64))
        for pdu in result.stream.pdus:
            ttl = read_uint(pdu, "ttl")
            assert abs(ttl - 100) < 25 or abs(ttl - 150) < 25
        assert recovered.bits[:64] == message(64).bits

    def test_bases_too_close(self, carrier) -> None:
        with pytest.raises(ConfigurationError, match="closer"):
            codecs.capacity("P6b", _s("P6b", "ipv4", field="ttl", bases="100,120"), carrier("ipv4"))

    def test_plain_lsb(self, carrier) -> None:
        settings = _s("P6b", "dhcp", field="secs", Len=2)
        stream = carrier("dhcp", n=3)
        result = codecs.embed(settings, CovertMessage.from_bin("011011"), stream)
        for before, after, expected in zip(stream.pdus, result.stream.pdus, (0b01, 0b10, 0b11)):
            assert read_uint(after, "secs") & 0b11 == expected
            assert read_uint(after, "secs") >> 2 == read_uint(before, "secs") >> 2

    def test_allowed_values(self, carrier) -> None:
        settings = _s("P6", "ipv6", field="traffic_class", ValuesAllowed="0,32,40,72")
        result = codecs.embed(settings, CovertMessage.from_bin("00011011"), carrier("ipv6", n=4))
        assert [read_uint(p, "traffic_class") for p in result.stream.pdus] == [0, 32, 40, 72]

    def test_illegal_enumerated_value(self, carrier) -> None:
        with pytest.raises(ConfigurationError, match="does not allow"):
            codecs.capacity("P6", _s("P6", "ipv4", field="tos", ValuesAllowed="0,1"), carrier("ipv4"))

    def test_case_of_host_token(self, carrier) -> None:
        settings = _s("P6a", "http", token="Host")
        result = codecs.embed_value_modulation(settings, CovertMessage.from_bin("1010"), carrier("http", n=1))
        host = dict(result.stream.pdus[0].options)[0]
        assert host.startswith(b"HoSt:")

    def test_case_needs_textual_schema(self, carrier) -> None:
        with pytest.raises(ConfigurationError):
            codecs.capacity("P6a", _s("P6a", "ipv4", token="Host"), carrier("ipv4"))


class TestElementLists:

    def test_full_order_capacity(self, carrier) -> None:
        # four default TCP options -> floor(log2 4!) = 4 bits
        assert codecs.capacity("P2", _s("P2", "tcp", mode="full"), carrier("tcp", n=10)) == 40

    def test_position_of_marker(self, carrier) -> None:
        settings = _s("P2a", "tcp", element_id=1)
        result = codecs.embed_sequence(settings, CovertMessage.from_bin("11"), carrier("tcp", n=1))
        ids = [e for e, _ in result.stream.pdus[0].options]
        assert ids.index(1) == 3

    def test_number_of_elements(self, carrier) -> None:
        settings = _s("P2b", "ipv4", element_id=1, MinElements=0, MaxElements=7)
        result = codecs.embed(settings, CovertMessage.from_bin("101"), carrier("ipv4", n=1))
        assert [e for e, _ in result.stream.pdus[0].options].count(1) == 5
        assert validate_pdu(result.stream.pdus[0]) == []

    def test_no_room_for_count(self, carrier, message) -> None:
        settings = _s("P2b", "ipv4", element_id=1, MinElements=0, MaxElements=63)
        with pytest.raises(CapacityError):
            codecs.embed(settings, message(8), carrier("ipv4", n=4))

    def test_added_element(self, carrier) -> None:
        settings = _s("P3", "ipv4", element_id=148, Len=16)
        result = codecs.embed_redundancy(settings, CovertMessage.from_hex("abcd"), carrier("ipv4", n=1))
        assert result.stream.pdus[0].options == ((148, b"\xab\xcd"),)
        assert validate_pdu(result.stream.pdus[0]) == []

    def test_redundancy_needs_whole_bytes(self, carrier) -> None:
        with pytest.raises(ConfigurationError, match="multiple of 8"):
            codecs.capacity("P3", _s("P3", "ipv4", element_id=148, Len=12), carrier("ipv4"))

    def test_payload_size(self, carrier) -> None:
        settings = _s("P1", "ipv4", MinSize=10, MaxSize=25)
        result = codecs.embed_size(settings, CovertMessage.from_bin("00111111"), carrier("ipv4", n=2))
        assert [len(p.payload) for p in result.stream.pdus] == [13, 25]


class TestCorruptionLoss:

    def test_corrupt_marks_ones(self, carrier) -> None:
        settings = _s("P4", "tcp", mode="corrupt")
        result = codecs.embed_corruption(settings, CovertMessage.from_bin("0110"), carrier("tcp", n=4))
        assert [p.corrupted for p in result.stream.pdus] == [False, True, True, False]
        assert [checksum_ok(p) for p in result.stream.pdus] == [True, False, False, True]

    def test_drop_keeps_terminator(self, carrier) -> None:
        settings = _s("P4", "dhcp", mode="drop")
        stream = carrier("dhcp", n=6)
        result, recovered = _roundtrip(settings, CovertMessage.from_bin("11111"), stream)
        assert [p.seq for p in result.stream.pdus] == [5]
        assert recovered.bits == CovertMessage.from_bin("11111").bits

    def test_corrupt_needs_checksum(self, carrier) -> None:
        with pytest.raises(ConfigurationError, match="checksum"):
            codecs.capacity("P4", _s("P4", "dhcp", mode="corrupt"), carrier("dhcp"))


# =============================================================================
# Timing patterns
# =============================================================================


class TestTiming:

    def test_iat_gaps(self, carrier) -> None:
        settings = _s("P8", "ipv4", d0=1000, d1=3000)
        result = codecs.embed_iat(settings, CovertMessage.from_bin("0110"), carrier("ipv4", n=5))
        assert result.stream.iats().tolist() == [1000, 3000, 3000, 1000]

    def test_iat_guard_band(self, carrier, message) -> None:
        settings = _s("P8", "ipv4", d0=1000, d1=3000, jitter_guard=200)
        result, recovered = _roundtrip(settings, message(99), carrier("ipv4", n=100))
        gaps = result.stream.iats()
        assert all(800 <= g <= 1200 or 2800 <= g <= 3200 for g in gaps)
        assert recovered.bits[:99] == message(99).bits

    def test_iat_guard_too_wide(self, carrier) -> None:
        with pytest.raises(ConfigurationError, match="margin"):
            codecs.capacity("P8", _s("P8", "ipv4", d0=1000, d1=1400, jitter_guard=300), carrier("ipv4"))

    def test_rate_capacity(self, carrier) -> None:
        settings = _s("P9", "ipv4", window=10000, r0=2, r1=5)
        assert codecs.capacity("P9", settings, carrier("ipv4", n=64)) == 12

    def test_rate_windows(self, carrier) -> None:
        settings = _s("P9", "tcp", window=10000, r0=2, r1=5)
        result = codecs.embed_rate(settings, CovertMessage.from_bin("10"), carrier("tcp", n=12))
        stamps = result.stream.timestamps()
        assert (stamps[:5] < 10000).all()
        assert ((stamps[5:7] >= 10000) & (stamps[5:7] < 20000)).all()
        assert codecs.extract_rate(settings, result.stream).bits[:2].bin == "10"

    def test_order_permutes_windows(self, carrier, message) -> None:
        settings = _s("P10", "ipv4", window=4)
        result = codecs.embed_order(settings, message(16), carrier("ipv4", n=16))
        stamps = result.stream.timestamps()
        assert (stamps[1:] >= stamps[:-1]).all()
        for w in range(4):
            assert sorted(p.seq for p in result.stream.pdus[4 * w:4 * w + 4]) == list(range(4 * w, 4 * w + 4))

    def test_order_window_too_large(self, carrier, message) -> None:
        with pytest.raises(CapacityError):
            codecs.embed(_s("P10", "ipv4", window=8), message(8), carrier("ipv4", n=7))

    def test_retransmissions(self, carrier) -> None:
        settings = _s("P11", "ipv4", duplicate_gap=200)
        result = codecs.embed_retransmission(settings, CovertMessage.from_bin("1001"), carrier("ipv4", n=4))
        copies = [p for p in result.stream.pdus if p.retransmission]
        assert [p.seq for p in copies] == [0, 3]
        assert copies[0].timestamp == 200

    def test_single_pdu_has_no_gap(self, carrier, message) -> None:
        with pytest.raises(CapacityError):
            codecs.embed(_s("P8", "ipv4", d0=1000, d1=3000), message(4), carrier("ipv4", n=1))

    def test_timing_settings_apply_to_any_schema(self, carrier, message) -> None:
        settings = _s("P8", "ipv4", d0=1000, d1=3000)
        _, recovered = _roundtrip(settings, message(9), carrier("http", n=10))
        assert recovered.bits[:9] == message(9).bits


# =============================================================================
# Binding errors
# =============================================================================


class TestBinding:

    def test_storage_settings_on_other_schema(self, carrier, message) -> None:
        with pytest.raises(ConfigurationError, match="do not apply"):
            codecs.embed(_s("P7", "ipv4", field="flag_reserved"), message(4), carrier("tcp"))

    def test_wrong_entry_point(self, carrier, message) -> None:
        with pytest.raises(ConfigurationError, match="expected"):
            codecs.embed_iat(_s("P7", "ipv4", field="flag_reserved"), message(4), carrier("ipv4"))

    def test_capacity_pattern_mismatch(self, carrier) -> None:
        with pytest.raises(ConfigurationError):
            codecs.capacity("P5", _s("P7", "ipv4", field="flag_reserved"), carrier("ipv4"))

    def test_registry_is_complete(self) -> None:
        assert set(codecs.CODECS) == set(PatternId)
        assert all(codecs.get_codec(p).pattern is p for p in PatternId)
