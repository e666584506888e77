"""
Pattern variation and settings selection tests
"""

from __future__ import annotations

import pytest

from cct import codecs
from cct.errors import VariationError
from cct.schemas import get_schema
from cct.settings import SettingsCatalog, VariationSettings
from cct.variation import Requirement, select_settings, self_test, settings_matrix, vary


class TestVary:

    def test_lsb_moves_from_ipv4_to_ipv6(self, settings_catalog) -> None:
        source = settings_catalog.get("P6b", "ipv4")
        target = vary("P6b", "ipv4", "ipv6", settings_catalog)
        assert target.field == "hop_limit"
        assert source.field == "ttl"
        # same codec object, different settings
        assert codecs.bind_codec(source, get_schema("ipv4")) is codecs.bind_codec(target, get_schema("ipv6"))

    def test_missing_settings_name_required_keys(self, settings_catalog) -> None:
        with pytest.raises(VariationError) as excinfo:
            vary("P7", "ipv4", "http", settings_catalog)
        assert excinfo.value.missing == ["field|Offset", "field|Len"]
        assert excinfo.value.exit_code == 2

    def test_timing_settings_are_retargeted(self, settings_catalog) -> None:
        moved = vary("P8", "ipv4", "tcp", settings_catalog)
        assert moved.protocol == "tcp"
        assert moved.entries() == settings_catalog.get("P8", "ipv4").entries()

    def test_timing_without_any_entry(self) -> None:
        with pytest.raises(VariationError) as excinfo:
            vary("P11", "ipv4", "tcp", SettingsCatalog())
        assert excinfo.value.missing == ["duplicate_gap"]

    def test_settings_without_room(self) -> None:
        crowded = VariationSettings(pattern="P2b", protocol="ipv4", element_id=1, MinElements=0, MaxElements=31)
        with pytest.raises(VariationError, match="no capacity"):
            vary("P2b", "tcp", "ipv4", SettingsCatalog.of([crowded]))

    def test_self_test_counts_bits(self, settings_catalog) -> None:
        assert self_test(settings_catalog.get("P7", "ipv4"), get_schema("ipv4")) == 64


class TestSelectSettings:

    def test_max_throughput(self, settings_catalog, carrier) -> None:
        schema_name, settings = select_settings("max_throughput", "P6", settings_catalog, carrier("ipv4"))
        assert schema_name == "ipv6_like"
        assert settings.field == "traffic_class"

    def test_max_covertness(self, settings_catalog, carrier) -> None:
        schema_name, settings = select_settings(Requirement.MAX_COVERTNESS, "P6", settings_catalog, carrier("ipv4"))
        assert schema_name == "dhcp_like"
        assert settings.field == "flag_broadcast"

    def test_needed_bits_filters(self, settings_catalog, carrier) -> None:
        with pytest.raises(VariationError):
            select_settings("max_throughput", "P6", settings_catalog, carrier("ipv4", n=8), needed_bits=1000)

    def test_timing_pattern_uses_carrier_schema(self, settings_catalog, carrier) -> None:
        schema_name, settings = select_settings("max_throughput", "P8", settings_catalog, carrier("http"))
        assert schema_name == "http_like"
        assert settings.d0 == 1000

    def test_unknown_requirement(self, settings_catalog, carrier) -> None:
        with pytest.raises(ValueError):
            select_settings("max_speed", "P6", settings_catalog, carrier("ipv4"))


class TestSettingsMatrix:

    def test_every_shipped_entry_round_trips(self, settings_catalog) -> None:
        rows = settings_matrix(settings_catalog)
        assert len(rows) == len(settings_catalog)
        assert all(bits > 0 for _, _, bits in rows)
        assert {pid for pid, _, _ in rows} == set(settings_catalog.patterns())
