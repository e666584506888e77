"""
Pattern catalog tests

Counts, hierarchy and export/import of the 15 catalog entries.
"""

from __future__ import annotations

import pytest

from cct.catalog import (
    PatternId,
    Semantic,
    Syntax,
    catalog_stats,
    check_hierarchy,
    descriptor,
    export_catalog,
    import_catalog,
    load_catalog,
)
from cct.errors import ConfigurationError, ParseError

# =============================================================================
# Statistics
# =============================================================================


class TestCatalogStats:
    """Technique counts folded onto the 11 top-level patterns."""

    def test_headline_figures(self) -> None:
        stats = catalog_stats()
        assert stats.pattern_count == 11
        assert stats.total_techniques == 109
        assert round(stats.top4_coverage_fraction * 100, 1) == 69.7

    def test_top_four(self) -> None:
        stats = catalog_stats()
        counts = stats.per_pattern_counts
        assert counts[PatternId.P7_ReservedUnused] == 24
        assert counts[PatternId.P3_AddRedundancy] == 21
        assert counts[PatternId.P6_ValueModulation] == 21
        assert counts[PatternId.P5_RandomValue] == 10
        assert set(stats.top4) == {PatternId.P7_ReservedUnused, PatternId.P3_AddRedundancy,
                                   PatternId.P6_ValueModulation, PatternId.P5_RandomValue}

    def test_children_counted_on_their_own(self) -> None:
        per = catalog_stats().per_descriptor_counts
        assert len(per) == 15
        assert per[PatternId.P6_ValueModulation] == 13
        assert per[PatternId.P6b_LSB] == 6


# =============================================================================
# Descriptors
# =============================================================================


class TestDescriptors:
    """Attributes and hierarchy of single entries."""

    def test_hierarchy_is_consistent(self) -> None:
        assert check_hierarchy(load_catalog()) == []

    @pytest.mark.parametrize("text", ["P6b", "p6b", "P6.b", "P6b_LSB"])
    def test_parse_spellings(self, text: str) -> None:
        assert PatternId.parse(text) is PatternId.P6b_LSB

    def test_unknown_pattern(self) -> None:
        with pytest.raises(ConfigurationError):
            PatternId.parse("P12")

    def test_lsb_row(self) -> None:
        d = descriptor("P6b")
        assert d.parent is PatternId.P6_ValueModulation
        assert d.context_path[-1] == "Value Modulation"
        assert d.syntax is Syntax.PRESERVING

    def test_timing_patterns(self) -> None:
        timing = {d.id for d in load_catalog() if d.is_timing}
        assert timing == {PatternId.P8_InterArrivalTime, PatternId.P9_Rate,
                          PatternId.P10_PduOrder, PatternId.P11_Retransmission}
        assert all(descriptor(p).syntax is Syntax.NOT_APPLICABLE for p in timing)

    def test_corruption_semantic_is_conditional(self) -> None:
        assert descriptor("P4").semantic is Semantic.CONDITIONAL

    def test_orphan_child_reported(self) -> None:
        entries = [d for d in load_catalog() if d.id is not PatternId.P2_Sequence]
        problems = check_hierarchy(entries)
        assert any("P2a" in p for p in problems)


# =============================================================================
# Export / import
# =============================================================================


class TestCatalogExport:
    """Every export format reads back to the same descriptors."""

    @pytest.mark.parametrize("fmt", ["structured-markup", "tabular", "spreadsheet"])
    def test_identity(self, fmt: str) -> None:
        assert import_catalog(export_catalog(fmt)) == load_catalog()

    def test_unknown_format(self) -> None:
        with pytest.raises(ConfigurationError):
            export_catalog("yaml")

    def test_broken_markup(self) -> None:
        data = export_catalog("structured-markup").replace(b"<evidence", b"<evidance", 1)
        with pytest.raises(ParseError):
            import_catalog(data)
