"""
Protocol model tests

Schemas, field access with derived-field upkeep, validation and carrier generation.
"""

from __future__ import annotations

import pytest
from bitstring import Bits

from cct.errors import ConfigurationError, FieldError
from cct.protocol import (
    FieldKind,
    FieldSpec,
    ProtocolSchema,
    checksum_ok,
    make_carrier,
    parse_iat_model,
    read_bits,
    read_uint,
    rebuild,
    recompute_derived,
    validate_pdu,
    write_field,
)
from cct.schemas import ALIASES, SCHEMAS, get_schema, register_schema

# =============================================================================
# Built-in schemas
# =============================================================================


class TestBuiltinSchemas:
    """Layouts of the shipped schemas."""

    def test_aliases_resolve(self) -> None:
        for alias, name in ALIASES.items():
            assert get_schema(alias) is SCHEMAS[name]

    def test_unknown_schema(self) -> None:
        with pytest.raises(ConfigurationError, match="unknown schema"):
            get_schema("sctp_like")

    def test_ipv4_field_positions(self) -> None:
        schema = get_schema("ipv4")
        assert (schema.field("identifier").offset, schema.field("identifier").length) == (32, 16)
        assert schema.field("ttl").offset == 64
        assert schema.field("flag_reserved").kind is FieldKind.RESERVED
        assert schema.header_bits == 160

    def test_tcp_sequence_number_is_random(self) -> None:
        spec = get_schema("tcp").field("seq")
        assert (spec.offset, spec.length, spec.kind) == (32, 32, FieldKind.RANDOM)

    def test_http_tokens_case_insensitive(self) -> None:
        schema = get_schema("http")
        assert schema.textual
        assert schema.token_id("host") == schema.token_id("HOST") == 0

    def test_unknown_field(self) -> None:
        with pytest.raises(FieldError):
            get_schema("ipv4").field("flow_label")

    def test_overlapping_fields_rejected(self) -> None:
        with pytest.raises(ValueError, match="overlap"):
            ProtocolSchema(
                name="broken",
                header_bits=16,
                fields=(
                    FieldSpec(name="a", offset=0, length=10, kind=FieldKind.RESERVED),
                    FieldSpec(name="b", offset=8, length=8, kind=FieldKind.RESERVED),
                ),
            )

    def test_register_same_layout_twice(self) -> None:
        schema = get_schema("ipv4")
        assert register_schema(schema) is schema

    def test_register_conflicting_layout(self) -> None:
        other = ProtocolSchema(
            name="ipv4_like",
            header_bits=8,
            fields=(FieldSpec(name="x", offset=0, length=8, kind=FieldKind.RESERVED),),
        )
        with pytest.raises(ConfigurationError):
            register_schema(other)


# =============================================================================
# Field access
# =============================================================================


class TestFieldAccess:
    """write_field keeps Length and Checksum consistent unless raw."""

    def test_write_recomputes_checksum(self, carrier) -> None:
        pdu = carrier("ipv4", n=1).pdus[0]
        updated = write_field(pdu, "identifier", 0xBEEF)
        assert read_uint(updated, "identifier") == 0xBEEF
        assert validate_pdu(updated) == []

    def test_raw_write_breaks_checksum(self, carrier) -> None:
        pdu = carrier("tcp", n=1).pdus[0]
        broken = write_field(pdu, "reserved", 0b1010, raw=True)
        assert not checksum_ok(broken)
        assert checksum_ok(recompute_derived(broken))

    def test_value_too_wide(self, carrier) -> None:
        pdu = carrier("ipv4", n=1).pdus[0]
        with pytest.raises(FieldError, match="does not fit"):
            write_field(pdu, "flag_reserved", 2)

    def test_bit_length_mismatch(self, carrier) -> None:
        pdu = carrier("ipv4", n=1).pdus[0]
        with pytest.raises(FieldError):
            write_field(pdu, "ttl", Bits(uint=1, length=4))

    def test_read_outside_header(self, carrier) -> None:
        pdu = carrier("ipv4", n=1).pdus[0]
        with pytest.raises(FieldError):
            read_bits(pdu, 150, 16)

    def test_rebuild_updates_length(self, carrier) -> None:
        pdu = carrier("ipv4", n=1).pdus[0]
        grown = rebuild(pdu, payload=bytes(100))
        assert read_uint(grown, "total_length") == 20 + 100
        assert validate_pdu(grown) == []

    def test_illegal_enum_reported(self, carrier) -> None:
        pdu = write_field(carrier("ipv4", n=1).pdus[0], "tos", 1)
        assert [v.code for v in validate_pdu(pdu)] == ["IllegalEnumValue"]


# =============================================================================
# Carrier generation
# =============================================================================


class TestCarrier:
    """make_carrier produces valid, reproducible flows."""

    @pytest.mark.parametrize("schema", sorted(SCHEMAS))
    def test_clean_carrier_validates(self, carrier, schema: str) -> None:
        stream = carrier(schema, n=32, iat="exponential:2000", seed=3)
        assert all(validate_pdu(p) == [] for p in stream.pdus)
        assert [p.seq for p in stream.pdus] == list(range(32))

    def test_same_seed_same_stream(self, carrier) -> None:
        assert carrier("tcp", n=20, iat="exponential:500", seed=9) == carrier("tcp", n=20, iat="exponential:500", seed=9)

    def test_constant_gaps(self, carrier) -> None:
        assert set(carrier("ipv6", n=10, iat="constant:1500").iats().tolist()) == {1500}

    def test_empty_carrier_rejected(self) -> None:
        with pytest.raises(ConfigurationError):
            make_carrier(get_schema("ipv4"), 0, "constant:1000", 0)

    @pytest.mark.parametrize("model", ["poisson:3", "constant:abc", "empirical:"])
    def test_bad_iat_model(self, model: str) -> None:
        with pytest.raises(ConfigurationError):
            parse_iat_model(model)

    def test_empirical_model(self, carrier) -> None:
        gaps = carrier("ipv4", n=200, iat="empirical:900,1100").iats()
        assert set(gaps.tolist()) <= {900, 1100}
