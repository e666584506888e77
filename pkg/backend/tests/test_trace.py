"""
Trace file tests

Binary .cct layout, parse errors with offsets, CSV conversion.
"""

from __future__ import annotations

from pathlib import Path

import pytest

from cct.errors import ParseError
from cct.protocol import PduStream
from cct.schemas import get_schema
from cct.trace import (
    MAGIC,
    convert_trace,
    decode_trace,
    encode_trace,
    load_trace,
    save_trace,
    trace_from_frame,
    trace_to_frame,
)

# =============================================================================
# Binary format
# =============================================================================


class TestBinaryTrace:
    """encode/decode of .cct files."""

    @pytest.mark.parametrize("schema", ["ipv4", "dhcp", "http"])
    def test_save_load_identity(self, carrier, tmp_path: Path, schema: str) -> None:
        stream = carrier(schema, n=12, iat="exponential:800", seed=4)
        path = save_trace(stream, tmp_path / "flow.cct")
        assert load_trace(path) == stream

    def test_flags_survive(self, carrier) -> None:
        stream = carrier("tcp", n=3)
        marked = stream.replace_pdus([stream.pdus[0].replace(corrupted=True), stream.pdus[1],
                                      stream.pdus[1].replace(retransmission=True, timestamp=1500)])
        decoded = decode_trace(encode_trace(marked))
        assert [p.corrupted for p in decoded.pdus] == [True, False, False]
        assert [p.retransmission for p in decoded.pdus] == [False, False, True]

    def test_starts_with_magic(self, carrier) -> None:
        assert encode_trace(carrier("ipv4", n=1)).startswith(MAGIC)

    def test_bad_magic(self) -> None:
        with pytest.raises(ParseError) as err:
            decode_trace(b"PCAP0000")
        assert err.value.offset == 0

    def test_truncated(self, carrier) -> None:
        data = encode_trace(carrier("ipv4", n=4))
        with pytest.raises(ParseError) as err:
            decode_trace(data[:-10])
        assert err.value.offset is not None
        assert err.value.offset <= len(data) - 10

    def test_trailing_bytes(self, carrier) -> None:
        data = encode_trace(carrier("ipv4", n=2))
        with pytest.raises(ParseError, match="trailing"):
            decode_trace(data + b"\x00")


# =============================================================================
# CSV conversion
# =============================================================================


class TestCsvConversion:
    """trace convert between .cct and .csv."""

    @pytest.mark.parametrize("schema", ["ipv6", "tcp", "http"])
    def test_csv_and_back(self, carrier, tmp_path: Path, schema: str) -> None:
        stream = carrier(schema, n=8, iat="exponential:1000", seed=2)
        source = save_trace(stream, tmp_path / "a.cct")
        convert_trace(source, tmp_path / "a.csv")
        convert_trace(tmp_path / "a.csv", tmp_path / "b.cct")
        assert load_trace(tmp_path / "b.cct") == stream

    def test_missing_column(self, tmp_path: Path) -> None:
        path = tmp_path / "bad.csv"
        path.write_text("schema,seq\nipv4_like,0\n", encoding="utf-8")
        with pytest.raises(ParseError, match="columns"):
            convert_trace(path, tmp_path / "out.cct")

    def test_empty_trace_and_back(self, tmp_path: Path) -> None:
        empty = PduStream(protocol=get_schema("ipv4"), pdus=())
        source = save_trace(empty, tmp_path / "empty.cct")
        convert_trace(source, tmp_path / "empty.csv")
        convert_trace(tmp_path / "empty.csv", tmp_path / "back.cct")
        assert (tmp_path / "back.cct").read_bytes() == source.read_bytes()
        assert trace_from_frame(trace_to_frame(empty)) == empty

    def test_headers_only(self, tmp_path: Path) -> None:
        path = tmp_path / "bare.csv"
        path.write_text("schema,seq,timestamp,header,options,payload,corrupted,retransmission\n", encoding="utf-8")
        with pytest.raises(ParseError, match="no schema"):
            convert_trace(path, tmp_path / "out.cct")
