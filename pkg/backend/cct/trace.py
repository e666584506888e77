"""
Trace files (.cct)

Layout, all integers big-endian:
    magic "CCT1" | version u16 | schema json length u32 | schema json
    pdu count u32
    per PDU: seq u64 | timestamp u64 | flags u8 | header bits u32 | header bytes
             | option count u16 | (element id u16 | length u16 | value)*
             | payload length u32 | payload
"""

import logging
import struct
from pathlib import Path
from typing import List, Tuple, Union

import pandas as pd
from bitstring import Bits
from pydantic import ValidationError

from .errors import ParseError
from .protocol import Pdu, PduStream, ProtocolSchema
from .schemas import get_schema

logger = logging.getLogger(__name__)

MAGIC = b"CCT1"
VERSION = 1

FLAG_CORRUPTED = 0x01
FLAG_RETRANSMISSION = 0x02


def encode_trace(stream: PduStream) -> bytes:
    schema_json = stream.protocol.model_dump_json().encode("utf-8")
    out = [MAGIC, struct.pack(">HI", VERSION, len(schema_json)), schema_json, struct.pack(">I", len(stream.pdus))]
    for pdu in stream.pdus:
        flags = (FLAG_CORRUPTED if pdu.corrupted else 0) | (FLAG_RETRANSMISSION if pdu.retransmission else 0)
        header = pdu.header.tobytes()
        out.append(struct.pack(">QQBI", pdu.seq, pdu.timestamp, flags, len(pdu.header)))
        out.append(header)
        out.append(struct.pack(">H", len(pdu.options)))
        for element_id, value in pdu.options:
            out.append(struct.pack(">HH", element_id, len(value)))
            out.append(value)
        out.append(struct.pack(">I", len(pdu.payload)))
        out.append(pdu.payload)
    return b"".join(out)


class _Reader:
    """Cursor over trace bytes; every short read becomes a ParseError with its offset."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError(f"truncated trace while reading {what}", offset=self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_trace(data: bytes) -> PduStream:
    reader = _Reader(data)
    if reader.take(4, "magic") != MAGIC:
        raise ParseError("not a .cct trace (bad magic)", offset=0)
    version, schema_len = reader.unpack(">HI", "file header")
    if version != VERSION:
        raise ParseError(f"unsupported trace version {version}", offset=4)
    schema_offset = reader.pos
    try:
        schema = ProtocolSchema.model_validate_json(reader.take(schema_len, "schema"))
    except ValidationError as e:
        raise ParseError(f"invalid schema block: {e.errors()[0]['msg']}", offset=schema_offset) from None
    (count,) = reader.unpack(">I", "pdu count")
    pdus: List[Pdu] = []
    for index in range(count):
        record_offset = reader.pos
        seq, timestamp, flags, nbits = reader.unpack(">QQBI", f"pdu {index} record")
        if nbits != schema.header_bits:
            raise ParseError(f"pdu {index} header has {nbits} bits, schema expects {schema.header_bits}", offset=record_offset)
        header = Bits(bytes=reader.take((nbits + 7) // 8, f"pdu {index} header"), length=nbits) if nbits else Bits()
        (n_options,) = reader.unpack(">H", f"pdu {index} option count")
        options = []
        for _ in range(n_options):
            element_id, length = reader.unpack(">HH", f"pdu {index} option")
            options.append((element_id, reader.take(length, f"pdu {index} option value")))
        (payload_len,) = reader.unpack(">I", f"pdu {index} payload length")
        payload = reader.take(payload_len, f"pdu {index} payload")
        pdus.append(Pdu(
            protocol=schema,
            header=header,
            options=tuple(options),
            payload=payload,
            timestamp=timestamp,
            seq=seq,
            corrupted=bool(flags & FLAG_CORRUPTED),
            retransmission=bool(flags & FLAG_RETRANSMISSION),
        ))
    if reader.pos != len(data):
        raise ParseError("trailing bytes after last pdu", offset=reader.pos)
    return PduStream(protocol=schema, pdus=tuple(pdus))


# 轨迹保存/加载：二进制 .cct 格式，头部自描述协议结构
def save_trace(stream: PduStream, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_bytes(encode_trace(stream))
    logger.info("[trace][save] path=%s schema=%s pdus=%d", path, stream.protocol.name, len(stream))
    return path


def load_trace(path: Union[str, Path]) -> PduStream:
    path = Path(path)
    stream = decode_trace(path.read_bytes())
    logger.info("[trace][load] path=%s schema=%s pdus=%d", path, stream.protocol.name, len(stream))
    return stream


# ---------------------------------------------------------------------------
# Tabular view (CSV)
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ["schema", "seq", "timestamp", "header", "options", "payload", "corrupted", "retransmission"]


def trace_to_frame(stream: PduStream) -> pd.DataFrame:
    """One row per PDU; header, option values and payload as hex."""
    rows = [{
        "schema": stream.protocol.name,
        "seq": p.seq,
        "timestamp": p.timestamp,
        "header": p.header.tobytes().hex(),
        "options": ";".join(f"{eid}:{value.hex()}" for eid, value in p.options),
        "payload": p.payload.hex(),
        "corrupted": int(p.corrupted),
        "retransmission": int(p.retransmission),
    } for p in stream.pdus]
    if not rows:
        # schema-only row, so an empty trace still names its schema
        rows = [{"schema": stream.protocol.name}]
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)


def trace_from_frame(df: pd.DataFrame) -> PduStream:
    missing = [c for c in TRACE_COLUMNS if c not in df.columns]
    if missing:
        raise ParseError(f"trace table lacks columns {missing}")
    names = df["schema"].unique()
    if not len(names):
        raise ParseError("trace table names no schema")
    if len(names) != 1:
        raise ParseError(f"trace table mixes schemas {sorted(names)}")
    schema = get_schema(str(names[0]))
    pdus = []
    for index, row in enumerate(df.itertuples(index=False), start=2):
        if pd.isna(row.seq) or row.seq == "":
            continue
        try:
            options = tuple(
                (int(eid), bytes.fromhex(value))
                for eid, _, value in (item.partition(":") for item in str(row.options).split(";") if item)
            )
            pdus.append(Pdu(
                protocol=schema,
                header=Bits(bytes=bytes.fromhex(str(row.header)), length=schema.header_bits),
                options=options,
                payload=bytes.fromhex(str(row.payload)),
                timestamp=int(row.timestamp),
                seq=int(row.seq),
                corrupted=bool(int(row.corrupted)),
                retransmission=bool(int(row.retransmission)),
            ))
        except (ValueError, ValidationError) as e:
            raise ParseError(f"bad trace row: {e}", line=index) from None
    return PduStream(protocol=schema, pdus=tuple(pdus))


# 格式转换：按扩展名在 .cct 与 .csv 之间互转
def convert_trace(source: Union[str, Path], target: Union[str, Path]) -> Path:
    source, target = Path(source), Path(target)
    if source.suffix == ".csv":
        df = pd.read_csv(source, dtype=str, keep_default_na=False)
        stream = trace_from_frame(df)
    else:
        stream = load_trace(source)
    if target.suffix == ".csv":
        trace_to_frame(stream).to_csv(target, index=False)
        logger.info("[trace][convert] %s -> %s pdus=%d", source, target, len(stream))
        return target
    return save_trace(stream, target)
