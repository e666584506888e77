"""
Built-in protocol schemas and the declarative schema file loader
"""

import logging
import shlex
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import ValidationError

from .errors import ConfigurationError, ParseError
from .protocol import FieldKind, FieldSpec, OptionsSpec, ProtocolSchema

logger = logging.getLogger(__name__)

K = FieldKind


def _f(name: str, offset: int, length: int, kind: FieldKind, **extra) -> FieldSpec:
    return FieldSpec(name=name, offset=offset, length=length, kind=kind, **extra)


IPV4_LIKE = ProtocolSchema(
    name="ipv4_like",
    header_bits=160,
    default_payload=64,
    fields=(
        _f("version", 0, 4, K.ENUMERATED, legal_values=(4,)),
        _f("ihl", 4, 4, K.LENGTH, length_of="header", unit=4),
        _f("tos", 8, 8, K.ENUMERATED, legal_values=(0, 32, 40, 72, 104, 136, 184)),
        _f("total_length", 16, 16, K.LENGTH, length_of="total"),
        _f("identifier", 32, 16, K.RANDOM),
        _f("flag_reserved", 48, 1, K.RESERVED),
        _f("flag_df", 49, 1, K.ENUMERATED, legal_values=(0, 1), default=1),
        _f("flag_mf", 50, 1, K.ENUMERATED, legal_values=(0, 1), default=0),
        _f("fragment_offset", 51, 13, K.ENUMERATED, legal_values=(0,)),
        _f("ttl", 64, 8, K.DECREMENTING, value_range=(1, 255), default=64),
        _f("protocol", 72, 8, K.ENUMERATED, legal_values=(1, 6, 17), default=6),
        _f("checksum", 80, 16, K.CHECKSUM, coverage=(0, 160)),
        _f("src", 96, 32, K.ADDRESS, default=0xC0A80002),
        _f("dst", 128, 32, K.ADDRESS, default=0xC0A80101),
    ),
    options=OptionsSpec(
        # NOP, record route, timestamp, security, stream id, router alert
        element_ids=(1, 7, 68, 130, 136, 148),
        min_count=0,
        max_count=10,
        max_total_bytes=40,
        max_element_bytes=38,
    ),
)

IPV6_LIKE = ProtocolSchema(
    name="ipv6_like",
    header_bits=320,
    default_payload=64,
    fields=(
        _f("version", 0, 4, K.ENUMERATED, legal_values=(6,)),
        _f("traffic_class", 4, 8, K.ENUMERATED, legal_values=(0, 32, 40, 72, 104, 136, 184)),
        _f("flow_label", 12, 20, K.RANDOM),
        _f("payload_length", 32, 16, K.LENGTH, length_of="body"),
        _f("next_header", 48, 8, K.ENUMERATED, legal_values=(0, 6, 17, 43, 58, 59, 60), default=0),
        _f("hop_limit", 56, 8, K.DECREMENTING, value_range=(1, 255), default=64),
        _f("src", 64, 128, K.ADDRESS, default=0x20010DB8000000000000000000000002),
        _f("dst", 192, 128, K.ADDRESS, default=0x20010DB8000000000000000000000101),
    ),
    options=OptionsSpec(
        # hop-by-hop, routing, fragment, destination options, mobility
        element_ids=(0, 43, 44, 60, 135),
        min_count=0,
        max_count=8,
        max_total_bytes=256,
        defaults=((0, b"\x00\x00\x00\x00\x00\x00"), (43, b"\x00\x00\x00\x00\x00\x00"), (60, b"\x01\x04\x00\x00\x00\x00")),
    ),
)

TCP_LIKE = ProtocolSchema(
    name="tcp_like",
    header_bits=160,
    default_payload=32,
    fields=(
        _f("src_port", 0, 16, K.ADDRESS, default=49152),
        _f("dst_port", 16, 16, K.ADDRESS, default=80),
        _f("seq", 32, 32, K.RANDOM),
        _f("ack", 64, 32, K.SEQUENTIAL),
        _f("data_offset", 96, 4, K.LENGTH, length_of="header", unit=4),
        _f("reserved", 100, 4, K.RESERVED),
        _f("flags", 104, 8, K.ENUMERATED, legal_values=(0x02, 0x10, 0x11, 0x12, 0x18, 0x04), default=0x18),
        _f("window", 112, 16, K.ENUMERATED, legal_values=(8192, 29200, 64240, 65535), default=64240),
        _f("checksum", 128, 16, K.CHECKSUM, coverage=(0, 160)),
        _f("urgent_pointer", 144, 16, K.RESERVED),
    ),
    options=OptionsSpec(
        # NOP, MSS, window scale, SACK permitted, timestamps, experimental
        element_ids=(1, 2, 3, 4, 8, 254),
        min_count=0,
        max_count=12,
        max_total_bytes=40,
        max_element_bytes=38,
        defaults=((2, b"\x05\xb4"), (4, b""), (8, b"\x00\x00\x00\x01\x00\x00\x00\x00"), (3, b"\x07")),
    ),
)

DHCP_LIKE = ProtocolSchema(
    name="dhcp_like",
    header_bits=1888,
    default_payload=0,
    fields=(
        _f("op", 0, 8, K.ENUMERATED, legal_values=(1, 2), default=1),
        _f("htype", 8, 8, K.ENUMERATED, legal_values=(1,)),
        _f("hlen", 16, 8, K.ENUMERATED, legal_values=(6,)),
        _f("hops", 24, 8, K.ENUMERATED, legal_values=(0,)),
        _f("xid", 32, 32, K.RANDOM),
        _f("secs", 64, 16, K.RANDOM),
        _f("flag_broadcast", 80, 1, K.ENUMERATED, legal_values=(0, 1), default=0),
        _f("flags_reserved", 81, 15, K.RESERVED),
        _f("ciaddr", 96, 32, K.ADDRESS, default=0),
        _f("yiaddr", 128, 32, K.ADDRESS, default=0),
        _f("siaddr", 160, 32, K.ADDRESS, default=0),
        _f("giaddr", 192, 32, K.ADDRESS, default=0),
        _f("chaddr", 224, 48, K.ADDRESS, default=0x02005E10000A),
        _f("chaddr_pad", 272, 80, K.PADDING),
        _f("sname", 352, 512, K.PADDING),
        _f("file", 864, 1024, K.PADDING),
    ),
    options=OptionsSpec(
        # pad, hostname, requested ip, lease time, message type, parameter list, vendor class, client id, end-user
        element_ids=(0, 12, 50, 51, 53, 55, 60, 61, 224),
        min_count=1,
        max_count=24,
        max_total_bytes=312,
        defaults=(
            (53, b"\x01"),
            (61, b"\x01\x02\x00\x5e\x10\x00\x0a"),
            (50, b"\xc0\xa8\x01\x64"),
            (12, b"sensor-04"),
            (55, b"\x01\x03\x06\x0f"),
            (60, b"udhcp 1.36"),
        ),
    ),
)

HTTP_TOKENS = (
    "Host", "User-Agent", "Accept", "Accept-Language", "Accept-Encoding", "Connection",
    "Cache-Control", "Referer", "Cookie", "X-Request-Id", "DNT",
)

HTTP_LIKE = ProtocolSchema(
    name="http_like",
    header_bits=0,
    textual=True,
    tokens=HTTP_TOKENS,
    default_payload=0,
    options=OptionsSpec(
        element_ids=tuple(range(len(HTTP_TOKENS))),
        min_count=1,
        max_count=24,
        max_total_bytes=8192,
        max_element_bytes=4096,
        defaults=(
            (0, b"Host: intranet.example"),
            (1, b"User-Agent: Mozilla/5.0 (X11; Linux x86_64)"),
            (2, b"Accept: text/html,application/xhtml+xml"),
            (3, b"Accept-Language: en-US,en;q=0.8"),
            (5, b"Connection: keep-alive"),
        ),
    ),
)

SCHEMAS: Dict[str, ProtocolSchema] = {
    s.name: s for s in (IPV4_LIKE, IPV6_LIKE, TCP_LIKE, DHCP_LIKE, HTTP_LIKE)
}

# Short names used in settings files (settings.ipv4.Offset=32)
ALIASES: Dict[str, str] = {
    "ipv4": "ipv4_like",
    "ipv6": "ipv6_like",
    "tcp": "tcp_like",
    "dhcp": "dhcp_like",
    "http": "http_like",
}


def resolve_schema_name(name: str) -> str:
    return ALIASES.get(name, name)


def get_schema(name: str) -> ProtocolSchema:
    try:
        return SCHEMAS[resolve_schema_name(name)]
    except KeyError:
        raise ConfigurationError(f"unknown schema '{name}', known: {', '.join(sorted(SCHEMAS))}") from None


def register_schema(schema: ProtocolSchema, alias: Optional[str] = None) -> ProtocolSchema:
    existing = SCHEMAS.get(schema.name)
    if existing is not None and existing != schema:
        raise ConfigurationError(f"schema {schema.name} is already registered with a different layout")
    SCHEMAS[schema.name] = schema
    if alias:
        ALIASES[alias] = schema.name
    logger.info("[schema][register] name=%s fields=%d textual=%s", schema.name, len(schema.fields), schema.textual)
    return schema


def _parse_range(text: str) -> tuple:
    lo, _, hi = text.partition("..")
    return int(lo, 0), int(hi, 0)


def _parse_field_line(parts: List[str]) -> FieldSpec:
    # field <name> <offset> <length> <Kind> [key=value ...]
    name, offset, length, kind = parts[1], int(parts[2]), int(parts[3]), FieldKind(parts[4])
    extra: Dict[str, object] = {}
    for token in parts[5:]:
        key, _, value = token.partition("=")
        if key == "values":
            extra["legal_values"] = tuple(int(v, 0) for v in value.split(","))
        elif key == "range":
            extra["value_range"] = _parse_range(value)
        elif key == "covers":
            extra["coverage"] = _parse_range(value)
        elif key == "of":
            extra["length_of"] = value
        elif key == "unit":
            extra["unit"] = int(value)
        elif key == "default":
            extra["default"] = int(value, 0)
        else:
            raise ValueError(f"unknown field attribute '{key}'")
    return FieldSpec(name=name, offset=offset, length=length, kind=kind, **extra)


def _parse_options_line(parts: List[str]) -> Dict[str, object]:
    # options ids=1,7,68 min=0 max=10 max_total=40 [overhead=2] [max_element=38]
    keys = {"min": "min_count", "max": "max_count", "max_total": "max_total_bytes",
            "overhead": "element_overhead", "max_element": "max_element_bytes"}
    spec: Dict[str, object] = {}
    for token in parts[1:]:
        key, _, value = token.partition("=")
        if key == "ids":
            spec["element_ids"] = tuple(int(v, 0) for v in value.split(","))
        elif key in keys:
            spec[keys[key]] = int(value)
        else:
            raise ValueError(f"unknown options attribute '{key}'")
    return spec


# 协议描述文件解析：name/header_bits/field/options/token 行，# 开头为注释
def load_schema_file(path: Union[str, Path], register: bool = True) -> ProtocolSchema:
    """Parse a declarative schema file.

    Example:
        name = bacnet_like
        header_bits = 48
        field version 0 8 Enumerated values=1
        field hop_count 8 8 Decrementing range=1..255 default=255
        options ids=1,2 min=0 max=4 max_total=32
    """
    path = Path(path)
    header: Dict[str, object] = {}
    fields: List[FieldSpec] = []
    options: Optional[Dict[str, object]] = None
    defaults: List[tuple] = []
    tokens: List[str] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if "=" in line and not line.startswith(("field ", "options ", "element ", "token ")):
                key, _, value = (s.strip() for s in line.partition("="))
                if key == "name":
                    header["name"] = value
                elif key in ("header_bits", "default_payload"):
                    header[key] = int(value)
                elif key == "textual":
                    header["textual"] = value.lower() in ("1", "true", "yes")
                else:
                    raise ValueError(f"unknown key '{key}'")
                continue
            parts = shlex.split(line)
            if parts[0] == "field":
                fields.append(_parse_field_line(parts))
            elif parts[0] == "options":
                options = _parse_options_line(parts)
            elif parts[0] == "element":
                # element <id> <hex value>
                defaults.append((int(parts[1], 0), bytes.fromhex(parts[2]) if len(parts) > 2 else b""))
            elif parts[0] == "token":
                tokens.append(parts[1])
                if len(parts) > 2:
                    defaults.append((len(tokens) - 1, f"{parts[1]}: {' '.join(parts[2:])}".encode("ascii")))
            else:
                raise ValueError(f"unknown directive '{parts[0]}'")
        except (ValueError, IndexError, ValidationError) as e:
            raise ParseError(f"schema file {path.name}: {e}", line=lineno) from None
    try:
        if header.get("textual") and options is None:
            options = {"element_ids": tuple(range(len(tokens))), "max_count": max(len(tokens), 1) * 2,
                       "max_total_bytes": 8192, "max_element_bytes": 4096, "min_count": 1 if defaults else 0}
        if options is not None:
            options["defaults"] = tuple(defaults)
        schema = ProtocolSchema(
            fields=tuple(fields),
            tokens=tuple(tokens),
            options=OptionsSpec(**options) if options is not None else None,
            **header,
        )
    except (ValidationError, TypeError) as e:
        raise ParseError(f"schema file {path.name} is inconsistent: {e}") from None
    return register_schema(schema) if register else schema
