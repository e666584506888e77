"""
Covert channel pattern catalog
Pattern identities, hierarchy, categorization, technique counts and export
"""

import io
import logging
import xml.etree.ElementTree as ET
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigurationError, ParseError

logger = logging.getLogger(__name__)


class PatternId(str, Enum):
    P1_Size = "P1"
    P2_Sequence = "P2"
    P2a_Position = "P2a"
    P2b_NumElements = "P2b"
    P3_AddRedundancy = "P3"
    P4_CorruptionLoss = "P4"
    P5_RandomValue = "P5"
    P6_ValueModulation = "P6"
    P6a_Case = "P6a"
    P6b_LSB = "P6b"
    P7_ReservedUnused = "P7"
    P8_InterArrivalTime = "P8"
    P9_Rate = "P9"
    P10_PduOrder = "P10"
    P11_Retransmission = "P11"

    @classmethod
    def parse(cls, text: Union[str, "PatternId"]) -> "PatternId":
        """Accept 'P6b', 'P6.b', 'p6b' or the member name 'P6b_LSB'."""
        if isinstance(text, PatternId):
            return text
        key = str(text).strip().replace(".", "")
        for member in cls:
            if key.lower() in (member.value.lower(), member.name.lower()):
                return member
        raise ConfigurationError(f"unknown pattern '{text}'")


class Semantic(str, Enum):
    PRESERVING = "Preserving"
    MODIFYING = "Modifying"
    CONDITIONAL = "Conditional"


class Syntax(str, Enum):
    PRESERVING = "Preserving"
    MODIFYING = "Modifying"
    NOT_APPLICABLE = "NotApplicable"


class Noise(str, Enum):
    NOISY = "Noisy"
    NOISELESS = "Noiseless"
    CONDITIONAL = "Conditional"


class PatternDescriptor(BaseModel):
    """One catalog entry, attribute names match the exported markup tags."""

    model_config = ConfigDict(frozen=True)

    id: PatternId
    name: str = Field(..., min_length=1)
    alias: str = ""
    parent: Optional[PatternId] = Field(default=None, description="Parent pattern for child patterns")
    illustration: str = ""
    context_path: Tuple[str, ...] = Field(..., description="Hierarchy labels from the root category down")
    semantic: Semantic
    syntax: Syntax
    noise: Noise
    evidence_count: int = Field(..., ge=0)
    evidence_reconstructed: bool = Field(default=False, description="Count derived from the cited evidence items")
    footnotes: Tuple[str, ...] = ()

    @property
    def is_timing(self) -> bool:
        return self.context_path[0] == TIMING


STORAGE = "Network Covert Storage Channels"
TIMING = "Network Covert Timing Channels"
NON_PAYLOAD = "Modification of Non-Payload"
STRUCTURE_MODIFYING = (STORAGE, NON_PAYLOAD, "Structure Modifying")
ATTRIBUTE = (STORAGE, NON_PAYLOAD, "Structure Preserving", "Modification of an Attribute")

# Label a parent pattern contributes to its children's context path
HIERARCHY_LABELS = {PatternId.P2_Sequence: "Sequence", PatternId.P6_ValueModulation: "Value Modulation"}

FOOTNOTES: Dict[str, str] = {
    "a": "The semantic of Sequence and Position patterns is only preserved if an utilized element's position "
         "or the sequence of elements have no effect on the PDU's semantic.",
    "b": "Fragmentation can cause noise for channels using the Size Modulation pattern since routers can "
         "fragment large packets into multiple smaller packets.",
    "c": "The semantic of a PDU can change if the covert channel modifies currently unused elements (e.g. a set "
         "DF flag in the IPv4 header would prevent fragmentation). On the other hand, a utilization of currently "
         "unused elements can preserve the semantic, e.g. if the covert channel sets the MF flag in IPv4 to zero, "
         "the modification of the Fragment Offset will not lead to a changed semantic.",
    "d": "If the channel utilizes a protocol that provides packet sorting at the receiver side, the PDU Order "
         "pattern can preserve the semantic of the data transfer, otherwise it can change the semantic.",
    "e": "Intentionally corrupted PDUs are not interpreted and thus do neither change nor preserve the semantic "
         "of a PDU.",
    "f": "A value modulation can lead to noise (e.g. if the IP TTL is used) but can also be noiseless (e.g. if "
         "the source address is modulated).",
}

S, Sy, N = Semantic, Syntax, Noise

# id, name, alias, parent, context, semantic, syntax, noise, techniques, reconstructed, footnote keys, illustration
_CATALOG_ROWS = [
    (PatternId.P1_Size, "Size Modulation", "", None, STRUCTURE_MODIFYING,
     S.PRESERVING, Sy.MODIFYING, N.NOISELESS, 6, True, "b",
     "Encodes data in the size of a header element or of the whole PDU."),
    (PatternId.P2_Sequence, "Sequence", "", None, STRUCTURE_MODIFYING,
     S.PRESERVING, Sy.MODIFYING, N.NOISELESS, 3, True, "a",
     "Encodes data in the order of header or PDU elements."),
    (PatternId.P2a_Position, "Position", "", PatternId.P2_Sequence, STRUCTURE_MODIFYING + ("Sequence",),
     S.PRESERVING, Sy.MODIFYING, N.NOISELESS, 1, True, "a",
     "Encodes data in the position of one given element inside an element list."),
    (PatternId.P2b_NumElements, "Number of Elements", "", PatternId.P2_Sequence, STRUCTURE_MODIFYING + ("Sequence",),
     S.PRESERVING, Sy.MODIFYING, N.NOISELESS, 2, True, "",
     "Encodes data in how many elements a PDU carries."),
    (PatternId.P3_AddRedundancy, "Add Redundancy", "", None, STRUCTURE_MODIFYING,
     S.PRESERVING, Sy.MODIFYING, N.NOISELESS, 21, False, "",
     "Creates new space inside a header element or PDU and fills it with data."),
    (PatternId.P4_CorruptionLoss, "PDU Corruption/Loss", "", None, STRUCTURE_MODIFYING,
     S.CONDITIONAL, Sy.MODIFYING, N.NOISY, 3, True, "e",
     "Signals data through deliberately corrupted or dropped PDUs."),
    (PatternId.P5_RandomValue, "Random Value", "", None, ATTRIBUTE,
     S.PRESERVING, Sy.PRESERVING, N.NOISELESS, 10, False, "",
     "Replaces a header element that normally holds a random value."),
    (PatternId.P6_ValueModulation, "Value Modulation", "", None, ATTRIBUTE,
     S.MODIFYING, Sy.PRESERVING, N.CONDITIONAL, 13, True, "f",
     "Picks one of n legal values of a header element per symbol."),
    (PatternId.P6a_Case, "Case", "", PatternId.P6_ValueModulation, ATTRIBUTE + ("Value Modulation",),
     S.PRESERVING, Sy.PRESERVING, N.NOISELESS, 2, True, "",
     "Encodes data in upper/lower case letters of textual header elements."),
    (PatternId.P6b_LSB, "Least Significant Bit (LSB)", "", PatternId.P6_ValueModulation, ATTRIBUTE + ("Value Modulation",),
     S.MODIFYING, Sy.PRESERVING, N.NOISY, 6, True, "",
     "Encodes data in the low-order bits of numeric header elements."),
    (PatternId.P7_ReservedUnused, "Reserved/Unused", "", None, ATTRIBUTE,
     S.CONDITIONAL, Sy.PRESERVING, N.NOISELESS, 24, False, "c",
     "Writes data into reserved or unused header bits."),
    (PatternId.P8_InterArrivalTime, "Inter-arrival Time", "", None, (TIMING,),
     S.PRESERVING, Sy.NOT_APPLICABLE, N.NOISY, 8, True, "",
     "Encodes data in the gaps between consecutive PDUs."),
    (PatternId.P9_Rate, "Rate", "Throughput Pattern", None, (TIMING,),
     S.PRESERVING, Sy.NOT_APPLICABLE, N.NOISY, 2, True, "",
     "Encodes data in the data rate of a flow."),
    (PatternId.P10_PduOrder, "PDU Order", "", None, (TIMING,),
     S.CONDITIONAL, Sy.NOT_APPLICABLE, N.NOISY, 6, True, "d",
     "Encodes data in a synthetic order of a group of PDUs."),
    (PatternId.P11_Retransmission, "Re-Transmission", "", None, (TIMING,),
     S.PRESERVING, Sy.NOT_APPLICABLE, N.NOISY, 2, True, "",
     "Encodes data by re-sending selected PDUs."),
]


# 加载内置目录：15 个条目（11 个主模式 + 4 个子模式）
def load_catalog() -> List[PatternDescriptor]:
    descriptors = []
    for (pid, name, alias, parent, context, semantic, syntax, noise, count, reconstructed, notes,
         illustration) in _CATALOG_ROWS:
        descriptors.append(PatternDescriptor(
            id=pid, name=name, alias=alias, parent=parent, illustration=illustration,
            context_path=context, semantic=semantic, syntax=syntax, noise=noise,
            evidence_count=count, evidence_reconstructed=reconstructed,
            footnotes=tuple(FOOTNOTES[k] for k in notes),
        ))
    return descriptors


def descriptor(pattern: Union[str, PatternId]) -> PatternDescriptor:
    pid = PatternId.parse(pattern)
    for d in load_catalog():
        if d.id is pid:
            return d
    raise ConfigurationError(f"pattern {pid.value} missing from catalog")


def check_hierarchy(descriptors: List[PatternDescriptor]) -> List[str]:
    """Return hierarchy problems; empty when the catalog forms a consistent tree."""
    by_id = {d.id: d for d in descriptors}
    problems = []
    for d in descriptors:
        if d.context_path[0] not in (STORAGE, TIMING):
            problems.append(f"{d.id.value}: root '{d.context_path[0]}' is neither storage nor timing")
        if (d.syntax is Syntax.NOT_APPLICABLE) != d.is_timing:
            problems.append(f"{d.id.value}: syntax NotApplicable must match timing patterns")
        if d.parent is None:
            continue
        parent = by_id.get(d.parent)
        if parent is None:
            problems.append(f"{d.id.value}: parent {d.parent.value} not in catalog")
        elif parent.parent is not None:
            problems.append(f"{d.id.value}: parent {d.parent.value} is itself a child")
        elif d.context_path != parent.context_path + (HIERARCHY_LABELS.get(parent.id, parent.name),):
            problems.append(f"{d.id.value}: context does not extend parent {parent.id.value}")
    return problems


class CatalogStats(BaseModel):
    total_techniques: int
    pattern_count: int
    top4_coverage_fraction: float
    top4: Tuple[PatternId, ...]
    per_pattern_counts: Dict[PatternId, int] = Field(..., description="Top-level patterns, children folded in")
    per_descriptor_counts: Dict[PatternId, int] = Field(..., description="Every catalog entry on its own")


def catalog_stats(descriptors: Optional[List[PatternDescriptor]] = None) -> CatalogStats:
    descriptors = descriptors or load_catalog()
    folded: Dict[PatternId, int] = {}
    for d in descriptors:
        if d.parent is None:
            folded[d.id] = folded.get(d.id, 0) + d.evidence_count
    for d in descriptors:
        if d.parent is not None:
            folded[d.parent] = folded.get(d.parent, 0) + d.evidence_count
    total = sum(folded.values())
    top4 = sorted(folded, key=lambda pid: folded[pid], reverse=True)[:4]
    return CatalogStats(
        total_techniques=total,
        pattern_count=len(folded),
        top4_coverage_fraction=sum(folded[p] for p in top4) / total if total else 0.0,
        top4=tuple(top4),
        per_pattern_counts=folded,
        per_descriptor_counts={d.id: d.evidence_count for d in descriptors},
    )


# ---------------------------------------------------------------------------
# Export / import
# ---------------------------------------------------------------------------

PATH_SEPARATOR = " > "
TABLE_COLUMNS = ["pattern id", "name", "alias", "parent", "illustration", "context", "semantic", "syntax",
                 "noise", "evidence", "reconstructed", "footnotes"]


def _to_markup(descriptors: List[PatternDescriptor]) -> bytes:
    root = ET.Element("catalog", {"format": "cct-catalog-1"})
    for d in descriptors:
        record = ET.SubElement(root, "pattern", {"id": d.id.value})
        ET.SubElement(record, "name").text = d.name
        ET.SubElement(record, "alias").text = d.alias
        if d.parent is not None:
            ET.SubElement(record, "parent").text = d.parent.value
        ET.SubElement(record, "illustration").text = d.illustration
        context = ET.SubElement(record, "context")
        for label in d.context_path:
            ET.SubElement(context, "category").text = label
        ET.SubElement(record, "categorization", {
            "semantic": d.semantic.value, "syntax": d.syntax.value, "noise": d.noise.value})
        ET.SubElement(record, "evidence", {
            "count": str(d.evidence_count), "reconstructed": str(d.evidence_reconstructed).lower()})
        for note in d.footnotes:
            ET.SubElement(record, "note").text = note
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def _from_markup(data: bytes) -> List[PatternDescriptor]:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as e:
        raise ParseError(f"catalog markup is not well formed: {e}") from None
    descriptors = []
    for index, record in enumerate(root.findall("pattern")):
        label = record.get("id") or f"#{index}"
        try:
            name = record.findtext("name")
            if not name:
                raise ValueError("missing required 'name'")
            cat = record.find("categorization")
            evidence = record.find("evidence")
            context = record.find("context")
            if cat is None or evidence is None or context is None:
                raise ValueError("missing categorization, evidence or context")
            parent = record.findtext("parent")
            descriptors.append(PatternDescriptor(
                id=PatternId.parse(record.get("id")),
                name=name,
                alias=record.findtext("alias") or "",
                parent=PatternId.parse(parent) if parent else None,
                illustration=record.findtext("illustration") or "",
                context_path=tuple(c.text or "" for c in context.findall("category")),
                semantic=cat.get("semantic"),
                syntax=cat.get("syntax"),
                noise=cat.get("noise"),
                evidence_count=int(evidence.get("count")),
                evidence_reconstructed=evidence.get("reconstructed") == "true",
                footnotes=tuple(n.text or "" for n in record.findall("note")),
            ))
        except (ValueError, TypeError, ConfigurationError, ValidationError) as e:
            raise ParseError(f"bad pattern record: {e}", record=label) from None
    return descriptors


def _to_frame(descriptors: List[PatternDescriptor]) -> pd.DataFrame:
    rows = []
    for d in descriptors:
        rows.append({
            "pattern id": d.id.value,
            "name": d.name,
            "alias": d.alias,
            "parent": d.parent.value if d.parent else "",
            "illustration": d.illustration,
            "context": PATH_SEPARATOR.join(d.context_path),
            "semantic": d.semantic.value,
            "syntax": d.syntax.value,
            "noise": d.noise.value,
            "evidence": d.evidence_count,
            "reconstructed": "yes" if d.evidence_reconstructed else "no",
            "footnotes": "|".join(d.footnotes),
        })
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)


def _from_frame(df: pd.DataFrame) -> List[PatternDescriptor]:
    missing = [c for c in ("pattern id", "name", "context", "semantic", "syntax", "noise", "evidence") if c not in df.columns]
    if missing:
        raise ParseError(f"catalog table lacks columns {missing}")
    descriptors = []
    for index, row in df.iterrows():
        label = str(row.get("pattern id") or f"row {index}")
        try:
            if not str(row["name"]).strip():
                raise ValueError("missing required 'name'")
            descriptors.append(PatternDescriptor(
                id=PatternId.parse(row["pattern id"]),
                name=str(row["name"]),
                alias=str(row.get("alias", "")),
                parent=PatternId.parse(row["parent"]) if str(row.get("parent", "")).strip() else None,
                illustration=str(row.get("illustration", "")),
                context_path=tuple(str(row["context"]).split(PATH_SEPARATOR)),
                semantic=row["semantic"],
                syntax=row["syntax"],
                noise=row["noise"],
                evidence_count=int(row["evidence"]),
                evidence_reconstructed=str(row.get("reconstructed", "no")) == "yes",
                footnotes=tuple(n for n in str(row.get("footnotes", "")).split("|") if n),
            ))
        except (ValueError, TypeError, ConfigurationError, ValidationError) as e:
            raise ParseError(f"bad pattern row: {e}", record=label) from None
    return descriptors


def export_catalog(fmt: str = "structured-markup", descriptors: Optional[List[PatternDescriptor]] = None) -> bytes:
    """Serialize the catalog as XML, CSV ('tabular') or an xlsx workbook ('spreadsheet')."""
    descriptors = descriptors or load_catalog()
    if fmt in ("structured-markup", "xml"):
        return _to_markup(descriptors)
    if fmt in ("tabular", "csv"):
        return _to_frame(descriptors).to_csv(index=False).encode("utf-8")
    if fmt in ("spreadsheet", "xlsx"):
        buffer = io.BytesIO()
        with pd.ExcelWriter(buffer, engine="openpyxl") as writer:
            _to_frame(descriptors).to_excel(writer, sheet_name="patterns", index=False)
        return buffer.getvalue()
    raise ConfigurationError(f"unknown catalog format '{fmt}'")


def import_catalog(data: bytes) -> List[PatternDescriptor]:
    """Inverse of export_catalog; the format is sniffed from the leading bytes."""
    head = data.lstrip()[:5]
    if head.startswith(b"<"):
        descriptors = _from_markup(data)
    elif head.startswith(b"PK"):
        df = pd.read_excel(io.BytesIO(data), sheet_name="patterns", dtype=str, keep_default_na=False, engine="openpyxl")
        descriptors = _from_frame(df)
    else:
        try:
            df = pd.read_csv(io.StringIO(data.decode("utf-8")), dtype=str, keep_default_na=False)
        except (UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise ParseError(f"catalog table unreadable: {e}") from None
        descriptors = _from_frame(df)
    logger.info("[catalog][import] records=%d", len(descriptors))
    return descriptors
