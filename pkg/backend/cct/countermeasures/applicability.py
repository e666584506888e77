"""
Countermeasure applicability per pattern
TN = traffic normalization, NPRC = network pump and related concepts,
SA/ML = statistical approaches / machine learning.
"""

from typing import Dict, FrozenSet, Union

from pydantic import BaseModel, ConfigDict

from ..catalog import PatternId

TN = "TN"
TN_LIMITED = "TN (limited)"
NPRC = "NPRC"
SA_ML = "SA/ML"


class Applicability(BaseModel):
    model_config = ConfigDict(frozen=True)

    pattern: PatternId
    elimination: FrozenSet[str] = frozenset()
    limitation: FrozenSet[str] = frozenset()
    detection: FrozenSet[str] = frozenset()

    def as_row(self) -> Dict[str, object]:
        return {
            "pattern": self.pattern.value,
            "elimination": sorted(self.elimination),
            "limitation": sorted(self.limitation),
            "detection": sorted(self.detection),
        }


def _row(pattern: PatternId, elimination=(), limitation=()) -> Applicability:
    return Applicability(pattern=pattern, elimination=frozenset(elimination), limitation=frozenset(limitation),
                         detection=frozenset({SA_ML}))


P = PatternId

TABLE: Dict[PatternId, Applicability] = {
    row.pattern: row for row in (
        _row(P.P1_Size),
        _row(P.P2_Sequence, elimination=[TN]),
        _row(P.P2a_Position, elimination=[TN]),
        _row(P.P2b_NumElements, elimination=[TN]),
        _row(P.P3_AddRedundancy, elimination=[TN]),
        _row(P.P4_CorruptionLoss, elimination=[TN]),
        _row(P.P5_RandomValue, elimination=[TN]),
        _row(P.P6_ValueModulation, limitation=[TN_LIMITED, NPRC]),
        _row(P.P6a_Case, elimination=[TN]),
        _row(P.P6b_LSB, elimination=[TN]),
        _row(P.P7_ReservedUnused, elimination=[TN]),
        _row(P.P8_InterArrivalTime, limitation=[TN_LIMITED, NPRC]),
        _row(P.P9_Rate, limitation=[TN_LIMITED, NPRC]),
        _row(P.P10_PduOrder, limitation=[TN_LIMITED, NPRC]),
        _row(P.P11_Retransmission),
    )
}


def applicability(pattern: Union[str, PatternId]) -> Applicability:
    return TABLE[PatternId.parse(pattern)]


def eliminated_by_normalization() -> FrozenSet[PatternId]:
    return frozenset(p for p, row in TABLE.items() if TN in row.elimination)
