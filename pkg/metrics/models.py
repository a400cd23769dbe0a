# coding=utf-8
"""
评估结果的数据模型
"""

from __future__ import annotations

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator


class Phase(str, Enum):
    ED = "ED"
    ES = "ES"


class View(str, Enum):
    SA = "SA"
    LA = "LA"


class Pathology(str, Enum):
    """病种词表，顺序即报告中的行顺序"""

    NORMAL = "Normal"
    DILATED_LV = "DilatedLV"
    HCM = "HCM"
    CAM = "CAM"
    TOF = "TOF"
    IC = "IC"
    DILATED_RV = "DilatedRV"
    TR = "TR"


class PhaseViewMetrics(BaseModel):
    """一个 (时相, 视图) 的指标；hd_mm 为 None 表示掩码为空、距离无定义"""

    model_config = ConfigDict(frozen=True)

    phase: Phase
    view: View
    dice: float = Field(ge=0.0, le=1.0)
    hd_mm: Optional[float] = Field(default=None, ge=0.0)


class CaseMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    case_id: str
    pathology: Pathology
    entries: List[PhaseViewMetrics] = Field(default_factory=list)

    @field_validator("entries")
    @classmethod
    def _unique_entries(cls, entries: List[PhaseViewMetrics]) -> List[PhaseViewMetrics]:
        keys = [(e.phase, e.view) for e in entries]
        if len(keys) != len(set(keys)):
            raise ValueError("同一个 (时相, 视图) 只能有一条指标")
        return entries

    def get(self, phase: Phase, view: View) -> Optional[PhaseViewMetrics]:
        for entry in self.entries:
            if entry.phase == phase and entry.view == view:
                return entry
        return None

    @property
    def is_complete(self) -> bool:
        return all(self.get(p, v) is not None for p in Phase for v in View)


class MetricSummary(BaseModel):
    """单个指标的 均值 ± 标准差；std_kind 固定为样本标准差（n-1）"""

    model_config = ConfigDict(frozen=True)

    mean: float
    std: float = Field(ge=0.0)
    count: int = Field(ge=1)
    std_kind: str = "sample"


class GroupSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    key: str
    count: int = Field(ge=1)
    metrics: Dict[str, Optional[MetricSummary]]
