# coding=utf-8
"""
信息迁移的参数与 ROI 模型
"""

from __future__ import annotations

from typing import Any, Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.errors import ManifestError
from core.yaml_utils import get_transition_defaults


class TransitionParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    slab_halfwidth_mm: float = Field(default=5.0, gt=0, description="单层 LA 平面沿法向的半厚度（毫米）")
    slice_rv_threshold_vox: int = Field(default=1, ge=1, description="一层 SA 至少多少个 RV 体素才算 RV 层")
    margin_mm: float = Field(default=10.0, ge=0, description="ROI 外扩距离（毫米）")

    @classmethod
    def from_config(cls, **overrides: Optional[Any]) -> "TransitionParams":
        """config.yaml 默认值 + 显式覆盖（值为 None 的覆盖项忽略）"""
        defaults = get_transition_defaults()
        values = {
            "slab_halfwidth_mm": float(defaults["slab_fallback_mm"]),
            "slice_rv_threshold_vox": int(defaults["slice_rv_threshold_vox"]),
            "margin_mm": float(defaults["margin_mm"]),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def for_source_header(cls, header, **overrides: Optional[Any]) -> "TransitionParams":
        """
        半厚度默认取源头信息中层厚（pixdim[3]）的一半，层厚为 0 时使用 slab_fallback_mm
        """
        thickness = abs(float(header.pixdim[3]))
        if thickness > 0 and overrides.get("slab_halfwidth_mm") is None:
            overrides["slab_halfwidth_mm"] = thickness / 2.0
        return cls.from_config(**overrides)


class RoiSpec(BaseModel):
    """SA 索引空间中的 ROI：包围盒（闭区间）+ RV 层范围"""

    model_config = ConfigDict(frozen=True)

    bbox: Tuple[Tuple[int, int], Tuple[int, int], Tuple[int, int]]
    rv_slice_range: Tuple[int, int]
    margin_mm: float = Field(ge=0)

    @model_validator(mode="after")
    def _check_ranges(self) -> "RoiSpec":
        for axis, (lo, hi) in enumerate(self.bbox):
            if not 0 <= lo <= hi:
                raise ValueError(f"bbox 第 {axis} 轴范围非法: {lo}..{hi}")
        k_low, k_high = self.rv_slice_range
        k0, k1 = self.bbox[2]
        if not k0 <= k_low <= k_high <= k1:
            raise ValueError(f"RV 层范围 {k_low}..{k_high} 不在 bbox 的 k 范围 {k0}..{k1} 内")
        return self

    @property
    def lower(self) -> Tuple[int, int, int]:
        return tuple(lo for lo, _ in self.bbox)

    @property
    def upper(self) -> Tuple[int, int, int]:
        return tuple(hi for _, hi in self.bbox)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(hi - lo + 1 for lo, hi in self.bbox)

    def slices(self) -> Tuple[slice, slice, slice]:
        return tuple(slice(lo, hi + 1) for lo, hi in self.bbox)

    def to_json_dict(self) -> Dict[str, Any]:
        (i0, i1), (j0, j1), (k0, k1) = self.bbox
        return {
            "bbox": [i0, i1, j0, j1, k0, k1],
            "rv_slices": list(self.rv_slice_range),
            "margin_mm": self.margin_mm,
        }

    @classmethod
    def from_json_dict(cls, data: Dict[str, Any]) -> "RoiSpec":
        try:
            i0, i1, j0, j1, k0, k1 = (int(v) for v in data["bbox"])
            k_low, k_high = (int(v) for v in data["rv_slices"])
            return cls(
                bbox=((i0, i1), (j0, j1), (k0, k1)),
                rv_slice_range=(k_low, k_high),
                margin_mm=float(data.get("margin_mm", 0.0)),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ManifestError(f"ROI JSON 格式错误: {type(e).__name__}: {e}") from e
