# coding=utf-8
"""
病例清单（manifest）

一个 JSON 文档列出全部病例及其文件路径，相对路径以 manifest 所在目录为基准。

{
  "cases": [
    {
      "case_id": "case_000",
      "pathology": "Normal",
      "images": {"SA_ED": "...", "SA_ES": "...", "LA_ED": "...", "LA_ES": "..."},
      "labels": {"SA_ED": "...", "SA_ES": "...", "LA_ED": "...", "LA_ES": "..."},
      "predictions": {"SA_ED": "...", ..., "SA_ED_roi": "roi.json"}
    }
  ]
}

predictions 中的 SA_ED_roi / SA_ES_roi 表示对应 SA 预测是在 ROI 内裁剪后的结果（前置利用），
评估前先按 ROI 回填到完整网格。
"""

from __future__ import annotations

import json
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field, PrivateAttr, ValidationError, field_validator, model_validator

from core.errors import IoFailure, ManifestError
from metrics.models import Pathology, Phase, View

VOLUME_KEYS = tuple(f"{view.value}_{phase.value}" for phase in Phase for view in View)
ROI_KEYS = ("SA_ED_roi", "SA_ES_roi")


def volume_key(phase: Phase, view: View) -> str:
    return f"{view.value}_{phase.value}"


def _check_paths(paths: Dict[str, str], allowed, field: str) -> Dict[str, str]:
    unknown = sorted(set(paths) - set(allowed))
    if unknown:
        raise ValueError(f"{field} 含未知键 {unknown}，允许的键为 {list(allowed)}")
    for key, value in paths.items():
        if not isinstance(value, str) or not value.strip() or "\x00" in value:
            raise ValueError(f"{field}.{key} 不是合法路径: {value!r}")
    return paths


class CaseRecord(BaseModel):
    case_id: str = Field(min_length=1)
    pathology: Pathology
    images: Dict[str, str] = Field(default_factory=dict)
    labels: Dict[str, str]
    predictions: Dict[str, str] = Field(default_factory=dict)

    @field_validator("images")
    @classmethod
    def _check_images(cls, v):
        return _check_paths(v, VOLUME_KEYS, "images")

    @field_validator("labels")
    @classmethod
    def _check_labels(cls, v):
        _check_paths(v, VOLUME_KEYS, "labels")
        missing = [k for k in VOLUME_KEYS if k not in v]
        if missing:
            raise ValueError(f"labels 缺少 {missing}")
        return v

    @field_validator("predictions")
    @classmethod
    def _check_predictions(cls, v):
        return _check_paths(v, VOLUME_KEYS + ROI_KEYS, "predictions")


class CaseManifest(BaseModel):
    cases: List[CaseRecord]
    _base_dir: Path = PrivateAttr(default_factory=Path)

    @model_validator(mode="after")
    def _unique_ids(self) -> "CaseManifest":
        duplicated = sorted(k for k, n in Counter(c.case_id for c in self.cases).items() if n > 1)
        if duplicated:
            raise ValueError(f"case_id 重复: {duplicated}")
        return self

    @property
    def base_dir(self) -> Path:
        return self._base_dir

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else self._base_dir / p

    def select(self, case_ids: Optional[List[str]] = None) -> List[CaseRecord]:
        """按 case_id 排序返回；指定 case_ids 时只返回这些病例"""
        cases = sorted(self.cases, key=lambda c: c.case_id)
        if not case_ids:
            return cases
        known = {c.case_id for c in cases}
        unknown = sorted(set(case_ids) - known)
        if unknown:
            raise ManifestError(f"manifest 中不存在病例 {unknown}")
        return [c for c in cases if c.case_id in set(case_ids)]

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json", exclude_defaults=False), ensure_ascii=False, indent=2,
                          sort_keys=True) + "\n"


def load_manifest(path: Union[str, Path]) -> CaseManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"读取 manifest 失败 {path}: {e}") from e
    try:
        manifest = CaseManifest.model_validate(json.loads(text))
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest 不是合法 JSON {path}: {e}") from e
    except ValidationError as e:
        raise ManifestError(f"manifest 格式错误 {path}: {e}") from e
    manifest._base_dir = path.resolve().parent
    return manifest
