# coding=utf-8
"""
批量病例评估

1 每个病例独立读取自己的文件，计算 ED/ES × SA/LA 的 Dice 与 HD
2 可选后处理（--post-mask）：LA 先验迁移到 SA 网格推导 RV 层范围，去掉范围外的 RV 预测
3 病例并行执行，单个病例失败只记录在结果中，不影响其它病例
"""

from __future__ import annotations

import concurrent.futures
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from pydantic import BaseModel, Field
from structlog import get_logger

from core.errors import IoFailure, ManifestError, ViewBridgeError
from core.manifest import CaseManifest, CaseRecord, volume_key
from geom.models import LabelVolume
from metrics.metrics import evaluate_pair
from metrics.models import CaseMetrics, Pathology, Phase, PhaseViewMetrics, View
from nifti import read_volume
from transition import RoiSpec, TransitionParams, embed_from_roi, la_prior_on_sa, mask_non_rv

logger = get_logger()

STATUS_OK = "ok"
STATUS_INCOMPLETE = "incomplete"
STATUS_FAILED = "failed"


class EvalOptions(BaseModel):
    """一次评估运行的全部参数，原样写入报告"""

    target_label: int = Field(default=2, ge=1, le=2)
    hd_percentile: float = Field(default=100, gt=0, le=100)
    post_mask: bool = False
    label_layout: str = "challenge"
    margin_mm: Optional[float] = None
    slice_rv_threshold_vox: Optional[int] = None
    slab_halfwidth_mm: Optional[float] = None


@dataclass
class CaseResult:
    case_id: str
    pathology: Pathology
    status: str = STATUS_OK
    metrics: Optional[CaseMetrics] = None
    missing: List[str] = field(default_factory=list)
    message: str = ""
    rv_slices: Dict[str, List[int]] = field(default_factory=dict)

    @property
    def is_complete(self) -> bool:
        return self.status == STATUS_OK and self.metrics is not None and self.metrics.is_complete


def _read_label(manifest: CaseManifest, path: str, options: EvalOptions):
    return read_volume(manifest.resolve(path), kind="label", label_layout=options.label_layout)


def _load_prediction(manifest: CaseManifest, record: CaseRecord, key: str, gt: LabelVolume,
                     options: EvalOptions) -> LabelVolume:
    _, pred = _read_label(manifest, record.predictions[key], options)
    roi_path = record.predictions.get(f"{key}_roi")
    if roi_path is None:
        return pred
    # 前置利用：预测只覆盖 ROI，回填到完整 SA 网格
    path = manifest.resolve(roi_path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise IoFailure(f"读取 ROI 失败 {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ManifestError(f"ROI 不是合法 JSON {path}: {e}") from e
    if not isinstance(data, dict):
        raise ManifestError(f"ROI JSON 顶层必须是对象: {path}")
    roi = RoiSpec.from_json_dict(data)
    return embed_from_roi(pred, roi, gt.grid)


def _post_mask(manifest: CaseManifest, record: CaseRecord, phase: Phase, sa_gt: LabelVolume,
               pred: LabelVolume, options: EvalOptions):
    la_key = volume_key(phase, View.LA)
    la_path = record.predictions.get(la_key) or record.labels[la_key]
    la_header, la_label = _read_label(manifest, la_path, options)
    params = TransitionParams.for_source_header(
        la_header,
        slab_halfwidth_mm=options.slab_halfwidth_mm,
        margin_mm=options.margin_mm,
        slice_rv_threshold_vox=options.slice_rv_threshold_vox,
    )
    _, roi = la_prior_on_sa(la_label, sa_gt.grid, params)
    return mask_non_rv(pred, roi), roi


def evaluate_case(manifest: CaseManifest, record: CaseRecord, options: EvalOptions) -> CaseResult:
    """
    评估单个病例

    缺少某个时相/视图的预测时，该项跳过并把病例标记为 incomplete；
    文件或几何错误时病例标记为 failed，错误信息写入结果。
    """
    result = CaseResult(case_id=record.case_id, pathology=record.pathology)
    entries = []
    try:
        for phase in Phase:
            for view in View:
                key = volume_key(phase, view)
                if key not in record.predictions:
                    result.missing.append(key)
                    continue
                _, gt = _read_label(manifest, record.labels[key], options)
                pred = _load_prediction(manifest, record, key, gt, options)
                if options.post_mask and view == View.SA:
                    pred, roi = _post_mask(manifest, record, phase, gt, pred, options)
                    result.rv_slices[phase.value] = list(roi.rv_slice_range)
                dice, hd = evaluate_pair(gt, pred, options.target_label, percentile=options.hd_percentile)
                entries.append(PhaseViewMetrics(phase=phase, view=view, dice=dice, hd_mm=hd))
    except (ViewBridgeError, OSError, ValueError) as e:
        logger.warning("病例评估失败", case_id=record.case_id, error=str(e))
        result.status = STATUS_FAILED
        result.message = f"{type(e).__name__}: {e}"
        return result

    result.metrics = CaseMetrics(case_id=record.case_id, pathology=record.pathology, entries=entries)
    if result.missing:
        result.status = STATUS_INCOMPLETE
        result.message = f"缺少预测: {', '.join(result.missing)}"
        logger.warning("病例预测不完整", case_id=record.case_id, missing=result.missing)
    return result


def evaluate_cases(manifest: CaseManifest, records: List[CaseRecord], options: EvalOptions,
                   max_workers: int = 1) -> List[CaseResult]:
    """并行评估，结果按 case_id 排序"""
    if not records:
        return []
    workers = max(1, min(int(max_workers), len(records)))
    results = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(evaluate_case, manifest, record, options): record.case_id for record in records}
        for future in concurrent.futures.as_completed(futures):
            results.append(future.result())

    results.sort(key=lambda r: r.case_id)
    failed = [r.case_id for r in results if r.status != STATUS_OK]
    logger.info("评估完成", total=len(results), complete=len(results) - len(failed), flagged=failed)
    return results
