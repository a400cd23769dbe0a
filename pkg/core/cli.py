# coding=utf-8
"""
命令行入口

    python -m core.cli transform --src la_gt.nii.gz --dst-grid sa.nii.gz --out la_on_sa.nii.gz
    python -m core.cli roi --la-label la_gt.nii.gz --sa-image sa.nii.gz --out-json roi.json
    python -m core.cli eval --manifest manifest.json --out-csv metrics.csv --out-json metrics.json
    python -m core.cli phantom --random --seed 0 --n-cases 6 --out-dir phantom/
    python -m core.cli report --eval-json a.json --label 无利用 --eval-json b.json --label 后置利用 --out report.md

退出码：0 成功，2 输入/解析错误，3 几何错误，4 内部错误。日志写到标准错误。
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError
from structlog import get_logger

import envUtils
from core.case_eval import EvalOptions, evaluate_cases
from core.errors import ManifestError, NoOverlap, ViewBridgeError
from core.log_utils import configure_logging
from core.manifest import CaseManifest, CaseRecord, load_manifest, volume_key
from core.report import build_eval_report, dumps_json, load_report, render_csv, render_markdown, write_text
from core.yaml_utils import get_label_layout, get_max_workers, get_metric_defaults, get_pathologies
from metrics.models import Pathology, Phase, View
from nifti import read_volume, write_volume
from phantom import (
    PhantomSpec,
    default_la_grid,
    default_sa_grid,
    end_systole,
    intensity_from_labels,
    random_spec,
    sample_grid,
)
from transition import TransitionParams, crop_to_roi, la_prior_on_sa, transform_label

logger = get_logger()

EXIT_OK = 0
EXIT_INTERNAL = 4


def cmd_transform(args) -> int:
    src_header, src = read_volume(args.src, kind="label", label_layout=args.label_layout)
    dst_header, dst = read_volume(args.dst_grid, kind="intensity")

    if args.direction == "la2sa":
        if not src.grid.is_single_slice:
            logger.warning("la2sa 的源不是单层图像，按 3D 体迁移", dims=src.dims)
        params = TransitionParams.for_source_header(src_header, slab_halfwidth_mm=args.slab_mm)
    else:
        params = TransitionParams.from_config(slab_halfwidth_mm=args.slab_mm)

    out = transform_label(src, dst.grid, params)
    if src.data.any() and not out.data.any():
        raise NoOverlap(f"迁移结果全为背景，源 {args.src} 与目标网格没有交集")
    write_volume(args.out, dst_header, out, label_layout=args.label_layout)
    logger.info("标签迁移完成", direction=args.direction, dims=out.dims,
                labelled=int((out.data > 0).sum()), slab_halfwidth_mm=params.slab_halfwidth_mm)
    print(f"已写出: {args.out}")
    return EXIT_OK


def cmd_roi(args) -> int:
    la_header, la_label = read_volume(args.la_label, kind="label", label_layout=args.label_layout)
    sa_header, sa_image = read_volume(args.sa_image, kind="intensity")
    params = TransitionParams.for_source_header(
        la_header,
        slab_halfwidth_mm=args.slab_mm,
        margin_mm=args.margin_mm,
        slice_rv_threshold_vox=args.threshold,
    )
    _, roi = la_prior_on_sa(la_label, sa_image.grid, params)
    write_text(args.out_json, dumps_json(roi.to_json_dict()))
    if args.crop_out:
        write_volume(args.crop_out, sa_header, crop_to_roi(sa_image, roi))
    logger.info("ROI 已推导", bbox=roi.bbox, rv_slices=roi.rv_slice_range, margin_mm=roi.margin_mm)
    print(f"已写出: {args.out_json}")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    records = manifest.select(args.cases)
    if not records:
        raise ManifestError(f"manifest 中没有病例: {args.manifest}")

    metric_defaults = get_metric_defaults()
    options = EvalOptions(
        target_label=args.target_label if args.target_label is not None else int(metric_defaults["target_label"]),
        hd_percentile=args.hd_percentile if args.hd_percentile is not None else float(metric_defaults["hd_percentile"]),
        post_mask=args.post_mask,
        label_layout=args.label_layout,
        margin_mm=args.margin_mm,
        slice_rv_threshold_vox=args.threshold,
        slab_halfwidth_mm=args.slab_mm,
    )
    workers = args.workers if args.workers else get_max_workers()
    results = evaluate_cases(manifest, records, options, max_workers=workers)

    write_text(args.out_csv, render_csv(results))
    report = build_eval_report(results, options)
    write_text(args.out_json, dumps_json(report))
    print(f"已评估 {len(results)} 个病例，完整 {report['n_complete']} 个")
    if report["incomplete"] or report["failed"]:
        print(f"不完整: {', '.join(report['incomplete']) or '-'}；失败: {', '.join(report['failed']) or '-'}")
    return EXIT_OK


def _phantom_case(out_dir: Path, case_id: str, pathology: str, spec: PhantomSpec,
                  label_layout: str, with_predictions: bool) -> CaseRecord:
    sa_grid = default_sa_grid(spec)
    la_grid = default_la_grid(spec)
    write_text(out_dir / f"{case_id}_spec.json", spec.model_dump_json(indent=2) + "\n")

    images, labels = {}, {}
    for phase, phase_spec in ((Phase.ED, spec), (Phase.ES, end_systole(spec))):
        for view, grid in ((View.SA, sa_grid), (View.LA, la_grid)):
            key = volume_key(phase, view)
            label_volume = sample_grid(phase_spec, grid)
            images[key] = f"{case_id}_{key}.nii.gz"
            labels[key] = f"{case_id}_{key}_gt.nii.gz"
            write_volume(out_dir / images[key], None, intensity_from_labels(label_volume))
            write_volume(out_dir / labels[key], None, label_volume, label_layout=label_layout)

    return CaseRecord(
        case_id=case_id,
        pathology=pathology,
        images=images,
        labels=labels,
        predictions=dict(labels) if with_predictions else {},
    )


def cmd_phantom(args) -> int:
    out_dir = Path(args.out_dir)
    if args.spec_json:
        # 同一体模参数复制 n 份，病例编号和病种照常递增
        specs = [PhantomSpec.from_json_file(args.spec_json)] * args.n_cases
    else:
        specs = [random_spec(args.seed + i) for i in range(args.n_cases)]

    pathologies = get_pathologies() or [p.value for p in Pathology]
    records = []
    for i, spec in enumerate(specs):
        case_id = f"case_{i:03d}"
        records.append(_phantom_case(out_dir, case_id, pathologies[i % len(pathologies)], spec,
                                     args.label_layout, not args.no_predictions))
        logger.info("体模病例已生成", case_id=case_id, seed=spec.seed)

    manifest = CaseManifest(cases=records)
    write_text(out_dir / "manifest.json", manifest.to_json())
    print(f"已生成 {len(records)} 个病例: {out_dir / 'manifest.json'}")
    return EXIT_OK


def cmd_report(args) -> int:
    labels = list(args.label or [])
    reports = []
    for i, path in enumerate(args.eval_json):
        name = labels[i] if i < len(labels) else Path(path).stem
        reports.append((name, load_report(path)))
    write_text(args.out, render_markdown(reports))
    print(f"已写出: {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m core.cli",
        description="SA / LA 心脏 MR 信息迁移与 RV 分割评估工具",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
示例:
  python -m core.cli phantom --random --seed 0 --n-cases 6 --out-dir out/phantom
  python -m core.cli transform --src out/phantom/case_000_LA_ED_gt.nii.gz --dst-grid out/phantom/case_000_SA_ED.nii.gz --out la_on_sa.nii.gz
  python -m core.cli roi --la-label out/phantom/case_000_LA_ED_gt.nii.gz --sa-image out/phantom/case_000_SA_ED.nii.gz --out-json roi.json
  python -m core.cli eval --manifest out/phantom/manifest.json --out-csv metrics.csv --out-json metrics.json --post-mask
        """,
    )
    parser.add_argument("--log-level", default=None, help="日志级别（默认取 VIEWBRIDGE_LOG_LEVEL，否则 INFO）")
    sub = parser.add_subparsers(dest="command", required=True)

    layout_default = get_label_layout()

    p = sub.add_parser("transform", help="标签在 LA / SA 坐标系之间迁移")
    p.add_argument("--src", required=True, help="源标签 NIfTI")
    p.add_argument("--dst-grid", required=True, help="提供目标网格（尺寸 + 仿射）的 NIfTI")
    p.add_argument("--out", required=True, help="输出标签 NIfTI")
    p.add_argument("--slab-mm", type=float, default=None, help="单层源平面的半厚度（毫米），默认取源层厚的一半")
    p.add_argument("--direction", choices=("la2sa", "sa2la"), default="la2sa")
    p.add_argument("--label-layout", choices=("challenge", "internal"), default=layout_default)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("roi", help="由 LA 标签推导 SA 的 ROI")
    p.add_argument("--la-label", required=True)
    p.add_argument("--sa-image", required=True)
    p.add_argument("--margin-mm", type=float, default=None, help="ROI 外扩（毫米），默认取 config.yaml")
    p.add_argument("--threshold", type=int, default=None, help="RV 层的最少 RV 体素数")
    p.add_argument("--slab-mm", type=float, default=None)
    p.add_argument("--out-json", required=True)
    p.add_argument("--crop-out", default=None, help="可选：写出裁剪后的 SA 图像")
    p.add_argument("--label-layout", choices=("challenge", "internal"), default=layout_default)
    p.set_defaults(func=cmd_roi)

    p = sub.add_parser("eval", help="按 manifest 批量评估")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-json", required=True)
    p.add_argument("--post-mask", action="store_true", help="用 LA 先验去掉 RV 层范围之外的 SA RV 预测")
    p.add_argument("--cases", nargs="+", default=None, help="只评估这些 case_id")
    p.add_argument("--workers", type=int, default=None, help="并行病例数，默认取 VIEWBRIDGE_MAX_WORKERS / config.yaml")
    p.add_argument("--target-label", type=int, choices=(1, 2), default=None)
    p.add_argument("--hd-percentile", type=float, default=None)
    p.add_argument("--margin-mm", type=float, default=None)
    p.add_argument("--threshold", type=int, default=None)
    p.add_argument("--slab-mm", type=float, default=None)
    p.add_argument("--label-layout", choices=("challenge", "internal"), default=layout_default)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("phantom", help="生成解析体模病例和 manifest")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--spec-json", default=None, help="体模参数 JSON")
    source.add_argument("--random", action="store_true", help="按 seed 随机生成")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-cases", type=int, default=1, help="病例数；配合 --spec-json 时同一参数重复 n 份")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-predictions", action="store_true", help="manifest 中不写预测（默认预测 = 金标准）")
    p.add_argument("--label-layout", choices=("challenge", "internal"), default=layout_default)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("report", help="由 eval 的 JSON 生成 Markdown 汇总表")
    p.add_argument("--eval-json", action="append", required=True)
    p.add_argument("--label", action="append", default=None, help="与 --eval-json 一一对应的策略名")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging(args.log_level or envUtils.log_level)
    if getattr(args, "n_cases", 1) < 1:
        print("错误: --n-cases 必须 >= 1", file=sys.stderr)
        return 2

    try:
        return args.func(args)
    except ViewBridgeError as e:
        print(f"错误: {e}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        print(f"参数错误: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception("内部错误", command=args.command)
        print(f"内部错误: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
