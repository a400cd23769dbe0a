# coding=utf-8
"""
评估报告

1 CSV：每个病例每个 时相/视图 一行（case_id, pathology, phase, view, dice, hd_mm）
2 JSON：病例级结果、按病种分组、按时相分组（含 Average 行）、综合得分，附版本号和全部参数
3 Markdown：按病种 / 按时相的汇总表、多个评估结果的策略对比、ED 与 ES 的配对检验

报告内容只由输入决定（不含时间戳和绝对路径），同样的输入得到字节一致的文件。
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from structlog import get_logger

from core import __version__
from core.case_eval import CaseResult, EvalOptions
from core.errors import IoFailure, TooFewPairs
from core.yaml_utils import get_pathology_names
from metrics.aggregate import AVERAGE_KEY, METRIC_NAMES, aggregate_group, case_values, format_cell, summarize
from metrics.models import GroupSummary, Phase, View
from metrics.stats import wilcoxon_signed_rank

logger = get_logger()

CSV_COLUMNS = ("case_id", "pathology", "phase", "view", "dice", "hd_mm")


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def render_csv(results: Sequence[CaseResult]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for result in results:
        if result.metrics is None:
            continue
        for phase in Phase:
            for view in View:
                entry = result.metrics.get(phase, view)
                if entry is None:
                    continue
                writer.writerow([result.case_id, result.pathology.value, phase.value, view.value,
                                 _fmt(entry.dice), _fmt(entry.hd_mm)])
    return buffer.getvalue()


def _group_json(group: GroupSummary) -> Dict[str, Any]:
    data = group.model_dump(mode="json")
    data["formatted"] = {
        name: format_cell(summary.mean, summary.std) if summary is not None else "n/a"
        for name, summary in group.metrics.items()
    }
    return data


def _case_json(result: CaseResult) -> Dict[str, Any]:
    item = {
        "case_id": result.case_id,
        "pathology": result.pathology.value,
        "status": result.status,
        "message": result.message,
        "missing": list(result.missing),
        "entries": [],
    }
    if result.rv_slices:
        item["rv_slices"] = result.rv_slices
    if result.metrics is not None:
        item["entries"] = [e.model_dump(mode="json") for e in result.metrics.entries]
    if result.is_complete:
        item.update(case_values(result.metrics))
    return item


def build_eval_report(results: Sequence[CaseResult], options: EvalOptions) -> Dict[str, Any]:
    """
    汇总评估结果

    只有 status == ok 且四项齐全的病例参与分组汇总；incomplete / failed 病例单独列出。
    """
    complete = [r.metrics for r in results if r.is_complete]
    report = {
        "version": __version__,
        "params": options.model_dump(mode="json"),
        "n_cases": len(results),
        "n_complete": len(complete),
        "incomplete": [r.case_id for r in results if r.status != "failed" and not r.is_complete],
        "failed": [r.case_id for r in results if r.status == "failed"],
        "cases": [_case_json(r) for r in results],
        "pathology_groups": [],
        "phase_groups": [],
        "score": None,
    }
    if complete:
        report["pathology_groups"] = [_group_json(g) for g in aggregate_group(complete, "pathology")]
        report["phase_groups"] = [_group_json(g) for g in aggregate_group(complete, "phase")]
        score = summarize(case_values(c)["score"] for c in complete)
        report["score"] = score.model_dump(mode="json") if score is not None else None
    else:
        logger.warning("没有完整的病例，跳过分组汇总", n_cases=len(results))
    return report


def dumps_json(data: Dict[str, Any]) -> str:
    return json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def write_text(path, content: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8", newline="\n")
    except OSError as e:
        raise IoFailure(f"写文件失败 {path}: {e}") from e


def load_report(path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise IoFailure(f"读取评估结果失败 {path}: {e}") from e


# === Markdown 报告 ===

def _cell(group: Dict[str, Any], name: str) -> str:
    return group.get("formatted", {}).get(name, "n/a")


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> List[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines.extend("| " + " | ".join(row) + " |" for row in rows)
    return lines


def _paired_phase_values(report: Dict[str, Any], metric: str) -> Tuple[List[float], List[float]]:
    """完整病例的 ED / ES 配对值；metric 为 dice 或 hd_mm（只取 SA）"""
    ed, es = [], []
    for case in report.get("cases", []):
        if case.get("status") != "ok":
            continue
        values = {(e["phase"], e["view"]): e.get(metric) for e in case.get("entries", [])}
        x, y = values.get(("ED", "SA")), values.get(("ES", "SA"))
        if x is None or y is None:
            continue
        ed.append(float(x))
        es.append(float(y))
    return ed, es


def _wilcoxon_row(report: Dict[str, Any], name: str, metric: str) -> List[str]:
    ed, es = _paired_phase_values(report, metric)
    try:
        result = wilcoxon_signed_rank(ed, es)
    except TooFewPairs:
        return [name, str(len(ed)), "n/a", "n/a", "n/a"]
    return [name, str(result.n), f"{result.statistic:g}", f"{result.p_value:.4g}", result.method]


def render_markdown(reports: Sequence[Tuple[str, Dict[str, Any]]]) -> str:
    """
    reports: [(标签, eval JSON)]，第一个报告给出明细表，全部报告参与策略对比
    """
    label, first = reports[0]
    names = get_pathology_names()
    parts: List[str] = []

    parts.append("# RV 分割评估报告")
    parts.append("")
    parts.append(f"版本: {first.get('version', '')}  ")
    parts.append(f"参数: `{json.dumps(first.get('params', {}), ensure_ascii=False, sort_keys=True)}`  ")
    parts.append(f"病例: {first.get('n_complete', 0)}/{first.get('n_cases', 0)} 完整")
    flagged = first.get("incomplete", []) + first.get("failed", [])
    if flagged:
        parts.append("")
        parts.append(f"未参与汇总: {', '.join(flagged)}")

    parts.append("")
    parts.append(f"## 按病种（{label}）")
    parts.append("")
    rows = []
    for group in first.get("pathology_groups", []):
        key = group["key"]
        display = names.get(key, key)
        title = key if display == key else f"{display} ({key})"
        rows.append([title, str(group["count"])] + [_cell(group, m) for m in METRIC_NAMES + ("score",)])
    parts.extend(_table(["病种", "n"] + list(METRIC_NAMES) + ["score"], rows))

    parts.append("")
    parts.append(f"## 按时相（{label}）")
    parts.append("")
    rows = [[g["key"], str(g["count"])] + [_cell(g, m) for m in METRIC_NAMES] for g in first.get("phase_groups", [])]
    parts.extend(_table(["时相", "n"] + list(METRIC_NAMES), rows))

    parts.append("")
    parts.append("## 策略对比")
    parts.append("")
    rows = []
    for name, report in reports:
        average = next((g for g in report.get("phase_groups", []) if g["key"] == AVERAGE_KEY), {})
        rows.append([name, _cell(average, "DS_SA"), _cell(average, "HD_SA")])
    parts.extend(_table(["策略", "DS_SA", "HD_SA"], rows))

    parts.append("")
    parts.append(f"## ED 与 ES 配对检验（Wilcoxon 符号秩，{label}）")
    parts.append("")
    rows = [_wilcoxon_row(first, "DS_SA", "dice"), _wilcoxon_row(first, "HD_SA", "hd_mm")]
    parts.extend(_table(["指标", "n", "W", "p", "方法"], rows))
    parts.append("")
    return "\n".join(parts)
