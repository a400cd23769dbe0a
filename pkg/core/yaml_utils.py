from __future__ import annotations

from pathlib import Path
from typing import Any

import yaml

import envUtils

CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "config.yaml"

# config.yaml 缺失或字段缺失时使用的内置默认值
DEFAULT_TRANSITION = {
    "margin_mm": 10.0,
    "slice_rv_threshold_vox": 1,
    "slab_fallback_mm": 5.0,
}
DEFAULT_LOSSES = {"smooth": 1e-5, "lambda": 1.0}
DEFAULT_METRICS = {"target_label": 2, "hd_percentile": 100}
DEFAULT_PHANTOM = {
    "sa": {"dims": [96, 96, 12], "spacing": [1.25, 1.25, 10.0]},
    "la": {"dims": [96, 96, 1], "spacing": [1.25, 1.25, 8.0]},
}
DEFAULT_MAX_WORKERS = 4


def load_yaml(path: Path) -> Any:
    with path.open("r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def load_config() -> dict[str, Any]:
    path = Path(envUtils.config_path) if envUtils.config_path else CONFIG_PATH
    if not path.exists():
        return {}
    data = load_yaml(path)
    if not isinstance(data, dict):
        return {}
    return data


def _section(name: str, defaults: dict[str, Any]) -> dict[str, Any]:
    section = load_config().get(name) or {}
    if not isinstance(section, dict):
        section = {}
    return {**defaults, **section}


def get_transition_defaults() -> dict[str, Any]:
    return _section("transition", DEFAULT_TRANSITION)


def get_loss_defaults() -> dict[str, Any]:
    return _section("losses", DEFAULT_LOSSES)


def get_metric_defaults() -> dict[str, Any]:
    return _section("metrics", DEFAULT_METRICS)


def get_phantom_defaults() -> dict[str, Any]:
    return _section("phantom", DEFAULT_PHANTOM)


def get_label_layout() -> str:
    return str(load_config().get("label_layout", "challenge"))


def get_max_workers() -> int:
    """
    病例并行数：环境变量 VIEWBRIDGE_MAX_WORKERS 优先，其次 config.yaml 的 eval.max_workers
    """
    if envUtils.max_workers:
        try:
            return max(1, int(envUtils.max_workers))
        except ValueError:
            pass
    eval_cfg = load_config().get("eval") or {}
    try:
        return max(1, int(eval_cfg.get("max_workers", DEFAULT_MAX_WORKERS)))
    except (TypeError, ValueError):
        return DEFAULT_MAX_WORKERS


def get_pathologies() -> list[str]:
    """
    从 config.yaml 的 pathologies 字段读取病种 ID 列表
    """
    config = load_config()
    items = config.get("pathologies", []) or []
    return [str(item.get("id")) for item in items if isinstance(item, dict) and item.get("id")]


def get_pathology_names() -> dict[str, str]:
    """病种 ID -> 显示名称，未配置名称时用 ID"""
    config = load_config()
    items = config.get("pathologies", []) or []
    return {
        str(item["id"]): str(item.get("name") or item["id"])
        for item in items
        if isinstance(item, dict) and item.get("id")
    }
