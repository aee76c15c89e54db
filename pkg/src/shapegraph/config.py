"""Declarative run configuration: TOML file plus dotted-key overrides.

Sections mirror the pipeline: [data] and [out] are paths, [model] holds
architecture knobs, [train] holds optimization and ablation switches.
Unknown sections or keys are rejected outright so typos cannot silently
fall back to defaults. ``SHAPEGRAPH_CONFIG`` may point at a default file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .train import ModelSpec, TrainConfig

ENV_CONFIG = "SHAPEGRAPH_CONFIG"

_INT_LIST = "int_list"
_SECTIONS: dict[str, dict[str, object]] = {
    "data": {"dir": str},
    "out": {"dir": str},
    "model": {
        "embed_dim": int,
        "schedule": _INT_LIST,
        "knn": int,
        "slope": float,
        "pooling": str,
        "adapter_hidden": int,
    },
    "train": {
        "mode": str,
        "strategy": str,
        "epochs": int,
        "batch_size": int,
        "quadruplets": int,
        "lr_start": float,
        "lr_end": float,
        "seed": int,
        "tau": float,
        "am_scale": float,
        "am_margin": float,
        "quad_margin": float,
        "use_quad": bool,
        "use_cls": bool,
        "use_sem_3d": bool,
        "use_sem_sketch": bool,
        "w_quad": float,
        "w_cls": float,
        "w_sem_3d": float,
        "w_sem_sketch": float,
    },
}


@dataclass(frozen=True)
class RunConfig:
    data_dir: str = "data"
    out_dir: str = "out"
    spec: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)


def _coerce(section: str, key: str, value, declared):
    where = f"{section}.{key}"
    if declared is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected true/false, got {value!r}")
    if declared is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected integer, got {value!r}")
        return value
    if declared is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected number, got {value!r}")
        return float(value)
    if declared is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected string, got {value!r}")
        return value
    if declared == _INT_LIST:
        if not isinstance(value, (list, tuple)) or not value \
                or any(isinstance(v, bool) or not isinstance(v, int) for v in value):
            raise ConfigError(f"{where}: expected a list of integers, got {value!r}")
        return tuple(int(v) for v in value)
    raise ConfigError(f"{where}: unhandled declared type")


def _validate_tree(tree: dict, path: str) -> dict[str, dict]:
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a table")
    out: dict[str, dict] = {}
    for section, body in tree.items():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: [{section}] must be a table")
        allowed = _SECTIONS[section]
        cleaned = {}
        for key, value in body.items():
            if key not in allowed:
                raise ConfigError(f"{path}: unknown key {section}.{key}")
            cleaned[key] = _coerce(section, key, value, allowed[key])
        out[section] = cleaned
    return out


def _assemble(sections: dict[str, dict]) -> RunConfig:
    data_dir = sections.get("data", {}).get("dir", "data")
    out_dir = sections.get("out", {}).get("dir", "out")
    try:
        spec = ModelSpec(**sections.get("model", {}))
        train = TrainConfig(**sections.get("train", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(data_dir=data_dir, out_dir=out_dir, spec=spec, train=train)


def load_run_config(path: str | Path | None = None) -> RunConfig:
    """Load configuration; falls back to the env var, then pure defaults."""
    if path is None:
        path = os.environ.get(ENV_CONFIG) or None
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file {p} not found")
    try:
        tree = tomllib.loads(p.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: not valid TOML: {exc}") from exc
    return _assemble(_validate_tree(tree, str(p)))


def parse_override(pair: str) -> tuple[str, str, object]:
    """Parse one ``section.key=value`` command-line override."""
    if "=" not in pair:
        raise ConfigError(f"override {pair!r} must look like section.key=value")
    dotted, raw = pair.split("=", 1)
    if "." not in dotted:
        raise ConfigError(f"override key {dotted!r} must look like section.key")
    section, key = dotted.split(".", 1)
    if section not in _SECTIONS or key not in _SECTIONS[section]:
        raise ConfigError(f"unknown override target {dotted!r}")
    declared = _SECTIONS[section][key]
    if declared is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return section, key, True
        if low in ("false", "0", "no", "off"):
            return section, key, False
        raise ConfigError(f"{dotted}: expected a boolean, got {raw!r}")
    try:
        if declared is int:
            return section, key, int(raw)
        if declared is float:
            return section, key, float(raw)
        if declared == _INT_LIST:
            return section, key, tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{dotted}: {exc}") from exc
    return section, key, raw


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    sections: dict[str, dict] = {}
    for pair in pairs or ():
        section, key, value = parse_override(pair)
        sections.setdefault(section, {})[key] = value
    if not sections:
        return cfg
    data_dir = sections.get("data", {}).get("dir", cfg.data_dir)
    out_dir = sections.get("out", {}).get("dir", cfg.out_dir)
    try:
        spec = replace(cfg.spec, **sections.get("model", {}))
        train = replace(cfg.train, **sections.get("train", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(data_dir=data_dir, out_dir=out_dir, spec=spec, train=train)


def describe(cfg: RunConfig) -> dict:
    """JSON-ready echo of the fully resolved configuration."""
    spec = cfg.spec
    train = cfg.train
    return {
        "data": {"dir": cfg.data_dir},
        "out": {"dir": cfg.out_dir},
        "model": {
            "embed_dim": spec.embed_dim,
            "schedule": list(spec.schedule) if spec.schedule is not None else None,
            "knn": spec.knn,
            "slope": spec.slope,
            "pooling": spec.pooling,
            "adapter_hidden": spec.adapter_hidden,
        },
        "train": {
            "mode": train.mode,
            "strategy": train.strategy,
            "epochs": train.epochs,
            "batch_size": train.batch_size,
            "quadruplets": train.quadruplets,
            "lr_start": train.lr_start,
            "lr_end": train.lr_end,
            "seed": train.seed,
            "tau": train.tau,
            "am_scale": train.am_scale,
            "am_margin": train.am_margin,
            "quad_margin": train.quad_margin,
            "use_quad": train.use_quad,
            "use_cls": train.use_cls,
            "use_sem_3d": train.use_sem_3d,
            "use_sem_sketch": train.use_sem_sketch,
            "w_quad": train.w_quad,
            "w_cls": train.w_cls,
            "w_sem_3d": train.w_sem_3d,
            "w_sem_sketch": train.w_sem_sketch,
        },
    }
