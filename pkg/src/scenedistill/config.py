"""Pipeline configuration: key=value file plus flag overrides.

Defaults follow the published recipe where it fixes them: crop scales
1, 1/2, 1/4 with stride 1/2 of the crop size, 50 superpixels per crop,
every tenth frame, and a 0.99-per-1000-steps learning-rate decay.  The
depth-consistency tau (0.10 m) and the toy trainer's base rate are this
artifact's defaults and are plain config keys.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class PipelineConfig:
    scales: tuple[float, ...] = (1.0, 0.5, 0.25)
    stride_frac: float = 0.5
    n_superpixels: int = 50
    compactness: float = 10.0
    slic_iterations: int = 10
    depth_tau: float = 0.10
    frame_stride: int = 10
    weights: str = ""
    embeddings: str = ""
    labelset: str = ""
    query_threshold: float | None = None
    query_top_fraction: float = 0.05
    lr0: float = 0.05
    lr_decay: float = 0.99
    decay_every: int = 1000
    steps: int = 2000
    batch_scenes: int = 1
    hidden: int = 32
    knn: int = 16
    seed: int = 0
    jobs: int = 1

    def validate(self) -> "PipelineConfig":
        if not self.scales or any(not 0 < s <= 1 for s in self.scales):
            raise ConfigError(f"scales must lie in (0, 1], got {self.scales}")
        if not 0 < self.stride_frac <= 1:
            raise ConfigError(f"stride_frac must lie in (0, 1], got {self.stride_frac}")
        if self.n_superpixels < 1:
            raise ConfigError("n_superpixels must be >= 1")
        if self.depth_tau <= 0:
            raise ConfigError("depth_tau must be positive")
        if self.frame_stride < 1:
            raise ConfigError("frame_stride must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        return self


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _parse_value(key: str, val: str):
    if key == "scales":
        try:
            return tuple(float(v) for v in val.replace(",", " ").split())
        except ValueError as e:
            raise ConfigError(f"bad scales value {val!r}") from e
    if key == "query_threshold":
        return None if val.lower() in ("", "none") else float(val)
    ftype = _FIELD_TYPES[key]
    try:
        if ftype == "int":
            return int(val)
        if ftype == "float":
            return float(val)
        return val
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {val!r}") from e


def load_config(path=None, overrides=None) -> PipelineConfig:
    """Read key=value lines (``#`` comments), then apply overrides."""
    cfg = PipelineConfig()
    items: list[tuple[str, str]] = []
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        for lineno, raw in enumerate(p.read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ConfigError(f"{p}:{lineno}: expected key = value")
            items.append((key.strip(), val.strip()))
    for key, val in items + list(overrides or []):
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _parse_value(key, val))
    return cfg.validate()
