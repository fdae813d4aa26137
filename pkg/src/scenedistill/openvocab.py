"""Text-embedding classification of point features, open-world query masks,
and zero-shot pseudo-labels.

Class weights are prompt ensembles: the mean over per-prompt embeddings,
L2-normalized.  Classification is cosine argmax (ties to the smallest
class id); the text encoding itself happens outside this package, which
only consumes embedding tensors.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .tensorio import PointCloud, write_ply

NORM_EPS = 1e-12


@dataclass
class EmbeddingMatrix:
    rows: np.ndarray   # (K, C) f32
    names: list[str]
    normalized: bool = False


@dataclass
class Segmentation:
    labels: np.ndarray  # (N,) i32, -1 = ignore
    scores: np.ndarray  # (N,) f32 winning cosine


def build_class_embeddings(prompt_embeddings: np.ndarray, names) -> EmbeddingMatrix:
    """Average P prompt embeddings per class and L2-normalize each row."""
    if prompt_embeddings.ndim != 3:
        raise ValueError(f"want (K, P, C) prompt embeddings, got {prompt_embeddings.shape}")
    k, p, _ = prompt_embeddings.shape
    names = list(names)
    if len(names) != k:
        raise ValueError(f"{k} classes but {len(names)} names")
    if p < 1:
        raise ValueError("need at least one prompt per class")
    mean = prompt_embeddings.astype(np.float64).mean(axis=1)
    norms = np.linalg.norm(mean, axis=1)
    for i, nn in enumerate(norms):
        if nn < NORM_EPS:
            raise DataError(f"class {names[i]!r}: prompt embeddings average to zero")
    return EmbeddingMatrix((mean / norms[:, None]).astype(np.float32), names, normalized=True)


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x.astype(np.float64), axis=1, keepdims=True)
    return (x / np.maximum(n, NORM_EPS)).astype(np.float64)


def classify_points(features: np.ndarray, emb: EmbeddingMatrix,
                    valid_mask: np.ndarray | None = None) -> Segmentation:
    """Cosine argmax per point; masked-out rows get label -1 and score 0."""
    if emb.rows.shape[0] == 0:
        raise ValueError("no classes to classify against")
    if not emb.normalized:
        raise ValueError("embedding matrix must be normalized")
    cos = _normalize_rows(features) @ emb.rows.astype(np.float64).T
    labels = cos.argmax(axis=1).astype(np.int32)
    scores = cos.max(axis=1).astype(np.float32)
    if valid_mask is not None:
        labels = np.where(valid_mask, labels, np.int32(-1))
        scores = np.where(valid_mask, scores, np.float32(0.0))
    return Segmentation(labels, scores)


def open_world_query(features: np.ndarray, query: np.ndarray,
                     threshold: float | None = None,
                     top_fraction: float | None = None,
                     valid_mask: np.ndarray | None = None) -> np.ndarray:
    """Boolean mask of points matching a query embedding.

    Exactly one of `threshold` (absolute cosine) or `top_fraction` (keep the
    top rho*N cosines, ties by point index) must be given.
    """
    if (threshold is None) == (top_fraction is None):
        raise ValueError("give exactly one of threshold / top_fraction")
    q = query.astype(np.float64).ravel()
    qn = np.linalg.norm(q)
    if qn < NORM_EPS:
        raise ValueError("query embedding has zero norm")
    cos = _normalize_rows(features) @ (q / qn)
    if valid_mask is not None:
        cos = np.where(valid_mask, cos, -np.inf)
    n = len(cos)
    if threshold is not None:
        return cos >= threshold
    if not 0.0 < top_fraction <= 1.0:
        raise ValueError(f"top_fraction must be in (0, 1], got {top_fraction}")
    m = max(1, int(np.floor(top_fraction * n + 0.5)))
    order = np.argsort(-cos, kind="stable")
    mask = np.zeros(n, dtype=bool)
    mask[order[:m]] = True
    return mask


def generate_pseudo_labels(features: np.ndarray, emb: EmbeddingMatrix,
                           gt_seen_labels: np.ndarray, unseen_class_ids,
                           restrict_to_unseen: bool = True,
                           valid_mask: np.ndarray | None = None) -> np.ndarray:
    """Keep seen ground-truth labels; classify the remaining points.

    By default the argmax is restricted to the unseen classes (transductive
    convention); `restrict_to_unseen=False` uses the full class set.
    """
    gt = np.asarray(gt_seen_labels, dtype=np.int32)
    if gt.shape[0] != features.shape[0]:
        raise ValueError("gt_seen_labels length does not match features")
    unseen = sorted(int(u) for u in unseen_class_ids)
    if restrict_to_unseen and not unseen:
        raise ValueError("restricted mode needs a nonempty unseen class set")
    k = emb.rows.shape[0]
    if any(not 0 <= u < k for u in unseen):
        raise ValueError(f"unseen ids out of range [0, {k})")
    cos = _normalize_rows(features) @ emb.rows.astype(np.float64).T
    if restrict_to_unseen:
        sub = cos[:, unseen]
        pred = np.array(unseen, dtype=np.int32)[sub.argmax(axis=1)]
    else:
        pred = cos.argmax(axis=1).astype(np.int32)
    if valid_mask is not None:
        pred = np.where(valid_mask, pred, np.int32(-1))
    out = gt.copy()
    unlabeled = gt < 0
    out[unlabeled] = pred[unlabeled]
    return out


# ---------------------------------------------------------------------------
# label-set configuration


@dataclass
class LabelSet:
    """Class names plus optional grouping, parsed from a key=value text file.

    Keys: classes (required), ignore, head, common, tail, seen, unseen; all
    comma-separated name lists.  Ignored classes are dropped everywhere;
    class ids index the remaining (active) list in order.
    """

    names: list[str]
    ignore: list[str] = field(default_factory=list)
    head: list[int] = field(default_factory=list)
    common: list[int] = field(default_factory=list)
    tail: list[int] = field(default_factory=list)
    seen: list[int] = field(default_factory=list)
    unseen: list[int] = field(default_factory=list)

    def id_of(self, name: str) -> int:
        return self.names.index(name)


def load_label_set(path) -> LabelSet:
    if not Path(path).exists():
        raise ConfigError(f"label-set file not found: {path}")
    raw: dict[str, list[str]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        raw[key.strip()] = [v.strip() for v in val.split(",") if v.strip()]
    if "classes" not in raw or not raw["classes"]:
        raise ConfigError(f"{path}: missing 'classes'")
    ignore = raw.get("ignore", [])
    names = [c for c in raw["classes"] if c not in ignore]
    if len(set(names)) != len(names):
        raise ConfigError(f"{path}: duplicate class names")

    def ids(key: str) -> list[int]:
        out = []
        for name in raw.get(key, []):
            if name in ignore:
                continue
            if name not in names:
                raise ConfigError(f"{path}: {key} names unknown class {name!r}")
            out.append(names.index(name))
        return out

    return LabelSet(names, ignore, ids("head"), ids("common"), ids("tail"),
                    ids("seen"), ids("unseen"))


# ---------------------------------------------------------------------------
# colored PLY export

_BASE_PALETTE = np.array([
    (174, 199, 232), (152, 223, 138), (31, 119, 180), (255, 187, 120),
    (188, 189, 34), (140, 86, 75), (255, 152, 150), (214, 39, 40),
    (197, 176, 213), (148, 103, 189), (196, 156, 148), (23, 190, 207),
    (247, 182, 210), (219, 219, 141), (255, 127, 14), (158, 218, 229),
    (44, 160, 44), (112, 128, 144), (227, 119, 194), (82, 84, 163),
], dtype=np.uint8)

IGNORE_COLOR = (128, 128, 128)


def class_palette(k: int) -> np.ndarray:
    """Deterministic palette: a fixed 20-color table, extended by
    golden-ratio hue stepping for larger label sets."""
    if k <= len(_BASE_PALETTE):
        return _BASE_PALETTE[:k].copy()
    extra = []
    hue = 0.13
    for _ in range(k - len(_BASE_PALETTE)):
        hue = (hue + 0.61803398875) % 1.0
        r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.95)
        extra.append((int(r * 255), int(g * 255), int(b * 255)))
    return np.concatenate([_BASE_PALETTE, np.array(extra, dtype=np.uint8)])


def segmentation_to_ply(cloud: PointCloud, labels: np.ndarray, path,
                        n_classes: int | None = None) -> None:
    k = n_classes if n_classes is not None else int(labels.max()) + 1
    palette = class_palette(max(k, 1))
    colors = np.empty((len(labels), 3), dtype=np.uint8)
    ig = labels < 0
    colors[ig] = IGNORE_COLOR
    colors[~ig] = palette[labels[~ig]]
    write_ply(path, PointCloud(cloud.positions, colors))


def mask_to_ply(cloud: PointCloud, mask: np.ndarray, path) -> None:
    colors = np.full((len(mask), 3), 190, dtype=np.uint8)
    colors[mask] = (214, 39, 40)
    write_ply(path, PointCloud(cloud.positions, colors))
