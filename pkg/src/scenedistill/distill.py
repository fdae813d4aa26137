"""Feature distillation: train a small point network to regress per-point
target features under mean negative cosine similarity.

The network is a 3-layer tanh MLP over (xyz - scene centroid, rgb/255)
inputs with one k-NN mean-pooling layer between the hidden layers
(neighbors by distance, ties broken by point index).  Training is plain
SGD without momentum; the learning rate is multiplied by `decay` every
`decay_every` steps.  Gradients are hand-written and verified against
central finite differences on an f64 shadow copy.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, NumericError
from .projection import TargetFeatures
from .tensorio import PointCloud, read_tensor, write_tensor

log = logging.getLogger(__name__)

NORM_EPS = 1e-12
DEFAULT_KNN = 16

_PARAM_FIELDS = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass
class PointNetParams:
    w1: np.ndarray  # (hidden, d_in)
    b1: np.ndarray
    w2: np.ndarray  # (hidden, hidden)
    b2: np.ndarray
    w3: np.ndarray  # (out_dim, hidden)
    b3: np.ndarray
    knn: int = DEFAULT_KNN

    @property
    def n_params(self) -> int:
        return sum(getattr(self, f).size for f in _PARAM_FIELDS)

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f) for f in _PARAM_FIELDS]

    def astype(self, dtype) -> "PointNetParams":
        return PointNetParams(*(getattr(self, f).astype(dtype) for f in _PARAM_FIELDS),
                              knn=self.knn)


@dataclass
class TrainSchedule:
    lr0: float = 0.05
    decay: float = 0.99
    decay_every: int = 1000
    steps: int = 2000
    batch_scenes: int = 1

    def __post_init__(self):
        if self.lr0 < 0:
            raise ValueError("lr0 must be >= 0")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1]")
        if self.decay_every < 1 or self.steps < 1 or self.batch_scenes < 1:
            raise ValueError("decay_every, steps, batch_scenes must be >= 1")

    def lr_at(self, step: int) -> float:
        return self.lr0 * self.decay ** (step // self.decay_every)


def init_pointnet(out_dim: int, hidden: int = 32, d_in: int = 6, knn: int = DEFAULT_KNN,
                  seed: int = 0) -> PointNetParams:
    rng = np.random.default_rng(seed)

    def glorot(rows, cols):
        lim = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-lim, lim, size=(rows, cols)).astype(np.float32)

    return PointNetParams(
        glorot(hidden, d_in), np.zeros(hidden, dtype=np.float32),
        glorot(hidden, hidden), np.zeros(hidden, dtype=np.float32),
        glorot(out_dim, hidden), np.zeros(out_dim, dtype=np.float32),
        knn=knn,
    )


# ---------------------------------------------------------------------------
# distances and loss


def cosine_distance(f1: np.ndarray, f2: np.ndarray) -> float:
    """Negative cosine similarity in [-1, 1]; 0 for a degenerate input."""
    n1 = float(np.linalg.norm(f1))
    n2 = float(np.linalg.norm(f2))
    if n1 < NORM_EPS or n2 < NORM_EPS:
        log.warning("cosine_distance on a zero-norm vector; returning 0")
        return 0.0
    return float(-(f1 / n1) @ (f2 / n2))


def _cosine_rows(learned: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise negative cosine; degenerate rows yield 0 and are flagged."""
    n1 = np.linalg.norm(learned, axis=1)
    n2 = np.linalg.norm(target, axis=1)
    degenerate = (n1 < NORM_EPS) | (n2 < NORM_EPS)
    safe1 = np.where(degenerate, 1.0, n1)
    safe2 = np.where(degenerate, 1.0, n2)
    d = -(learned * target).sum(axis=1) / (safe1 * safe2)
    d[degenerate] = 0.0
    return d, degenerate


def distill_loss(learned: np.ndarray, target: TargetFeatures) -> float:
    """Masked mean of the negative cosine over valid rows."""
    loss, _ = distill_loss_and_grad(learned, target, need_grad=False)
    return loss


def distill_loss_and_grad(learned: np.ndarray, target: TargetFeatures,
                          need_grad: bool = True) -> tuple[float, np.ndarray | None]:
    if learned.shape != target.features.shape:
        raise ValueError(
            f"shape mismatch: learned {learned.shape} vs target {target.features.shape}"
        )
    mask = target.valid_mask
    n_valid = int(mask.sum())
    if n_valid == 0:
        raise ValueError("no valid target rows to supervise")
    f = learned[mask]
    t = target.features[mask].astype(learned.dtype)
    d, degenerate = _cosine_rows(f, t)
    if degenerate.any():
        log.warning("%d degenerate (zero-norm) rows in distillation batch",
                    int(degenerate.sum()))
    loss = float(d.sum() / n_valid)
    if not need_grad:
        return loss, None
    # dD/df = -(t_hat - (f_hat . t_hat) f_hat) / ||f||
    n1 = np.linalg.norm(f, axis=1, keepdims=True)
    n2 = np.linalg.norm(t, axis=1, keepdims=True)
    ok = ~degenerate
    grad_rows = np.zeros_like(f)
    if ok.any():
        fh = f[ok] / n1[ok]
        th = t[ok] / n2[ok]
        cos = (fh * th).sum(axis=1, keepdims=True)
        grad_rows[ok] = -(th - cos * fh) / n1[ok]
    grad = np.zeros_like(learned)
    grad[mask] = grad_rows / n_valid
    return loss, grad


# ---------------------------------------------------------------------------
# point network


def knn_indices(xyz: np.ndarray, k: int) -> np.ndarray:
    """(N, k) nearest-neighbor indices (self included), distance ties broken
    by point index; brute force in row chunks."""
    n = len(xyz)
    k_eff = min(k, n)
    pts = xyz.astype(np.float64)
    out = np.empty((n, k_eff), dtype=np.int64)
    chunk = max(1, int(2e7) // max(1, n))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        d2 = ((pts[lo:hi, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")
        out[lo:hi] = order[:, :k_eff]
    return out


def pointnet_inputs(cloud: PointCloud) -> np.ndarray:
    """(N, 6) inputs: xyz minus the scene centroid, rgb/255 (zeros if absent)."""
    pos = cloud.positions.astype(np.float32)
    centroid = pos.mean(axis=0, dtype=np.float64).astype(np.float32)
    if cloud.colors is not None:
        rgb = cloud.colors.astype(np.float32) / np.float32(255.0)
    else:
        rgb = np.zeros_like(pos)
    return np.concatenate([pos - centroid, rgb], axis=1)


def forward_pointnet(cloud: PointCloud, params: PointNetParams,
                     _cache: dict | None = None) -> np.ndarray:
    """(N, out_dim) features; deterministic per the k-NN tie rule."""
    x, nbrs = _prepare(cloud, params.knn, _cache)
    acts = _forward_acts(x, nbrs, params)
    return acts[-1]


def _prepare(cloud: PointCloud, k: int, cache: dict | None):
    if cache is not None and "x" in cache:
        return cache["x"], cache["nbrs"]
    x = pointnet_inputs(cloud)
    nbrs = knn_indices(cloud.positions, k)
    if cache is not None:
        cache["x"] = x
        cache["nbrs"] = nbrs
    return x, nbrs


def _forward_acts(x, nbrs, params: PointNetParams):
    h1 = np.tanh(x @ params.w1.T + params.b1)
    pooled = h1[nbrs].mean(axis=1)
    h2 = np.tanh(pooled @ params.w2.T + params.b2)
    out = h2 @ params.w3.T + params.b3
    return x, h1, pooled, h2, out


def _backward(acts, nbrs, params: PointNetParams, g_out: np.ndarray) -> list[np.ndarray]:
    x, h1, pooled, h2, _ = acts
    k = nbrs.shape[1]
    g_w3 = g_out.T @ h2
    g_b3 = g_out.sum(axis=0)
    g_h2 = g_out @ params.w3
    g_pre2 = g_h2 * (1.0 - h2 * h2)
    g_w2 = g_pre2.T @ pooled
    g_b2 = g_pre2.sum(axis=0)
    g_pool = g_pre2 @ params.w2
    g_h1 = np.zeros_like(h1)
    np.add.at(g_h1, nbrs.ravel(), np.repeat(g_pool / k, k, axis=0))
    g_pre1 = g_h1 * (1.0 - h1 * h1)
    g_w1 = g_pre1.T @ x
    g_b1 = g_pre1.sum(axis=0)
    return [g_w1, g_b1, g_w2, g_b2, g_w3, g_b3]


def scene_loss_and_grads(cloud: PointCloud, target: TargetFeatures,
                         params: PointNetParams,
                         cache: dict | None = None) -> tuple[float, list[np.ndarray]]:
    x, nbrs = _prepare(cloud, params.knn, cache)
    acts = _forward_acts(x, nbrs, params)
    loss, g_out = distill_loss_and_grad(acts[-1], target)
    return loss, _backward(acts, nbrs, params, g_out)


# ---------------------------------------------------------------------------
# training


def train(scenes, schedule: TrainSchedule, params: PointNetParams | None = None,
          hidden: int = 32, seed: int = 0,
          log_every: int = 0) -> tuple[PointNetParams, list[tuple[int, float, float]]]:
    """Plain SGD over scenes (round-robin batches of `batch_scenes`).

    Returns the trained parameters and the loss curve as (step, lr, loss)
    rows, where loss is the batch loss before the update at that step.
    """
    if not scenes:
        raise ValueError("need at least one scene")
    out_dim = scenes[0][1].features.shape[1]
    if params is None:
        params = init_pointnet(out_dim, hidden=hidden, seed=seed)
    if params.w3.shape[0] != out_dim:
        raise ValueError(
            f"network emits {params.w3.shape[0]} dims but targets have {out_dim}"
        )
    caches = [{} for _ in scenes]
    curve: list[tuple[int, float, float]] = []
    n_scenes = len(scenes)
    for step in range(schedule.steps):
        lr = schedule.lr_at(step)
        grads = None
        loss_sum = 0.0
        for b in range(schedule.batch_scenes):
            idx = (step * schedule.batch_scenes + b) % n_scenes
            cloud, target = scenes[idx]
            loss, g = scene_loss_and_grads(cloud, target, params, caches[idx])
            loss_sum += loss
            grads = g if grads is None else [a + b_ for a, b_ in zip(grads, g)]
        loss = loss_sum / schedule.batch_scenes
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss at step {step}")
        scale = np.float32(lr / schedule.batch_scenes)
        for arr, g in zip(params.arrays(), grads):
            arr -= scale * g.astype(np.float32)
        curve.append((step, lr, loss))
        if log_every and step % log_every == 0:
            log.info("step %d lr %.5g loss %.6f", step, lr, loss)
    return params, curve


def finite_diff_check(params: PointNetParams, loss_fn, n_probes: int = 20,
                      step: float = 1e-3, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_fn(params_f64) must return (loss, grads) with grads aligned to
    PointNetParams.arrays(); probing runs on an f64 shadow copy.
    """
    shadow = params.astype(np.float64)
    _, grads = loss_fn(shadow)
    arrays = shadow.arrays()
    sizes = [a.size for a in arrays]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    coords = rng.choice(total, size=min(n_probes, total), replace=False)
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for c in coords:
        ai = int(np.searchsorted(offsets, c, side="right") - 1)
        flat_i = int(c - offsets[ai])
        arr = arrays[ai]
        orig = arr.flat[flat_i]
        arr.flat[flat_i] = orig + step
        lp, _ = loss_fn(shadow)
        arr.flat[flat_i] = orig - step
        lm, _ = loss_fn(shadow)
        arr.flat[flat_i] = orig
        numeric = (lp - lm) / (2.0 * step)
        analytic = grads[ai].flat[flat_i]
        err = abs(analytic - numeric) / max(abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# persistence


def save_pointnet(out_dir, params: PointNetParams) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["format = pointnet-fot1-v1", f"knn = {params.knn}"]
    for f in _PARAM_FIELDS:
        fname = f + ".fot1"
        write_tensor(out / fname, getattr(params, f).astype(np.float32))
        lines.append(f"tensor {f} = {fname}")
    (out / "pointnet.txt").write_text("\n".join(lines) + "\n")


def load_pointnet(bundle_dir) -> PointNetParams:
    bundle = Path(bundle_dir)
    manifest = bundle / "pointnet.txt"
    if not manifest.exists():
        raise DataError(f"{bundle}: missing pointnet.txt")
    kv: dict[str, str] = {}
    files: dict[str, str] = {}
    for raw in manifest.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key.startswith("tensor "):
            files[key[len("tensor "):].strip()] = val
        else:
            kv[key] = val
    try:
        arrays = [read_tensor(bundle / files[f]) for f in _PARAM_FIELDS]
        knn = int(kv.get("knn", DEFAULT_KNN))
    except KeyError as e:
        raise DataError(f"{manifest}: missing tensor {e}") from e
    return PointNetParams(*arrays, knn=knn)


def write_loss_curve(path, curve) -> None:
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "lr", "loss"])
        for step, lr, loss in curve:
            writer.writerow([step, f"{lr:.9g}", f"{loss:.9g}"])
