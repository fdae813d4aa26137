"""ViT encoder forward pass with extra per-segment classification tokens.

Each segment of a crop gets one non-learnable local token, initialized as
an exact copy of the class token (including its positional embedding).
Local tokens are updated with the encoder's own pre-trained weights, but
their attention softmax runs only over the patches assigned to their
segment; they never appear in any key/value set, so the class and patch
token trajectories are bit-identical to an unmodified forward.  (Whether
the class token should also be visible to the local tokens is ambiguous;
we restrict strictly to the assigned patches.)

Inference only; no gradients flow through this module.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .regions import PatchAssignment, assign_patches
from .superpixel import SuperpixelMap
from .tensorio import read_tensor, write_tensor

LN_EPS = 1e-5

ACTIVATIONS = ("quick_gelu", "gelu_tanh", "identity")


@dataclass(frozen=True)
class ViTConfig:
    image_size: int
    patch_size: int
    width: int
    heads: int
    layers: int
    embed_dim: int
    activation: str = "quick_gelu"

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid


@dataclass
class LayerWeights:
    ln1_scale: np.ndarray
    ln1_bias: np.ndarray
    qkv_w: np.ndarray        # (3d, d), rows = [Wq; Wk; Wv]
    qkv_b: np.ndarray        # (3d,)
    attn_out_w: np.ndarray   # (d, d)
    attn_out_b: np.ndarray
    ln2_scale: np.ndarray
    ln2_bias: np.ndarray
    mlp_in_w: np.ndarray     # (d_mlp, d)
    mlp_in_b: np.ndarray
    mlp_out_w: np.ndarray    # (d, d_mlp)
    mlp_out_b: np.ndarray


@dataclass
class ViTWeights:
    config: ViTConfig
    patch_embed: np.ndarray      # (d, 3 * patch_size^2)
    class_token: np.ndarray      # (d,)
    pos_embed: np.ndarray        # (M + 1, d)
    layers: list[LayerWeights]
    ln_final_scale: np.ndarray
    ln_final_bias: np.ndarray
    proj: np.ndarray             # (embed_dim, d)
    mean: np.ndarray             # (3,) pixel normalization
    std: np.ndarray              # (3,)
    ln_pre_scale: np.ndarray | None = None
    ln_pre_bias: np.ndarray | None = None


@dataclass
class TokenState:
    """Class + patch tokens as one (1+M, d) array, local tokens apart."""

    seq: np.ndarray            # (1 + M, d)
    local_tokens: np.ndarray   # (N, d)

    @property
    def global_token(self) -> np.ndarray:
        return self.seq[0]

    @property
    def patch_tokens(self) -> np.ndarray:
        return self.seq[1:]


# ---------------------------------------------------------------------------
# primitive ops


def layer_norm(x: np.ndarray, scale: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * scale + bias


def _activation(name: str):
    if name == "quick_gelu":
        return lambda x: x * (1.0 / (1.0 + np.exp(-1.702 * x)))
    if name == "gelu_tanh":
        c = np.sqrt(2.0 / np.pi).astype(np.float32)
        return lambda x: 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x ** 3)))
    return lambda x: x


def _softmax(scores: np.ndarray) -> np.ndarray:
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    t, d = x.shape
    return x.reshape(t, heads, d // heads).transpose(1, 0, 2)  # (h, T, dh)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dh)


def full_attention(h_norm: np.ndarray, lw: LayerWeights, heads: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Standard multi-head self-attention over all rows of h_norm.

    Returns (attended output after out-projection, k, v) so the restricted
    path can reuse the exact patch keys/values.
    """
    d = h_norm.shape[1]
    qkv = h_norm @ lw.qkv_w.T + lw.qkv_b
    q, k, v = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
    qh = _split_heads(q, heads)
    kh = _split_heads(k, heads)
    vh = _split_heads(v, heads)
    scale = 1.0 / np.sqrt(np.float32(d // heads))
    weights = _softmax((qh @ kh.transpose(0, 2, 1)) * scale)
    out = _merge_heads(weights @ vh)
    return out @ lw.attn_out_w.T + lw.attn_out_b, k, v


def restricted_attention(q_local: np.ndarray, k_patch: np.ndarray, v_patch: np.ndarray,
                         token_sets, heads: int) -> np.ndarray:
    """Per-head attention of each local token over exactly its assigned
    patches; the softmax is normalized over that set only.

    q_local: (N, d) local-token queries; k_patch/v_patch: (M, d).
    Returns the (N, d) attended values (before the output projection).
    """
    n, d = q_local.shape
    m = k_patch.shape[0]
    if n == 0:
        return np.zeros((0, d), dtype=q_local.dtype)
    mask = np.zeros((n, m), dtype=bool)
    for j, s in enumerate(token_sets):
        if len(s) == 0:
            raise ValueError(f"token set for segment {j} is empty")
        mask[j, s] = True
    qh = _split_heads(q_local, heads)          # (h, N, dh)
    kh = _split_heads(k_patch, heads)          # (h, M, dh)
    vh = _split_heads(v_patch, heads)
    scale = 1.0 / np.sqrt(np.float32(d // heads))
    scores = (qh @ kh.transpose(0, 2, 1)) * scale  # (h, N, M)
    scores = np.where(mask[None, :, :], scores, -np.inf)
    smax = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - smax) * mask[None, :, :]
    weights = e / e.sum(axis=-1, keepdims=True)
    return _merge_heads(weights @ vh)


def _mlp(x: np.ndarray, lw: LayerWeights, act) -> np.ndarray:
    return act(x @ lw.mlp_in_w.T + lw.mlp_in_b) @ lw.mlp_out_w.T + lw.mlp_out_b


def attention_block_restricted(state: TokenState, assignment: PatchAssignment,
                               lw: LayerWeights, heads: int, act) -> TokenState:
    """One transformer block: the class+patch rows run the unmodified path,
    local tokens run the restricted attention with the same weights."""
    h = layer_norm(state.seq, lw.ln1_scale, lw.ln1_bias)
    attn, k, v = full_attention(h, lw, heads)
    seq = state.seq + attn
    seq = seq + _mlp(layer_norm(seq, lw.ln2_scale, lw.ln2_bias), lw, act)

    d = state.seq.shape[1]
    hl = layer_norm(state.local_tokens, lw.ln1_scale, lw.ln1_bias)
    ql = hl @ lw.qkv_w[:d].T + lw.qkv_b[:d]
    al = restricted_attention(ql, k[1:], v[1:], assignment.token_sets, heads)
    loc = state.local_tokens + (al @ lw.attn_out_w.T + lw.attn_out_b)
    loc = loc + _mlp(layer_norm(loc, lw.ln2_scale, lw.ln2_bias), lw, act)
    return TokenState(seq, loc)


# ---------------------------------------------------------------------------
# full forward


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resampling with half-pixel-aligned centers."""
    h, w = img.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(np.float32)[:, None, None]
    wx = (xs - x0).astype(np.float32)[None, :, None]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    dd = img[np.ix_(y1, x1)]
    top = a * (1 - wx) + b * wx
    bot = c * (1 - wx) + dd * wx
    return top * (1 - wy) + bot * wy


def normalize_crop(crop: np.ndarray, w: ViTWeights) -> np.ndarray:
    """u8 crop -> upsampled, mean/std-normalized f32 encoder input."""
    size = w.config.image_size
    img = crop.astype(np.float32) / np.float32(255.0)
    if img.shape[:2] != (size, size):
        img = bilinear_resize(img, size, size)
    return (img - w.mean) / w.std


def patchify_and_embed(img: np.ndarray, w: ViTWeights, n_locals: int) -> TokenState:
    """Linear patch embedding + positional embeddings; local tokens start as
    exact copies of the embedded class token."""
    cfg = w.config
    size, p, g = cfg.image_size, cfg.patch_size, cfg.grid
    if img.shape != (size, size, 3):
        raise ValueError(f"expected ({size}, {size}, 3) input, got {img.shape}")
    patches = (
        img.reshape(g, p, g, p, 3)
        .transpose(0, 2, 4, 1, 3)
        .reshape(g * g, 3 * p * p)
        .astype(np.float32)
    )
    seq = np.empty((1 + cfg.n_patches, cfg.width), dtype=np.float32)
    seq[0] = w.class_token + w.pos_embed[0]
    seq[1:] = patches @ w.patch_embed.T + w.pos_embed[1:]
    locals_ = np.repeat(seq[0][None, :], n_locals, axis=0)
    return TokenState(seq, locals_)


def forward_tokens(img: np.ndarray, w: ViTWeights, assignment: PatchAssignment,
                   n_locals: int, trace: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Run all blocks; returns (local features (N, embed_dim), global (embed_dim,)).

    ``trace``, if given, collects a copy of the (1+M, d) class+patch sequence
    after embedding and after every block.
    """
    act = _activation(w.config.activation)
    state = patchify_and_embed(img, w, n_locals)
    if w.ln_pre_scale is not None:
        state = TokenState(
            layer_norm(state.seq, w.ln_pre_scale, w.ln_pre_bias),
            layer_norm(state.local_tokens, w.ln_pre_scale, w.ln_pre_bias),
        )
    if trace is not None:
        trace.append(state.seq.copy())
    for lw in w.layers:
        state = attention_block_restricted(state, assignment, lw, w.config.heads, act)
        if trace is not None:
            trace.append(state.seq.copy())
    g = layer_norm(state.seq[0], w.ln_final_scale, w.ln_final_bias) @ w.proj.T
    loc = layer_norm(state.local_tokens, w.ln_final_scale, w.ln_final_bias) @ w.proj.T
    return loc, g


def forward_with_local_tokens(crop: np.ndarray, spmap: SuperpixelMap,
                              w: ViTWeights) -> tuple[np.ndarray, np.ndarray]:
    """Superpixel features for one crop: (N, embed_dim) plus the unchanged
    global embedding.  Outputs are unnormalized (classification normalizes)."""
    assignment = assign_patches(spmap, w.config.grid)
    img = normalize_crop(crop, w)
    return forward_tokens(img, w, assignment, spmap.n_segments)


def broadcast_superpixel_features(features: np.ndarray, spmap: SuperpixelMap) -> np.ndarray:
    """Per-pixel map with output(p) = features[label(p)]."""
    labels = spmap.labels
    if labels.min() < 0 or labels.max() >= features.shape[0]:
        raise ValueError(
            f"labels span [{labels.min()}, {labels.max()}] but features have "
            f"{features.shape[0]} rows"
        )
    return features[labels]


def random_weights(cfg: ViTConfig, seed: int = 0, scale: float = 0.05,
                   mlp_ratio: int = 4, with_ln_pre: bool = True) -> ViTWeights:
    """Seeded random toy weights (self-check / benchmark fixtures)."""
    rng = np.random.default_rng(seed)
    d = cfg.width

    def r(*shape):
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    def ln():
        return (1.0 + rng.standard_normal(d) * 0.01).astype(np.float32), r(d)

    layers = []
    for _ in range(cfg.layers):
        s1, b1 = ln()
        s2, b2 = ln()
        layers.append(LayerWeights(
            ln1_scale=s1, ln1_bias=b1,
            qkv_w=r(3 * d, d), qkv_b=r(3 * d),
            attn_out_w=r(d, d), attn_out_b=r(d),
            ln2_scale=s2, ln2_bias=b2,
            mlp_in_w=r(mlp_ratio * d, d), mlp_in_b=r(mlp_ratio * d),
            mlp_out_w=r(d, mlp_ratio * d), mlp_out_b=r(d),
        ))
    sp, bp = ln()
    sf, bf = ln()
    return ViTWeights(
        config=cfg,
        patch_embed=r(d, 3 * cfg.patch_size ** 2),
        class_token=r(d),
        pos_embed=r(cfg.n_patches + 1, d),
        layers=layers,
        ln_final_scale=sf, ln_final_bias=bf,
        proj=r(cfg.embed_dim, d),
        mean=np.zeros(3, dtype=np.float32),
        std=np.ones(3, dtype=np.float32),
        ln_pre_scale=sp if with_ln_pre else None,
        ln_pre_bias=bp if with_ln_pre else None,
    )


# ---------------------------------------------------------------------------
# weight bundle I/O (FOT1 directory + text manifest)

_LAYER_FIELDS = (
    "ln1_scale", "ln1_bias", "qkv_w", "qkv_b", "attn_out_w", "attn_out_b",
    "ln2_scale", "ln2_bias", "mlp_in_w", "mlp_in_b", "mlp_out_w", "mlp_out_b",
)


def _layer_shapes(cfg: ViTConfig, mlp_dim: int) -> dict[str, tuple]:
    d = cfg.width
    return {
        "ln1_scale": (d,), "ln1_bias": (d,),
        "qkv_w": (3 * d, d), "qkv_b": (3 * d,),
        "attn_out_w": (d, d), "attn_out_b": (d,),
        "ln2_scale": (d,), "ln2_bias": (d,),
        "mlp_in_w": (mlp_dim, d), "mlp_in_b": (mlp_dim,),
        "mlp_out_w": (d, mlp_dim), "mlp_out_b": (d,),
    }


def save_weight_bundle(out_dir, w: ViTWeights) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = w.config
    lines = [
        "format = vit-fot1-v1",
        f"image_size = {cfg.image_size}",
        f"patch_size = {cfg.patch_size}",
        f"width = {cfg.width}",
        f"heads = {cfg.heads}",
        f"layers = {cfg.layers}",
        f"embed_dim = {cfg.embed_dim}",
        f"activation = {cfg.activation}",
        "mean = " + " ".join(f"{v:.9g}" for v in w.mean),
        "std = " + " ".join(f"{v:.9g}" for v in w.std),
    ]
    tensors: dict[str, np.ndarray] = {
        "patch_embed": w.patch_embed,
        "class_token": w.class_token,
        "pos_embed": w.pos_embed,
        "ln_final_scale": w.ln_final_scale,
        "ln_final_bias": w.ln_final_bias,
        "proj": w.proj,
    }
    if w.ln_pre_scale is not None:
        tensors["ln_pre_scale"] = w.ln_pre_scale
        tensors["ln_pre_bias"] = w.ln_pre_bias
    for i, lw in enumerate(w.layers):
        for f in _LAYER_FIELDS:
            tensors[f"layers.{i}.{f}"] = getattr(lw, f)
    for name, arr in sorted(tensors.items()):
        fname = name.replace(".", "_") + ".fot1"
        write_tensor(out / fname, np.asarray(arr, dtype=np.float32))
        lines.append(f"tensor {name} = {fname}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_weight_bundle(bundle_dir) -> ViTWeights:
    bundle = Path(bundle_dir)
    manifest = bundle / "manifest.txt"
    if not manifest.exists():
        raise DataError(f"{bundle}: missing manifest.txt")
    kv: dict[str, str] = {}
    tensor_files: dict[str, str] = {}
    for raw in manifest.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key.startswith("tensor "):
            tensor_files[key[len("tensor "):].strip()] = val
        else:
            kv[key] = val
    try:
        cfg = ViTConfig(
            image_size=int(kv["image_size"]),
            patch_size=int(kv["patch_size"]),
            width=int(kv["width"]),
            heads=int(kv["heads"]),
            layers=int(kv["layers"]),
            embed_dim=int(kv["embed_dim"]),
            activation=kv.get("activation", "quick_gelu"),
        )
        mean = np.array([float(v) for v in kv["mean"].split()], dtype=np.float32)
        std = np.array([float(v) for v in kv["std"].split()], dtype=np.float32)
    except (KeyError, ValueError) as e:
        raise DataError(f"{manifest}: bad or missing config field ({e})") from e

    def tensor(name: str, shape: tuple | None) -> np.ndarray:
        if name not in tensor_files:
            raise DataError(f"{manifest}: missing tensor {name!r}")
        arr = read_tensor(bundle / tensor_files[name])
        if shape is not None and arr.shape != shape:
            raise DataError(f"{name}: shape {arr.shape}, expected {shape}")
        return arr.astype(np.float32)

    d, m = cfg.width, cfg.n_patches
    mlp_in = tensor("layers.0.mlp_in_w", None)
    mlp_dim = mlp_in.shape[0]
    shapes = _layer_shapes(cfg, mlp_dim)
    layers = [
        LayerWeights(**{f: tensor(f"layers.{i}.{f}", shapes[f]) for f in _LAYER_FIELDS})
        for i in range(cfg.layers)
    ]
    ln_pre_scale = ln_pre_bias = None
    if "ln_pre_scale" in tensor_files:
        ln_pre_scale = tensor("ln_pre_scale", (d,))
        ln_pre_bias = tensor("ln_pre_bias", (d,))
    return ViTWeights(
        config=cfg,
        patch_embed=tensor("patch_embed", (d, 3 * cfg.patch_size ** 2)),
        class_token=tensor("class_token", (d,)),
        pos_embed=tensor("pos_embed", (m + 1, d)),
        layers=layers,
        ln_final_scale=tensor("ln_final_scale", (d,)),
        ln_final_bias=tensor("ln_final_bias", (d,)),
        proj=tensor("proj", (cfg.embed_dim, d)),
        mean=mean,
        std=std,
        ln_pre_scale=ln_pre_scale,
        ln_pre_bias=ln_pre_bias,
    )
