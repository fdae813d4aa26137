"""Weight-bundle assembly: toy seeded encoders and pretrained CLIP ViTs,
written as FOT1 tensors plus a text manifest.

Manifest contract (shared with the consumer): `key = value` lines for
image_size/patch_size/width/heads/layers/embed_dim/activation/mean/std and
one `tensor <name> = <file>` line per tensor.  Layer tensors are named
layers.{i}.{field}; ln_pre_scale/ln_pre_bias are optional.
"""
from pathlib import Path

import numpy as np
import torch

from . import fot1

LAYER_FIELDS = (
    "ln1_scale", "ln1_bias", "qkv_w", "qkv_b", "attn_out_w", "attn_out_b",
    "ln2_scale", "ln2_bias", "mlp_in_w", "mlp_in_b", "mlp_out_w", "mlp_out_b",
)

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


def write_bundle(out_dir, config: dict, tensors: dict) -> Path:
    """Write tensors + manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["format = vit-fot1-v1"]
    for key in ("image_size", "patch_size", "width", "heads", "layers",
                "embed_dim", "activation"):
        lines.append(f"{key} = {config[key]}")
    lines.append("mean = " + " ".join(f"{v:.9g}" for v in config["mean"]))
    lines.append("std = " + " ".join(f"{v:.9g}" for v in config["std"]))
    for name in sorted(tensors):
        fname = name.replace(".", "_") + ".fot1"
        arr = tensors[name]
        if isinstance(arr, torch.Tensor):
            arr = arr.detach().cpu().numpy()
        fot1.save(out / fname, np.asarray(arr, dtype=np.float32))
        lines.append(f"tensor {name} = {fname}")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_bundle(bundle_dir) -> tuple[dict, dict]:
    """Parse a bundle back into (config, name->array)."""
    bundle = Path(bundle_dir)
    config: dict = {}
    tensors: dict = {}
    for raw in (bundle / "manifest.txt").read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key.startswith("tensor "):
            tensors[key[len("tensor "):].strip()] = fot1.load(bundle / val)
        elif key in ("mean", "std"):
            config[key] = tuple(float(v) for v in val.split())
        elif key in ("format", "activation"):
            config[key] = val
        else:
            config[key] = int(val)
    return config, tensors


def toy_model(seed: int = 0, image_size: int = 32, patch_size: int = 8,
              width: int = 32, heads: int = 4, layers: int = 2,
              embed_dim: int = 16, scale: float = 0.05) -> tuple[dict, dict]:
    """Seeded random encoder weights for CI-sized bundles."""
    gen = torch.Generator().manual_seed(seed)

    def r(*shape):
        return torch.randn(shape, generator=gen) * scale

    def ln(n):
        return 1.0 + torch.randn(n, generator=gen) * 0.01, r(n)

    d = width
    m = (image_size // patch_size) ** 2
    tensors = {
        "patch_embed": r(d, 3 * patch_size * patch_size),
        "class_token": r(d),
        "pos_embed": r(m + 1, d),
        "proj": r(embed_dim, d),
    }
    tensors["ln_pre_scale"], tensors["ln_pre_bias"] = ln(d)
    tensors["ln_final_scale"], tensors["ln_final_bias"] = ln(d)
    for i in range(layers):
        s1, b1 = ln(d)
        s2, b2 = ln(d)
        tensors.update({
            f"layers.{i}.ln1_scale": s1, f"layers.{i}.ln1_bias": b1,
            f"layers.{i}.qkv_w": r(3 * d, d), f"layers.{i}.qkv_b": r(3 * d),
            f"layers.{i}.attn_out_w": r(d, d), f"layers.{i}.attn_out_b": r(d),
            f"layers.{i}.ln2_scale": s2, f"layers.{i}.ln2_bias": b2,
            f"layers.{i}.mlp_in_w": r(4 * d, d), f"layers.{i}.mlp_in_b": r(4 * d),
            f"layers.{i}.mlp_out_w": r(d, 4 * d), f"layers.{i}.mlp_out_b": r(d),
        })
    config = dict(image_size=image_size, patch_size=patch_size, width=width,
                  heads=heads, layers=layers, embed_dim=embed_dim,
                  activation="quick_gelu", mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0))
    return config, tensors


def clip_vision_model(model_id: str) -> tuple[dict, dict]:
    """Map a pretrained CLIP vision tower (transformers) onto the bundle
    contract.  ViT-B/16 gives a 12-layer d=768 bundle projecting to 512."""
    from transformers import CLIPVisionModelWithProjection

    model = CLIPVisionModelWithProjection.from_pretrained(model_id)
    return map_transformers_model(model)


def map_transformers_model(model) -> tuple[dict, dict]:
    """Bundle config + tensors from a CLIPVisionModelWithProjection instance."""
    model.eval()
    cfg = model.config
    sd = {k: v.detach() for k, v in model.state_dict().items()}

    d = cfg.hidden_size
    tensors = {
        "patch_embed": sd["vision_model.embeddings.patch_embedding.weight"].reshape(d, -1),
        "class_token": sd["vision_model.embeddings.class_embedding"],
        "pos_embed": sd["vision_model.embeddings.position_embedding.weight"],
        "ln_pre_scale": sd["vision_model.pre_layrnorm.weight"],
        "ln_pre_bias": sd["vision_model.pre_layrnorm.bias"],
        "ln_final_scale": sd["vision_model.post_layernorm.weight"],
        "ln_final_bias": sd["vision_model.post_layernorm.bias"],
        "proj": sd["visual_projection.weight"],
    }
    n_layers = cfg.num_hidden_layers
    for i in range(n_layers):
        pre = f"vision_model.encoder.layers.{i}"
        qkv_w = torch.cat([sd[f"{pre}.self_attn.q_proj.weight"],
                           sd[f"{pre}.self_attn.k_proj.weight"],
                           sd[f"{pre}.self_attn.v_proj.weight"]], dim=0)
        qkv_b = torch.cat([sd[f"{pre}.self_attn.q_proj.bias"],
                           sd[f"{pre}.self_attn.k_proj.bias"],
                           sd[f"{pre}.self_attn.v_proj.bias"]], dim=0)
        tensors.update({
            f"layers.{i}.ln1_scale": sd[f"{pre}.layer_norm1.weight"],
            f"layers.{i}.ln1_bias": sd[f"{pre}.layer_norm1.bias"],
            f"layers.{i}.qkv_w": qkv_w,
            f"layers.{i}.qkv_b": qkv_b,
            f"layers.{i}.attn_out_w": sd[f"{pre}.self_attn.out_proj.weight"],
            f"layers.{i}.attn_out_b": sd[f"{pre}.self_attn.out_proj.bias"],
            f"layers.{i}.ln2_scale": sd[f"{pre}.layer_norm2.weight"],
            f"layers.{i}.ln2_bias": sd[f"{pre}.layer_norm2.bias"],
            f"layers.{i}.mlp_in_w": sd[f"{pre}.mlp.fc1.weight"],
            f"layers.{i}.mlp_in_b": sd[f"{pre}.mlp.fc1.bias"],
            f"layers.{i}.mlp_out_w": sd[f"{pre}.mlp.fc2.weight"],
            f"layers.{i}.mlp_out_b": sd[f"{pre}.mlp.fc2.bias"],
        })
    act = getattr(cfg, "hidden_act", "quick_gelu")
    config = dict(image_size=cfg.image_size, patch_size=cfg.patch_size,
                  width=d, heads=cfg.num_attention_heads, layers=n_layers,
                  embed_dim=cfg.projection_dim,
                  activation="quick_gelu" if act == "quick_gelu" else "gelu_tanh",
                  mean=CLIP_MEAN, std=CLIP_STD)
    return config, tensors


def parse_toy_spec(model_id: str) -> dict:
    """`toy[:seed[:layers[:width]]]` -> toy_model kwargs."""
    parts = model_id.split(":")
    kwargs = {}
    if len(parts) > 1:
        kwargs["seed"] = int(parts[1])
    if len(parts) > 2:
        kwargs["layers"] = int(parts[2])
    if len(parts) > 3:
        kwargs["width"] = int(parts[3])
    return kwargs
