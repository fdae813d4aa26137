"""Reference activations: a plain torch forward of the vanilla encoder
(class + patch tokens only) reconstructed from a bundle.

This is an intentionally separate implementation of the same math used by
bundle consumers; per-layer dumps let them verify numerical parity.
"""
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import fot1
from .bundles import LAYER_FIELDS, read_bundle


def _act(name):
    if name == "quick_gelu":
        return lambda x: x * torch.sigmoid(1.702 * x)
    if name == "gelu_tanh":
        return lambda x: F.gelu(x, approximate="tanh")
    return lambda x: x


@torch.no_grad()
def vanilla_forward(bundle_dir, image: np.ndarray) -> dict[str, np.ndarray]:
    """Run the class+patch forward; returns the per-stage activations.

    image: (S, S, 3) float32, already at encoder input size and
    mean/std-normalized (consumers normalize the same way, so parity checks
    feed identical pixels).
    """
    config, t = read_bundle(bundle_dir)
    size, p = config["image_size"], config["patch_size"]
    heads, d = config["heads"], config["width"]
    if image.shape != (size, size, 3):
        raise ValueError(f"image must be ({size}, {size}, 3), got {image.shape}")
    act = _act(config["activation"])
    tt = {k: torch.from_numpy(v.astype(np.float32)) for k, v in t.items()}

    x = torch.from_numpy(image.astype(np.float32)).permute(2, 0, 1).unsqueeze(0)
    conv_w = tt["patch_embed"].reshape(d, 3, p, p)
    patches = F.conv2d(x, conv_w, stride=p)                 # (1, d, g, g)
    patches = patches.flatten(2).transpose(1, 2).squeeze(0)  # (M, d)
    seq = torch.cat([(tt["class_token"] + tt["pos_embed"][0]).unsqueeze(0),
                     patches + tt["pos_embed"][1:]], dim=0)
    if "ln_pre_scale" in tt:
        seq = F.layer_norm(seq, (d,), tt["ln_pre_scale"], tt["ln_pre_bias"])
    stages = {"seq_after_embed": seq.numpy().copy()}
    dh = d // heads
    m1 = seq.shape[0]
    for i in range(config["layers"]):
        lw = {f: tt[f"layers.{i}.{f}"] for f in LAYER_FIELDS}
        h = F.layer_norm(seq, (d,), lw["ln1_scale"], lw["ln1_bias"])
        qkv = F.linear(h, lw["qkv_w"], lw["qkv_b"])
        q, k, v = qkv.split(d, dim=1)
        q = q.view(m1, heads, dh).transpose(0, 1)
        k = k.view(m1, heads, dh).transpose(0, 1)
        v = v.view(m1, heads, dh).transpose(0, 1)
        attn = torch.softmax(q @ k.transpose(1, 2) / dh ** 0.5, dim=-1) @ v
        attn = attn.transpose(0, 1).reshape(m1, d)
        seq = seq + F.linear(attn, lw["attn_out_w"], lw["attn_out_b"])
        h2 = F.layer_norm(seq, (d,), lw["ln2_scale"], lw["ln2_bias"])
        seq = seq + F.linear(act(F.linear(h2, lw["mlp_in_w"], lw["mlp_in_b"])),
                             lw["mlp_out_w"], lw["mlp_out_b"])
        stages[f"seq_layer_{i}"] = seq.numpy().copy()
    final = F.layer_norm(seq[0], (d,), tt["ln_final_scale"], tt["ln_final_bias"])
    stages["global_embedding"] = (tt["proj"] @ final).numpy().copy()
    return stages


def export_reference_activations(bundle_dir, image: np.ndarray, out_dir) -> Path:
    """Dump every stage of the vanilla forward as FOT1 + a listing file."""
    stages = vanilla_forward(bundle_dir, image)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, arr in stages.items():
        fot1.save(out / f"{name}.fot1", arr.astype(np.float32))
        lines.append(f"tensor {name} = {name}.fot1")
    fot1.save(out / "input_image.fot1", image.astype(np.float32))
    lines.append("tensor input_image = input_image.fot1")
    listing = out / "reference.txt"
    listing.write_text("\n".join(lines) + "\n")
    return listing
