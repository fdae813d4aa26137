"""Shared synthetic fixtures: planted multi-wall scenes and a hand-built
encoder whose segment features are a pure function of segment color."""
from pathlib import Path

import numpy as np
from PIL import Image

from scenedistill import vit_local
from scenedistill.tensorio import PointCloud, write_ply

WALL_COLORS = np.array([
    (255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 255, 0), (255, 0, 255),
], dtype=np.uint8)

WALL_SPACING = 10.0  # meters between wall/camera pairs; FOV never overlaps


def planted_vit_weights(d: int = 8, image_size: int = 32, patch_size: int = 8,
                        embed_dim: int = 8) -> vit_local.ViTWeights:
    """One-layer encoder reduced to color averaging.

    Patch embedding emits per-channel patch means; q/k are zero (uniform
    attention within each token set), v is the identity, and the MLP is
    zeroed, so a local token ends up as LN(mean of its patches' LN'd
    embeddings): a deterministic, injective function of patch color.
    """
    g = image_size // patch_size
    assert g * g >= 1
    npx = patch_size * patch_size
    patch_embed = np.zeros((d, 3 * npx), dtype=np.float32)
    for ch in range(3):
        patch_embed[ch, ch * npx:(ch + 1) * npx] = 1.0 / npx
    eye = np.eye(d, dtype=np.float32)
    qkv = np.zeros((3 * d, d), dtype=np.float32)
    qkv[2 * d:] = eye  # value path only
    layer = vit_local.LayerWeights(
        ln1_scale=np.ones(d, np.float32), ln1_bias=np.zeros(d, np.float32),
        qkv_w=qkv, qkv_b=np.zeros(3 * d, np.float32),
        attn_out_w=eye.copy(), attn_out_b=np.zeros(d, np.float32),
        ln2_scale=np.ones(d, np.float32), ln2_bias=np.zeros(d, np.float32),
        mlp_in_w=np.zeros((4 * d, d), np.float32), mlp_in_b=np.zeros(4 * d, np.float32),
        mlp_out_w=np.zeros((d, 4 * d), np.float32), mlp_out_b=np.zeros(d, np.float32),
    )
    cfg = vit_local.ViTConfig(image_size=image_size, patch_size=patch_size,
                              width=d, heads=2, layers=1, embed_dim=embed_dim)
    return vit_local.ViTWeights(
        config=cfg,
        patch_embed=patch_embed,
        class_token=np.zeros(d, np.float32),
        pos_embed=np.zeros((g * g + 1, d), np.float32),
        layers=[layer],
        ln_final_scale=np.ones(d, np.float32),
        ln_final_bias=np.zeros(d, np.float32),
        proj=np.eye(embed_dim, d, dtype=np.float32),
        mean=np.zeros(3, np.float32),
        std=np.ones(3, np.float32),
    )


def make_planted_scene(scene_dir: Path, n_classes: int = 5, grid: tuple = (10, 15),
                       view_wh: tuple = (64, 48)) -> np.ndarray:
    """Write an n_classes-wall RGB-D scene; camera k sees only wall k.

    Returns the ground-truth wall index per point.  Every frame is a
    constant-color view of its wall at 2 m depth.
    """
    w, h = view_wh
    fx = fy = 60.0
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    scene = Path(scene_dir)
    for sub in ("color", "depth", "pose", "intrinsics"):
        (scene / sub).mkdir(parents=True, exist_ok=True)

    positions = []
    colors = []
    gt = []
    ys = np.linspace(-0.35, 0.35, grid[0])
    xs = np.linspace(-0.45, 0.45, grid[1])
    for k in range(n_classes):
        fid = f"{k:06d}"
        color = np.full((h, w, 3), WALL_COLORS[k], dtype=np.uint8)
        Image.fromarray(color).save(scene / "color" / f"{fid}.png")
        depth = np.full((h, w), 2000, dtype=np.uint16)
        Image.fromarray(depth).save(scene / "depth" / f"{fid}.png")
        pose = np.eye(4)
        pose[0, 3] = k * WALL_SPACING
        np.savetxt(scene / "pose" / f"{fid}.txt", pose, fmt="%.6f")
        (scene / "intrinsics" / f"{fid}.txt").write_text(f"{fx} {fy} {cx} {cy}\n")
        for y in ys:
            for x in xs:
                positions.append((k * WALL_SPACING + x, y, 2.0))
                colors.append(WALL_COLORS[k])
                gt.append(k)
    cloud = PointCloud(np.array(positions, dtype=np.float32),
                       np.array(colors, dtype=np.uint8))
    write_ply(scene / "cloud.ply", cloud)
    return np.array(gt, dtype=np.int32)


def planted_labelset_text(n_classes: int = 5, unseen: tuple = (3, 4)) -> str:
    names = [f"wall{i}" for i in range(n_classes)]
    seen = [names[i] for i in range(n_classes) if i not in unseen]
    return (
        f"classes = {', '.join(names)}\n"
        f"seen = {', '.join(seen)}\n"
        f"unseen = {', '.join(names[i] for i in unseen)}\n"
    )
