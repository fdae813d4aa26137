"""Prompt-ensemble text embeddings.

PROMPT_TEMPLATES is the standard 80-template hand-crafted set used for
prompt-ensemble zero-shot classification; per class we export the full
(K, 80, C) tensor plus the averaged, L2-normalized (K, C) rows.
"""
from pathlib import Path

import numpy as np
import torch

from . import fot1

PROMPT_TEMPLATES = [
    "a bad photo of a {}.",
    "a photo of many {}.",
    "a sculpture of a {}.",
    "a photo of the hard to see {}.",
    "a low resolution photo of the {}.",
    "a rendering of a {}.",
    "graffiti of a {}.",
    "a bad photo of the {}.",
    "a cropped photo of the {}.",
    "a tattoo of a {}.",
    "the embroidered {}.",
    "a photo of a hard to see {}.",
    "a bright photo of a {}.",
    "a photo of a clean {}.",
    "a photo of a dirty {}.",
    "a dark photo of the {}.",
    "a drawing of a {}.",
    "a photo of my {}.",
    "the plastic {}.",
    "a photo of the cool {}.",
    "a close-up photo of a {}.",
    "a black and white photo of the {}.",
    "a painting of the {}.",
    "a painting of a {}.",
    "a pixelated photo of the {}.",
    "a sculpture of the {}.",
    "a bright photo of the {}.",
    "a cropped photo of a {}.",
    "a plastic {}.",
    "a photo of the dirty {}.",
    "a jpeg corrupted photo of a {}.",
    "a blurry photo of the {}.",
    "a photo of the {}.",
    "a good photo of the {}.",
    "a rendering of the {}.",
    "a {} in a video game.",
    "a photo of one {}.",
    "a doodle of a {}.",
    "a close-up photo of the {}.",
    "a photo of a {}.",
    "the origami {}.",
    "the {} in a video game.",
    "a sketch of a {}.",
    "a doodle of the {}.",
    "a origami {}.",
    "a low resolution photo of a {}.",
    "the toy {}.",
    "a rendition of the {}.",
    "a photo of the clean {}.",
    "a photo of a large {}.",
    "a rendition of a {}.",
    "a photo of a nice {}.",
    "a photo of a weird {}.",
    "a blurry photo of a {}.",
    "a cartoon {}.",
    "art of a {}.",
    "a sketch of the {}.",
    "a embroidered {}.",
    "a pixelated photo of a {}.",
    "itap of the {}.",
    "a jpeg corrupted photo of the {}.",
    "a good photo of a {}.",
    "a plushie {}.",
    "a photo of the nice {}.",
    "a photo of the small {}.",
    "a photo of the weird {}.",
    "the cartoon {}.",
    "art of the {}.",
    "a drawing of the {}.",
    "a photo of the large {}.",
    "a black and white photo of a {}.",
    "the plushie {}.",
    "a dark photo of a {}.",
    "itap of a {}.",
    "graffiti of the {}.",
    "a toy {}.",
    "itap of my {}.",
    "a photo of a cool {}.",
    "a photo of a small {}.",
    "a tattoo of the {}.",
]

assert len(PROMPT_TEMPLATES) == 80, len(PROMPT_TEMPLATES)


def read_class_names(path) -> list[str]:
    """Class names from either a `classes = a, b, ...` config or one-per-line."""
    text = Path(path).read_text()
    ignore: list[str] = []
    classes: list[str] = []
    kv_lines = False
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if sep and key.strip() in ("classes", "ignore", "head", "common", "tail",
                                   "seen", "unseen"):
            kv_lines = True
            names = [v.strip() for v in val.split(",") if v.strip()]
            if key.strip() == "classes":
                classes = names
            elif key.strip() == "ignore":
                ignore = names
        elif not kv_lines:
            classes.append(line)
    return [c for c in classes if c not in ignore]


def toy_text_embeddings(class_names, n_prompts: int = 80, dim: int = 512,
                        seed: int = 0) -> np.ndarray:
    """Seeded stand-in embeddings for CI: per class a coherent direction
    plus per-prompt jitter, mimicking how real prompt ensembles cluster."""
    gen = torch.Generator().manual_seed(seed)
    k = len(class_names)
    base = torch.randn(k, 1, dim, generator=gen)
    jitter = 0.15 * torch.randn(k, n_prompts, dim, generator=gen)
    return (base + jitter).numpy().astype(np.float32)


@torch.no_grad()
def clip_text_embeddings(class_names, model_id: str,
                         templates=None) -> np.ndarray:
    """(K, P, C) prompt embeddings from a pretrained CLIP text tower."""
    from transformers import CLIPModel, CLIPProcessor

    templates = list(templates or PROMPT_TEMPLATES)
    model = CLIPModel.from_pretrained(model_id)
    model.eval()
    processor = CLIPProcessor.from_pretrained(model_id)
    rows = []
    for name in class_names:
        prompts = [t.format(name) for t in templates]
        inputs = processor(text=prompts, return_tensors="pt", padding=True)
        feats = model.get_text_features(**inputs)
        rows.append(feats.cpu().numpy())
    return np.stack(rows).astype(np.float32)


def average_rows(prompt_embeddings: np.ndarray) -> np.ndarray:
    """Mean over prompts then L2-normalize (the classification weights)."""
    t = torch.from_numpy(prompt_embeddings.astype(np.float64))
    mean = t.mean(dim=1)
    return torch.nn.functional.normalize(mean, dim=1).numpy().astype(np.float32)


def export_text_embeddings(class_names, out_path, model_id: str = "toy",
                           dim: int = 512, seed: int = 0,
                           templates=None) -> np.ndarray:
    """Write the (K, P, C) tensor, plus the averaged rows next to it."""
    if model_id.startswith("toy"):
        n_prompts = len(templates or PROMPT_TEMPLATES)
        emb = toy_text_embeddings(class_names, n_prompts, dim, seed)
    else:
        emb = clip_text_embeddings(class_names, model_id, templates)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fot1.save(out, emb)
    fot1.save(out.with_suffix(".avg.fot1"), average_rows(emb))
    return emb


def export_query_embedding(query: str, out_path, model_id: str = "toy",
                           dim: int = 512, seed: int = 0) -> np.ndarray:
    """Single open-world query embedding (C,)."""
    if model_id.startswith("toy"):
        gen = torch.Generator().manual_seed(seed + (hash(query) % 65536))
        q = torch.randn(dim, generator=gen).numpy().astype(np.float32)
    else:
        q = clip_text_embeddings([query], model_id, templates=["{}"])[0, 0]
    fot1.save(out_path, q)
    return q
