"""Export pretrained/toy ViT weights, prompt-ensemble text embeddings, and
reference activations into FOT1 bundles for downstream consumers."""

__version__ = "0.1.0"
