"""Open-vocabulary 3D scene segmentation from dense 2D encoder features.

Pipeline: multi-scale crops of each RGB-D view are partitioned into
superpixels, a ViT with per-segment local classification tokens produces
one embedding per segment, segment features are broadcast to pixels and
fused across crops, projected onto the scene's points with a
depth-consistency filter, and averaged into per-point target features.
A small point network is distilled against those targets with a negative
cosine loss; segmentation and open-world queries are cosine matches
against text-embedding class weights.
"""

__version__ = "0.1.0"
