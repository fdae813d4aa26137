import numpy as np
import pytest

from vitexport import bundles, fot1, reference, textbank
from vitexport.cli import main


class TestFot1:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        for dtype in ("<f4", "<u2", "u1", "<i4"):
            arr = rng.integers(0, 100, (3, 4, 2)).astype(dtype)
            fot1.save(tmp_path / "t.fot1", arr)
            back = fot1.load(tmp_path / "t.fot1")
            assert back.tobytes() == arr.tobytes()
            assert back.dtype == np.dtype(dtype)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.fot1").write_bytes(b"NOPE" + b"\0" * 12)
        with pytest.raises(ValueError):
            fot1.load(tmp_path / "x.fot1")


class TestToyBundle:
    def test_shape_contract(self, tmp_path):
        config, tensors = bundles.toy_model(seed=3, layers=2, width=32)
        bundles.write_bundle(tmp_path / "b", config, tensors)
        back_cfg, back = bundles.read_bundle(tmp_path / "b")
        d = back_cfg["width"]
        m = (back_cfg["image_size"] // back_cfg["patch_size"]) ** 2
        assert back["patch_embed"].shape == (d, 3 * back_cfg["patch_size"] ** 2)
        assert back["pos_embed"].shape == (m + 1, d)
        assert back["proj"].shape == (back_cfg["embed_dim"], d)
        for i in range(back_cfg["layers"]):
            assert back[f"layers.{i}.qkv_w"].shape == (3 * d, d)
            assert back[f"layers.{i}.mlp_in_w"].shape == (4 * d, d)

    def test_reexport_identical_bytes(self, tmp_path):
        for out in ("a", "b"):
            config, tensors = bundles.toy_model(seed=11)
            bundles.write_bundle(tmp_path / out, config, tensors)
        for p in sorted((tmp_path / "a").iterdir()):
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()

    def test_cli_weights(self, tmp_path, capsys):
        assert main(["weights", "--model", "toy:5:1:16", "--out",
                     str(tmp_path / "w")]) == 0
        cfg, tensors = bundles.read_bundle(tmp_path / "w")
        assert cfg["layers"] == 1 and cfg["width"] == 16
        assert "1 layers" in capsys.readouterr().out


@pytest.fixture(scope="module")
def random_clip(tmp_path_factory):
    """Randomly initialized CLIP vision tower: exercises the full
    state-dict mapping without downloading pretrained weights."""
    torch = pytest.importorskip("torch")
    transformers = pytest.importorskip("transformers")
    cfg = transformers.CLIPVisionConfig(
        hidden_size=32, num_hidden_layers=2, num_attention_heads=4,
        image_size=32, patch_size=8, projection_dim=16,
        intermediate_size=64, hidden_act="quick_gelu")
    torch.manual_seed(7)
    model = transformers.CLIPVisionModelWithProjection(cfg).eval()
    out = tmp_path_factory.mktemp("hf") / "bundle"
    config, tensors = bundles.map_transformers_model(model)
    bundles.write_bundle(out, config, tensors)
    return model, out


class TestTransformersMapping:
    def test_config_mapping(self, random_clip):
        _, bundle_dir = random_clip
        cfg, tensors = bundles.read_bundle(bundle_dir)
        assert cfg["width"] == 32 and cfg["layers"] == 2
        assert cfg["activation"] == "quick_gelu"
        assert "ln_pre_scale" in tensors
        assert tensors["patch_embed"].shape == (32, 3 * 64)

    def test_reference_forward_matches_transformers(self, random_clip):
        """The exporter's own forward must reproduce the source model."""
        import torch

        model, bundle_dir = random_clip
        rng = np.random.default_rng(0)
        img = rng.standard_normal((32, 32, 3)).astype(np.float32)
        stages = reference.vanilla_forward(bundle_dir, img)
        with torch.no_grad():
            want = model(pixel_values=torch.from_numpy(
                img.transpose(2, 0, 1)[None])).image_embeds[0].numpy()
        assert np.abs(stages["global_embedding"] - want).max() < 1e-5


class TestReference:
    def test_deterministic(self, tmp_path):
        config, tensors = bundles.toy_model(seed=0)
        bundles.write_bundle(tmp_path / "b", config, tensors)
        img = np.zeros((config["image_size"], config["image_size"], 3), np.float32)
        a = reference.vanilla_forward(tmp_path / "b", img)
        b = reference.vanilla_forward(tmp_path / "b", img)
        for k in a:
            assert np.array_equal(a[k], b[k])

    def test_stage_shapes(self, tmp_path):
        config, tensors = bundles.toy_model(seed=1, layers=2)
        bundles.write_bundle(tmp_path / "b", config, tensors)
        size = config["image_size"]
        m = (size // config["patch_size"]) ** 2
        rng = np.random.default_rng(0)
        img = rng.standard_normal((size, size, 3)).astype(np.float32)
        stages = reference.vanilla_forward(tmp_path / "b", img)
        assert stages["seq_after_embed"].shape == (m + 1, config["width"])
        assert stages["seq_layer_1"].shape == (m + 1, config["width"])
        assert stages["global_embedding"].shape == (config["embed_dim"],)

    def test_cli_reference_dump(self, tmp_path):
        assert main(["weights", "--model", "toy", "--out", str(tmp_path / "b")]) == 0
        assert main(["reference", "--bundle", str(tmp_path / "b"),
                     "--out", str(tmp_path / "ref"), "--zero-image"]) == 0
        listing = (tmp_path / "ref" / "reference.txt").read_text()
        assert "global_embedding" in listing
        emb = fot1.load(tmp_path / "ref" / "global_embedding.fot1")
        assert emb.ndim == 1


class TestText:
    def test_eighty_templates(self):
        assert len(textbank.PROMPT_TEMPLATES) == 80
        assert len(set(textbank.PROMPT_TEMPLATES)) == 80
        assert all("{}" in t for t in textbank.PROMPT_TEMPLATES)

    def test_toy_export_shapes(self, tmp_path):
        out = tmp_path / "emb.fot1"
        emb = textbank.export_text_embeddings(["wall", "floor"], out, dim=64)
        assert emb.shape == (2, 80, 64)
        assert fot1.load(out).shape == (2, 80, 64)
        avg = fot1.load(out.with_suffix(".avg.fot1"))
        assert avg.shape == (2, 64)
        norms = np.linalg.norm(avg.astype(np.float64), axis=1)
        assert np.all(np.abs(norms - 1) < 1e-5)

    def test_single_name_single_template(self, tmp_path):
        emb = textbank.export_text_embeddings(
            ["chair"], tmp_path / "one.fot1", dim=512, templates=["a photo of a {}."])
        assert emb.shape == (1, 1, 512)

    def test_class_file_formats(self, tmp_path):
        plain = tmp_path / "plain.txt"
        plain.write_text("wall\nfloor\n# comment\nchair\n")
        assert textbank.read_class_names(plain) == ["wall", "floor", "chair"]
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("classes = a, b, c\nignore = b\nseen = a\n")
        assert textbank.read_class_names(cfg) == ["a", "c"]

    def test_cli_text_and_query(self, tmp_path):
        classes = tmp_path / "c.txt"
        classes.write_text("wall\nfloor\n")
        out = tmp_path / "emb.fot1"
        assert main(["text", "--classes", str(classes), "--out", str(out),
                     "--dim", "32"]) == 0
        assert fot1.load(out).shape == (2, 80, 32)
        q = tmp_path / "q.fot1"
        assert main(["query", "--text", "somewhere to sit", "--out", str(q),
                     "--dim", "32"]) == 0
        assert fot1.load(q).shape == (32,)

    def test_toy_determinism(self):
        a = textbank.toy_text_embeddings(["x", "y"], 4, 16, seed=9)
        b = textbank.toy_text_embeddings(["x", "y"], 4, 16, seed=9)
        assert np.array_equal(a, b)
