"""vitexport: dump encoder weights, prompt-ensemble text embeddings, and
reference activations as FOT1 bundles.

  vitexport weights --model toy[:seed[:layers[:width]]] --out DIR
  vitexport weights --model openai/clip-vit-base-patch16 --out DIR
  vitexport text --classes FILE --out emb.fot1 [--model ID] [--dim 512]
  vitexport query --text "something to sit on" --out q.fot1 [--model ID]
  vitexport reference --bundle DIR --out DIR [--image PNG | --zero-image]
"""
import argparse
import sys

import numpy as np

from . import bundles, fot1, reference, textbank


def cmd_weights(args) -> int:
    if args.model.startswith("toy"):
        config, tensors = bundles.toy_model(**bundles.parse_toy_spec(args.model))
    else:
        config, tensors = bundles.clip_vision_model(args.model)
    manifest = bundles.write_bundle(args.out, config, tensors)
    print(f"wrote {len(tensors)} tensors ({config['layers']} layers, "
          f"width {config['width']}, embed {config['embed_dim']}) -> {manifest}")
    return 0


def cmd_text(args) -> int:
    names = textbank.read_class_names(args.classes)
    emb = textbank.export_text_embeddings(names, args.out, model_id=args.model,
                                          dim=args.dim, seed=args.seed)
    print(f"wrote {emb.shape} prompt embeddings for {len(names)} classes -> {args.out}")
    return 0


def cmd_query(args) -> int:
    q = textbank.export_query_embedding(args.text, args.out, model_id=args.model,
                                        dim=args.dim, seed=args.seed)
    print(f"wrote query embedding {q.shape} -> {args.out}")
    return 0


def cmd_reference(args) -> int:
    config, _ = bundles.read_bundle(args.bundle)
    size = config["image_size"]
    if args.zero_image:
        image = np.zeros((size, size, 3), dtype=np.float32)
    elif args.image:
        from PIL import Image

        raw = np.asarray(Image.open(args.image).convert("RGB"), dtype=np.float32) / 255.0
        if raw.shape[:2] != (size, size):
            raise SystemExit(f"--image must already be {size}x{size}")
        mean = np.array(config["mean"], dtype=np.float32)
        std = np.array(config["std"], dtype=np.float32)
        image = ((raw - mean) / std).astype(np.float32)
    elif args.input_tensor:
        image = fot1.load(args.input_tensor).astype(np.float32)
    else:
        raise SystemExit("give --image, --input-tensor, or --zero-image")
    listing = reference.export_reference_activations(args.bundle, image, args.out)
    print(f"wrote reference activations -> {listing}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="vitexport", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("weights", help="export encoder weights as a FOT1 bundle")
    p.add_argument("--model", required=True,
                   help="toy[:seed[:layers[:width]]] or a pretrained model id")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("text", help="export (K, 80, C) prompt embeddings")
    p.add_argument("--classes", required=True, help="class-name file")
    p.add_argument("--out", required=True)
    p.add_argument("--model", default="toy")
    p.add_argument("--dim", type=int, default=512, help="toy embedding width")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_text)

    p = sub.add_parser("query", help="export one open-world query embedding")
    p.add_argument("--text", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default="toy")
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("reference", help="dump per-layer reference activations")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image", help="PNG already at encoder input size")
    p.add_argument("--input-tensor", help="FOT1 (S, S, 3) normalized input")
    p.add_argument("--zero-image", action="store_true")
    p.set_defaults(func=cmd_reference)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
