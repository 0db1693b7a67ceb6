"""Command line interface.

    maskgan make-toy-data --n 2000 --resolution 64 --seed 0 --out data/toy
    maskgan train-vae  --config train.cfg --out runs/vae [--resume ckpt]
    maskgan train-gan  --config train.cfg --out runs/gan [--vae runs/vae/vae.ckpt]
    maskgan train-ebst --config train.cfg --out runs/ebst --init runs/gan/gan.ckpt
    maskgan traverse   --ckpt vae.ckpt --target a.png --ref b.png --steps 8 --out strip.png
    maskgan eval       --ckpt gan.ckpt --data data/toy --protocol style_copy --out report.json
    maskgan infer      --ckpt gan.ckpt --target t.png --target-mask tm.png \
                       --source-mask sm.png --out out.png
    maskgan serve      --ckpt gan.ckpt --port 8000 [--session-dir runs/sessions]

MASKGAN_CKPT supplies the default --ckpt for traverse/eval/infer/serve.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


def _ckpt_default():
    return os.environ.get("MASKGAN_CKPT")


def _require_ckpt(args) -> str:
    if args.ckpt:
        return args.ckpt
    raise SystemExit("no checkpoint: pass --ckpt or set MASKGAN_CKPT")


def _load_config(args):
    from .config import TrainConfig, load_config

    return load_config(args.config) if args.config else TrainConfig()


def _load_data(args, config):
    from .data import load_celebamaskhq

    root = args.data or config.data_root
    if not root:
        raise SystemExit("no dataset: pass --data or set data_root in the config")
    return load_celebamaskhq(root, config.resolution)


def cmd_make_toy_data(args) -> int:
    from .data import make_toy_dataset

    manifest = make_toy_dataset(args.n, args.resolution, args.seed, args.out)
    print(f"wrote {len(manifest.all_ids)} samples to {args.out} "
          f"({len(manifest.train_ids)} train / {len(manifest.test_ids)} test)")
    return 0


def cmd_train_vae(args) -> int:
    from .training import pretrain_vae, vae_reconstruction_accuracy

    config = _load_config(args)
    manifest = _load_data(args, config)
    out = Path(args.out)
    model = pretrain_vae(config, manifest, out_dir=out, resume=args.resume)
    acc = vae_reconstruction_accuracy(model, manifest)
    print(f"vae checkpoint: {out / 'vae.ckpt'} (test reconstruction accuracy {acc:.4f})")
    return 0


def cmd_train_gan(args) -> int:
    from .training import load_train_state, load_vae_checkpoint, pretrain_ga

    config = _load_config(args)
    manifest = _load_data(args, config)
    out = Path(args.out)
    vae = None
    if args.vae:
        vae, _ = load_vae_checkpoint(args.vae)
    state = load_train_state(args.resume) if args.resume else None
    state = pretrain_ga(config, manifest, vae=vae, out_dir=out, state=state)
    print(f"gan checkpoint: {out / 'gan.ckpt'} (iteration {state.iteration})")
    return 0


def cmd_train_ebst(args) -> int:
    from .evaluation import eval_run
    from .training import load_train_state, load_vae_checkpoint, freeze_vae, run_ebst

    config = _load_config(args)
    manifest = _load_data(args, config)
    out = Path(args.out)
    init = args.resume or args.init
    if not init:
        raise SystemExit("train-ebst needs --init gan.ckpt (or --resume ebst.ckpt)")
    state = load_train_state(init, lr=config.lr_ebst)
    if args.vae:
        state.vae, _ = load_vae_checkpoint(args.vae)
        freeze_vae(state.vae)
    if state.vae is None:
        raise SystemExit("the initial checkpoint carries no mask VAE; pass --vae")

    def snapshot_metric(s):
        return eval_run(s, manifest, "style_copy", seed=config.seed, limit=32)["mae"]

    state = run_ebst(config, state, manifest, out_dir=out, eval_fn=snapshot_metric)
    print(f"ebst checkpoint: {out / 'ebst.ckpt'} (iteration {state.iteration}, "
          f"stage-II skips {state.stage2_skipped})")
    return 0


def cmd_traverse(args) -> int:
    import torch
    from PIL import Image

    from .masks import decode_mask_png
    from .training import load_vae_checkpoint
    from .vae import encode_mask, harden_logits

    model, config = load_vae_checkpoint(_require_ckpt(args))
    from .palette import DEFAULT_PALETTE

    palette = DEFAULT_PALETTE if model.num_categories == DEFAULT_PALETTE.count else None
    if args.palette:
        from .palette import CategoryPalette

        palette = CategoryPalette.load(args.palette)
    if palette is None:
        raise SystemExit("pass --palette for non-default category counts")
    target = decode_mask_png(Path(args.target).read_bytes(), palette)
    ref = decode_mask_png(Path(args.ref).read_bytes(), palette)
    with torch.no_grad():
        z_a, _ = model.encode(encode_mask(model, target, palette))
        z_b, _ = model.encode(encode_mask(model, ref, palette))
        ts = torch.linspace(0, 1, args.steps)
        hard = harden_logits(model.decode(z_a + ts[:, None] * (z_b - z_a)))
    colors = palette.color_array()
    tiles = [colors[h.numpy()] for h in hard]
    strip = np.concatenate(tiles, axis=1)
    Image.fromarray(strip, mode="RGB").save(args.out)
    print(f"wrote {args.steps}-step traversal strip to {args.out}")
    return 0


def cmd_eval(args) -> int:
    import json

    from .data import load_celebamaskhq
    from .evaluation import eval_run
    from .training import load_train_state

    state = load_train_state(_require_ckpt(args))
    manifest = load_celebamaskhq(args.data, state.config.resolution, palette=state.palette)
    report = eval_run(state, manifest, args.protocol, seed=args.seed, out_path=args.out)
    print(json.dumps(report, indent=2))
    return 0


def cmd_infer(args) -> int:
    from .masks import decode_image_png, decode_mask_png
    from .service import InferenceEngine, infer_once

    engine = InferenceEngine.load(_require_ckpt(args))
    target = decode_image_png(Path(args.target).read_bytes())
    target_mask = decode_mask_png(Path(args.target_mask).read_bytes(), engine.palette)
    source_mask = decode_mask_png(Path(args.source_mask).read_bytes(), engine.palette)
    Path(args.out).write_bytes(infer_once(engine, target, target_mask, source_mask))
    print(f"wrote {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import InferenceEngine, create_app

    engine = InferenceEngine.load(_require_ckpt(args))
    app = create_app(engine, session_dir=args.session_dir, capacity=args.capacity)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskgan", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy-data", help="generate the procedural toy dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_toy_data)

    for name, func in (("train-vae", cmd_train_vae), ("train-gan", cmd_train_gan),
                       ("train-ebst", cmd_train_ebst)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} phase")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--resume", help="checkpoint to continue from")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--data", help="dataset root (overrides config data_root)")
        if name == "train-gan":
            p.add_argument("--vae", help="mask-VAE checkpoint to embed for later finetuning")
        if name == "train-ebst":
            p.add_argument("--init", help="pretrained gan checkpoint to start from")
            p.add_argument("--vae", help="mask-VAE checkpoint if the init lacks one")
        p.set_defaults(func=func)

    p = sub.add_parser("traverse", help="decode a latent interpolation strip")
    p.add_argument("--ckpt", default=_ckpt_default())
    p.add_argument("--target", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--out", required=True)
    p.add_argument("--palette")
    p.set_defaults(func=cmd_traverse)

    p = sub.add_parser("eval", help="run an evaluation protocol on the test split")
    p.add_argument("--ckpt", default=_ckpt_default())
    p.add_argument("--data", required=True)
    p.add_argument("--protocol", choices=["reconstruction", "style_copy"],
                   default="reconstruction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="one-shot edit render")
    p.add_argument("--ckpt", default=_ckpt_default())
    p.add_argument("--target", required=True)
    p.add_argument("--target-mask", required=True)
    p.add_argument("--source-mask", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("serve", help="run the editing HTTP service")
    p.add_argument("--ckpt", default=_ckpt_default())
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--session-dir")
    p.add_argument("--capacity", type=int, default=64)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
