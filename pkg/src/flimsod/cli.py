"""Command-line entry points: train, infer, eval, select, serve.

All commands read a JSON pipeline config (``--config``); individual flags
override config fields. Every command is deterministic given identical
inputs and seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evalsel
from .decoders import BpHyper, WeightVector, train_bp_decoder
from .encoder import encoder_forward, load_model, save_model, train_encoder
from .imgcore import load_image, load_mask, save_mask, save_saliency
from .markers import merge_marker_sets, parse_markers
from .pipeline import PipelineConfig, infer_mask, infer_saliency, load_config


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


def _load_dataset_images(images_dir: Path) -> dict[str, Path]:
    if not images_dir.is_dir():
        raise FileNotFoundError(f"images directory {images_dir} does not exist")
    return {p.stem: p for p in sorted(images_dir.glob("*.png"))}


def _load_markers_for(images: dict[str, Path], markers_dir: Path):
    sets = []
    for image_id in sorted(images):
        mpath = markers_dir / f"{image_id}.txt"
        if mpath.exists():
            sets.append(parse_markers(mpath.read_text()))
    if not sets:
        raise FileNotFoundError(f"no marker files found in {markers_dir}")
    return merge_marker_sets(sets)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    if cfg.dataset is None or cfg.dataset.markers_dir is None:
        return _fail("config needs dataset.images_dir and dataset.markers_dir")
    try:
        image_paths = _load_dataset_images(cfg.dataset.images_dir)
        ms = _load_markers_for(image_paths, cfg.dataset.markers_dir)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    images = {iid: load_image(image_paths[iid]) for iid in ms.image_ids()}
    arch = cfg.load_architecture()
    model = train_encoder(images, ms, arch, seed)
    for i, block in enumerate(model.blocks, start=1):
        print(f"block {i}: {block.bank.size} kernels "
              f"({block.bank.kernel_size}x{block.bank.kernel_size}x{block.bank.in_channels})")
    print(f"total parameters: {model.parameter_count()}")

    extra = {}
    if cfg.decoder == "bp":
        if cfg.dataset.gt_dir is None:
            return _fail("decoder 'bp' needs dataset.gt_dir with ground-truth masks to train")
        featmaps, gts = [], []
        for iid in ms.image_ids():
            gt_path = cfg.dataset.gt_dir / f"{iid}.png"
            if not gt_path.exists():
                return _fail(f"missing ground truth {gt_path}")
            featmaps.append(encoder_forward(images[iid], model, cfg.block))
            gts.append(load_mask(gt_path).astype(np.float64))
        weights = train_bp_decoder(featmaps, gts, BpHyper(seed=seed))
        extra["bp_weights"] = {"block": cfg.block, **weights.to_dict()}
        print(f"bp decoder trained: {len(weights.values)} weights, "
              f"final loss {weights.loss_history[-1]:.6f}")

    out = Path(args.out) if args.out else cfg.model_path
    if out is None:
        return _fail("no model output path (set --out or config.model)")
    save_model(model, out, extra=extra)
    print(f"model written to {out}")
    return 0


def _bp_weights_from(model_dict: dict, block: int) -> WeightVector:
    bw = model_dict.get("bp_weights")
    if bw is None:
        raise ValueError("decoder 'bp' needs trained weights in the model file "
                         "(train with decoder 'bp' and a ground-truth dir)")
    if bw.get("block") != block:
        raise ValueError(f"bp weights were trained for block {bw.get('block')}, "
                         f"not block {block}")
    return WeightVector.from_dict(bw)


def cmd_infer(args) -> int:
    cfg = load_config(args.config)
    decoder = args.decoder or cfg.decoder
    block = args.block or cfg.block
    model_path = Path(args.model) if args.model else cfg.model_path
    if model_path is None:
        return _fail("no model path (set --model or config.model)")
    try:
        model, raw = load_model(model_path)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    try:
        img = load_image(args.image)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    bp_weights = None
    if decoder == "bp":
        try:
            bp_weights = _bp_weights_from(raw, block)
        except ValueError as exc:
            return _fail(str(exc))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    try:
        if args.postproc:
            sal, mask = infer_mask(img, model, decoder, block, cfg.postproc, bp_weights,
                                   cfg.decoder_radius, cfg.ts_high_frac, cfg.ts_low_frac)
            save_mask(mask, out_dir / f"{stem}_mask.png")
        else:
            sal = infer_saliency(img, model, decoder, block, bp_weights,
                                 cfg.decoder_radius, cfg.ts_high_frac, cfg.ts_low_frac)
    except ValueError as exc:
        return _fail(str(exc))
    save_saliency(sal, out_dir / f"{stem}_saliency.png")
    print(f"saliency written to {out_dir / (stem + '_saliency.png')}")
    return 0


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    preds = {p.stem: p for p in sorted(pred_dir.glob("*.png"))}
    gts = {p.stem: p for p in sorted(gt_dir.glob("*.png"))}
    missing = sorted(set(gts) - set(preds))
    if missing:
        return _fail(f"missing predictions for: {', '.join(missing)}")
    if not gts:
        return _fail(f"no ground-truth masks in {gt_dir}")
    pairs = [(stem, load_mask(gts[stem]), load_mask(preds[stem])) for stem in sorted(gts)]
    report = evalsel.evaluate_set(pairs, beta_sq=args.beta_sq)
    if args.out:
        out = Path(args.out)
        if out.suffix == ".json":
            out.write_text(json.dumps(report.to_dict(), indent=2))
        else:
            out.write_text(report.to_csv())
        print(f"report written to {out}")
    else:
        print(report.to_csv(), end="")
    print(f"mean f_beta={report.mean['f_beta']:.4f} mae={report.mean['mae']:.4f}", file=sys.stderr)
    return 0


def build_selection_callbacks(cfg: PipelineConfig, image_paths: dict[str, Path]):
    """train_fn/eval_fn pair running the real pipeline for Algorithm-style
    selection: train on T, score pool images by F-beta of the final mask."""
    arch = cfg.load_architecture()
    gt_dir = cfg.dataset.gt_dir
    markers_dir = cfg.dataset.markers_dir

    def train_fn(training_ids):
        sets = [parse_markers((markers_dir / f"{iid}.txt").read_text())
                for iid in sorted(training_ids)]
        images = {iid: load_image(image_paths[iid]) for iid in sorted(training_ids)}
        return train_encoder(images, merge_marker_sets(sets), arch, cfg.seed)

    def eval_fn(model, image_id):
        img = load_image(image_paths[image_id])
        _, mask = infer_mask(img, model, cfg.decoder, cfg.block, cfg.postproc,
                             None, cfg.decoder_radius, cfg.ts_high_frac, cfg.ts_low_frac)
        gt = load_mask(gt_dir / f"{image_id}.png")
        return evalsel.evaluate_pair(image_id, gt, mask, cfg.beta_sq).f_beta

    return train_fn, eval_fn


def cmd_select(args) -> int:
    cfg = load_config(args.config)
    if cfg.dataset is None or cfg.dataset.gt_dir is None or cfg.dataset.markers_dir is None:
        return _fail("selection needs dataset images, markers and ground truth dirs")
    seed = args.seed if args.seed is not None else cfg.seed
    image_paths = _load_dataset_images(cfg.dataset.images_dir)
    marked = [iid for iid in image_paths
              if (cfg.dataset.markers_dir / f"{iid}.txt").exists()]
    if not marked:
        return _fail("no images with marker files; selection pool is empty")
    train_fn, eval_fn = build_selection_callbacks(cfg, image_paths)
    session = evalsel.selection_init(marked, seed)
    print(f"initial training set: {session.training_set}")

    script = [tok.strip().lower() for tok in args.script.split(",")] if args.script else None
    steps = len(script) if script else args.steps
    for step in range(steps):
        if not session.pool:
            print("pool exhausted")
            break
        x, ranked = evalsel.selection_score(session, train_fn, eval_fn)
        candidate = ranked[0][0]
        if script:
            accept = script[step] in ("a", "accept", "y")
        else:
            accept = x >= session.x_prev
        evalsel.selection_step(session, x, candidate, accept=accept)
        print(f"step {step + 1}: x={x:.4f} candidate={candidate} "
              f"{'accepted' if accept else 'rejected -> replaced previous'} "
              f"|T|={len(session.training_set)}")
    if args.log:
        Path(args.log).write_text(evalsel.history_to_jsonl(session.history))
        print(f"history written to {args.log}")
    print(f"final training set: {sorted(session.training_set)}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = load_config(args.config)
    app = create_app(cfg)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flimsod",
                                     description="Flyweight salient object detection "
                                                 "from image markers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an encoder from markers")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="model output path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="produce saliency (and mask) for one image")
    p.add_argument("--config", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--image", required=True)
    p.add_argument("--decoder", default=None)
    p.add_argument("--block", type=int, default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--postproc", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--beta-sq", type=float, default=0.3)
    p.add_argument("--out", default=None, help="report path (.csv or .json)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("select", help="representative-image selection loop")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=3)
    p.add_argument("--script", default=None,
                   help="comma-separated a/r decisions, e.g. 'a,a,r,a'")
    p.add_argument("--log", default=None, help="write history JSONL here")
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("serve", help="run the annotation/selection HTTP service")
    p.add_argument("--config", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # argparse handles its own; surface the rest cleanly
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
