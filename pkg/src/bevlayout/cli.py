"""Command-line entry point: ``bevlayout <subcommand> ...``.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.
The default output directory is ``./bevlayout_out`` unless ``BEVLAYOUT_OUT``
is set; ``--out`` beats both.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("bevlayout")

OUT_ENV = "BEVLAYOUT_OUT"
MODALITIES = {"mono": "monocular_depth", "lidar": "lidar"}


def default_out(sub: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "bevlayout_out")) / sub


def _versions() -> dict[str, str]:
    import scipy
    import torch

    from . import __version__
    return {"bevlayout": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "torch": torch.__version__}


def _log_run(args, config=None) -> None:
    log.info("command: %s", args.command)
    log.info("seed: %d", args.seed)
    log.info("versions: %s", " ".join(f"{k}={v}" for k, v in _versions().items()))
    cfg = dataclasses.asdict(config) if config is not None else {
        k: v for k, v in vars(args).items() if k not in ("func", "command")}
    log.info("config: %s", " ".join(f"{k}={v}" for k, v in cfg.items()))


# --- subcommands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synth import generate_scene, random_scene, write_sequence

    spec = random_scene(args.seed, args.kind, args.vehicles, moving=not args.parked)
    seq = generate_scene(spec, args.frames, with_lidar=not args.no_lidar)
    out = write_sequence(seq, args.out or default_out("synth"))
    print(f"wrote {args.frames} frames to {out}")
    return 0


def cmd_generate_gt(args) -> int:
    from .datasets import load_records
    from .grid import write_bevg
    from .mapgen import FusionConfig, generate_ground_truth
    from .synth import read_calib

    _, spec = read_calib(Path(args.data) / "calib.txt")
    config = FusionConfig(window_size=args.window, modality=MODALITIES[args.modality],
                          min_points_per_cell=args.min_points)
    names, records = load_records(args.data, config.modality)
    fused, visible = generate_ground_truth(records, spec, config)
    out = Path(args.out or default_out("gt"))
    for sub, grids in (("fused", fused), ("visible", visible)):
        (out / sub).mkdir(parents=True, exist_ok=True)
        for n, g in zip(names, grids):
            write_bevg(out / sub / f"{n}.bevg", g)
    print(f"wrote {len(names)} fused and visible grids to {out}")
    return 0


def _train_config(args):
    from .training import TrainConfig, read_config

    overrides = {"seed": args.seed}
    for key in ("batch_size", "learning_rate", "max_steps", "width_divisor", "prior_source", "prior_dir"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    if args.no_adversarial:
        overrides["adversarial_enabled"] = False
    if args.no_augment:
        overrides["augment"] = False
    if args.config:
        return read_config(args.config, **overrides)
    return TrainConfig(**overrides)


def cmd_train(args) -> int:
    from .datasets import load_samples
    from .training import Trainer, is_finite_history

    config = _train_config(args)
    _log_run(args, config)
    samples = [s for d in args.data for s in load_samples(d, args.static_dir)]
    trainer = Trainer(config)
    history = trainer.fit(samples, out_dir=args.out or default_out("train"))
    if not is_finite_history(history):
        log.error("training produced non-finite losses")
        return 1
    last = history[-1]
    print(f"trained {trainer.step} steps; final L_sup {last['L_sup']:.6f}")
    return 0


def cmd_predict(args) -> int:
    from .datasets import frame_names, load_image
    from .grid import GridSpec, LayoutGrid, write_bevg
    from .model import load_checkpoint
    from .training import predict

    model, manifest = load_checkpoint(args.checkpoint)
    spec = GridSpec(**manifest["grid_spec"])
    names = frame_names(Path(args.data) / "images", ".png")
    if not names:
        raise FileNotFoundError(f"no images under {Path(args.data) / 'images'}")
    images = np.stack([load_image(Path(args.data) / "images" / f"{n}.png") for n in names])
    ps, pd = predict(model, images)
    out = Path(args.out or default_out("pred"))
    for sub, arr, chans in (("static", ps, manifest["channels"]["static"]),
                            ("dynamic", pd, manifest["channels"]["dynamic"])):
        (out / sub).mkdir(parents=True, exist_ok=True)
        for n, a in zip(names, arr):
            write_bevg(out / sub / f"{n}.bevg", LayoutGrid(a.transpose(1, 2, 0).astype(np.float32), spec, tuple(chans)))
    print(f"wrote {len(names)} predictions to {out}")
    return 0


def _paired(pred_dir: Path, gt_dir: Path):
    from .datasets import load_grids
    from .grid import read_bevg

    names, preds = load_grids(pred_dir)
    if not names:
        raise FileNotFoundError(f"no .bevg grids under {pred_dir}")
    return names, preds, [read_bevg(gt_dir / f"{n}.bevg") for n in names]


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate
    from .grid import read_bevg

    pred, gt = Path(args.pred), Path(args.gt)
    kw = {}
    # either flat directories of one kind, or static/ and dynamic/ subdirectories
    if (pred / "static").is_dir() or (pred / "dynamic").is_dir():
        if (pred / "static").is_dir():
            names, kw["static_preds"], kw["static_gts"] = _paired(pred / "static", gt / args.static_gt)
            vis = Path(args.visible) if args.visible else gt / "visible"
            if vis.is_dir():
                kw["visibles"] = [read_bevg(vis / f"{n}.bevg") for n in names]
        if (pred / "dynamic").is_dir():
            _, kw["dynamic_preds"], kw["dynamic_gts"] = _paired(pred / "dynamic", gt / "dynamic")
    else:
        names, preds, gts = _paired(pred, gt)
        if preds[0].channels == 1 and args.kind != "static":
            kw["dynamic_preds"], kw["dynamic_gts"] = preds, gts
        else:
            kw["static_preds"], kw["static_gts"] = preds, gts
            if args.visible:
                kw["visibles"] = [read_bevg(Path(args.visible) / f"{n}.bevg") for n in names]
    report = evaluate(**kw)
    print(report.to_text(), end="")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        report.save(args.out)
    return 0


def cmd_track(args) -> int:
    from .datasets import load_grids
    from .tracker import Tracker, identity_switches, read_track_centers, tracking_error, write_tracks

    grids_dir = Path(args.pred)
    if (grids_dir / "dynamic").is_dir():
        grids_dir = grids_dir / "dynamic"
    names, grids = load_grids(grids_dir)
    if not grids:
        raise FileNotFoundError(f"no .bevg grids under {grids_dir}")
    tracker = Tracker(iou_min=args.iou_min, max_misses=args.max_misses, min_blob_cells=args.min_blob_cells)
    tracks = tracker.run(grids)
    out = Path(args.out or default_out("track") / "tracks.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tracks(out, tracks)
    print(f"{len(tracks)} tracks written to {out}")
    if args.gt:
        gt = read_track_centers(args.gt)
        ez, ex, l2 = tracking_error(tracks, gt, spec=grids[0].spec)
        sw, fr = identity_switches(tracks, gt, spec=grids[0].spec)
        print(f"error_forward_m = {ez:.6f}\nerror_lateral_m = {ex:.6f}\nerror_l2_m = {l2:.6f}\n"
              f"identity_switches = {sw}\nfragmentations = {fr}")
    return 0


def cmd_forecast(args) -> int:
    import torch

    from .datasets import load_grids
    from .forecast import (ForecastConfig, fit_forecaster, load_forecaster, precondition, rollout,
                           save_forecaster)
    from .grid import LayoutGrid, connected_components, write_bevg

    torch.manual_seed(args.seed)
    names, grids = load_grids(args.data)
    if not grids:
        raise FileNotFoundError(f"no .bevg grids under {args.data}")
    out = Path(args.out or default_out("forecast"))
    out.mkdir(parents=True, exist_ok=True)
    if args.checkpoint:
        model = load_forecaster(args.checkpoint)
        config = model.config
    else:
        config = ForecastConfig(grid_spec=grids[0].spec)
        model, losses = fit_forecaster(grids, config, steps=args.steps, lr=args.lr, seed=args.seed,
                                       pos_weight=args.pos_weight)
        save_forecaster(out / "forecaster.pt", model)
        log.info("forecaster trained %d steps, final loss %.6f", args.steps, losses[-1])
    P = config.precondition_frames
    with torch.no_grad():
        pred = rollout(precondition(grids[:P], model, config), model, config)[0, :, 0].numpy()
    spec = grids[0].spec
    with open(out / "centers.txt", "w") as fh:
        for k, p in enumerate(pred):
            g = LayoutGrid(p[..., None].astype(np.float32), spec, ("vehicle",))
            write_bevg(out / f"{k:06d}.bevg", g)
            blobs = connected_components(g, 0.5)
            if blobs:
                x, z = max(blobs, key=lambda b: b.size).centroid
                fh.write(f"{k} {x:.4f} {z:.4f}\n")
    print(f"wrote {len(pred)} forecast grids to {out}")
    return 0


def cmd_render(args) -> int:
    from PIL import Image

    from .datasets import frame_names
    from .grid import read_bevg

    data, pred = Path(args.data), Path(args.pred)
    names = frame_names(data / "images", ".png")
    if not names:
        raise FileNotFoundError(f"no images under {data / 'images'}")
    out = Path(args.out or default_out("render"))
    out.mkdir(parents=True, exist_ok=True)
    size = args.size
    colours = {"road": (128, 64, 128), "sidewalk": (244, 35, 232), "vehicle": (0, 0, 142)}

    def layout_panel(static_path, dynamic_path):
        canvas = np.zeros((size, size, 3), np.uint8)
        for path, fallback in ((static_path, ("road", "sidewalk")), (dynamic_path, ("vehicle",))):
            if not path.exists():
                continue
            g = read_bevg(path)
            for c, name in enumerate(g.channel_names or fallback[:g.channels]):
                mask = g.values[:, :, c] >= 0.5
                canvas[np.kron(mask, np.ones((size // g.spec.rows, size // g.spec.cols), bool))] = \
                    colours.get(name, (255, 255, 255))
        return canvas

    for n in names:
        image = np.asarray(Image.open(data / "images" / f"{n}.png").convert("RGB").resize((size, size)))
        panels = [image, layout_panel(pred / "static" / f"{n}.bevg", pred / "dynamic" / f"{n}.bevg")]
        if (data / "static").is_dir():
            panels.append(layout_panel(data / "static" / f"{n}.bevg", data / "dynamic" / f"{n}.bevg"))
        Image.fromarray(np.concatenate(panels, axis=1)).save(out / f"{n}.png")
    print(f"rendered {len(names)} frames to {out}")
    return 0


def cmd_throughput(args) -> int:
    import torch

    from .evaluation import throughput_report
    from .model import ModelConfig, LayoutNet, count_parameters, load_checkpoint

    torch.manual_seed(args.seed)
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
    else:
        model = LayoutNet(ModelConfig(width_divisor=args.width_divisor or 1))
    fps = throughput_report(model, args.n_warmup, args.n_timed)
    print(f"parameters = {count_parameters(model)}\nframes_per_second = {fps:.3f}")
    return 0


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help=f"output path (default under ${OUT_ENV} or ./bevlayout_out)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="bevlayout", description="Amodal bird's-eye-view layout estimation.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="render a synthetic driving sequence")
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--kind", choices=("straight", "curved", "t_junction", "crossroads"))
    p.add_argument("--vehicles", type=int)
    p.add_argument("--parked", action="store_true", help="all vehicles stationary")
    p.add_argument("--no-lidar", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("generate-gt", parents=[common], help="fuse registered frames into static ground truth")
    p.add_argument("--data", required=True, help="sequence directory")
    p.add_argument("--modality", choices=tuple(MODALITIES), default="lidar")
    p.add_argument("--window", type=int, default=40)
    p.add_argument("--min-points", type=int, default=1)
    p.set_defaults(func=cmd_generate_gt)

    p = sub.add_parser("train", parents=[common], help="train the layout network")
    p.add_argument("--config", help="key = value training config; flags take precedence")
    p.add_argument("--data", nargs="+", default=[], help="one or more sequence directories")
    p.add_argument("--static-dir", help="static GT directory to use instead of DATA/static")
    p.add_argument("--no-adversarial", action="store_true")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--width-divisor", type=int)
    p.add_argument("--prior-source", choices=("template_bank", "raster_files"))
    p.add_argument("--prior-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="run a checkpoint over a sequence's images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="score predicted grids against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--visible", help="single-frame visibility grids for the occluded-region score")
    p.add_argument("--static-gt", default="static", help="static GT subdirectory name under --gt")
    p.add_argument("--kind", choices=("auto", "static"), default="auto")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("track", parents=[common], help="track vehicle blobs across frames")
    p.add_argument("--pred", required=True, help="directory of dynamic grids")
    p.add_argument("--gt", help="ground-truth centres file (frame id x z)")
    p.add_argument("--iou-min", type=float, default=0.1)
    p.add_argument("--max-misses", type=int, default=1)
    p.add_argument("--min-blob-cells", type=int, default=1)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("forecast", parents=[common], help="fit or run the trajectory forecaster")
    p.add_argument("--data", required=True, help="directory of per-frame single-vehicle grids")
    p.add_argument("--checkpoint", help="trained forecaster; without it one is fitted on --data")
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--pos-weight", type=float, default=5.0)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("render", parents=[common], help="draw image / prediction / GT panels")
    p.add_argument("--data", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("throughput", parents=[common], help="time encoder + decoder passes")
    p.add_argument("--checkpoint")
    p.add_argument("--width-divisor", type=int)
    p.add_argument("--n-warmup", type=int, default=2)
    p.add_argument("--n-timed", type=int, default=5)
    p.set_defaults(func=cmd_throughput)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        if args.command != "train":
            _log_run(args)
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure, not a usage error
        log.debug("traceback", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
