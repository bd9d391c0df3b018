"""Command-line interface: train, synth, inpaint, bench, inspect.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Every command writes its resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, parse_selectors
from .evaluation import inpaint_benchmark, mssim
from .imagecore import GreyImage, clahe_quantize, linear_quantize, load_image, save_image
from .learning import nest
from .mgrfmodel import NestedModel, deserialize_model, serialize_model
from .sampling import centered_hole_mask, inpaint_with_raw, synthesize

log = logging.getLogger("mgrftex")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgrftex",
        description="Nested high-order Markov-Gibbs random field texture models",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn a model from a training image")
    p.add_argument("--config", required=True, help="key = value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration key")
    p.add_argument("--out-dir", default=None, help="override out_dir")

    p = sub.add_parser("synth", help="synthesize a texture from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output image path (.pgm or .png)")
    p.add_argument("--width", type=int, default=180)
    p.add_argument("--height", type=int, default=180)
    p.add_argument("--sweeps", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seed-image", default=None,
                   help="training image to cut the seed piece from")
    p.add_argument("--seed-piece", type=int, default=80)
    p.add_argument("--freeze-theta", action="store_true",
                   help="plain Gibbs sweeps instead of adaptive annealing")

    p = sub.add_parser("inpaint", help="fill a hole cut from a frame image")
    p.add_argument("--model", required=True)
    p.add_argument("--frame", required=True, help="frame image at the model's levels")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--hole-width", type=int, default=54)
    p.add_argument("--hole-height", type=int, default=54)
    p.add_argument("--sweeps", type=int, default=300)
    p.add_argument("--smooth-window", type=int, default=50)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bench", help="constrained inpainting benchmark")
    p.add_argument("--texture", required=True, choices=["D6", "D21", "D53", "D77"])
    p.add_argument("--image", required=True, help="256-level source texture image")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--model", default=None, help="reuse a previously trained model")

    p = sub.add_parser("inspect", help="print a model's potentials")
    p.add_argument("--model", required=True)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        handler = {
            "train": _cmd_train,
            "synth": _cmd_synth,
            "inpaint": _cmd_inpaint,
            "bench": _cmd_bench,
            "inspect": _cmd_inspect,
        }[args.command]
    except KeyError:  # pragma: no cover
        return 1
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _write_resolved(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.txt").write_text(cfg.resolved_text())


def _preprocess(cfg: RunConfig) -> GreyImage:
    img = load_image(cfg.training_image)
    if cfg.preprocess == "clahe":
        return clahe_quantize(img, cfg.levels, cfg.clahe_tile, cfg.clahe_clip)
    if cfg.preprocess == "linear":
        return linear_quantize(img, cfg.levels)
    if cfg.preprocess == "none":
        if int(img.pixels.max()) >= cfg.levels:
            raise ConfigError("preprocess=none but the image exceeds the level range")
        return GreyImage(img.pixels, cfg.levels)
    raise ConfigError(f"unknown preprocess mode {cfg.preprocess!r}")


def _cmd_train(args) -> int:
    cfg = RunConfig.from_file(args.config, args.set)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    if not cfg.training_image:
        raise ConfigError("training_image is not set")
    out_dir = Path(cfg.out_dir)
    _write_resolved(cfg, out_dir)

    training = _preprocess(cfg)
    selectors = parse_selectors(cfg.selectors)
    rng = np.random.default_rng(cfg.seed)
    started = time.perf_counter()
    model, logbook = nest(training, selectors, cfg.nest_config(), rng)
    elapsed = time.perf_counter() - started

    (out_dir / "model.txt").write_text(serialize_model(model))
    (out_dir / "train_log.csv").write_text(logbook.to_csv())
    print(
        f"trained {len(model.potentials)} potentials in {elapsed:.1f}s -> "
        f"{out_dir / 'model.txt'}"
    )
    return 0


def _load_model(path: str) -> NestedModel:
    return deserialize_model(Path(path).read_text())


def _cmd_synth(args) -> int:
    model = _load_model(args.model)
    seed_image = load_image(args.seed_image) if args.seed_image else None
    if seed_image is not None and seed_image.levels != model.levels:
        raise ConfigError("seed image must already be quantized to the model levels")
    rng = np.random.default_rng(args.seed)
    out = synthesize(
        model,
        out_size=(args.width, args.height),
        sweeps=args.sweeps,
        seed_image=seed_image,
        seed_piece=args.seed_piece,
        rng=rng,
        adapt_theta=not args.freeze_theta,
    )
    save_image(out, args.out, rescale=True)
    print(f"wrote {args.out} ({out.width}x{out.height}, {args.sweeps} sweeps)")
    return 0


def _cmd_inpaint(args) -> int:
    model = _load_model(args.model)
    frame = load_image(args.frame)
    if int(frame.pixels.max()) >= model.levels:
        raise ConfigError(
            "frame image must be quantized to the model's level count "
            f"({model.levels} levels)"
        )
    frame = GreyImage(frame.pixels, model.levels)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    hole = (args.hole_width, args.hole_height)
    mask = centered_hole_mask(frame.width, frame.height, *hole) == 0
    scores = []
    lines = ["rep,mssim_hole"]
    rng = np.random.default_rng(args.seed)
    streams = rng.spawn(args.reps)
    for rep in range(args.reps):
        raw, smoothed = inpaint_with_raw(
            model, frame, hole, args.sweeps, args.smooth_window, streams[rep]
        )
        hw, hh = hole

        def hole_img(px):
            return GreyImage(px[mask].reshape(hh, hw), model.levels)

        score = mssim(hole_img(smoothed.pixels), hole_img(frame.pixels))
        scores.append(score)
        lines.append(f"{rep},{score:.6f}")
        save_image(raw, out_dir / f"inpaint_raw_{rep}.png", rescale=True)
        save_image(smoothed, out_dir / f"inpaint_smoothed_{rep}.png", rescale=True)
    (out_dir / "inpaint_scores.csv").write_text("\n".join(lines) + "\n")
    print(
        f"{args.reps} repetitions, hole mssim {np.mean(scores):.3f} "
        f"+- {np.std(scores):.3f} -> {out_dir}"
    )
    return 0


def _cmd_bench(args) -> int:
    cfg = RunConfig.from_file(args.config, args.set) if args.config else RunConfig()
    if not args.config:
        for item in args.set:
            key, _, value = item.partition("=")
            cfg.set(key.strip(), value.strip(), where="command line")
    if args.out_dir:
        cfg.out_dir = args.out_dir
    out_dir = Path(cfg.out_dir)
    _write_resolved(cfg, out_dir)

    image = load_image(args.image)
    model = _load_model(args.model) if args.model else None
    report, model = inpaint_benchmark(
        args.texture,
        image,
        model_family=cfg.bench_family,
        reps=cfg.bench_reps,
        levels=cfg.bench_levels,
        iterations=cfg.bench_iterations,
        inpaint_sweeps=cfg.inpaint_sweeps,
        smooth_window=cfg.smooth_window,
        seed=cfg.seed,
        threads=cfg.effective_threads(),
        model=model,
        nest_cfg=None if model is not None else _bench_nest_cfg(cfg),
    )
    (out_dir / f"bench_{args.texture}.csv").write_text(report.csv())
    (out_dir / f"bench_{args.texture}_model.txt").write_text(serialize_model(model))
    print(report.table())
    return 0


def _bench_nest_cfg(cfg: RunConfig):
    nc = cfg.nest_config()
    nc.levels = cfg.bench_levels
    nc.with_marginal = False
    return nc


_ASCII_LIMIT = 41  # offsets fit in the +-20 window used by the selectors


def _ascii_map(offsets) -> str:
    xs = [dx for dx, _ in offsets]
    ys = [dy for _, dy in offsets]
    x0, x1 = min(xs + [0]), max(xs + [0])
    y0, y1 = min(ys + [0]), max(ys + [0])
    rows = []
    for y in range(y0, y1 + 1):
        row = []
        for x in range(x0, x1 + 1):
            if (x, y) == (0, 0):
                row.append("o")
            elif (x, y) in offsets:
                row.append("#")
            else:
                row.append(".")
        rows.append("".join(row))
    return "\n".join(rows)


def _cmd_inspect(args) -> int:
    model = _load_model(args.model)
    print(f"{len(model.potentials)} potentials, {model.levels} grey levels")
    for i, p in enumerate(model.potentials):
        head = (
            f"[{i}] {p.kind.tag} order={p.kind.order} bins={p.kind.bins} "
            f"iteration={p.iteration} theta_range=[{p.theta.min():.3f}, {p.theta.max():.3f}]"
        )
        if p.kind.tag == "filter":
            print(f"{head} filter={p.kind.filter_id}")
            continue
        print(head)
        if len(p.offsets) > 1:
            print(_ascii_map(p.offsets))
    return 0


if __name__ == "__main__":
    sys.exit(main())
