"""Command-line entry points.

    owcsim gen     --out DIR [--samples N] [--seed N] [key overrides]
    owcsim track   --dataset DIR [--split S] --tracker SPECS [--noise-snr DB]
    owcsim track   --live --tracker SPECS          (closed-loop scene run)
    owcsim sweep   --dataset DIR --snr 30,20,10,5 --trackers oracle,meanshift
    owcsim render  --out DIR [--time T]            (single-frame 16-bit PGM)
    owcsim surface --out DIR [--time T] [--rows N] [--cols N] ...

Every config key is also a flag (`--wind-speed-10m 12`), plus the short
aliases --wind-speed, --samples, --noise-snr. Each run echoes its effective
configuration and writes it to <out>/effective.cfg; re-running from that
file reproduces every output byte for byte.

Exit codes: 0 success, 2 configuration/usage error, 3 I/O error, 4 missing
prediction ids for a file-backed tracker.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import config as config_mod
from .channel_optics import LinkGeometry, solve_refraction_point, unit
from .config import ConfigError, RunConfig, load_config, parse_value
from .dataset_pipeline import DatasetIOError, generate_dataset
from .eval_harness import (
    run_noise_sweep,
    run_temporal_dataset,
    run_temporal_live,
    write_scores_csv,
    write_sweep_csv,
    write_trace_csv,
)
from .rng import splitmix64
from .trackers import MissingPredictionsError, make_tracker
from .vision_renderer import CameraModel, render, write_pgm16
from .wave_surface import realize_surface, write_surface_f32

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MISSING_PREDICTIONS = 4


def _add_key_flags(parser: argparse.ArgumentParser) -> None:
    for name, default, doc in config_mod.key_docs():
        if name == "out":   # every subcommand declares --out explicitly
            continue
        parser.add_argument(f"--{name.replace('_', '-')}", dest=f"key_{name}",
                            metavar="V", help=f"{doc} (default {default})")
    for alias, target in config_mod.FLAG_ALIASES.items():
        parser.add_argument(f"--{alias}", dest=f"key_{target}", metavar="V",
                            help=f"alias for --{target.replace('_', '-')}")


def _collect_overrides(args: argparse.Namespace) -> dict:
    overrides = {}
    for attr, raw in vars(args).items():
        if attr.startswith("key_") and raw is not None:
            key = attr[len("key_"):]
            overrides[key] = parse_value(key, raw)
    return overrides


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config, _collect_overrides(args))
    return cfg


def _echo_config(cfg: RunConfig, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    print("# effective configuration")
    for line in cfg.lines():
        print(line)
    cfg.write(os.path.join(out_dir, "effective.cfg"))


def _trackers_from_spec(spec: str, cfg: RunConfig):
    names = [s.strip() for s in spec.split(",") if s.strip()]
    if not names:
        raise ConfigError("no tracker specified")
    try:
        return [make_tracker(name, bandwidth=cfg.meanshift_bandwidth,
                             eps=cfg.meanshift_eps, max_iters=cfg.meanshift_max_iters,
                             latency_frames=cfg.tracker_latency_frames)
                for name in names]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    except OSError as exc:
        raise ConfigError(f"cannot read predictions file: {exc}") from exc


def _plot_timeline(scores, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_rss, ax_ang) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    names = sorted({s.tracker for s in scores})
    for name in names:
        rows = [s for s in scores if s.tracker == name]
        t = [s.t for s in rows]
        ax_rss.plot(t, [s.rss for s in rows], label=name, linewidth=1)
        ax_ang.plot(t, [np.degrees(s.angle_err) for s in rows], label=name, linewidth=1)
    ax_rss.set_ylabel("received signal strength")
    ax_rss.legend(fontsize=8)
    ax_ang.set_ylabel("angle error (deg)")
    ax_ang.set_xlabel("time (s)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_trace(trace, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 6))
    names = sorted({p.tracker for p in trace})
    first = names[0]
    true_pts = [(p.true_sx, p.true_sy) for p in trace if p.tracker == first]
    ax.plot([p[0] for p in true_pts], [p[1] for p in true_pts],
            "k-", linewidth=1.2, label="refraction point")
    for name in names:
        pts = [(p.point_sx, p.point_sy) for p in trace if p.tracker == name]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], ".", markersize=2, label=name)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_sweep(result, path_angle, path_rss):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = sorted({r.tracker for r in result.rows})
    for path, field, err_field, label in (
            (path_angle, "mean_angle_err", "stderr_angle", "mean angle error (rad)"),
            (path_rss, "mean_rss", "stderr_rss", "mean received signal strength")):
        fig, ax = plt.subplots(figsize=(6, 4))
        for name in names:
            rows = [r for r in result.rows if r.tracker == name]
            rows.sort(key=lambda r: -r.snr_db)
            x = [r.snr_db for r in rows]
            y = [getattr(r, field) for r in rows]
            e = [getattr(r, err_field) for r in rows]
            ax.errorbar(x, y, yerr=e, marker="o", markersize=3, label=name, linewidth=1)
        ax.set_xlabel("peak SNR (dB)")
        ax.set_ylabel(label)
        ax.invert_xaxis()
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)


def cmd_gen(args) -> int:
    cfg = _resolve_config(args)
    out = args.out or cfg.out
    cfg = cfg.replace(out=str(out))
    _echo_config(cfg, out)
    manifest = generate_dataset(cfg, out)
    print(f"wrote {os.path.join(str(out), 'manifest.json')} "
          f"(train/val/test = {manifest.counts['train']}/{manifest.counts['val']}"
          f"/{manifest.counts['test']})")
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = _resolve_config(args)
    out = args.out or cfg.out
    cfg = cfg.replace(out=str(out))
    trackers = _trackers_from_spec(args.tracker, cfg)
    if args.live and any(t.name == "file" for t in trackers):
        raise ConfigError("file-backed trackers need a dataset (sample ids); "
                          "drop --live or choose another tracker")
    if not args.live and not args.dataset:
        raise ConfigError("track needs --dataset DIR (or --live)")
    _echo_config(cfg, out)
    if args.live:
        scores, trace = run_temporal_live(cfg, trackers)
    else:
        scores, trace = run_temporal_dataset(args.dataset, args.split, trackers, cfg)
    scores_path = os.path.join(str(out), "scores.csv")
    trace_path = os.path.join(str(out), "trace.csv")
    write_scores_csv(scores_path, scores)
    write_trace_csv(trace_path, trace)
    _plot_timeline(scores, os.path.join(str(out), "rss_timeline.png"))
    _plot_trace(trace, os.path.join(str(out), "trace.png"))
    print(f"wrote {scores_path} ({len(scores)} rows) and {trace_path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    out = args.out or cfg.out
    cfg = cfg.replace(out=str(out))
    snrs = [float(s) for s in args.snr.split(",") if s.strip()]
    if not snrs:
        raise ConfigError("sweep needs a non-empty --snr list")
    specs = args.trackers
    factory = lambda: _trackers_from_spec(specs, cfg)  # noqa: E731
    factory()  # validate specs before any work
    _echo_config(cfg, out)
    result = run_noise_sweep(args.dataset, args.split, factory, snrs, cfg)
    sweep_path = os.path.join(str(out), "sweep.csv")
    write_sweep_csv(sweep_path, result)
    _plot_sweep(result, os.path.join(str(out), "sweep_angle.png"),
                os.path.join(str(out), "sweep_rss.png"))
    print(f"wrote {sweep_path} ({len(result.rows)} rows)")
    return EXIT_OK


def _live_scene(cfg: RunConfig):
    params = cfg.spectrum_params()
    grid = cfg.spectral_grid(params)
    const = cfg.optical_constants()
    state = cfg.seed
    state, surface_seed = splitmix64(state)
    state, placement_seed = splitmix64(state)
    surf = realize_surface(params, grid, surface_seed)
    rng = np.random.default_rng(placement_seed)
    b = cfg.tx_box
    transmitter = np.array([rng.uniform(b[0], b[1]), rng.uniform(b[2], b[3]),
                            rng.uniform(b[4], b[5])])
    b = cfg.rx_box
    receiver = np.array([rng.uniform(b[0], b[1]), rng.uniform(b[2], b[3]),
                         rng.uniform(b[4], b[5])])
    return const, surf, transmitter, receiver


def cmd_render(args) -> int:
    cfg = _resolve_config(args)
    out = args.out or cfg.out
    cfg = cfg.replace(out=str(out))
    _echo_config(cfg, out)
    const, surf, transmitter, receiver = _live_scene(cfg)
    t = args.time
    geom = LinkGeometry(transmitter=transmitter, receiver=receiver,
                        tx_boresight=np.array([0.0, 0, 1]),
                        rx_boresight=np.array([0.0, 0, -1]), t=t, surf=surf)
    sol = solve_refraction_point(geom, const)
    geom = LinkGeometry(transmitter=transmitter, receiver=receiver,
                        tx_boresight=unit(sol.point - transmitter),
                        rx_boresight=unit(sol.point - receiver), t=t, surf=surf)
    camera = CameraModel.from_boresight(receiver, geom.rx_boresight,
                                        focal_length=cfg.focal_length,
                                        pixel_pitch=cfg.pixel_pitch,
                                        rows=cfg.image_rows, cols=cfg.image_cols)
    frame = render(camera, geom, const)
    path = os.path.join(str(out), "frame.pgm")
    write_pgm16(frame, path)
    print(f"wrote {path} (peak intensity {frame.pixels.max():.6g})")
    return EXIT_OK


def cmd_surface(args) -> int:
    cfg = _resolve_config(args)
    out = args.out or cfg.out
    cfg = cfg.replace(out=str(out))
    _echo_config(cfg, out)
    params = cfg.spectrum_params()
    state, surface_seed = splitmix64(cfg.seed)
    surf = realize_surface(params, cfg.spectral_grid(params), surface_seed)
    path = os.path.join(str(out), "surface.f32")
    write_surface_f32(surf, path, t=args.time, x0=args.x0, y0=args.y0,
                      dx=args.dx, dy=args.dy, rows=args.rows, cols=args.cols)
    print(f"wrote {path} ({args.rows}x{args.cols} @ {args.dx} m)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="owcsim",
        description="water-to-air optical wireless link simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--out", help="output directory (default from config)")
        _add_key_flags(p)

    p_gen = sub.add_parser("gen", help="generate a labeled vision dataset")
    common(p_gen)
    p_gen.set_defaults(func=cmd_gen)

    p_track = sub.add_parser("track", help="run trackers and score every frame")
    common(p_track)
    p_track.add_argument("--dataset", help="dataset directory from `gen`")
    p_track.add_argument("--split", default="test", choices=("train", "val", "test"))
    p_track.add_argument("--live", action="store_true",
                         help="closed-loop continuous scene instead of a dataset")
    p_track.add_argument("--tracker", default="oracle",
                         help="comma list of: oracle | meanshift | none | file:<path>")
    p_track.set_defaults(func=cmd_track)

    p_sweep = sub.add_parser("sweep", help="mean scores vs vision noise level")
    common(p_sweep)
    p_sweep.add_argument("--dataset", required=True)
    p_sweep.add_argument("--split", default="test", choices=("train", "val", "test"))
    p_sweep.add_argument("--snr", required=True, help="comma list of peak SNR in dB")
    p_sweep.add_argument("--trackers", default="oracle,meanshift,none",
                         help="comma list of tracker specs")
    p_sweep.set_defaults(func=cmd_sweep)

    p_render = sub.add_parser("render", help="debug-render one frame to 16-bit PGM")
    common(p_render)
    p_render.add_argument("--time", type=float, default=0.0)
    p_render.set_defaults(func=cmd_render)

    p_surf = sub.add_parser("surface", help="export a heightmap snapshot")
    common(p_surf)
    p_surf.add_argument("--time", type=float, default=0.0)
    p_surf.add_argument("--x0", type=float, default=-20.0)
    p_surf.add_argument("--y0", type=float, default=-20.0)
    p_surf.add_argument("--dx", type=float, default=0.25)
    p_surf.add_argument("--dy", type=float, default=0.25)
    p_surf.add_argument("--rows", type=int, default=160)
    p_surf.add_argument("--cols", type=int, default=160)
    p_surf.set_defaults(func=cmd_surface)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPredictionsError as exc:
        print(f"missing predictions: sample ids {exc.ids}", file=sys.stderr)
        return EXIT_MISSING_PREDICTIONS
    except DatasetIOError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
