"""Command-line scenario runner.

Every subcommand writes CSV artifacts plus ``manifest.json`` (config echo,
library versions and seeds) into ``--out``.  Exit codes: 0 success, 2 usage
error, 3 invalid configuration or input file, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import comm_music as cm
from . import sensing as se
from .forward import Scene, default_panels, solve_two_fish
from .geometry import EodSignal, FishSpec, TargetSpec, make_search_grid, place_receptors
from .scene_io import field_on_grid, load_scene, write_field_csv, write_grid_csv, write_rows_csv
from .signals import (
    JammingError,
    common_period,
    separate_pulse,
    separate_wave,
    synthesize_pulse,
    synthesize_wave,
    write_trace_csv,
)
from .tracker import LeaderPath, SpeedParams, run_tracking

log = logging.getLogger("electrofish")

EXIT_CONFIG = 3
EXIT_NUMERICAL = 4


class ConfigError(Exception):
    pass


def default_comm_scene() -> Scene:
    """Follower at the origin, leader ahead and to the left, both heading along +x."""
    return Scene((FishSpec(center=(0.0, 0.0), eod=EodSignal("wave", 1.0)),
                  FishSpec(center=(1.0, 2.5), eod=EodSignal("wave", 1.3))))


def default_sense_scene() -> Scene:
    """Target 3a off the emitter's flank, passive conspecific far beyond it."""
    return Scene((FishSpec(center=(0.0, 0.0)), FishSpec(center=(0.0, 19.1))),
                 target=TargetSpec(center=(0.0, 6.3), radius=0.2, sigma_D=2.0, eps_D=1.0))


def _scene(args, default) -> Scene:
    if args.scene is None:
        return default()
    try:
        return load_scene(args.scene)
    except FileNotFoundError as exc:
        raise ConfigError(f"scene file not found: {args.scene}") from exc
    except (json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"invalid scene file {args.scene}: {exc}") from exc


def _bbox(args, center, half):
    if args.bbox is not None:
        return tuple(args.bbox)
    return (center[0] - half, center[0] + half, center[1] - half, center[1] + half)


class _Margin:
    def __init__(self, body, margin):
        self.body, self.margin = body, margin

    def contains(self, points):
        return self.body.contains(points, margin=self.margin)


def cmd_jam_demo(args, out: Path) -> dict:
    scene = _scene(args, default_comm_scene)
    n = args.panels
    w1 = args.omega1 if args.omega1 is not None else scene.fish[0].eod.omega
    w2 = args.omega2 if args.omega2 is not None else scene.fish[1].eod.omega
    c = np.mean([f.center for f in scene.fish], axis=0)
    grid = make_search_grid(_bbox(args, c, 7.0), args.grid_res)
    u1 = field_on_grid(solve_two_fish(scene, 0, n_panels=n), grid, scene.fish)
    u2 = field_on_grid(solve_two_fish(scene, 1, n_panels=n), grid, scene.fish)
    if w1 == w2:
        # same frequency: only the sum is observable
        write_field_csv(out / "field_prejar.csv", grid, u1 + u2)
        return {"jammed": True, "artifacts": ["field_prejar.csv"]}
    write_field_csv(out / "field_u1.csv", grid, u1)
    write_field_csv(out / "field_u2.csv", grid, u2)
    return {"jammed": False, "artifacts": ["field_u1.csv", "field_u2.csv"]}


def _skin_values(scene, n_panels):
    rec = place_receptors(scene.fish[0], n_panels=n_panels)
    return [rec.sample(solve_two_fish(scene, k, n_panels=n_panels).traces(0).u_plus) for k in (0, 1)]


def cmd_separate(args, out: Path) -> dict:
    scene = _scene(args, default_comm_scene)
    u1, u2 = _skin_values(scene, args.panels)
    rng = np.random.default_rng(args.seed)
    if args.pulse:
        p1 = EodSignal("pulse", eta=args.eta[0], shift=args.shift[0])
        p2 = EodSignal("pulse", eta=args.eta[1], shift=args.shift[1])
        lo = min(p1.support()[0], p2.support()[0])
        hi = max(p1.support()[1], p2.support()[1])
        times = np.linspace(lo, hi, args.samples)
        trace = synthesize_pulse(np.real(u1), np.real(u2), p1, p2, times)
        r1, r2 = separate_pulse(trace, p1, p2)
    else:
        w1 = args.omega1 if args.omega1 is not None else scene.fish[0].eod.omega
        w2 = args.omega2 if args.omega2 is not None else scene.fish[1].eod.omega
        if w1 == w2:
            raise JammingError("equal EOD frequencies: the two signals are jammed and cannot be separated")
        T = args.periods * common_period(w1, w2)
        trace = synthesize_wave(u1, u2, w1, w2, T, args.samples, real=True)
        if args.noise > 0:
            scale = np.max(np.abs(trace.values)) * args.noise
            trace = type(trace)(trace.times, trace.values + rng.normal(0.0, scale, trace.values.shape))
        r1, r2 = separate_wave(trace, w1, w2)
    write_trace_csv(out / "trace.csv", trace)
    t1, t2 = (np.real(u1), np.real(u2)) if args.pulse else (u1, u2)
    e1, e2 = np.abs(r1 - t1), np.abs(r2 - t2)
    rows = [(l, float(np.real(t1[l])), float(np.real(r1[l])), float(e1[l]),
             float(np.real(t2[l])), float(np.real(r2[l])), float(e2[l])) for l in range(len(t1))]
    write_rows_csv(out / "separation.csv",
                   ["receptor", "u1_true", "u1_sep", "err1", "u2_true", "u2_sep", "err2"], rows)
    err = float(max(e1.max(), e2.max()))
    return {"max_abs_error": err, "artifacts": ["trace.csv", "separation.csv"]}


def cmd_locate_fish(args, out: Path) -> dict:
    scene = _scene(args, default_comm_scene)
    if len(scene.fish) < 2:
        raise ConfigError("locate-fish needs two fish")
    n = args.panels
    scenes = cm.follower_track_scenes(scene, args.positions, args.span)
    msr = cm.build_msr(scenes, args.noise, args.seed, n_panels=n)
    f1 = scene.fish[0]
    moved = [s.fish[0] for s in (scenes[0], scenes[-1])]
    grid = make_search_grid(_bbox(args, f1.center, 6.0), args.grid_res,
                            bodies=[_Margin(f, args.grid_res) for f in moved])
    est, image = cm.music_localize(msr, grid)
    organ = scene.fish[1].organ_center()
    z_eq, _ = cm.equivalent_dipole(msr, organ)
    write_grid_csv(out / "localizer_map.csv", grid, image, "I2")
    write_rows_csv(out / "msr.csv", [f"s{s}" for s in range(msr.n_positions)],
                   (tuple(float(v) for v in row) for row in msr.data))
    rec = {
        "z_hat_x": est.z_hat[0], "z_hat_y": est.z_hat[1],
        "z_node_x": est.z_node[0], "z_node_y": est.z_node[1],
        "p_hat_x": est.p_hat[0], "p_hat_y": est.p_hat[1],
        "peak": est.localizer_peak,
        "z_equiv_x": z_eq[0], "z_equiv_y": z_eq[1],
        "organ_x": organ[0], "organ_y": organ[1],
        "error_equiv": float(np.linalg.norm(est.z_hat - z_eq)),
        "error_organ": float(np.linalg.norm(est.z_hat - organ)),
    }
    write_rows_csv(out / "estimate.csv", list(rec), [tuple(float(v) for v in rec.values())])
    return {"estimate": {k: float(v) for k, v in rec.items()},
            "artifacts": ["localizer_map.csv", "msr.csv", "estimate.csv"]}


def _track_trial(job):
    kind, sigma0, seed_seq, cfg = job
    path = LeaderPath(kind=kind, n_steps=cfg["steps"], substeps=cfg["substeps"],
                      start=tuple(cfg["leader_start"]), speed=cfg["leader_speed"], radius=cfg["radius"])
    follower, leader = cfg["follower"], cfg["leader"]
    return run_tracking(follower, leader, path, sigma0, np.random.default_rng(seed_seq),
                        theta_max=cfg["theta_max"], speed=SpeedParams.for_body(follower.a),
                        n_panels=cfg["panels"], grid_res=cfg["grid_res"])


def cmd_track(args, out: Path) -> dict:
    scene = _scene(args, default_comm_scene)
    follower, leader = scene.fish[0], scene.fish[1]
    cfg = dict(steps=args.steps, substeps=args.substeps, theta_max=args.theta_max, panels=args.panels,
               grid_res=args.grid_res, follower=follower, leader=leader,
               leader_start=list(leader.center), leader_speed=args.leader_speed, radius=args.radius)
    children = np.random.SeedSequence(args.seed).spawn(args.trials)
    # the same child seed is reused at every noise level (common random numbers)
    jobs = [(args.path, s, children[i], cfg) for s in args.noise for i in range(args.trials)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_track_trial, jobs))
    else:
        results = [_track_trial(j) for j in jobs]
    summary, artifacts = [], []
    for (kind, s, _, _), res, i in zip(jobs, results, [i for _ in args.noise for i in range(args.trials)]):
        name = f"trajectory_{kind}_noise{s:g}_trial{i:02d}.csv"
        rows = []
        for n in range(len(res.follower)):
            e = res.estimates[n - 1] if n > 0 else (np.nan, np.nan)
            err = res.errors[n - 1] if n > 0 else np.nan
            rows.append((n, *map(float, res.leader[n]), float(res.leader_heading[n]),
                         *map(float, res.follower[n]), float(res.follower_heading[n]),
                         float(e[0]), float(e[1]), float(err)))
        write_rows_csv(out / name, ["n", "leader_x", "leader_y", "leader_heading", "follower_x",
                                    "follower_y", "follower_heading", "est_x", "est_y", "error"], rows)
        artifacts.append(name)
        summary.append((kind, float(s), i, res.mean_error, float(np.nanmedian(res.errors)) if res.errors.size else np.nan,
                        int(res.collided), int(res.separated), res.failures, len(res.speeds)))
    write_rows_csv(out / "summary.csv", ["path", "noise", "trial", "mean_error", "median_error",
                                         "collided", "separated", "failures", "steps"], summary)
    per_noise = {}
    for s in args.noise:
        errs = [r[3] for r in summary if r[1] == float(s)]
        per_noise[f"{s:g}"] = {"mean_error": float(np.mean(errs)),
                               "collisions": sum(r[5] for r in summary if r[1] == float(s)),
                               "separations": sum(r[6] for r in summary if r[1] == float(s))}
    return {"per_noise": per_noise, "seeds": [int(c.generate_state(1)[0]) for c in children],
            "artifacts": artifacts + ["summary.csv"]}


def cmd_sense(args, out: Path) -> dict:
    scene = _scene(args, default_sense_scene)
    if scene.target is None:
        raise ConfigError("sense needs a scene with a target")
    n = args.panels
    freqs = se.default_frequencies(args.nfreq, scene.target.eps_D or 1.0, scene.medium)
    f1 = scene.fish[0]
    grid = make_search_grid(_bbox(args, f1.center, 10.0), args.grid_res,
                            bodies=[_Margin(f1, args.grid_res)])
    est, sfr = se.sense_target(scene, freqs, args.noise, args.seed, grid, n_panels=n,
                               delta=scene.target.radius)
    write_grid_csv(out / "localizer_map.csv", grid, est.image, "I1")
    write_rows_csv(out / "sfr.csv", [f"f{j}" for j in range(len(freqs))],
                   (tuple(float(v) for v in row) for row in sfr.data))
    z = np.asarray(scene.target.center)
    rows = [(float(w), float(m[0, 0]), float(m[0, 1]), float(m[1, 1])) for w, m in zip(freqs, est.imag_M)]
    write_rows_csv(out / "imag_M.csv", ["omega", "m00", "m01", "m11"], rows)
    rec = {"z_hat_x": est.z_hat[0], "z_hat_y": est.z_hat[1], "z_true_x": z[0], "z_true_y": z[1],
           "error": float(np.linalg.norm(est.z_hat - z)), "rank": float(est.rank), "peak": est.peak}
    write_rows_csv(out / "estimate.csv", list(rec), [tuple(float(v) for v in rec.values())])
    return {"estimate": {k: float(v) for k, v in rec.items()},
            "artifacts": ["localizer_map.csv", "sfr.csv", "imag_M.csv", "estimate.csv"]}


def cmd_plot(args, out: Path) -> dict:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ConfigError("plotting needs matplotlib (pip install 'artifact[plot]')") from exc
    try:
        data = np.genfromtxt(args.input, delimiter=",", names=True)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.input}") from exc
    names = data.dtype.names
    x, y = np.unique(data["x"]), np.unique(data["y"])
    col = args.column or names[-1]
    img = data[col].reshape(len(y), len(x))
    fig, ax = plt.subplots(figsize=(6, 5))
    if args.contour:
        ax.contour(x, y, img, levels=30)
    else:
        m = ax.pcolormesh(x, y, img, shading="auto")
        fig.colorbar(m, ax=ax, label=col)
    ax.set_aspect("equal")
    name = args.output or (Path(args.input).stem + ".png")
    fig.savefig(out / name, dpi=120)
    plt.close(fig)
    return {"artifacts": [name]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="electrofish", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    common.add_argument("--scene", help="scene JSON file (default: built-in scene)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--panels", type=int, default=None,
                        help="panels per fish (default: $ELECTROFISH_PANELS or 256)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("jam-demo", parents=[common], help="field snapshots before/after the JAR")
    p.add_argument("--omega1", type=float)
    p.add_argument("--omega2", type=float)
    p.add_argument("--grid-res", type=float, default=0.1)
    p.add_argument("--bbox", type=float, nargs=4, metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p.set_defaults(func=cmd_jam_demo)

    p = sub.add_parser("separate", parents=[common], help="separate a two-fish receptor trace")
    p.add_argument("--omega1", type=float)
    p.add_argument("--omega2", type=float)
    p.add_argument("--periods", type=int, default=1, help="common periods in the window")
    p.add_argument("--samples", type=int, default=512)
    p.add_argument("--noise", type=float, default=0.0, help="noise relative to the trace maximum")
    p.add_argument("--pulse", action="store_true", help="pulse-type EODs instead of wave-type")
    p.add_argument("--eta", type=float, nargs=2, default=(4.0, 4.0))
    p.add_argument("--shift", type=float, nargs=2, default=(0.0, 4.0))
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("locate-fish", parents=[common], help="multi-position MUSIC dipole search")
    p.add_argument("--positions", type=int, default=150)
    p.add_argument("--span", type=float, default=0.3, help="follower displacement over all positions")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--grid-res", type=float, default=0.1)
    p.add_argument("--bbox", type=float, nargs=4, metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p.set_defaults(func=cmd_locate_fish)

    p = sub.add_parser("track", parents=[common], help="closed-loop fish-follows-fish runs")
    p.add_argument("--path", choices=("line", "circle"), default="line")
    p.add_argument("--noise", type=float, nargs="+", default=[0.05])
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--substeps", type=int, default=5)
    p.add_argument("--theta-max", type=float, default=0.1)
    p.add_argument("--grid-res", type=float, default=0.2)
    p.add_argument("--leader-speed", type=float, default=0.3)
    p.add_argument("--radius", type=float, default=10.0, help="circle path radius")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("sense", parents=[common], help="multi-frequency MUSIC target imaging")
    p.add_argument("--nfreq", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--grid-res", type=float, default=0.2)
    p.add_argument("--bbox", type=float, nargs=4, metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p.set_defaults(func=cmd_sense)

    p = sub.add_parser("plot", parents=[common], help="render a grid CSV to PNG (needs matplotlib)")
    p.add_argument("input")
    p.add_argument("--column")
    p.add_argument("--output")
    p.add_argument("--contour", action="store_true")
    p.set_defaults(func=cmd_plot)
    return parser


def _validate(args) -> None:
    for name in ("noise",):
        vals = getattr(args, name, None)
        for v in np.atleast_1d(vals if vals is not None else []):
            if v < 0:
                raise ConfigError("noise level must be non-negative")
    for name in ("grid_res",):
        if getattr(args, name, 1.0) <= 0:
            raise ConfigError("grid resolution must be positive")
    for name in ("positions", "trials", "steps", "substeps", "nfreq", "samples", "periods", "jobs"):
        if getattr(args, name, 1) < 1:
            raise ConfigError(f"--{name} must be at least 1")
    if getattr(args, "theta_max", 0.0) < 0:
        raise ConfigError("--theta-max must be non-negative")
    if args.panels is not None and (args.panels < 16 or args.panels % 2):
        raise ConfigError("--panels must be even and at least 16")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _validate(args)
        if args.panels is None:
            args.panels = default_panels()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        info = args.func(args, out)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"electrofish: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"electrofish: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"electrofish: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": args.command,
        "config": config,
        "result": info,
        "versions": {"electrofish": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "env": {"ELECTROFISH_PANELS": os.environ.get("ELECTROFISH_PANELS")},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
