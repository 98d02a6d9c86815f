"""Command-line entry point: ``eulerflow <subcommand> [flags]``.

Values come from, in increasing priority: built-in defaults, a ``--config``
file, then explicit flags. ``--seed`` defaults to ``$EULERFLOW_SEED`` or 0.
Machine-readable scalars go to stdout, diagnostics to stderr. On failure the
exit status is non-zero and files this run created are removed.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as fio
from .consistency import BgcParams, cycle_energy, geometric_loss, occlusion_mask
from .estimator import EstimatorParams, estimate_batched
from .harness import (
    SWEEP_ALPHA1,
    SWEEP_ALPHA2,
    SWEEP_COLUMNS,
    drift_experiment,
    sensitivity_sweep,
    verify_theorem1,
    verify_theorem2,
    warping_error,
)
from .motion import MotionSequence, autoregressive_chain
from .noise import NoiseModel
from .synth import SHIPPED_SCENES, render, valid_area_curve


class _Outputs:
    """Tracks files and directories created by a command so failures can roll back."""

    def __init__(self):
        self.created: list[str] = []

    def directory(self, path) -> Path:
        p = Path(path)
        missing = []
        for parent in [p, *p.parents]:
            if parent.exists() or str(parent) in ("", "."):
                break
            missing.append(parent)
        p.mkdir(parents=True, exist_ok=True)
        self.created.extend(str(m) for m in reversed(missing))
        return p

    def file(self, path) -> Path:
        p = Path(path)
        if p.parent != Path("") and not p.parent.exists():
            self.directory(p.parent)
        self.created.append(str(p))
        return p


def _default_seed() -> int:
    raw = os.environ.get("EULERFLOW_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"eulerflow: EULERFLOW_SEED must be an integer, got {raw!r}") from None


def _frame_paths(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"no such frames directory: {d}")
    paths = sorted(p for p in d.iterdir() if p.suffix in (".pgm", ".ppm") and p.stem.startswith("frame_"))
    if len(paths) < 2:
        raise ValueError(f"{d} holds {len(paths)} frame_*.pgm/ppm files, need at least 2")
    return paths


def _estimator(args) -> EstimatorParams:
    return EstimatorParams(args.levels, args.patch, args.search, not args.no_subpixel, args.shiftable)


def _bgc(args) -> BgcParams:
    return BgcParams(alpha1=args.alpha1, alpha2=args.alpha2, epsilon=args.epsilon)


def _scene(args, cfg: fio.RunConfig):
    if args.scene_file:
        return fio.scene_from_text(Path(args.scene_file).read_text(encoding="utf-8"))
    if args.scene:
        return SHIPPED_SCENES[args.scene]()
    return cfg.scene


def _config_text(args) -> str:
    """Canonical text of the effective settings, hashed into CSV comment rows."""
    skip = {"func", "config", "out", "out_dir"}
    items = sorted((k, v) for k, v in vars(args).items() if k not in skip)
    return "\n".join(f"{k} = {v}" for k, v in items) + "\n"


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args, out: _Outputs, cfg):
    spec = _scene(args, cfg)
    bundle = render(spec, args.T)
    d = out.directory(args.out_dir)
    out.file(d / "scene.txt").write_text(fio.scene_to_text(spec), encoding="utf-8")
    if spec.channels not in (1, 3):
        raise ValueError("frames can only be written for 1 or 3 channels")
    ext = ".pgm" if spec.channels == 1 else ".ppm"
    for t, frame in enumerate(bundle.frames):
        fio.write_pnm(out.file(d / f"frame_{t:04d}{ext}"), frame)
    for t in range(len(bundle.fwd_flows)):
        fio.write_flo(out.file(d / f"fwd_{t:04d}.flo"), bundle.fwd_flows[t])
        fio.write_flo(out.file(d / f"bwd_{t:04d}.flo"), bundle.bwd_flows[t])
        fio.write_pnm(out.file(d / f"occ_{t:04d}.pgm"), bundle.occlusion[t])
    rows = list(zip(range(args.T), valid_area_curve(bundle, "reference"),
                    valid_area_curve(bundle, "adjacent")))
    fio.write_csv(out.file(d / "valid_area.csv"), ["t", "reference", "adjacent"], rows,
                  _config_text(args), args.seed)
    print(f"wrote {args.T} frames to {d}", file=sys.stderr)


def cmd_estimate(args, out: _Outputs, cfg):
    frames = [fio.read_pnm(p) for p in _frame_paths(args.frames)]
    fwd, bwd = estimate_batched(frames, _estimator(args), args.workers)
    d = out.directory(args.out_dir)
    for t, f in enumerate(fwd):
        fio.write_flo(out.file(d / f"fwd_{t:04d}.flo"), f)
        if args.color:
            fio.write_pnm(out.file(d / f"fwd_{t:04d}.ppm"), fio.flow_to_color(f))
    if args.bidirectional:
        for t, b in enumerate(bwd):
            fio.write_flo(out.file(d / f"bwd_{t:04d}.flo"), b)
    print(f"estimated {len(fwd)} dyads with {args.workers} worker(s)", file=sys.stderr)


def _flow_pair(args):
    fwd = fio.read_flo(args.fwd, "forward", 0, 1)
    bwd = fio.read_flo(args.bwd, "backward", 1, 0)
    return fwd, bwd


def cmd_mask(args, out: _Outputs, cfg):
    fwd, bwd = _flow_pair(args)
    mask = occlusion_mask(fwd, bwd, _bgc(args))
    energy = cycle_energy(fwd, bwd).energy
    scale = args.energy_scale or float(energy.max()) or 1.0
    fio.write_pnm(out.file(args.out_mask), mask)
    if args.out_energy:
        fio.write_pnm(out.file(args.out_energy), fio.FrameGrid(np.minimum(energy / scale, 1.0)))
    print(f"{mask.valid_count / mask.bits.size!r}")


def cmd_loss(args, out: _Outputs, cfg):
    sampled = fio.read_pnm(args.sampled)
    reference = fio.read_pnm(args.reference)
    flow = fio.read_flo(args.flow)
    mask = fio.read_mask(args.mask) if args.mask else fio.ValidityMask.ones(flow.width, flow.height)
    loss = geometric_loss(sampled, reference, flow, mask, _bgc(args))
    if args.out:
        fio.write_csv(out.file(args.out), ["loss", "valid_count"], [[loss, mask.valid_count]],
                      _config_text(args), args.seed)
    print(repr(loss))


def _write_series(args, out, series):
    fio.write_csv(out.file(args.out), series.columns(), series.rows(), _config_text(args), args.seed)
    verdict = "holds" if series.bound_holds() else "VIOLATED"
    print(f"bound {verdict}; max mean_epe {float(series.mean_epe.max())!r}", file=sys.stderr)


def cmd_theorem1(args, out: _Outputs, cfg):
    series = verify_theorem1(args.sigma, args.T, args.trials, args.seed, args.kind, args.kappa)
    _write_series(args, out, series)


def cmd_theorem2(args, out: _Outputs, cfg):
    series = verify_theorem2(args.sigma, args.T, args.trials, args.seed, args.kind)
    _write_series(args, out, series)


def _noise(args, cfg) -> NoiseModel:
    return replace(cfg.noise, kind=args.kind, sigma=args.sigma, variance_law=args.law,
                   kurtosis=args.kappa, seed=args.seed)


def cmd_drift(args, out: _Outputs, cfg):
    spec = _scene(args, cfg)
    noise = _noise(args, cfg)
    report = drift_experiment(spec, noise, args.T, args.seeds, args.pixel_sigma)
    d = out.directory(args.out_dir)
    fio.write_csv(out.file(d / "drift.csv"), report.columns(), report.rows(),
                  _config_text(args), args.seed)
    per_t = [[t, float(report.eulerian_epe[:, t].mean()), float(report.lagrangian_epe[:, t].mean()),
              report.reference_valid[t], report.adjacent_valid[t]]
             for t in range(args.T + 1)]
    fio.write_csv(out.file(d / "drift_series.csv"),
                  ["t", "eulerian_epe", "lagrangian_epe", "reference_valid", "adjacent_valid"],
                  per_t, _config_text(args), args.seed)
    if spec.channels in (1, 3):
        bundle = render(spec, args.T + 1)
        seq = MotionSequence("eulerian", bundle.fwd_flows)
        ext = ".pgm" if spec.channels == 1 else ".ppm"
        for mode in ("eulerian_step", "lagrangian_anchor"):
            frames = autoregressive_chain(bundle.frames[0], seq, noise, mode, args.pixel_sigma)
            fio.write_pnm(out.file(d / f"final_{mode}{ext}"), frames[-1])
        fio.write_pnm(out.file(d / f"final_truth{ext}"), bundle.frames[-1])
    win = "tie" if report.win_fraction is None else repr(report.win_fraction)
    print(win)


def cmd_sweep(args, out: _Outputs, cfg):
    spec = _scene(args, cfg)
    rows = sensitivity_sweep(args.alpha1_grid, args.alpha2_grid, spec, args.T, args.flows,
                             _estimator(args))
    fio.write_csv(out.file(args.out), SWEEP_COLUMNS, [[r[c] for c in SWEEP_COLUMNS] for r in rows],
                  _config_text(args), args.seed)
    best = max(rows, key=lambda r: r["iou"])
    print(f"best IoU {best['iou']!r} at alpha1={best['alpha1']} alpha2={best['alpha2']}",
          file=sys.stderr)


def cmd_ewarp(args, out: _Outputs, cfg):
    frames = [fio.read_pnm(p) for p in _frame_paths(args.frames)]
    print(repr(warping_error(frames, _estimator(args), _bgc(args), args.workers)))


# --------------------------------------------------------------------------
# parser


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_estimator(p, cfg):
    e = cfg.estimator
    p.add_argument("--levels", type=int, default=e.levels)
    p.add_argument("--patch", type=int, default=e.patch, help="block radius in pixels")
    p.add_argument("--search", type=int, default=e.search, help="search radius per level")
    p.add_argument("--no-subpixel", action="store_true", default=not e.subpixel_refine)
    p.add_argument("--no-shiftable", dest="shiftable", action="store_false", default=e.shiftable)


def _add_bgc(p, cfg):
    p.add_argument("--alpha1", type=float, default=cfg.bgc.alpha1)
    p.add_argument("--alpha2", type=float, default=cfg.bgc.alpha2)
    p.add_argument("--epsilon", type=float, default=cfg.bgc.epsilon)


def _add_scene(p):
    p.add_argument("--scene", choices=sorted(SHIPPED_SCENES), help="shipped scene name")
    p.add_argument("--scene-file", help="scene description file (see scene.txt from synth)")


def _add_noise(p, cfg, law):
    p.add_argument("--sigma", type=float, default=cfg.noise.sigma)
    p.add_argument("--kind", choices=["gaussian", "student_t", "uniform_disk"], default=cfg.noise.kind)
    p.add_argument("--kappa", type=float, default=cfg.noise.kurtosis,
                   help="target norm-kurtosis for student_t noise")
    if law:
        p.add_argument("--law", choices=["constant", "linear_in_t"], default=cfg.noise.variance_law)


def build_parser(cfg: fio.RunConfig | None = None) -> argparse.ArgumentParser:
    cfg = cfg or fio.RunConfig()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style run configuration; flags override it")
    common.add_argument("--seed", type=int, default=cfg.seed if cfg.seed else _default_seed())

    parser = argparse.ArgumentParser(prog="eulerflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="render a scene and its ground truth")
    _add_scene(p)
    p.add_argument("-T", type=int, default=cfg.horizon, help="number of frames")
    p.add_argument("--out", dest="out_dir", default=cfg.output_dir)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate", parents=[common], help="estimate flow between consecutive frames")
    p.add_argument("frames", help="directory of frame_*.pgm/ppm files")
    p.add_argument("--out", dest="out_dir", default=cfg.output_dir)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--bidirectional", action="store_true", help="also write backward fields")
    p.add_argument("--color", action="store_true", help="also write colour-coded flow images")
    _add_estimator(p, cfg)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("mask", parents=[common], help="occlusion mask from a forward/backward pair")
    p.add_argument("fwd")
    p.add_argument("bwd")
    p.add_argument("--out", dest="out_mask", default="mask.pgm")
    p.add_argument("--energy", dest="out_energy", help="also write the cycle energy as a PGM")
    p.add_argument("--energy-scale", type=float, default=None,
                   help="energy mapped to white (default: the maximum)")
    _add_bgc(p, cfg)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("loss", parents=[common], help="masked geometric loss")
    p.add_argument("sampled", help="frame that the flow samples (frame t+1)")
    p.add_argument("reference", help="frame on whose grid the flow lives (frame t)")
    p.add_argument("flow", help="forward .flo on the reference grid")
    p.add_argument("--mask", help="validity PGM (default: all valid)")
    p.add_argument("--out", help="also write the value to this CSV")
    _add_bgc(p, cfg)
    p.set_defaults(func=cmd_loss)

    for name, func, what in (("theorem1", cmd_theorem1, "reference-anchored error growth"),
                             ("theorem2", cmd_theorem2, "adjacent-step error bound")):
        p = sub.add_parser(name, parents=[common], help=f"Monte-Carlo check of {what}")
        _add_noise(p, cfg, False)
        p.add_argument("-T", type=int, default=256)
        p.add_argument("--trials", type=int, default=1000)
        p.add_argument("--out", default=f"{name}.csv")
        p.set_defaults(func=func)

    p = sub.add_parser("drift", parents=[common], help="eulerian vs lagrangian chain drift")
    _add_scene(p)
    _add_noise(p, cfg, law=True)
    p.add_argument("-T", type=int, default=cfg.horizon)
    p.add_argument("--seeds", type=int, default=50)
    p.add_argument("--pixel-sigma", type=float, default=0.0)
    p.add_argument("--out", dest="out_dir", default=cfg.output_dir)
    p.set_defaults(func=cmd_drift)

    p = sub.add_parser("sweep", parents=[common], help="alpha1 x alpha2 sensitivity table")
    _add_scene(p)
    p.add_argument("-T", type=int, default=30)
    p.add_argument("--alpha1-grid", type=_floats, default=list(SWEEP_ALPHA1))
    p.add_argument("--alpha2-grid", type=_floats, default=list(SWEEP_ALPHA2))
    p.add_argument("--flows", choices=["estimated", "analytic"], default="estimated")
    p.add_argument("--out", default="sweep.csv")
    _add_estimator(p, cfg)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ewarp", parents=[common], help="warping error of a frame sequence")
    p.add_argument("frames", help="directory of frame_*.pgm/ppm files")
    p.add_argument("--workers", type=int, default=1)
    _add_estimator(p, cfg)
    _add_bgc(p, cfg)
    p.set_defaults(func=cmd_ewarp)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    try:
        cfg = fio.RunConfig.load(known.config) if known.config else fio.RunConfig()
    except (OSError, ValueError) as exc:
        print(f"eulerflow: cannot load config: {exc}", file=sys.stderr)
        return 2
    args = build_parser(cfg).parse_args(argv)
    out = _Outputs()
    try:
        args.func(args, out, cfg)
    except (OSError, ValueError) as exc:
        fio.remove_quietly(out.created)
        print(f"eulerflow {args.command}: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        fio.remove_quietly(out.created)
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
