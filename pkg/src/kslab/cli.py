"""Command-line front end: ``kslab {simulate,picard,selfsim,eta,validate}``.

Exit codes: 0 success, 1 configuration or input error, 2 suspected
blowup, 3 resolution lost, 4 Picard iteration not contracting.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .field import ResolutionError, set_fft_workers

log = logging.getLogger("kslab")

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_RESOLUTION, EXIT_NONCONTRACTION = 0, 1, 2, 3, 4
OUT_ENV = "KSLAB_OUT"


class Manifest:
    """Collects outputs of one command; written atomically at the end."""

    def __init__(self, command: str, out: Path, cfg: Optional[RunConfig], argv: List[str]):
        self.out = out
        self.data = {
            "command": command,
            "argv": argv,
            "version": __version__,
            "config": None if cfg is None else cfg.to_dict(),
            "seed": 0 if cfg is None else cfg.seed,
            "start": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "end": None,
            "verdicts": {},
            "outputs": [],
        }

    def add(self, path) -> Path:
        path = Path(path)
        rel = os.path.relpath(path, self.out)
        if rel not in self.data["outputs"]:
            self.data["outputs"].append(rel)
        return path

    def verdict(self, key: str, value) -> None:
        self.data["verdicts"][key] = value

    def write(self) -> Path:
        self.data["end"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        path = self.out / "manifest.json"
        tmp = self.out / "manifest.json.tmp"
        tmp.write_text(json.dumps(self.data, indent=2, default=_jsonable) + "\n")
        os.replace(tmp, path)
        return path


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _out_dir(args, cfg: Optional[RunConfig]) -> Path:
    if getattr(args, "out", None):
        d = Path(args.out)
    elif cfg is not None and cfg.output.directory:
        d = cfg._resolve(cfg.output.directory)
    else:
        d = Path(os.environ.get(OUT_ENV, "kslab_out"))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load(args) -> RunConfig:
    if not getattr(args, "config", None):
        raise ConfigError("this command needs --config PATH")
    return load_config(args.config)


def _plot_script(path: Path, csv_name: str, x: str, ys: List[str]) -> Path:
    lines = [
        "import csv",
        "import matplotlib.pyplot as plt",
        "",
        f"rows = list(csv.DictReader(open({csv_name!r})))",
        f"x = [float(r[{x!r}]) for r in rows]",
    ]
    for y in ys:
        lines.append(f"plt.plot(x, [float(r[{y!r}]) for r in rows], label={y!r})")
    lines += ["plt.xlabel(" + repr(x) + ")", "plt.legend()", "plt.show()", ""]
    path.write_text("\n".join(lines))
    return path


def cmd_simulate(args) -> int:
    from .evolution import BlowupDetector, StepController, run, write_timeseries
    from .snapshot import write_state

    cfg = _load(args)
    if cfg.solver.mode != "evolution":
        raise ConfigError("simulate needs solver.mode = 'evolution'")
    out = _out_dir(args, cfg)
    man = Manifest("simulate", out, cfg, args.argv)
    grid = cfg.make_grid()
    m = cfg.make_measure()
    tm = cfg.time
    ctrl = StepController(dt=tm.dt_init, cfl_target=tm.cfl, dt_min=tm.dt_min, dt_max=tm.dt_max)
    rows: list = []
    states, verdict = run(
        m, tm.t_end, cfg.make_params(), ctrl, snapshots=cfg.output.snapshot_times, grid=grid, series=rows,
        detector=BlowupDetector(),
    )
    if "csv" in cfg.output.formats:
        write_timeseries(man.add(out / "timeseries.csv"), rows)
        if cfg.output.plot_scripts:
            man.add(_plot_script(out / "plot_timeseries.py", "timeseries.csv", "t", ["l2", "linf"]))
    if "ksf" in cfg.output.formats:
        for k, s in enumerate(states):
            man.add(write_state(out / f"snapshot_{k:03d}.ksf", s))
    # weighted norms sup_t t^(1-1/p) ||u||_p from the recorded series (t > 0)
    series = np.array(rows) if rows else np.zeros((0, 8))
    pos = series[series[:, 0] > 0] if len(series) else series
    sups = {}
    for p, col in ((1.0, 2), (2.0, 3), (math.inf, 4)):
        e = 1.0 if math.isinf(p) else 1 - 1 / p
        sups[f"p={p:g}"] = float(np.max(pos[:, 0] ** e * pos[:, col])) if len(pos) else 0.0
    report = out / "norms.txt"
    report.write_text("".join(f"sup_t t^(1-1/p) ||u||_p, {k}: {v!r}\n" for k, v in sups.items()))
    man.add(report)
    man.verdict("status", verdict.status.value)
    man.verdict("t_event", verdict.t_event)
    man.verdict("peak_norm", verdict.peak_norm)
    man.verdict("spectral_tail_fraction", verdict.spectral_tail_fraction)
    man.verdict("weighted_norms", sups)
    man.write()
    print(f"status: {verdict.status.value} at t = {verdict.t_event:.6g}")
    for k, v in sups.items():
        print(f"sup_t t^(1-1/p)||u||_p ({k}) = {v:.6g}")
    return verdict.exit_code


def cmd_picard(args) -> int:
    from .estimates import ExponentSet
    from .mild import NonContractionError, TimeGrid, picard_solve, suggest_tau, weighted_norm_curve
    from .snapshot import write_slab

    cfg = _load(args)
    out = _out_dir(args, cfg)
    man = Manifest("picard", out, cfg, args.argv)
    try:
        ExponentSet(cfg.solver.p, cfg.solver.q)
    except ValueError as exc:
        raise ConfigError(f"inadmissible exponents: {exc}") from exc
    grid = cfg.make_grid()
    m = cfg.make_measure()
    params = cfg.make_params()
    tg = TimeGrid(cfg.time.t_end, cfg.time.n_t, cfg.time.kappa)
    try:
        slab, rep = picard_solve(m, grid, tg, params, p=cfg.solver.p, tol=cfg.solver.tol, max_iter=cfg.solver.max_iter)
    except NonContractionError as exc:
        tau = suggest_tau(m, cfg.solver.p, cfg.solver.q)
        msg = f"{exc}; suggested tau >= {tau:.4g} (heuristic)"
        (out / "picard_report.txt").write_text(f"converged = false\nerror = {msg}\nsuggested_tau = {tau!r}\n")
        man.add(out / "picard_report.txt")
        man.verdict("status", "non_contraction")
        man.verdict("ratio", exc.ratio)
        man.verdict("suggested_tau", tau)
        man.write()
        print(msg, file=sys.stderr)
        return EXIT_NONCONTRACTION
    text = rep.to_text()
    norms = {f"{p:g}": float(weighted_norm_curve(slab, p).max()) for p in (1.0, 1.5, 2.0, 4.0, math.inf)}
    text += "".join(f"triple_norm_p{k} = {v!r}\n" for k, v in norms.items())
    (out / "picard_report.txt").write_text(text)
    man.add(out / "picard_report.txt")
    if "ksf" in cfg.output.formats:
        for f in write_slab(out / "slab", slab, params):
            man.add(f)
    man.verdict("status", "converged" if rep.converged else "max_iter_reached")
    man.verdict("contraction_ratio", rep.contraction_ratio)
    man.verdict("iterates", rep.iterates)
    man.write()
    print(text, end="")
    return EXIT_OK


def _parse_floats(items) -> List[float]:
    vals = []
    for it in items:
        for part in str(it).split(","):
            if part.strip():
                vals.append(float(part))
    return vals


def cmd_selfsim(args) -> int:
    from .selfsim import (
        EIGHT_PI,
        OdeSettings,
        find_tau_star,
        integrate_profile,
        m_tau_trend,
        mass_curve,
        write_curve_csv,
        write_profile_columns,
        write_trend_csv,
    )

    out = _out_dir(args, None)
    man = Manifest("selfsim", out, None, args.argv)
    settings = OdeSettings(xi_max=args.xi_max)
    workers = 1 if args.strict_sequential else max(1, args.threads)
    if not 0 < args.a_min < args.a_max or args.points < 2:
        raise ConfigError("need 0 < --a-min < --a-max and --points >= 2")
    a_grid = np.logspace(math.log10(args.a_min), math.log10(args.a_max), args.points)
    taus = _parse_floats(args.tau or [])
    if any(t <= 0 for t in taus):
        raise ConfigError("tau must be positive")
    curves = []
    for tau in taus:
        c = mass_curve(tau, a_grid, settings, workers=workers)
        curves.append(c)
        above = sum(1 for pr in c.pairs if pr[2] > EIGHT_PI)
        print(f"tau = {tau:g}: m_tau = {c.m_tau:.6f} (8 pi = {EIGHT_PI:.6f}), {len(c.pairs)} equal-mass pairs, {above} above 8 pi")
        for a, err in c.failures:
            print(f"  profile a = {a:g} failed: {err}", file=sys.stderr)
        pairs_path = out / f"pairs_tau{tau:g}.csv"
        with open(pairs_path, "w") as fh:
            fh.write("a1,a2,M\n")
            for a1, a2, M in c.pairs:
                fh.write(f"{a1!r},{a2!r},{M!r}\n")
        man.add(pairs_path)
        man.verdict(f"m_tau[{tau:g}]", c.m_tau)
    if curves:
        write_curve_csv(man.add(out / "mass_curve.csv"), curves, settings, residuals=args.residuals)
        if args.plot_scripts:
            man.add(_plot_script(out / "plot_mass_curve.py", "mass_curve.csv", "a", ["M"]))
    if args.trend:
        trend = m_tau_trend(_parse_floats(args.trend), settings, a_grid, workers=workers)
        write_trend_csv(man.add(out / "m_tau_trend.csv"), trend)
        for tau, m in trend:
            print(f"m_tau({tau:g}) = {m:.6f}")
    if args.profile is not None:
        tau = taus[0] if taus else 1.0
        p = integrate_profile(args.profile, tau, settings)
        stem = f"profile_a{args.profile:g}_tau{tau:g}"
        write_profile_columns(p, man.add(out / f"{stem}_U.csv"), man.add(out / f"{stem}_V.csv"))
        print(f"profile a = {args.profile:g}, tau = {tau:g}: M = {p.mass:.10g}, V(inf) = {p.v_inf:.10g}")
    if args.find_tau_star:
        ts = find_tau_star(args.lo, args.hi, settings, workers=workers)
        print(f"tau_star = {ts:.4f}")
        man.verdict("tau_star", ts)
    man.write()
    return EXIT_OK


def cmd_eta(args) -> int:
    from .estimates import ExponentSet, eta_empirical, write_constants_csv, write_eta_csv
    from .field import Grid2D
    from .mild import TimeGrid

    try:
        e = ExponentSet(args.p, args.q)
    except ValueError as exc:
        raise ConfigError(f"inadmissible exponents: {exc}") from exc
    taus = _parse_floats(args.tau_list)
    if len(taus) < 3:
        raise ConfigError(f"need at least 3 tau values for a fit, got {len(taus)}")
    out = _out_dir(args, None)
    man = Manifest("eta", out, None, args.argv)
    model = eta_empirical(e, taus, space=Grid2D(args.n, args.l), tgrid=TimeGrid(args.horizon, args.n_t))
    write_eta_csv(man.add(out / "eta.csv"), model)
    write_constants_csv(man.add(out / "constants.csv"), [e])
    if args.plot_scripts:
        man.add(_plot_script(out / "plot_eta.py", "eta.csv", "tau", ["eta_measured"]))
    man.verdict("slope", model.slope)
    man.verdict("slope_stderr", model.slope_stderr)
    man.verdict("bound_exponent", e.decay_exponent)
    man.write()
    for t, v in zip(model.taus, model.eta_measured):
        print(f"tau = {t:g}: eta (empirical lower envelope) = {v:.6g}")
    print(f"fitted slope {model.slope:.4f} +- {model.slope_stderr:.4f}; bound exponent {e.decay_exponent:.4f}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .snapshot import SnapshotError, read_snapshot
    from .validate import run_suite

    if args.check_snapshots:
        files = sorted(Path(args.check_snapshots).rglob("*.ksf"))
        bad = 0
        for f in files:
            try:
                read_snapshot(f)
            except SnapshotError as exc:
                print(f"corrupt snapshot: {exc}", file=sys.stderr)
                bad += 1
        print(f"{len(files) - bad}/{len(files)} snapshots readable")
        if bad:
            return EXIT_CONFIG
    only = [int(x) for x in _parse_floats(args.only)] if args.only else None
    if args.quick:
        print("warning: reduced-resolution run, tolerances scaled as noted per criterion")
    results = run_suite(only, quick=args.quick)
    return EXIT_OK if all(r.passed for r in results.values()) else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="TOML run configuration")
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS, help=f"output directory (default ${OUT_ENV} or ./kslab_out)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="FFT and sweep workers")
    common.add_argument("--strict-sequential", action="store_true", default=argparse.SUPPRESS, help="single worker, bit-reproducible")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    ap = argparse.ArgumentParser(prog="kslab", description="Keller-Segel numerical laboratory", parents=[common])
    ap.add_argument("--version", action="version", version=f"kslab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="IMEX evolution from a config")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("picard", parents=[common], help="mild solution by Picard iteration")
    s.set_defaults(func=cmd_picard)

    s = sub.add_parser("selfsim", parents=[common], help="self-similar profiles and mass curves")
    s.add_argument("--tau", nargs="+", help="one or more tau values (comma or space separated)")
    s.add_argument("--a-min", type=float, default=1e-3)
    s.add_argument("--a-max", type=float, default=1e3)
    s.add_argument("--points", type=int, default=200)
    s.add_argument("--xi-max", type=float, default=20.0)
    s.add_argument("--residuals", action="store_true", help="fill the residual_max column")
    s.add_argument("--trend", nargs="+", help="tau list for the m_tau trend")
    s.add_argument("--profile", type=float, help="export the profile with this a (first --tau)")
    s.add_argument("--find-tau-star", action="store_true")
    s.add_argument("--lo", type=float, default=0.5)
    s.add_argument("--hi", type=float, default=0.8)
    s.add_argument("--plot-scripts", action="store_true")
    s.set_defaults(func=cmd_selfsim)

    s = sub.add_parser("eta", parents=[common], help="empirical eta(tau) of the bilinear form")
    s.add_argument("--p", type=float, default=1.5)
    s.add_argument("--q", type=float, default=4.0)
    s.add_argument("--tau-list", nargs="+", default=["1,3,10,30,100"])
    s.add_argument("--n", type=int, default=256)
    s.add_argument("--l", type=float, default=40.0)
    s.add_argument("--horizon", type=float, default=4.0)
    s.add_argument("--n-t", type=int, default=64)
    s.add_argument("--plot-scripts", action="store_true")
    s.set_defaults(func=cmd_eta)

    s = sub.add_parser("validate", parents=[common], help="run the acceptance suite")
    s.add_argument("--only", nargs="+", help="criterion numbers to run")
    s.add_argument("--quick", action="store_true", help="reduced resolution with scaled tolerances")
    s.add_argument("--check-snapshots", metavar="DIR", help="verify every KSF1 file under DIR first")
    s.set_defaults(func=cmd_validate)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("out", None), ("threads", 1), ("strict_sequential", False), ("verbose", 0)):
        if not hasattr(args, name):
            setattr(args, name, default)
    args.argv = argv
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    set_fft_workers(1 if args.strict_sequential else args.threads)
    try:
        return args.func(args)
    except (ConfigError, ResolutionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
