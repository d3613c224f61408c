"""Command-line front end.

Exit codes: 0 success, 2 configuration or validation error, 3 numerical
failure. Results go to stdout as ``key=value`` records; files are UTF-8 CSV
with a header row and LF line endings.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys

import numpy as np

from . import lab, special, theory
from .config import RunConfig
from .errors import ConfigError, DomainError, InsufficientData, NumericalFailure
from .fbm import FbmGrid, SamplingMethod, autocovariance, cumulative_path, sample_increment_paths
from .fbm import write_csv as write_fbm_csv
from .models import (
    AssumptionConstants,
    LinearTestModel,
    cubic_drift,
    cubic_drift_sin_diffusion,
    log_exact_mean_square_linear,
)
from .stm import ThetaScheme

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _check(key, ok, message):
    if not ok:
        raise ConfigError(key, message)


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def emit(**fields):
    print(" ".join(f"{k}={_fmt(v)}" for k, v in fields.items()))


# -- building library objects from a config -------------------------------------


def build_grid(cfg, hurst=None, dt=None):
    hurst = cfg.get("fbm", "hurst") if hurst is None else hurst
    dt = cfg.get("scheme", "dt") if dt is None else dt
    n = cfg.get("scheme", "n_steps")
    _check("fbm.hurst", 0.5 <= hurst < 1.0, f"must lie in [0.5, 1), got {hurst!r}")
    _check("scheme.dt", dt > 0, f"must be positive, got {dt!r}")
    _check("scheme.n_steps", n >= 1, f"must be a positive integer, got {n!r}")
    return FbmGrid(hurst, dt, n)


def build_scheme(cfg, theta=None, dt=None):
    theta = cfg.get("scheme", "theta") if theta is None else theta
    dt = cfg.get("scheme", "dt") if dt is None else dt
    _check("scheme.theta", 0.0 <= theta <= 1.0, f"must lie in [0, 1], got {theta!r}")
    _check("scheme.dt", dt > 0, f"must be positive, got {dt!r}")
    n = cfg.get("scheme", "n_steps")
    _check("scheme.n_steps", n >= 1, f"must be a positive integer, got {n!r}")
    return ThetaScheme(theta, dt, n)


def build_ensemble(cfg):
    n_paths = cfg.get("ensemble", "n_paths")
    seed = cfg.get("ensemble", "master_seed")
    stride = cfg.get("ensemble", "record_stride")
    burn = cfg.get("ensemble", "burn_in_fraction")
    _check("ensemble.n_paths", n_paths >= 2, f"must be >= 2, got {n_paths}")
    _check("ensemble.master_seed", seed >= 0, f"must be nonnegative, got {seed}")
    _check("ensemble.record_stride", stride is None or stride >= 1, "must be positive")
    _check("ensemble.burn_in_fraction", 0.0 <= burn < 0.5, f"must lie in [0, 0.5), got {burn}")
    return lab.EnsembleConfig(n_paths, seed, stride, burn)


def model_parameters(cfg, hurst=None, kappa=None):
    """Canonical (kind, lam, mu, kappa_value, kappa_symbolic, x0, lam_bar)."""
    hurst = cfg.get("fbm", "hurst") if hurst is None else hurst
    kind = cfg.get("model", "kind")
    lam = cfg.get("model", "lambda")
    if cfg.get("model", "convention") == "example":
        lam = -lam
    mu = cfg.get("model", "mu")
    kappa = cfg.get("model", "kappa") if kappa is None else kappa
    kappa_value, _ = theory.resolve_kappa(kappa, hurst)
    x0 = cfg.get("model", "x0")
    lam_bar = cfg.get("model", "lambda_bar")
    _check("model.kappa", kappa_value >= 1, f"must be >= 1, got {kappa_value!r}")
    _check("model.x0", x0 != 0, "must be nonzero")
    if kind != "linear":
        _check("model.lambda", lam > 0, "nonlinear models need lambda > 0 in the canonical convention")
        _check("model.mu", mu > 0, "must be positive")
        _check("model.lambda_bar", lam_bar is None or lam_bar >= lam, "must satisfy lambda_bar >= lambda")
    return kind, lam, mu, kappa_value, kappa, x0, lam_bar


def build_model(cfg, hurst=None, kappa=None):
    kind, lam, mu, k, _, x0, lam_bar = model_parameters(cfg, hurst, kappa)
    if kind == "linear":
        return LinearTestModel(lam, mu, k, x0)
    if kind == "cubic_drift":
        return cubic_drift(lam, k, mu, x0, lam_bar)
    return cubic_drift_sin_diffusion(lam, k, x0, mu, lam_bar)


def theorem_verdict(cfg, theta, hurst, kappa):
    kind, lam, mu, k, k_sym, _, lam_bar = model_parameters(cfg, hurst, kappa)
    if kind != "linear":
        consts = AssumptionConstants(lam, lam if lam_bar is None else lam_bar, mu, k)
        return theory.theorem2_classify(consts, theta, hurst)
    if hurst == 0.5:
        return theory.brownian_classify(lam, mu, k, theta, cfg.get("scheme", "dt"))
    return theory.theorem1_classify(k_sym, hurst, theta)


def _verdict(cfg, series):
    return lab.classify(
        series,
        slope_tol=cfg.get("verdict", "slope_tol"),
        drop_margin=cfg.get("verdict", "drop_margin"),
        burn_in_fraction=cfg.get("ensemble", "burn_in_fraction"),
        max_log_std_error=cfg.get("verdict", "max_log_std_error"),
    )


def _out_dir(cfg, args):
    path = args.out or cfg.get("output", "directory")
    os.makedirs(path, exist_ok=True)
    return path


GNUPLOT_TEMPLATE = """\
set datafile separator ','
set key autotitle columnhead
set logscale x
set xlabel 't'
set ylabel 'log E|X_n|^2'
plot {series}
"""


def write_gnuplot(path, curves):
    series = ", \\\n     ".join(
        f"'{name}' using 2:3 with lines title '{title}'" for name, title in curves
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(GNUPLOT_TEMPLATE.format(series=series))


# -- subcommands ------------------------------------------------------------------


def cmd_sample_fbm(cfg, args):
    cfg.require("fbm.hurst", "scheme.dt", "scheme.n_steps", "ensemble.n_paths", "ensemble.master_seed")
    grid = build_grid(cfg)
    ens = build_ensemble(cfg)
    method = SamplingMethod(cfg.get("fbm", "method"))
    out = _out_dir(cfg, args)

    def work(chunk):
        v = sample_increment_paths(grid, method, ens.master_seed, chunk)
        sq = (v * v).mean(axis=1)
        lag1 = (v[:, 1:] * v[:, :-1]).mean(axis=1) if grid.n_steps > 1 else np.zeros(len(chunk))
        return v[0] if chunk[0] == 0 else None, sq, lag1

    parts = lab.map_chunks(work, ens.n_paths, args.threads)
    first = parts[0][0]
    sq = np.concatenate([p[1] for p in parts])
    lag1 = np.concatenate([p[2] for p in parts])
    write_fbm_csv(os.path.join(out, "fbm_increments.csv"), grid, first)
    write_fbm_csv(os.path.join(out, "fbm_path.csv"), grid, cumulative_path(first))
    gamma = autocovariance(2, grid.dt, grid.hurst)
    p = ens.n_paths
    var = sq.mean()
    emit(
        n_paths=p,
        n_steps=grid.n_steps,
        empirical_variance=var,
        variance_se=sq.std(ddof=1) / math.sqrt(p),
        reference_variance=gamma[0],
        lag1_correlation=lag1.mean() / var,
        lag1_se=lag1.std(ddof=1) / math.sqrt(p) / var,
        reference_lag1_correlation=gamma[1] / gamma[0],
    )
    return EXIT_OK


def cmd_simulate(cfg, args):
    grid = build_grid(cfg)
    scheme = build_scheme(cfg)
    model = build_model(cfg)
    ens = build_ensemble(cfg)
    method = SamplingMethod(cfg.get("fbm", "method"))
    out = _out_dir(cfg, args)
    guarantee = theorem_verdict(cfg, scheme.theta, grid.hurst, cfg.get("model", "kappa"))
    series = lab.run_ensemble(model, scheme, grid, ens, method, args.threads)
    series.write_csv(os.path.join(out, "mean_square.csv"))
    curves = [("mean_square.csv", "Monte Carlo")]
    if isinstance(model, LinearTestModel):
        exact = log_exact_mean_square_linear(model, grid.hurst, series.times)
        with open(os.path.join(out, "exact_mean_square.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "t", "log_exact_mean_square"])
            for step, t, value in zip(series.steps, series.times, exact):
                writer.writerow([int(step), f"{t:.17g}", f"{value:.17g}"])
        curves.append(("exact_mean_square.csv", "exact solution"))
    write_gnuplot(os.path.join(out, "plot.gp"), curves)
    verdict = _verdict(cfg, series)
    with open(os.path.join(out, "verdict.txt"), "w", newline="", encoding="utf-8") as fh:
        fh.write(verdict.record() + "\n")
    print(verdict.record())
    print(guarantee.record())
    return EXIT_OK


SCAN_HEADER = ["theta", "hurst", "kappa", "dt", "theorem_source", "guaranteed", "empirical", "slope"]


def cmd_scan(cfg, args):
    cells = cfg.scan_cells()
    ens = build_ensemble(cfg)
    method = SamplingMethod(cfg.get("fbm", "method"))
    # validate every cell before any simulation starts
    prepared = []
    for theta, hurst, kappa, dt in cells:
        grid = build_grid(cfg, hurst, dt)
        scheme = build_scheme(cfg, theta, dt)
        model = build_model(cfg, hurst, kappa)
        prepared.append((theta, hurst, kappa, dt, grid, scheme, model))
    out = _out_dir(cfg, args)
    rows = []
    for theta, hurst, kappa, dt, grid, scheme, model in prepared:
        guarantee = theorem_verdict(cfg.with_values(scheme__dt=dt), theta, hurst, kappa)
        series = lab.run_ensemble(model, scheme, grid, ens, method, args.threads)
        try:
            verdict = _verdict(cfg, series)
            label, slope = verdict.label, verdict.slope
        except InsufficientData:
            label, slope = "Inconclusive", math.nan
        rows.append([_fmt(theta), _fmt(hurst), _fmt(kappa), _fmt(dt), guarantee.source.value,
                     guarantee.guaranteed.value, label, _fmt(slope)])
        emit(theta=theta, hurst=hurst, kappa=kappa, dt=dt, theorem_source=guarantee.source.value,
             guaranteed=guarantee.guaranteed.value, empirical=label, slope=slope)
    with open(os.path.join(out, "scan.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCAN_HEADER)
        writer.writerows(rows)
    return EXIT_OK


def cmd_theory(args):
    if args.theory_cmd == "classify":
        kappa = args.kappa if args.kappa.upper() == "2H" else float(args.kappa)
        verdict = theory.theorem1_classify(kappa, args.hurst, args.theta)
        print(verdict.record())
        if args.lam is not None and args.mu is not None:
            emit(continuous_stable=theory.continuous_stability(args.lam, args.mu, kappa, args.hurst))
    elif args.theory_cmd == "remark-p":
        emit(p=args.p, **theory.remark_p_threshold(args.p))
    elif args.theory_cmd == "brownian":
        mu = math.sqrt(args.mu2) if args.mu2 is not None else args.mu
        if mu is None:
            raise ConfigError("mu", "give --mu or --mu2")
        if args.kappa == 1:
            emit(dt_star=theory.brownian_dt_threshold(args.lam, mu, args.theta))
        if args.dt is not None:
            print(theory.brownian_classify(args.lam, mu, args.kappa, args.theta, args.dt).record())
    elif args.theory_cmd == "theorem2":
        lam_bar = args.lam if args.lam_bar is None else args.lam_bar
        consts = AssumptionConstants(args.lam, lam_bar, args.mu, args.kappa)
        print(theory.theorem2_classify(consts, args.theta, args.hurst).record())
    elif args.theory_cmd == "envelope":
        emit(n=args.n, log_envelope=theory.envelope_bound(args.n, args.theta))
    return EXIT_OK


def cmd_special(args):
    if args.special_cmd == "phi":
        emit(value=special.kummer_phi(args.a, args.b, args.z))
    elif args.special_cmd == "u":
        emit(value=special.parabolic_u(args.a, args.z))
    elif args.special_cmd == "lgamma":
        emit(value=special.log_gamma(args.x))
    elif args.special_cmd == "moment":
        g = special.GaussianScalar(args.mean, args.std)
        sign, log_mag = special.gaussian_raw_moment_log(g, args.order)
        value = special.gaussian_raw_moment(g, args.order) if args.order <= 64 else math.nan
        emit(value=value, log_abs=log_mag, sign=sign)
    return EXIT_OK


def _selftest_checks():
    from .stm import alpha_n

    yield "kummer_e", abs(special.kummer_phi(1, 1, 1) - math.e) < 1e-14
    yield "parabolic_u_origin", abs(special.parabolic_u(0.5, 0.0) - math.sqrt(math.pi / 2)) < 1e-12
    g = special.GaussianScalar(0.7, 1.3)
    m = [1.0, 0.7]
    for k in range(2, 17):
        m.append(0.7 * m[-1] + (k - 1) * 1.3**2 * m[-2])
    yield "gaussian_moment_wick", all(
        abs(special.gaussian_raw_moment(g, k) - m[k]) <= 1e-10 * abs(m[k]) for k in range(2, 17, 2)
    )
    # the gap closes like n^(1-kappa); at kappa = 1.2 it needs n ~ 1e13 for 1e-3
    yield "alpha_limit", abs(alpha_n(10**13, 0.8, 9, 1.2, 0.5) + 0.25) < 1e-3
    yield "dt_star", abs(theory.brownian_dt_threshold(3, math.sqrt(2), 0) - 4 / 9) < 1e-12
    model = LinearTestModel(9, 2, 1.4, 3.0)
    scheme = ThetaScheme(0.8, 0.5, 64)
    grid = FbmGrid(0.7, 0.5, 64)
    ens = lab.EnsembleConfig(600, 7)
    a = lab.run_ensemble(model, scheme, grid, ens, n_workers=1)
    b = lab.run_ensemble(model, scheme, grid, ens, n_workers=3)
    yield "ensemble_determinism", np.array_equal(a.log_mean_square, b.log_mean_square)


def cmd_selftest(args):
    ok = True
    for name, passed in _selftest_checks():
        ok &= bool(passed)
        emit(check=name, result="PASS" if passed else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERIC


# -- argument parsing ---------------------------------------------------------------


def _add_run_options(p):
    p.add_argument("config", help="INI run configuration")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a configuration value (repeatable)")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads, 0 = auto (default: FBM_STM_THREADS or auto)")
    p.add_argument("--dump-config", action="store_true",
                   help="print the effective configuration and exit")


def build_parser():
    parser = argparse.ArgumentParser(prog="fbm-stm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("sample-fbm", "sample fBm increments and report statistics"),
                            ("simulate", "run a mean-square ensemble and classify it"),
                            ("scan", "classify every cell of a parameter grid")):
        _add_run_options(sub.add_parser(name, help=help_text))

    th = sub.add_parser("theory", help="closed-form stability predicates")
    tsub = th.add_subparsers(dest="theory_cmd", required=True)
    p = tsub.add_parser("classify", help="linear test equation case analysis")
    p.add_argument("--kappa", required=True, help="number or 2H")
    p.add_argument("--hurst", type=float, required=True)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--mu", type=float)
    p = tsub.add_parser("remark-p", help="p-th moment theta threshold")
    p.add_argument("p", type=int)
    p = tsub.add_parser("brownian", help="Brownian-noise step-size threshold")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--mu", type=float)
    p.add_argument("--mu2", type=float, help="mu squared")
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--dt", type=float)
    p = tsub.add_parser("theorem2", help="nonlinear case analysis")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--lambda-bar", dest="lam_bar", type=float)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--hurst", type=float, required=True)
    p = tsub.add_parser("envelope", help="log of the asymptotic moment envelope")
    p.add_argument("n", type=int)
    p.add_argument("--theta", type=float, required=True)

    sp = sub.add_parser("special", help="special-function evaluation")
    ssub = sp.add_subparsers(dest="special_cmd", required=True)
    p = ssub.add_parser("phi", help="Kummer function Phi(a, b, z)")
    for name in ("a", "b", "z"):
        p.add_argument(name, type=float)
    p = ssub.add_parser("u", help="parabolic cylinder function U(a, z)")
    p.add_argument("a", type=float)
    p.add_argument("z", type=float)
    p = ssub.add_parser("lgamma", help="log Gamma(x)")
    p.add_argument("x", type=float)
    p = ssub.add_parser("moment", help="even raw moment of N(mean, std^2)")
    p.add_argument("mean", type=float)
    p.add_argument("std", type=float)
    p.add_argument("order", type=int)

    sub.add_parser("selftest", help="quick built-in consistency checks")
    return parser


def _run(args):
    if args.command in ("sample-fbm", "simulate", "scan"):
        cfg = RunConfig.from_file(args.config, args.set)
        if args.dump_config:
            sys.stdout.write(cfg.dumps())
            return EXIT_OK
        handler = {"sample-fbm": cmd_sample_fbm, "simulate": cmd_simulate, "scan": cmd_scan}
        return handler[args.command](cfg, args)
    if args.command == "theory":
        return cmd_theory(args)
    if args.command == "special":
        return cmd_special(args)
    return cmd_selftest(args)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
