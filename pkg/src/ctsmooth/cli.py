"""
Command-line front end.

    ctsmooth simulate     --model M --fs HZ --duration S --out samples.csv [--truth truth.csv]
    ctsmooth estimate     --model M --samples samples.csv --out est.csv [--grid-step S]
    ctsmooth snr          --model M
    ctsmooth sweep        --model M --oversampling 8,16 --snr-db 10,30 --trials 50
    ctsmooth oracle-check --model M [--samples samples.csv] [--substeps 64,...,4096]

Exit codes: 0 success, 1 usage error, 2 data error, 3 failed check.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis, linalg, oracle
from .config import ModelConfig, load_config
from .errors import ConditioningError, DomainError, InvalidInputError, SizeGuardError, StabilityError
from .messages import MomentGaussian
from .model import ContinuousLTISystem, simulate
from .smoother import MeasurementSet, query_grid, run

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
_DATA_ERRORS = (InvalidInputError, DomainError, StabilityError, ConditioningError, SizeGuardError, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- CSV helpers


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_csv(path, header, rows, meta: dict) -> None:
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}: {v}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(float(v)) for v in row])
    if path is None or str(path) == "-":
        sys.stdout.write(buf.getvalue())
    else:
        Path(path).write_text(buf.getvalue())


def read_csv(path):
    """Return ``(header, data)``; '#' lines before the header are skipped."""
    lines = Path(path).read_text().splitlines()
    body = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith("#")]
    if not body:
        raise InvalidInputError(f"{path}: no header row")
    header = [h.strip() for h in next(csv.reader([body[0][1]]))]
    rows = []
    for lineno, ln in body[1:]:
        cells = next(csv.reader([ln]))
        if len(cells) != len(header):
            raise InvalidInputError(f"{path}: row at line {lineno} has {len(cells)} fields, expected {len(header)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise InvalidInputError(f"{path}: non-numeric value at line {lineno}") from None
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, data


def _read_samples(path, nu: int) -> MeasurementSet:
    header, data = read_csv(path)
    if header[0] != "t" or len(header) != 1 + nu:
        raise InvalidInputError(f"{path}: expected columns t and {nu} sample column(s), got {header}")
    t = data[:, 0]
    bad = np.flatnonzero(np.diff(t) <= 0)
    if bad.size:
        raise InvalidInputError(f"{path}: times not strictly increasing at data row {bad[0] + 2}")
    return MeasurementSet(t, data[:, 1:])


def _read_times(path) -> np.ndarray:
    _, data = read_csv(path)
    return data[:, 0]


def _names(prefix: str, count: int) -> list:
    return [prefix] if count == 1 else [f"{prefix}_{i + 1}" for i in range(count)]


def _meta(cfg: ModelConfig, command: str, **extra) -> dict:
    return {"command": command, "config_sha256": cfg.digest, **extra}


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _fc(cfg: ModelConfig) -> Optional[float]:
    return cfg.fc_hz


def _prior_for(cfg: ModelConfig, system: ContinuousLTISystem) -> Optional[MomentGaussian]:
    prior = cfg.prior(system)
    if prior is None and not system.is_hurwitz():
        raise InvalidInputError("unstable model: the config needs prior_mean and prior_cov_diag")
    return prior


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    cfg = load_config(args.model)
    system = cfg.build()
    if args.times is not None:
        times = _read_times(args.times)
    elif args.fs is not None and args.duration is not None:
        if not (args.fs > 0 and args.duration > 0):
            raise UsageError("--fs and --duration must be positive")
        times = np.arange(1, int(round(args.duration * args.fs)) + 1) / args.fs
    else:
        raise UsageError("simulate needs --fs and --duration, or --times")
    x0 = None
    prior = cfg.prior(system)
    if not system.is_hurwitz():
        if prior is None:
            raise InvalidInputError("unstable model: the config needs prior_mean and prior_cov_diag")
        rng0 = np.random.default_rng([args.seed, 1])
        x0 = prior.m + np.sqrt(np.diag(prior.V)) * rng0.standard_normal(system.n)
    t0 = min(0.0, float(times[0]))
    sim = simulate(system, times, x0=x0, seed=args.seed, dense_step=args.grid_step, t0=t0)
    meta = _meta(cfg, "simulate", seed=args.seed, t0=_fmt(t0))
    write_csv(args.out, ["t"] + _names("y_tilde", system.nu), np.column_stack([times, sim.noisy_samples]), meta)
    if args.truth is not None:
        header = ["t"] + _names("x", system.n) + _names("y", system.nu) + _names("u_avg", system.m)
        if sim.dense is not None:
            d = sim.dense
            rows = np.column_stack([d.t, d.x, d.y, d.u_avg])
        else:
            rows = np.column_stack([times, sim.knot_states, sim.clean_samples, sim.input_averages])
        write_csv(args.truth, header, rows, meta)
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = load_config(args.model)
    system = cfg.estimation_system(args.assumed_snr_db)
    meas = _read_samples(args.samples, system.nu)
    if len(meas) == 0:
        raise InvalidInputError(f"{args.samples}: no samples")
    state = run(system, meas, prior=_prior_for(cfg, system))
    if args.grid_step is None:
        grid = meas.times
    else:
        if not args.grid_step > 0:
            raise UsageError("--grid-step must be positive")
        t1, tK = meas.times[0], meas.times[-1]
        count = int(np.floor((tK - t1) / args.grid_step * (1 + 1e-12))) + 1
        grid = np.minimum(t1 + args.grid_step * np.arange(count), tK)
    records = query_grid(state, grid)
    rows = [
        np.concatenate([[r.t], r.y_hat, np.sqrt(np.maximum(np.diag(r.y_var), 0.0)), r.u_hat, r.x_mean])
        for r in records
    ]
    header = ["t"] + _names("y_hat", system.nu) + _names("y_std", system.nu) + _names("u_hat", system.m)
    header += [f"x_mean_{i + 1}" for i in range(system.n)]
    assumed = cfg.assumed_snr_db if args.assumed_snr_db is None else args.assumed_snr_db
    meta = _meta(cfg, "estimate", assumed_snr_db="model" if assumed is None else assumed)
    write_csv(args.out, header, rows, meta)
    return EXIT_OK


def cmd_snr(args) -> int:
    cfg = load_config(args.model)
    report = analysis.snr(cfg.build(), fc=_fc(cfg))
    print(f"E[Y^2]        {report.ey2:.10g}")
    print(f"snr_linear    {report.snr_linear:.10g}")
    print(f"snr_db        {report.snr_db:.10g}")
    if report.snr_constant is not None:
        print(f"snr_constant  {report.snr_constant:.10g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.model)
    fc = _fc(cfg)
    if fc is None:
        raise InvalidInputError("sweep needs fc_hz in the model config")
    curve = analysis.output_error_curve(
        cfg.build(),
        fc,
        _float_list(args.oversampling),
        _float_list(args.snr_db),
        trials=args.trials,
        horizon_samples=args.horizon,
        seed=args.seed,
        workers=args.workers,
    )
    meta = _meta(cfg, "sweep", seed=args.seed, trials=args.trials, horizon=args.horizon)
    write_csv(args.out, ["fs_over_fc", "snr_db", "snr_out_inv_db"], list(curve.rows()), meta)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    cfg = load_config(args.model)
    system = cfg.build()
    prior = _prior_for(cfg, system)
    if prior is None:
        prior = MomentGaussian(np.zeros(system.n), analysis.stationary_state_cov(system))
    if args.samples is not None:
        meas = _read_samples(args.samples, system.nu)
    else:
        fs = args.fs if args.fs is not None else (4 * cfg.fc_hz if cfg.fc_hz else 1.0)
        times = np.arange(1, args.num_samples + 1) / fs
        x0 = prior.m + linalg.psd_sqrt(prior.V) @ np.random.default_rng([args.seed, 1]).standard_normal(system.n)
        sim = simulate(system, times, x0=x0, seed=args.seed, t0=0.0)
        meas = MeasurementSet(times, sim.noisy_samples)
    if len(meas) == 0:
        raise InvalidInputError("no samples")
    t0 = args.t0 if args.t0 is not None else min(0.0, float(meas.times[0]) - 1.0)
    if not t0 < meas.times[0]:
        raise InvalidInputError("--t0 must precede the first sample")
    substeps = [int(v) for v in _float_list(args.substeps)]
    oracle_system = system
    if args.oracle_sigma_scale != 1.0:
        oracle_system = system.with_noise(sigma_u=system.sigma_u * args.oracle_sigma_scale)
    report = oracle.bridge_check(system, meas, prior, t0, substeps=substeps, oracle_system=oracle_system)
    print(f"{'N':>6} {'u_rel_err':>12} {'x_rel_err':>12}")
    for N, eu, ex in zip(report.substeps, report.u_error, report.x_error):
        print(f"{N:>6d} {eu:12.4e} {ex:12.4e}")
    print(f"slope u {report.u_slope:.4f}  x {report.x_slope:.4f}")
    for msg in report.messages:
        print(f"MISMATCH {msg}")
    print("PASS" if report.passed else "FAIL")
    return EXIT_OK if report.passed else EXIT_CHECK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctsmooth", description="Continuous-time smoothing from discrete samples.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="draw an exact sample path and noisy samples")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--truth")
    s.add_argument("--fs", type=float)
    s.add_argument("--duration", type=float)
    s.add_argument("--times")
    s.add_argument("--grid-step", type=float, help="also record the truth on this dense grid")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="smooth samples and query a time grid")
    e.add_argument("--model", required=True)
    e.add_argument("--samples", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--grid-step", type=float)
    e.add_argument("--assumed-snr-db", type=float)
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("snr", help="report the steady-state per-sample SNR")
    r.add_argument("--model", required=True)
    r.set_defaults(func=cmd_snr)

    w = sub.add_parser("sweep", help="Monte Carlo output error against oversampling")
    w.add_argument("--model", required=True)
    w.add_argument("--oversampling", required=True)
    w.add_argument("--snr-db", required=True)
    w.add_argument("--trials", type=int, default=50)
    w.add_argument("--horizon", type=int, default=500)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--out", default="-")
    w.set_defaults(func=cmd_sweep)

    o = sub.add_parser("oracle-check", help="compare the smoother with the discrete least-squares oracle")
    o.add_argument("--model", required=True)
    o.add_argument("--samples")
    o.add_argument("--substeps", default="64,128,256,512,1024,2048,4096")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--fs", type=float)
    o.add_argument("--num-samples", type=int, default=10)
    o.add_argument("--t0", type=float)
    o.add_argument("--oracle-sigma-scale", type=float, default=1.0, help="perturb the oracle's sigma_u")
    o.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
