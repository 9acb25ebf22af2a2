"""Command-line entry point: ``abcts {simulate,mcmc,filter,pmmh,diagnose}``.

Random streams derived from the root seed: 0 simulates synthetic data, 1
perturbs it for noisy ABC, 2 + i drives chain (or filter run) i.  Every file
written is a deterministic function of the config and the seed; wall-clock
measurements go to a separate ``timing.json`` and only with ``--timing``.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .abc_core import AbcKernel
from .config import (
    FILTER_ALGORITHMS,
    MCMC_ALGORITHMS,
    PMMH_ALGORITHMS,
    ConfigError,
    DataError,
    config_dict,
    load_config,
    load_csv,
    write_csv,
)
from .diagnostics import autocorrelation, kde, kde_grid, silverman_bandwidth, summarize
from .mcmc import KERNELS, InitializationError, Trace, run_chain
from .models import perturb_noisy
from .pmmh import collapsed_pmmh_hook, run_pmmh
from .smc import run_filter
from .stochastics import GENERATOR, rng_stream

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
COMMAND_ALGORITHMS = {"mcmc": MCMC_ALGORITHMS, "filter": FILTER_ALGORITHMS, "pmmh": PMMH_ALGORITHMS}
DATA_STREAM, PERTURB_STREAM, RUN_STREAM = 0, 1, 2


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def prepare_data(cfg, model):
    """Observed (possibly perturbed) series and the latent path if simulated."""
    latent = None
    if cfg.data_csv:
        y = load_csv(cfg.data_csv)
    else:
        theta = np.asarray(cfg.theta if cfg.theta is not None else model.default_theta(), dtype=float)
        y, latent = model.simulate(theta, cfg.data_n, rng_stream(cfg.seed, DATA_STREAM))
    if cfg.noisy:
        y = perturb_noisy(y, cfg.eps, rng_stream(cfg.seed, PERTURB_STREAM))
    if y.d_y != model.d_y:
        raise DataError(f"data has {y.d_y} columns, model {model.name} expects {model.d_y}")
    return y, latent


def run_sampler(cfg, y, chain=0) -> Trace:
    model = cfg.make_model()
    kernel = AbcKernel(cfg.eps, model.d_y)
    proposal = cfg.make_proposal(model)
    N = cfg.resolved_N(y.n)
    rng = rng_stream(cfg.seed, RUN_STREAM + chain)
    init = cfg.init if isinstance(cfg.init, str) else np.asarray(cfg.init)
    alg = cfg.algorithm
    if alg in MCMC_ALGORITHMS:
        cls = KERNELS[alg]
        if alg == "naive":
            k = cls(model, y, kernel, proposal, early_reject=cfg.early_reject)
        elif alg == "ntrials":
            k = cls(model, y, kernel, proposal, N)
        elif alg == "nhit":
            k = cls(model, y, kernel, proposal, N, cap=cfg.cap)
        elif alg == "collapsed":
            k = cls(model, y, kernel, proposal, noise_step=cfg.noise_step)
        else:
            k = cls(model, y, kernel, proposal)
        return run_chain(k, cfg.iterations, rng, init)
    common = dict(iterations=cfg.iterations, rng=rng, init=init, cap=cfg.cap, resampling=cfg.resampling)
    if alg == "collapsed-pmmh":
        return collapsed_pmmh_hook(model, y, kernel, N, proposal, filter_kind=cfg.filter_kind, **common)
    kind = "alive" if alg == "pmmh-alive" else "standard"
    return run_pmmh(model, y, kernel, N, kind, proposal, **common)


def _chain_job(args):
    cfg, y, chain = args
    return run_sampler(cfg, y, chain)


def write_diagnostics(out, trace, max_lag, kde_points, suffix=""):
    lag = min(max_lag, len(trace) - 1)
    names = trace.param_names
    acfs = {}
    for name in names:
        try:
            acfs[name] = autocorrelation(trace.column(name), lag).acf if lag >= 1 else None
        except ValueError:
            acfs[name] = None
    with open(out / f"acf{suffix}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lag", *names])
        for k in range(lag + 1):
            w.writerow([k, *("nan" if acfs[n] is None else format(acfs[n][k], ".17g") for n in names)])
    with open(out / f"kde{suffix}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "x", "density"])
        for name in names:
            col = trace.column(name)
            if len(col) < 2 or np.ptp(col) == 0:
                continue
            est = kde(col, kde_grid(col, silverman_bandwidth(col), kde_points))
            for x, d in zip(est.grid, est.density):
                w.writerow([name, format(x, ".17g"), format(d, ".17g")])


def _cost(trace):
    cost = {"capped_iterations": int(np.sum(trace.extras.get("capped", 0)))}
    if "sum_m" in trace.extras:
        cost["mean_simulations_per_iteration"] = float(np.mean(trace.extras["sum_m"]))
    return cost


def run_experiment(cfg, command=None, out=None, chains=1, timing=False):
    """Run one experiment and write its artifacts into ``out`` (default ``cfg.output_dir``).

    Returns the path of the output directory.
    """
    if command is not None and command != "simulate" and cfg.algorithm not in COMMAND_ALGORITHMS[command]:
        raise ConfigError("algorithm.id", f"{cfg.algorithm} is not a {command} algorithm; "
                          f"choose from {list(COMMAND_ALGORITHMS[command])}")
    out = Path(out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    model = cfg.make_model()
    y, latent = prepare_data(cfg, model)
    eff = cfg.materialize(y.n)
    summary = {
        "config": config_dict(eff),
        "seed": cfg.seed,
        "n": y.n,
        "generator": GENERATOR,
        "version": __version__,
    }
    write_csv(out / "data.csv", y)
    if command == "simulate":
        if latent is not None:
            states = latent.states.reshape(len(latent.states), -1)
            write_csv(out / "latent.csv", states, [f"x{j + 1}" for j in range(states.shape[1])])
    elif cfg.algorithm in FILTER_ALGORITHMS:
        kind = "alive" if cfg.algorithm == "alive" else "standard"
        res = run_filter(kind, model, np.asarray(eff.theta), y, AbcKernel(cfg.eps, model.d_y), eff.N,
                         rng_stream(cfg.seed, RUN_STREAM), cap=cfg.cap, resampling=cfg.resampling)
        _write_filter(out / "filter.csv", res.history, kind == "alive")
        est = res.estimate
        summary.update(
            log_nc=est.log_value,
            collapsed_at=est.collapsed_at,
            capped_at=est.capped_at,
            total_trials=None if est.trial_counts is None else int(est.trial_counts.sum()),
        )
    else:
        if chains > 1:
            jobs = [(cfg, y, i) for i in range(chains)]
            with ProcessPoolExecutor(max_workers=min(chains, os.cpu_count() or 1)) as pool:
                traces = list(pool.map(_chain_job, jobs))
        else:
            traces = [run_sampler(cfg, y)]
        results = []
        for i, tr in enumerate(traces):
            suffix = f"_{i}" if chains > 1 else ""
            tr.to_csv(out / f"trace{suffix}.csv")
            write_diagnostics(out, tr, cfg.max_lag, cfg.kde_points, suffix)
            results.append({**summarize(tr), "cost": _cost(tr)})
        if chains > 1:
            summary["chains"] = results
        else:
            summary.update(results[0])
    write_json(out / "summary.json", summary)
    if timing:
        elapsed = time.perf_counter() - start
        write_json(out / "timing.json", {
            "wall_clock_seconds": elapsed,
            "seconds_per_iteration": elapsed / cfg.iterations if command != "simulate" else None,
        })
    return out


def _write_filter(path, hist, alive):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "log_nc_factor", "ess", "hits", *(["m_t"] if alive else [])])
        for t in range(len(hist.log_nc_factor)):
            row = [t + 1, format(hist.log_nc_factor[t], ".17g"), format(hist.ess[t], ".17g"), int(hist.hits[t])]
            if alive:
                row.append(int(hist.trials[t]) if t < len(hist.trials) else 0)
            w.writerow(row)


def diagnose(trace_path, out, max_lag=50, kde_points=512):
    tr = Trace.from_csv(trace_path)
    if len(tr) == 0:
        raise DataError(f"{trace_path}: empty trace")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_diagnostics(out, tr, max_lag, kde_points)
    write_json(out / "summary.json", {"trace": str(trace_path), **summarize(tr), "cost": _cost(tr)})
    return out


def _overrides(pairs):
    res = {}
    for p in pairs or ():
        if "=" not in p:
            raise ConfigError(p, "--set expects key=value")
        k, v = p.split("=", 1)
        res[k.strip()] = v
    return res


def build_parser():
    parser = argparse.ArgumentParser(prog="abcts", description="ABC inference for time series models")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("simulate", "simulate (and optionally perturb) a data set"),
        ("mcmc", "ABC-MCMC for i.i.d. and observation-driven models"),
        ("filter", "run one ABC particle filter at model.theta"),
        ("pmmh", "particle-marginal MH for hidden Markov models"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
        p.add_argument("--timing", action="store_true", help="also write wall-clock timing.json")
        if name in ("mcmc", "pmmh"):
            p.add_argument("--chains", type=int, default=1, help="independent chains, written to trace_<i>.csv")
    p = sub.add_parser("diagnose", help="ACF, KDE and summary of a trace CSV")
    p.add_argument("trace", help="trace CSV written by mcmc or pmmh")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--max-lag", type=int, default=50)
    p.add_argument("--kde-points", type=int, default=512)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "diagnose":
            diagnose(args.trace, args.out, args.max_lag, args.kde_points)
            return EXIT_OK
        overrides = _overrides(args.set)
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        cfg = load_config(args.config, overrides)
        chains = getattr(args, "chains", 1)
        if chains < 1:
            raise ConfigError("--chains", "must be >= 1")
        out = run_experiment(cfg, args.command, args.out, chains, args.timing)
        print(out / "summary.json")
        return EXIT_OK
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InitializationError, ArithmeticError, ValueError, TypeError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
