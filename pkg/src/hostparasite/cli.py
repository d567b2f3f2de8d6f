"""Command-line front end: ``hostparasite <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import excursions, experiments, limits, meanfield
from .experiments import ExperimentConfig, _Writer, run_replicates, stream, table_csv
from .params import ModelParams, load_config, validate_assumptions
from .simplex import TernaryWeights
from .ssa import HostStateVector, simulate


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _weights(text: str) -> TernaryWeights:
    v = _floats(text)
    if len(v) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated weights")
    return TernaryWeights.from_array(v)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON or YAML file with model parameters")
    p.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)


def _limit_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--M", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--init", type=_weights, default=TernaryWeights(0.3, 0.3, 0.4),
                   help="initial class weights v0,veta,v1 (must lie on the 1/M grid)")
    p.add_argument("--t-end", type=float, default=3.0)
    p.add_argument("--sample-dt", type=float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hostparasite", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("simulate-finite", help="exact simulation of the finite host system")
    _common(p)
    p.add_argument("--init", type=_weights, default=TernaryWeights(0.3, 0.3, 0.4))
    p.add_argument("--t-end", type=float, default=2.0)
    p.add_argument("--sample-dt", type=float, default=0.1)
    p.add_argument("--method", choices=("auto", "events", "kernel"), default="auto")
    p.add_argument("--events", action="store_true", help="also write a JSONL event log")

    for name in ("simulate-ym", "simulate-zm"):
        p = sub.add_parser(name, help=f"simulate the {'host-level' if name.endswith('ym') else 'aggregated'} "
                                      "limit process")
        _common(p)
        _limit_args(p)

    p = sub.add_parser("ode", help="integrate the mean-field system")
    _common(p)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--v0", type=_weights, default=TernaryWeights(0.4, 0.2, 0.4))
    p.add_argument("--t-end", type=float, default=50.0)
    p.add_argument("--dt", type=float, default=0.5)

    p = sub.add_parser("equilibria", help="equilibria and their stability")
    _common(p)
    p.add_argument("--etas", type=_floats, required=True)
    p.add_argument("--rs", type=_floats, required=True)

    p = sub.add_parser("balance-prob", help="probability that one introduced parasite reaches balance")
    _common(p)
    p.add_argument("--Ns", type=lambda s: [int(v) for v in s.split(",")], required=True)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--etas", type=_floats, required=True)

    p = sub.add_parser("time-to-balance", help="Monte Carlo time to reach the balance window")
    _common(p)
    p.add_argument("--start", type=int, default=1)

    p = sub.add_parser("tree-estimate", help="tree estimator of the mean-field solution")
    _common(p)
    p.add_argument("--t", type=_floats, required=True, help="comma-separated times")
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--v0", type=_weights, required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--method", choices=("pruned", "full"), default="pruned")

    p = sub.add_parser("preset", help="run a named experiment preset")
    _common(p)
    p.add_argument("name", choices=experiments.PRESETS)
    return ap


def _params(args) -> tuple[ModelParams, int, dict]:
    if args.config is None:
        raise SystemExit("--config is required for this command")
    params, seed, extra = load_config(args.config)
    if args.seed is not None:
        seed = args.seed
    return params, (0 if seed is None else seed), extra


def _finish(out: _Writer, header: dict) -> list[Path]:
    out.manifest(header)
    return out.files


def cmd_simulate_finite(args) -> list[Path]:
    params, seed, _ = _params(args)
    n0, ne, n1 = experiments.grid_counts(args.init.as_array(), params.M)
    header = {"command": "simulate-finite", "params": params.to_dict(), "seed": seed,
              "init": [n0, ne, n1], "t_end": args.t_end, "sample_dt": args.sample_dt}
    for entry in validate_assumptions(params).entries:
        if not entry.satisfied:
            print(f"warning: {entry.name} not satisfied at this N ({entry.note})", file=sys.stderr)
    R = args.replicates or 1
    out = _Writer(args.out)

    def one(i):
        init = HostStateVector.from_classes(n0, ne, n1, params.N, params.eta)
        return simulate(params, init, args.t_end, args.sample_dt, stream(seed, 0, i), method=args.method,
                        log_events=args.events)

    for i, tr in enumerate(run_replicates(one, R, args.threads)):
        out.write(f"finite_{i:04d}.csv", tr.to_csv(header={**header, "replicate": i}))
        if args.events:
            out.write(f"events_{i:04d}.jsonl", "".join(ev.to_json() + "\n" for ev in tr.events))
    return _finish(out, header)


def _limit_setup(args):
    M, eta, r, seed = args.M, args.eta, args.r, args.seed
    if args.config is not None:
        params, cseed, _ = load_config(args.config)
        M = M if M is not None else params.M
        eta = eta if eta is not None else params.eta
        r = r if r is not None else params.r
        seed = seed if seed is not None else cseed
    if None in (M, eta, r):
        raise SystemExit("give --M, --eta and --r or a --config")
    return M, eta, r, (0 if seed is None else seed)


def cmd_simulate_limit(args) -> list[Path]:
    M, eta, r, seed = _limit_setup(args)
    kind = "ym" if args.cmd == "simulate-ym" else "zm"
    header = {"command": args.cmd, "M": M, "eta": eta, "r": r, "seed": seed,
              "init": list(args.init.as_array()), "t_end": args.t_end, "sample_dt": args.sample_dt}
    counts = args.init.grid_counts(M)

    def one(i):
        rng = stream(seed, 0, i)
        if kind == "ym":
            init = limits.TernaryHostVector.from_counts(*counts, eta)
            return limits.simulate_ym(M, eta, r, init, args.t_end, args.sample_dt, rng)
        return limits.simulate_zm(M, eta, r, args.init, args.t_end, args.sample_dt, rng)

    out = _Writer(args.out)
    for i, tr in enumerate(run_replicates(one, args.replicates or 1, args.threads)):
        out.write(f"{kind}_{i:04d}.csv", tr.to_csv(header={**header, "replicate": i}))
    return _finish(out, header)


def cmd_ode(args) -> list[Path]:
    path = meanfield.integrate(args.v0.as_array(), args.eta, args.r, args.t_end)
    ts = np.append(np.arange(0.0, args.t_end, args.dt), args.t_end)
    header = {"command": "ode", "eta": args.eta, "r": args.r, "v0": list(args.v0.as_array()),
              "t_end": args.t_end}
    out = _Writer(args.out)
    out.write("ode.csv", table_csv(["t", "v0", "veta", "v1"], [[t, *path(t)] for t in ts], header))
    return _finish(out, header)


def cmd_equilibria(args) -> list[Path]:
    rows = meanfield.equilibrium_sweep(args.etas, args.rs)
    header = {"command": "equilibria", "etas": args.etas, "rs": args.rs}
    for row in rows:
        print(f"eta={row['eta']:g} r={row['r']:g}: {row['classification']}")
    out = _Writer(args.out)
    out.write("equilibria.csv", meanfield.sweep_csv(rows, header))
    return _finish(out, header)


def cmd_balance_prob(args) -> list[Path]:
    rows = excursions.probability_sweep(args.Ns, args.b, args.etas)
    header = {"command": "balance-prob", "Ns": args.Ns, "b": args.b, "etas": args.etas}
    out = _Writer(args.out)
    out.write("balance-prob.csv", excursions.probability_csv(rows, header))
    return _finish(out, header)


def cmd_time_to_balance(args) -> list[Path]:
    params, seed, _ = _params(args)
    spec = excursions.BirthDeathSpec.from_params(params)
    target = excursions.d_entry_count(params.N, params.b, params.a, params.eps1, params.eta)
    bound = params.N ** (params.b * (1 + params.a) + params.eps) / params.g_N
    stats = excursions.time_to_balance_mc(spec, args.start, target, args.replicates or 1000,
                                          stream(seed, 0, 0), bound=bound)
    header = {"command": "time-to-balance", "params": params.to_dict(), "seed": seed, "start": args.start,
              "target": target}
    print(f"success probability {stats.probability:.4g} (se {stats.std_error:.2g}); "
          f"fraction below bound {stats.frac_below_bound:.4f}")
    out = _Writer(args.out)
    out.write("time-to-balance.csv", excursions.timing_csv([(params.N, stats)], header))
    return _finish(out, header)


def cmd_tree_estimate(args) -> list[Path]:
    seed = 0 if args.seed is None else args.seed
    header = {"command": "tree-estimate", "eta": args.eta, "r": args.r, "v0": list(args.v0.as_array()),
              "samples": args.samples, "seed": seed, "method": args.method}
    rows = []
    for j, t in enumerate(args.t):
        est, se = limits.estimate_v_tree(t, args.eta, args.r, args.v0, args.samples, stream(seed, j, 0),
                                         method=args.method)
        ode = meanfield.integrate(args.v0.as_array(), args.eta, args.r, t).terminal if t > 0 \
            else args.v0.as_array()
        rows.append([t, *est.as_array(), *se, *ode])
    out = _Writer(args.out)
    out.write("tree-estimate.csv", table_csv(
        ["t", "est_v0", "est_veta", "est_v1", "se_v0", "se_veta", "se_v1", "ode_v0", "ode_veta", "ode_v1"],
        rows, header))
    return _finish(out, header)


def cmd_preset(args) -> list[Path]:
    over = {"seed": args.seed, "replicates": args.replicates, "threads": args.threads, "out_dir": args.out}
    if args.config is not None:
        cfg = ExperimentConfig.from_file(args.config, preset=args.name, **over)
    else:
        cfg = ExperimentConfig.default(args.name, **{k: v for k, v in over.items() if v is not None})
    res = experiments.run_preset(cfg)
    summary = {k: v for k, v in res.summary.items() if k != "texts"}
    print(json.dumps(summary, indent=2, default=float))
    return res.files


COMMANDS = {
    "simulate-finite": cmd_simulate_finite,
    "simulate-ym": cmd_simulate_limit,
    "simulate-zm": cmd_simulate_limit,
    "ode": cmd_ode,
    "equilibria": cmd_equilibria,
    "balance-prob": cmd_balance_prob,
    "time-to-balance": cmd_time_to_balance,
    "tree-estimate": cmd_tree_estimate,
    "preset": cmd_preset,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        files = COMMANDS[args.cmd](args)
    except (ValueError, limits.LineCapExceeded) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
