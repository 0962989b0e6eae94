"""Command-line front end.

Exit codes: 0 on success, 2 for configuration errors (bad flags, bad JSON,
missing or malformed data files), 3 when a run aborts.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import bench
from .config import RunConfig, load_config
from .engine import ConfigError, EngineConfig, RunAbort, run
from .filters import ParticleCollapseError, tune_state_particles
from .models import MODELS, get_model
from .population import PMMH

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3
METRIC_COLUMNS = ("Method", "Test K_alt", "K_def", "r", "# targets", "R mean", "MSE", "PFC",
                  "log_evidence", "failures")


def _streams(seed):
    """Independent generators for data simulation and sampling."""
    data_ss, run_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(data_ss), np.random.default_rng(run_ss)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path, doc):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _overrides(args):
    return {
        "model": args.model,
        "mode": args.mode,
        "default_kernel": args.kdef,
        "N_theta": args.n_theta,
        "Nx_pmmh": args.nx,
        "r": args.r,
        "switch_policy": args.policy,
        "seed": args.seed,
        "data_path": args.data,
        "T": args.T,
    }


def _load_gold(path):
    if path is None:
        return None
    try:
        return bench.GoldReference.from_json(path)
    except FileNotFoundError:
        raise ConfigError("gold", f"file not found: {path}") from None
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError("gold", f"unreadable gold reference ({exc})") from None


# --- subcommands ---------------------------------------------------------------------


def cmd_simulate(args, cfg):
    model = cfg.build_model()
    T = cfg.T if cfg.T is not None else model.default_T
    data_rng, _ = _streams(cfg.seed)
    series, latent = model.simulate(np.asarray(model.true_theta), T, data_rng)
    out = args.out or "data.csv"
    d = os.path.dirname(out)
    if d:
        os.makedirs(d, exist_ok=True)
    series.to_csv(out, latent=latent)
    print(f"wrote {T} observations to {out}")


def _series(cfg):
    data_rng, run_rng = _streams(cfg.seed)
    return cfg.load_series(data_rng), run_rng


def cmd_tune_nx(args, cfg):
    model = cfg.build_model()
    series, rng = _series(cfg)
    nx = tune_state_particles(model, np.asarray(model.true_theta), series, rng,
                              replicates=args.replicates or 50)
    out = args.out or "tune.json"
    _write_json(out, {"model": cfg.model, "T": series.T, "seed": cfg.seed, "Nx_pmmh": nx})
    print(f"Nx_pmmh = {nx} (written to {out})")


def _metrics_row(cfg, metrics):
    return [cfg.mode, cfg.switch_policy, cfg.default_kernel, f"{float(cfg.r):.2f}",
            metrics.targets, metrics.mean_repeats, metrics.mse, metrics.pfc,
            metrics.log_evidence, metrics.failures]


def cmd_run(args, cfg):
    model = cfg.build_model()
    gold = _load_gold(args.gold)
    series, rng = _series(cfg)
    res = run(model, series, cfg.engine_config(), rng)
    if gold is not None:
        res.metrics.mse = bench.mse(res.posterior_mean(), gold)
    out = args.out or "run"
    os.makedirs(out, exist_ok=True)
    names = list(res.param_names)
    _write_csv(os.path.join(out, "posterior.csv"), names + ["weight"],
               np.column_stack([res.theta, res.weights]).tolist())
    _write_csv(os.path.join(out, "metrics.csv"), METRIC_COLUMNS, [_metrics_row(cfg, res.metrics)])
    if res.diagnostics:
        keys = list(res.diagnostics[0])
        _write_csv(os.path.join(out, "diagnostics.csv"), keys,
                   [[row[k] for k in keys] for row in res.diagnostics])
    if args.json:
        m = {k: v for k, v in res.metrics.as_dict().items() if k != "wall_time"}
        _write_json(os.path.join(out, "run.json"), {
            "config": cfg.to_dict(),
            "metrics": m,
            "posterior_mean": dict(zip(names, res.posterior_mean().tolist())),
        })
    print(f"targets={res.metrics.targets} PFC={res.metrics.pfc} "
          f"log_evidence={res.metrics.log_evidence:.4f} ({res.metrics.wall_time:.1f}s)")


def cmd_gold(args, cfg):
    model = cfg.build_model()
    series, rng = _series(cfg)
    length = args.chain_length
    if length < 1000 + int(bench.BURN_IN * length):
        raise ConfigError("chain_length", "must leave at least 1000 iterations after burn-in")
    gold = bench.run_gold(model, series, length, cfg.nx_pmmh(), rng, chains=args.chains,
                          seed=cfg.seed)
    out = args.out or "gold.json"
    d = os.path.dirname(out)
    if d:
        os.makedirs(d, exist_ok=True)
    gold.to_json(out)
    print(f"gold means {np.round(gold.means, 4).tolist()} (acceptance {gold.acceptance:.3f})")


def _base_config(cfg):
    return EngineConfig(mode="DA", default_kernel=PMMH, n_theta=cfg.N_theta,
                        nx_pmmh=cfg.nx_pmmh(), r=1.0, policy="never")


def cmd_bench(args, cfg):
    model = cfg.build_model()
    series, rng = _series(cfg)
    gold = _load_gold(args.gold)
    if gold is None:
        gold = bench.run_gold(model, series, args.chain_length, cfg.nx_pmmh(), rng,
                              chains=args.chains, seed=cfg.seed)
    n = args.replicates or 10
    seeds = [cfg.seed * 100003 + 1 + i for i in range(n)]
    base = bench.Variant(_base_config(cfg))
    method = bench.Variant(cfg.engine_config())
    variants = [base] if method.config == base.config else [base, method]
    for v in variants:
        v.outcomes = bench.replicate_runner(model, series, v.config, seeds, gold,
                                            jobs=args.jobs or 1)
        if args.dump_dir:
            bench.dump_variant(v, args.dump_dir)
    rows = bench.table_rows(variants, base)
    out = args.out or "table.csv"
    d = os.path.dirname(out)
    if d:
        os.makedirs(d, exist_ok=True)
    bench.write_table(rows, out)
    failed = sum(len(v.outcomes) - len(v.good()) for v in variants)
    for row in rows:
        print(",".join(row[c] for c in bench.TABLE_COLUMNS))
    if failed:
        print(f"{failed} replicate(s) failed and were excluded", file=sys.stderr)


def cmd_table(args, cfg):
    paths = []
    for p in args.dumps:
        if os.path.isdir(p):
            paths += [os.path.join(p, f) for f in sorted(os.listdir(p)) if f.endswith(".json")]
        else:
            paths.append(p)
    if not paths:
        raise ConfigError("dumps", "no JSON dumps given")
    try:
        variants = bench.load_variants(paths)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError("dumps", f"unreadable dump ({exc})") from None
    base = [v for v in variants if v.label == ("DA", "never", PMMH, 1.0)]
    if not base:
        raise ConfigError("dumps", "no DA/never/PMMH/r=1 baseline among the dumps")
    rows = bench.table_rows(variants, base[0])
    out = args.out or "table.csv"
    bench.write_table(rows, out)
    print(f"wrote {len(rows)} rows to {out}")


COMMANDS = {
    "simulate": cmd_simulate,
    "tune-nx": cmd_tune_nx,
    "run": cmd_run,
    "gold": cmd_gold,
    "bench": cmd_bench,
    "table": cmd_table,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override its fields")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--model", choices=sorted(MODELS))
    common.add_argument("--mode", choices=("DA", "DT"))
    common.add_argument("--policy", choices=("never", "always", "lag"))
    common.add_argument("--kdef", choices=("PMMH", "PG"), help="default kernel")
    common.add_argument("--r", type=float, help="N_x^PG / N_x^PMMH")
    common.add_argument("--n-theta", type=int, dest="n_theta")
    common.add_argument("--nx", type=int, help="N_x for PMMH")
    common.add_argument("--T", type=int, dest="T", help="number of simulated observations")
    common.add_argument("--data", help="CSV of observations")
    common.add_argument("--replicates", type=int)
    common.add_argument("--jobs", type=int)

    p = argparse.ArgumentParser(prog="smc2switch",
                                description="SMC^2 with adaptive PMMH/PG kernel switching")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate a data set")
    sub.add_parser("tune-nx", parents=[common], help="choose N_x at the reference parameters")
    sp = sub.add_parser("run", parents=[common], help="run SMC^2 once")
    sp.add_argument("--gold", help="gold reference JSON for the MSE column")
    sp.add_argument("--json", action="store_true", help="also write run.json")
    sp = sub.add_parser("gold", parents=[common], help="long PMMH gold reference")
    sp.add_argument("--chain-length", type=int, default=100_000, dest="chain_length")
    sp.add_argument("--chains", type=int, default=10)
    sp = sub.add_parser("bench", parents=[common], help="replicate sweep against the baseline")
    sp.add_argument("--gold", help="gold reference JSON (computed when absent)")
    sp.add_argument("--chain-length", type=int, default=20_000, dest="chain_length")
    sp.add_argument("--chains", type=int, default=10)
    sp.add_argument("--dump-dir", dest="dump_dir", help="write per-replicate JSON dumps here")
    sp = sub.add_parser("table", parents=[common], help="aggregate JSON dumps into a table")
    sp.add_argument("dumps", nargs="+", help="dump files or directories")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "table":
            cfg = RunConfig()
        else:
            cfg = load_config(args.config, _overrides(args))
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunAbort, ParticleCollapseError) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
