"""Experiment runner.

    robust-sens <validate|baseline|bsde|sensitivity|envelope|report>
        --config PATH [--out DIR] [--seed U64] [--paths N] [--steps N]

Exit codes: 0 success, 1 IO/parse error, 2 validation failure. All randomness
flows from one master seed split per component; outputs embed the config hash
and seed and contain no timestamps, so identical (config, seed) runs are
byte-identical.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .baseline_solver import foc_residual, solve_baseline
from .bsde import solve_bsde
from .config import ConfigError, load_experiment
from .market_model import ConfigurationError, SimulationError, validate_model
from .sensitivity import expansion_report
from .strategy import Strategy
from .util import config_hash, split_seed, write_csv, write_json

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2


def _load(args):
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print("error: cannot read config: %s" % exc, file=sys.stderr)
        return None, None
    try:
        exp = load_experiment(raw)
    except (ConfigError, ConfigurationError) as exc:
        print("error: invalid config: %s" % exc, file=sys.stderr)
        return None, None
    if args.seed is not None:
        exp = replace(exp, sim=replace(exp.sim, seed=int(args.seed)))
    if getattr(args, "paths", None):
        exp = replace(exp, sim=replace(exp.sim, n_paths=int(args.paths)))
    if getattr(args, "steps", None):
        exp = replace(exp, sim=replace(exp.sim, n_steps=int(args.steps)))
    return exp, config_hash(raw)


def _outdir(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _stamp(path, digest, seed):
    """Prefix a CSV file with a comment line carrying the config hash and seed."""
    with open(path, "r", encoding="utf-8") as fh:
        body = fh.read()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# config_hash=%s seed=%d\n" % (digest, seed))
        fh.write(body)


def cmd_validate(args) -> int:
    exp, digest = _load(args)
    if exp is None:
        return EXIT_IO
    try:
        report = validate_model(exp.model, exp.spec, exp.cost,
                                samples=256, seed=split_seed(exp.sim.seed, "validate"))
    except SimulationError as exc:
        print("validation error: %s" % exc, file=sys.stderr)
        return EXIT_VALIDATION
    print("config %s" % digest)
    print(report)
    if not report.passed:
        for check in report.failures():
            if check.detail:
                print("failure detail: %s" % check.detail)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_baseline(args) -> int:
    exp, digest = _load(args)
    if exp is None:
        return EXIT_IO
    out = _outdir(args)
    result = solve_baseline(exp.model, exp.cost, exp.template, exp.sim, exp.opt, x0=exp.x0)
    write_json(os.path.join(out, "baseline.json"), {
        "v0": result.v0, "se": result.v0_se,
        "theta": [float(v) for v in result.strategy.theta],
        "converged": bool(result.converged),
        "config_hash": digest, "seed": exp.sim.seed,
    })
    rows = [(r.iteration, r.objective, r.step, r.grad_norm, r.projected)
            for r in result.trace]
    path = os.path.join(out, "iterations.csv")
    write_csv(path, ["iter", "objective", "step", "grad_norm", "projected"], rows)
    _stamp(path, digest, exp.sim.seed)
    print("V0 = %.10g (se %.3g), converged=%s" % (result.v0, result.v0_se, result.converged))
    return EXIT_OK


def cmd_bsde(args) -> int:
    exp, digest = _load(args)
    if exp is None:
        return EXIT_IO
    out = _outdir(args)
    result = solve_baseline(exp.model, exp.cost, exp.template, exp.sim, exp.opt, x0=exp.x0)
    sol = solve_bsde(exp.cost, result.paths, result.batch)
    path = os.path.join(out, "bsde_slices.csv")
    write_csv(path, ["t", "mean_y", "mean_abs_z", "residual_energy"],
              sol.slice_summary(result.paths.grid))
    _stamp(path, digest, exp.sim.seed)
    write_json(os.path.join(out, "bsde.json"), {
        "basis": sol.basis_description,
        "terminal_consistency": float(np.max(np.abs(sol.y[:, -1] - sol.data.a))),
        "ridge_steps": list(sol.scalar_diagnostics.ridge_steps),
        "mean_residual_energy": float(np.mean(sol.scalar_diagnostics.increment_energy)),
        "config_hash": digest, "seed": exp.sim.seed,
    })
    print("BSDE solved: %d slices, basis %s" % (sol.n_steps, sol.basis_description))
    return EXIT_OK


def _run_report(exp):
    return expansion_report(exp.model, exp.cost, exp.template, exp.spec, exp.sim,
                            exp.opt, x0=exp.x0)


def cmd_sensitivity(args) -> int:
    exp, digest = _load(args)
    if exp is None:
        return EXIT_IO
    out = _outdir(args)
    report = _run_report(exp)
    payload = report.to_dict()
    payload["config_hash"] = digest
    write_json(os.path.join(out, "sensitivity.json"), payload)
    sweep = os.path.join(out, "sweep.csv")
    write_csv(sweep, ["epsilon", "v_hat", "v_se", "vstar_hat", "vstar_se", "gap_over_eps2"],
              [(r.eps, r.v_hat, r.v_se, r.vstar_hat, r.vstar_se, r.gap_over_eps2)
               for r in report.rows])
    _stamp(sweep, digest, exp.sim.seed)
    plot = os.path.join(out, "plotdata.csv")
    write_csv(plot, ["epsilon", "v_minus_v0", "linear_prediction", "residual_over_eps2"],
              [(r.eps, r.v_hat - report.v0, report.vprime * r.eps,
                (r.v_hat - report.v0 - report.vprime * r.eps) / r.eps ** 2)
               for r in report.rows])
    _stamp(plot, digest, exp.sim.seed)
    print("V0 = %.10g, V'(0) = %.10g (drift %.10g, vol %.10g), slope = %.10g"
          % (report.v0, report.vprime, report.drift_term, report.vol_term, report.slope))
    return EXIT_OK


def cmd_envelope(args) -> int:
    exp, digest = _load(args)
    if exp is None:
        return EXIT_IO
    out = _outdir(args)
    report = _run_report(exp)
    path = os.path.join(out, "envelope.csv")
    write_csv(path, ["epsilon", "v_hat", "vstar_hat", "gap", "gap_over_eps2"],
              [(r.eps, r.v_hat, r.vstar_hat, r.gap, r.gap_over_eps2) for r in report.rows])
    _stamp(path, digest, exp.sim.seed)
    print("envelope gaps/eps^2: %s" % ", ".join("%.6g" % g for g in report.gaps_over_eps2))
    return EXIT_OK


def _md_table(header, rows):
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join("---" for _ in header) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(str(c) for c in row) + " |")
    return "\n".join(lines)


def cmd_report(args) -> int:
    run_dir = args.run_dir
    if not os.path.isdir(run_dir) or not os.listdir(run_dir):
        print("error: run directory %r is missing or empty" % run_dir, file=sys.stderr)
        return EXIT_IO
    sections = ["# Run report", ""]

    baseline_path = os.path.join(run_dir, "baseline.json")
    if os.path.exists(baseline_path):
        with open(baseline_path, "r", encoding="utf-8") as fh:
            base = json.load(fh)
        sections += ["## Baseline", "",
                     _md_table(["V0", "SE", "theta", "converged"],
                               [[base["v0"], base["se"], base["theta"], base["converged"]]]),
                     ""]
    else:
        sections += ["## Baseline", "", "missing", ""]

    sens_path = os.path.join(run_dir, "sensitivity.json")
    if os.path.exists(sens_path):
        with open(sens_path, "r", encoding="utf-8") as fh:
            sens = json.load(fh)
        sections += ["## Sensitivity", "",
                     _md_table(["V0", "V'(0)", "drift term", "vol term", "fitted slope"],
                               [[sens["v0"], sens["vprime"], sens["drift_term"],
                                 sens["vol_term"], sens["slope"]]]),
                     "", "### Sweep", "",
                     _md_table(["epsilon", "V(eps)", "V*(eps)", "gap/eps^2"],
                               [[r["epsilon"], r["v_hat"], r["vstar_hat"],
                                 r["gap_over_eps2"]] for r in sens["rows"]]),
                     ""]
    else:
        sections += ["## Sensitivity", "", "missing", ""]

    env_path = os.path.join(run_dir, "envelope.csv")
    if os.path.exists(env_path):
        with open(env_path, "r", encoding="utf-8") as fh:
            lines = [l for l in fh.read().splitlines() if l and not l.startswith("#")]
        rows = [line.split(",") for line in lines[1:]]
        sections += ["## Envelope", "",
                     _md_table(["epsilon", "v_hat", "vstar_hat", "gap", "gap_over_eps2"], rows),
                     ""]
    else:
        sections += ["## Envelope", "", "missing", ""]

    bsde_path = os.path.join(run_dir, "bsde.json")
    if os.path.exists(bsde_path):
        with open(bsde_path, "r", encoding="utf-8") as fh:
            bs = json.load(fh)
        sections += ["## Diagnostics", "",
                     _md_table(["basis", "terminal consistency", "mean residual energy"],
                               [[bs["basis"], bs["terminal_consistency"],
                                 bs["mean_residual_energy"]]]),
                     ""]
    else:
        sections += ["## Diagnostics", "", "missing", ""]

    out_path = os.path.join(run_dir, "report.md")
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(sections))
        fh.write("\n")
    print("wrote %s" % out_path)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="robust-sens",
                                     description="Robust-hedging sensitivity engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)

    for name, fn in [("validate", cmd_validate), ("baseline", cmd_baseline),
                     ("bsde", cmd_bsde), ("sensitivity", cmd_sensitivity),
                     ("envelope", cmd_envelope)]:
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(fn=fn)
    p = sub.add_parser("report")
    p.add_argument("run_dir")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ConfigurationError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
