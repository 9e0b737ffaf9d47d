"""Command line front door: ``sphkam <stage> CONFIG``."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import golden_config_path, load_config
from .kam import ConfigError
from .operators import dump_operator
from .report import format_checks, reduction_payload, write_json, write_steps_csv

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_STAGE = 0, 1, 2, 3


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[stage {stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


def _run_stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, StageError):
        raise
    except Exception as exc:  # tag and propagate
        raise StageError(stage, exc) from exc


def _outdir(args, cfg) -> Path:
    out = Path(args.output or cfg.output_dir or "sphkam-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _assembled(cfg):
    from .pipeline import assemble_system
    return _run_stage("assemble", assemble_system, cfg.V, cfg.W, cfg.kam)


def cmd_assemble(args, cfg) -> int:
    from .operators import structure_defect
    from .spectral import parity_defect
    out = _outdir(args, cfg)
    system = _assembled(cfg)
    files = {}
    for name, op in (("V", system.V_op), ("W", system.W_op)):
        if op is not None:
            path = out / f"{name}.op"
            dump_operator(op, path)
            files[name] = path.name
    H = system.hermitian
    payload = {"stage": "assemble", "config": cfg.as_dict(), "files": files,
               "hermitian_defect": structure_defect(H, "hermitian"),
               "parity_defect": parity_defect(cfg.kam.K_max)}
    write_json(payload, out / "assemble.json")
    print(f"wrote {', '.join(files.values()) or 'no operators'} to {out}")
    return EXIT_OK


def cmd_regularize(args, cfg) -> int:
    from .regularization import regularize
    out = _outdir(args, cfg)
    system = _assembled(cfg)
    k = cfg.kam
    rows = []
    for omega in cfg.omegas:
        reg = _run_stage("regularize", regularize, omega, system.perturbation, None, k.norm(k.sigma),
                         k.alpha, k.nu, k.lie_tol, k.p_max)
        rows.append({"omega": omega, "diagnostics": reg.diagnostics})
        if args.dump:
            dump_operator(reg.M, out / "M0.op")
    write_json({"stage": "regularize", "config": cfg.as_dict(), "runs": rows}, out / "regularize.json")
    for r in rows:
        print(f"omega={np.round(r['omega'], 6).tolist()}  <<M>>={r['diagnostics']['M_norm']:.3e}  "
              f"conjugacy residual={r['diagnostics']['conjugacy_interior_residual']:.2e}")
    return EXIT_OK


def _reduce(cfg, omega):
    from .pipeline import reduce_system
    system = _assembled(cfg)
    return system, _run_stage("reduce", reduce_system, omega, system.perturbation, cfg.kam)


def cmd_reduce(args, cfg) -> int:
    out = _outdir(args, cfg)
    status = EXIT_OK
    runs = []
    for i, omega in enumerate(cfg.omegas):
        _, result = _reduce(cfg, omega)
        payload = reduction_payload(result, cfg.kam)
        runs.append(payload)
        write_steps_csv(result, out / f"steps_{i}.csv")
        if args.dump:
            dump_operator(result.Z.to_operator(cfg.kam.d, cfg.kam.L_max), out / f"Z_{i}.op")
        print(f"omega={np.round(omega, 6).tolist()}  status={result.status}  "
              f"eps={['%.2e' % e for e in result.history.eps_sequence]}")
        if result.status == "excised":
            print(f"  excised: {result.history.blame}")
        elif result.status != "converged" or not payload["passed"]:
            status = EXIT_FAIL
        print(format_checks(payload["checks"]))
    write_json({"stage": "reduce", "runs": runs, "config": cfg.as_dict()}, out / "report.json")
    return status


def cmd_measure(args, cfg) -> int:
    from .measure import estimate_excised_measure
    out = _outdir(args, cfg)
    k, m = cfg.kam, cfg.measure
    gamma = m.gamma if m.gamma is not None else k.gamma
    tau = m.tau if m.tau is not None else k.tau
    reports = []
    for i, K in enumerate(m.K):
        rep = _run_stage("measure", estimate_excised_measure, None, gamma, tau, K, k.d, n=k.n,
                         N_samples=m.N_samples, seed=cfg.seed + i, beta=k.beta, keep_samples=True,
                         safety=k.localization_safety)
        rep.to_csv(out / f"measure_K{K:g}.csv")
        reports.append(rep.summary())
        print(f"K={K:g}  excised {rep.excised_count}/{rep.sampled_count} = {rep.excised_fraction:.3e}  "
              f"95% CI [{rep.ci[0]:.2e}, {rep.ci[1]:.2e}]  fitted C={rep.fitted_constant:.3g}")
    write_json({"stage": "measure", "config": cfg.as_dict(), "reports": reports}, out / "measure.json")
    return EXIT_OK


def cmd_evolve(args, cfg) -> int:
    from .evolution import conjugacy_defect, norm_band_check, evolve_original, evolve_reduced
    out = _outdir(args, cfg)
    e = cfg.evolve
    status = EXIT_OK
    runs = []
    for i, omega in enumerate(cfg.omegas):
        system, result = _reduce(cfg, omega)
        u0 = cfg.initial_state()
        orig = _run_stage("evolve", evolve_original, u0, omega, system.V_op, system.W_op, cfg.kam.epsilon,
                          e.T, n_out=e.n_out, tol=e.tol, orders=tuple(e.orders))
        v0 = result.Phi.evaluate(np.zeros(cfg.kam.d)) @ u0
        red = evolve_reduced(v0, result.Z, e.T, n_out=e.n_out, orders=tuple(e.orders))
        orig.to_csv(out / f"evolve_original_{i}.csv")
        red.to_csv(out / f"evolve_reduced_{i}.csv")
        conj = float(conjugacy_defect(orig, red, result.Phi, omega).max()) if result.status == "converged" else None
        C_fit, ok = norm_band_check(orig, cfg.kam.epsilon, s=1.0)
        runs.append({"omega": omega, "status": result.status, "integrator_error": orig.error_estimate,
                     "dt": orig.dt, "conjugacy_defect": conj, "norm_band_C_fit": C_fit, "norm_band_ok": ok})
        print(f"omega={np.round(omega, 6).tolist()}  conjugacy defect={conj}  C_fit={C_fit:.3g}")
        if not ok:
            status = EXIT_FAIL
    write_json({"stage": "evolve", "config": cfg.as_dict(), "runs": runs}, out / "evolve.json")
    return status


def cmd_report(args, cfg=None) -> int:
    path = Path(args.report)
    with open(path) as fh:
        doc = json.load(fh)
    print(f"{path}: schema {doc.get('schema')}, stage {doc.get('stage')}")
    for run in doc.get("runs", []):
        if "checks" in run:
            print(f"omega={run['omega']}  status={run['status']}  slope={run.get('convergence_slope')}")
            print(format_checks(run["checks"]))
        else:
            print(json.dumps(run, sort_keys=True))
    for rep in doc.get("reports", []):
        print(f"K={rep['K']}  fraction={rep['excised_fraction']:.3e}  fitted C={rep['fitted_constant']:.3g}")
    return EXIT_OK


def cmd_selfcheck(args, cfg=None) -> int:
    from .invariants import SUITES, inequality_suite, regularization_suite
    rng_seed = args.seed
    rows = []
    t0 = time.time()
    for name, suite in SUITES.items():
        for c in suite(np.random.default_rng(rng_seed)):
            rows.append((name, c))
    if args.full:
        for c in inequality_suite(rng_seed):
            rows.append(("inequalities", c))
    # a sign-flipped regularizer denominator must be caught
    mutant = regularization_suite(np.random.default_rng(rng_seed), regularizer=_flipped_regularizer, instances=5)
    caught = not all(c.passed for c in mutant)
    rows.append(("mutation", _mutation_check(caught)))
    width = max(len(f"{s}: {c.name}") for s, c in rows)
    for suite_name, c in rows:
        label = f"{suite_name}: {c.name}"
        print(f"{'PASS' if c.passed else 'FAIL'}  {label:<{width}}  {c.value:.3e}")
    failed = [r for r in rows if not r[1].passed]
    print(f"{len(rows) - len(failed)}/{len(rows)} checks passed in {time.time() - t0:.1f} s")
    return EXIT_OK if not failed else EXIT_FAIL


def _flipped_regularizer(R):
    """Regularizer with lambda_k' - lambda_k in the denominator."""
    from .regularization import build_regularizer
    return -build_regularizer(R)


def _mutation_check(caught: bool):
    from .invariants import Check
    return Check("sign-flipped regularizer is detected", float(caught), 1.0, caught)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sphkam", description="Reducibility of quasi-periodic Schrodinger "
                                "operators on the sphere: assemble, regularize, reduce, measure, evolve.")
    sub = p.add_subparsers(dest="command")
    for name, helptext in (("assemble", "assemble and dump the perturbation operators"),
                           ("regularize", "reduce the unbounded perturbation to a smoothing one"),
                           ("reduce", "full KAM reduction with report.json and per-step CSV"),
                           ("measure", "Monte-Carlo estimate of excised frequencies"),
                           ("evolve", "integrate original and reduced flows")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", nargs="?", help="YAML run configuration (default: shipped golden run)")
        sp.add_argument("-o", "--output", help="output directory")
        if name in ("regularize", "reduce"):
            sp.add_argument("--dump", action="store_true", help="write operator dumps")
    sc = sub.add_parser("selfcheck", help="run invariant suites and print a pass/fail matrix")
    sc.add_argument("--seed", type=int, default=0)
    sc.add_argument("--full", action="store_true", help="include the fitted-constant inequality suite")
    rp = sub.add_parser("report", help="summarize a report JSON")
    rp.add_argument("report")
    return p


COMMANDS = {"assemble": cmd_assemble, "regularize": cmd_regularize, "reduce": cmd_reduce,
            "measure": cmd_measure, "evolve": cmd_evolve}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    try:
        if args.command == "selfcheck":
            return cmd_selfcheck(args)
        if args.command == "report":
            return cmd_report(args)
        cfg = load_config(args.config or golden_config_path())
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
