"""Machine-readable run reports."""
from __future__ import annotations

import csv
import json
import math
from datetime import datetime, timezone
from typing import Dict, List

import numpy as np

from . import __version__
from .invariants import Check
from .kam import KamConfig
from .operators import beta_norm
from .pipeline import ReductionResult

REPORT_SCHEMA = "sphkam-report/1"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(payload: dict, path):
    """Deterministic JSON: sorted keys, the timestamp kept in its own top-level field."""
    doc = {"schema": REPORT_SCHEMA, "version": __version__, **_plain(payload),
           "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def eigenvalue_decay(result: ReductionResult, cfg: KamConfig) -> Dict:
    """<k>^beta |mu_kj| per block, its fit against eps gamma, and the beta-norm bound."""
    Z = result.Z
    weighted = [float(np.max(np.abs(mu), initial=0.0)) * max(1, k) ** cfg.beta
                for k, mu in enumerate(Z.eigenvalues)]
    bound = beta_norm(Z.to_operator(), cfg.norm(0.0))
    scale = cfg.epsilon * cfg.gamma
    C = max(weighted) / scale if scale > 0 else (0.0 if max(weighted) == 0 else math.inf)
    return {"weighted": weighted, "C_fit": C, "beta_norm_bound": bound,
            "bound_holds": all(w <= bound * (1 + 1e-12) + 1e-300 for w in weighted)}


def reduction_checks(result: ReductionResult, cfg: KamConfig) -> List[Check]:
    reg = result.regularized.diagnostics
    hist = result.history
    summary = result.summary(cfg)
    decay = eigenvalue_decay(result, cfg)
    checks = [
        Check("regularizer generator identity", reg["generator_identity_residual"], 1e-12,
              reg["generator_identity_residual"] <= 1e-12 * max(1.0, reg["input_R_norm"])),
        Check("regularized conjugacy, interior blocks", reg["conjugacy_interior_residual"], 1e-10,
              reg["conjugacy_interior_residual"] <= 1e-10),
        Check("total transformation unitary", summary["unitarity_defect"], 1e-8, summary["unitarity_defect"] <= 1e-8),
        Check("final remainder Hamiltonian", summary["hamiltonian_defect"], 1e-12, summary["hamiltonian_defect"] <= 1e-12),
        Check("normal form eigenvalues bounded by its beta-norm", max(decay["weighted"]), decay["beta_norm_bound"],
              decay["bound_holds"]),
    ]
    if hist.records:
        res = max(r.residual_norm for r in hist.records)
        unit = max(r.unitarity_defect for r in hist.records)
        inc = max(r.z_increment / (cfg.gamma * r.eps) if r.eps > 0 else 0.0 for r in hist.records)
        checks += [
            Check("homological residual, every step", res, 1e-10, res <= 1e-10),
            Check("step transformations unitary", unit, 1e-8, unit <= 1e-8),
            Check("normal form increment / (gamma eps_k)", inc, 1.0, inc <= 1.0),
        ]
    return checks


def reduction_payload(result: ReductionResult, cfg: KamConfig, extra: Dict = None) -> dict:
    checks = reduction_checks(result, cfg)
    return {
        "stage": "reduce",
        "config": cfg.as_dict(),
        "omega": result.omega,
        "status": result.status,
        "blame": result.history.blame,
        "regularization": result.regularized.diagnostics,
        "history": result.history.as_dict(),
        "convergence_slope": result.history.convergence_slope(),
        "summary": result.summary(cfg),
        "fitted_constants": {"smallness_constant": cfg.smallness_constant,
                             "eigenvalue_decay": eigenvalue_decay(result, cfg)["C_fit"]},
        "final_eigenvalues": [mu for mu in result.Z.eigenvalues],
        "checks": [c.as_dict() for c in checks],
        "passed": all(c.passed for c in checks),
        **(extra or {}),
    }


def write_steps_csv(result: ReductionResult, path):
    rows = [r.as_dict() for r in result.history.records]
    with open(path, "w", newline="") as fh:
        if not rows:
            fh.write("step\n")
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


def format_checks(checks) -> str:
    width = max((len(c["name"] if isinstance(c, dict) else c.name) for c in checks), default=10)
    lines = []
    for c in checks:
        c = c if isinstance(c, dict) else c.as_dict()
        mark = "PASS" if c["passed"] else "FAIL"
        lines.append(f"{mark}  {c['name']:<{width}}  value={c['value']:.3e}  limit={c['limit']}")
    return "\n".join(lines)
