"""Monte-Carlo estimates of the frequencies removed by the Melnikov conditions."""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.stats import binomtest

from .kam import melnikov_scan
from .operators import NormalForm, NormParams, beta_norm


def measure_exponent(tau: float, d: int, n: int, beta: float) -> float:
    """Exponent e with excised measure <= C gamma K^e."""
    tau_0 = d + 1
    return -tau + d + 2 * (n - 1) * tau_0 / beta + 1


@dataclass
class MeasureReport:
    sampled_count: int
    excised_count: int
    ci: Tuple[float, float]
    gamma: float
    tau: float
    K: float
    bound_exponent: float
    histogram: Dict[str, int] = field(default_factory=dict)
    samples: Optional[np.ndarray] = None
    margins: Optional[np.ndarray] = None
    blame: Optional[dict] = None
    k_scan: int = 0

    @property
    def excised_fraction(self) -> float:
        return self.excised_count / self.sampled_count

    @property
    def bound_unit(self) -> float:
        """gamma K^e: the bound with C = 1."""
        return self.gamma * max(self.K, 1) ** self.bound_exponent

    @property
    def fitted_constant(self) -> float:
        return self.excised_fraction / self.bound_unit

    def summary(self) -> dict:
        return {
            "sampled_count": self.sampled_count,
            "excised_count": self.excised_count,
            "excised_fraction": self.excised_fraction,
            "confidence_interval": list(self.ci),
            "gamma": self.gamma, "tau": self.tau, "K": self.K,
            "bound_exponent": self.bound_exponent,
            "fitted_constant": self.fitted_constant,
            "k_scan": self.k_scan,
            "histogram": dict(sorted(self.histogram.items(), key=lambda kv: (-kv[1], kv[0]))),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)

    def to_csv(self, path):
        """One row per sample: omega components, verdict, margin, blaming tuple."""
        if self.samples is None:
            raise ValueError("report was built without per-sample data")
        d = self.samples.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"omega_{i + 1}" for i in range(d)] + ["excised", "margin", "l", "k", "kp", "j", "jp"])
            for i, om in enumerate(self.samples):
                b = self.blame
                w.writerow([repr(float(x)) for x in om]
                           + [int(self.margins[i] < 0), repr(float(self.margins[i])),
                              " ".join(map(str, b["l"][i])), b["k"][i], b["kp"][i], b["j"][i], b["jp"][i]])


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> Tuple[float, float]:
    ci = binomtest(successes, trials).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def estimate_excised_measure(Z: Optional[NormalForm], gamma: float, tau: float, K: float, d: int,
                             n: int = 2, N_samples: int = 20000, seed: int = 0,
                             beta: float = 1.0, s: float = 0.0, box=(0.5, 1.5),
                             k_max: Optional[int] = None, safety: float = 2.0,
                             keep_samples: bool = False) -> MeasureReport:
    """Fraction of uniform samples of [box]^d failing the order-K Melnikov conditions.

    ``beta`` only enters the reported bound exponent and the hypothesis
    check on Z; the box has unit volume by default.
    """
    if Z is not None and beta_norm(Z.to_operator(), NormParams(s=s, beta=-beta)) > gamma / 4:
        raise ValueError("normal form exceeds gamma/4; the measure estimate does not apply")
    rng = np.random.default_rng(seed)
    lo, hi = box
    omegas = rng.uniform(lo, hi, size=(N_samples, d))
    best, blame, k_scan = melnikov_scan(omegas, Z, gamma, tau, K, n=n, k_max=k_max, safety=safety)
    threshold = 2 * gamma / max(K, 1) ** tau
    margins = best - threshold
    bad = np.flatnonzero(margins < 0)
    hist = Counter(
        f"l={tuple(int(x) for x in blame['l'][i])} k={blame['k'][i]} kp={blame['kp'][i]}" for i in bad)
    report = MeasureReport(N_samples, int(bad.size), wilson_interval(int(bad.size), N_samples),
                           gamma, tau, K, measure_exponent(tau, d, n, beta), dict(hist), k_scan=k_scan)
    if keep_samples:
        report.samples, report.margins, report.blame = omegas, margins, blame
    return report


@dataclass
class SublevelVerdict:
    status: str
    fraction: float
    bound: float
    lip_lower: float

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def sublevel_check(grid, values, a: float, eta: float, slack: float = 0.05) -> SublevelVerdict:
    """Check meas{|f| <= eta} <= (2 eta / a) meas(O) on a sorted 1-D grid.

    The samples must exhibit the lower Lipschitz bound |f(x) - f(y)| >=
    a |x - y|, i.e. be strictly monotone with every neighbour quotient at
    least ``a``; otherwise the verdict is 'inconclusive'.
    """
    x = np.asarray(grid, dtype=float)
    f = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.shape != f.shape or x.size < 2:
        raise ValueError("grid and values must be matching 1-D arrays of length >= 2")
    if np.any(np.diff(x) <= 0):
        raise ValueError("grid must be strictly increasing")
    quotients = np.diff(f) / np.diff(x)
    # a global lower Lipschitz bound forces monotonicity; neighbour quotients suffice then
    monotone = np.all(quotients > 0) or np.all(quotients < 0)
    lip_lower = float(np.abs(quotients).min()) if monotone else 0.0
    fraction = float(np.mean(np.abs(f) <= eta))
    bound = 2 * eta / a * (1 + slack)
    if fraction == 0:
        status = "pass"
    elif lip_lower < a * (1 - 1e-9):
        status = "inconclusive"
    else:
        status = "pass" if fraction <= bound + 1.0 / x.size else "fail"
    return SublevelVerdict(status, fraction, bound, lip_lower)
