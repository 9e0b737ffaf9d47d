"""KAM reduction: non-resonance sets, homological equation, iteration.

Operators are written as L = omega.d_phi - i(D^2 + Z) + M with Z a normal
form and M Hamiltonian and smoothing.  One step conjugates L by e^S, where S
solves

    -omega.d_phi S + i[D^2 + Z, S] + M = Diag M + R,

R being the Fourier tail |l| > K of M.  The new normal form is
Z + i Diag M and the new remainder is quadratic in M up to the tail.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .operators import (BlockOperator, FourierModes, NormalForm, NormParams, adjoint_action,
                        beta_norm, commutator, decay_norm, diag_part, lie_exponential,
                        series_norm, structure_defect)


class ConfigError(ValueError):
    """Invalid parameter; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class ResonanceError(ArithmeticError):
    """A homological divisor fell below the Melnikov threshold."""


class Excised(Exception):
    """omega left the non-resonant set at some step (a classified outcome)."""

    def __init__(self, reason: str, blame: dict):
        super().__init__(f"{reason}: {blame}")
        self.reason = reason
        self.blame = blame


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class KamConfig:
    n: int = 2
    d: int = 2
    s: float = 2.5
    sigma: float = 0.5
    alpha: float = 0.3
    gamma: float = 0.05
    nu: Optional[float] = None
    tau: Optional[float] = None
    chi: float = 1.5
    K_0: int = 1
    K_max: int = 8
    L_max: float = 4
    epsilon: float = 1e-3
    max_steps: int = 6
    stop_tol: float = 1e-12
    lie_tol: float = 1e-15
    p_max: int = 80
    theta_star: float = 10.0
    smallness_constant: float = 1.0
    localization_safety: float = 2.0

    def __post_init__(self):
        if self.nu is None:
            object.__setattr__(self, "nu", 1 - self.alpha)
        if self.tau is None:
            object.__setattr__(self, "tau", self.tau_bound + 0.5)
        self.validate()

    @property
    def beta(self) -> float:
        return 1 - 2 * self.alpha

    @property
    def tau_0(self) -> int:
        return self.d + 1

    @property
    def tau_bound(self) -> float:
        """Strict lower bound d + 2(n-1) tau_0 / beta + 2 for tau."""
        if self.beta <= 0:
            return math.inf
        return self.d + 2 * (self.n - 1) * self.tau_0 / self.beta + 2

    def validate(self):
        checks = [
            ("n", self.n >= 1 and int(self.n) == self.n, "must be a positive integer"),
            ("d", self.d >= 1 and int(self.d) == self.d, "must be a positive integer"),
            ("alpha", 0 <= self.alpha < 0.5, "must lie in [0, 1/2)"),
            ("s", self.s > (self.d + self.n) / 2, f"must exceed (d+n)/2 = {(self.d + self.n) / 2}"),
            ("sigma", self.sigma > 0, "must be positive"),
            ("gamma", 0 < self.gamma, "must be positive"),
            ("nu", self.nu >= 1 - self.alpha - 1e-12, f"must be >= 1 - alpha = {1 - self.alpha}"),
            ("chi", 1 < self.chi < 2, "must lie in (1, 2)"),
            ("K_0", self.K_0 >= 1, "must be a positive integer"),
            ("K_max", self.K_max >= 0, "must be non-negative"),
            ("L_max", self.L_max >= 0, "must be non-negative"),
            ("L_max", self.L_max * self.sigma <= 30, "L_max * sigma must not exceed 30"),
            ("epsilon", self.epsilon >= 0, "must be non-negative"),
            ("max_steps", self.max_steps >= 1, "must be at least 1"),
        ]
        for name, ok, why in checks:
            if not ok:
                raise ConfigError(name, why)
        if not self.tau > self.tau_bound:
            raise ConfigError("tau", f"{self.tau} does not exceed d + 2(n-1)tau_0/beta + 2 = {self.tau_bound:.6g}")

    def norm(self, sigma: Optional[float] = None, beta: Optional[float] = None) -> NormParams:
        return NormParams(s=self.s, sigma=self.sigma if sigma is None else sigma,
                          beta=-self.beta if beta is None else beta, gamma=self.gamma)

    def as_dict(self) -> dict:
        out = asdict(self)
        out.update(beta=self.beta, tau_0=self.tau_0, tau_bound=self.tau_bound)
        return out


# ---------------------------------------------------------------- non-resonance

def integer_ball(d: int, radius: float) -> np.ndarray:
    return FourierModes(d, radius).vectors


def in_diophantine_G0(omega, gamma: float, tau_0: float, L_check: float) -> bool:
    """|omega.l| >= 4 gamma / |l|^tau_0 for all 0 < |l| <= L_check."""
    return diophantine_margin(omega, gamma, tau_0, L_check)[0] >= 0


def diophantine_margin(omega, gamma: float, tau_0: float, L_check: float):
    """(min over l of |omega.l| - 4gamma/|l|^tau_0, worst l)."""
    omega = np.asarray(omega, dtype=float)
    ls = integer_ball(omega.size, L_check)
    ls = ls[np.any(ls != 0, axis=1)]
    if len(ls) == 0:
        return math.inf, None
    norms = np.linalg.norm(ls, axis=1)
    margin = np.abs(ls @ omega) - 4 * gamma / norms ** tau_0
    i = int(np.argmin(margin))
    return float(margin[i]), tuple(int(x) for x in ls[i])


@dataclass
class MelnikovVerdict:
    member: bool
    min_divisor: float
    threshold: float
    blame: Optional[dict]
    hypothesis_ok: bool
    k_scan: int

    @property
    def margin(self) -> float:
        return self.min_divisor - self.threshold


def localization_bound(omega_sup: float, K: float, safety: float = 2.0) -> int:
    """k + k' <= C |l| with C = 4 (1 + sup|omega|), times a safety factor."""
    return int(math.ceil(safety * 4 * (1 + omega_sup) * max(K, 1)))


def _levels(Z: Optional[NormalForm], n: int, k_scan: int):
    """Shifted eigenvalues lambda_k + mu_kj for k <= k_scan.

    Blocks past the normal form's truncation carry mu = 0 and are
    represented by one level each (all their divisors coincide).
    """
    from .spectral import laplace_eigenvalue
    ks, js, vals = [], [], []
    for k in range(k_scan + 1):
        lam = laplace_eigenvalue(k, n)
        if Z is not None and k <= Z.sphere.K_max:
            mus = Z.eigenvalues[k]
        else:
            mus = np.zeros(1)
        for j, mu in enumerate(mus):
            ks.append(k)
            js.append(j)
            vals.append(lam + mu)
    return np.array(ks), np.array(js), np.array(vals, dtype=float)


def melnikov_scan(omegas, Z: Optional[NormalForm], gamma: float, tau: float, K: float,
                  n: int = 2, k_max: Optional[int] = None, L_scan: Optional[float] = None,
                  safety: float = 2.0):
    """Smallest second-order divisor for each frequency in ``omegas``.

    Scans |omega.l + lambda_k + mu_kj - lambda_k' - mu_k'j'| over |l| <= K
    (capped at ``L_scan``), k, k' <= k_max capped by the a-priori
    localization, excluding (l, k, k') = (0, k, k).  Pairs whose eigenvalue
    gap already exceeds every attainable |omega.l| are skipped; that bound
    is rigorous, so the minimum is exact.

    Returns (min_divisor (N,), blame index arrays dict, k_scan).
    """
    omegas = np.atleast_2d(np.asarray(omegas, dtype=float))
    N, d = omegas.shape
    radius = K if L_scan is None else min(K, L_scan)
    omega_sup = float(np.max(np.linalg.norm(omegas, axis=1)))
    k_loc = localization_bound(omega_sup, K, safety)
    k_scan = k_loc if k_max is None else min(k_max, k_loc)
    ks, js, E = _levels(Z, n, k_scan)
    mu_sup = float(np.max(np.abs(E - ks * (ks + n - 1)), initial=0.0))
    ls = integer_ball(d, radius)
    best = np.full(N, np.inf)
    blame = {"l": np.zeros((N, d), dtype=int), "k": np.zeros(N, dtype=int), "kp": np.zeros(N, dtype=int),
             "j": np.zeros(N, dtype=int), "jp": np.zeros(N, dtype=int)}
    same = ks[:, None] == ks[None, :]
    gaps = E[:, None] - E[None, :]
    for l in ls:
        x = omegas @ l
        reach = float(np.max(np.abs(x))) + 1.0
        zero_l = not np.any(l)
        sel = np.abs(gaps) <= reach + 2 * mu_sup
        if zero_l:
            sel &= ~same
        a, b = np.nonzero(sel)
        if a.size == 0:
            continue
        c = gaps[a, b]
        order = np.argsort(c)
        c, a, b = c[order], a[order], b[order]
        pos = np.searchsorted(c, -x)
        lo = np.clip(pos - 1, 0, c.size - 1)
        hi = np.clip(pos, 0, c.size - 1)
        d_lo = np.abs(x + c[lo])
        d_hi = np.abs(x + c[hi])
        pick = np.where(d_lo <= d_hi, lo, hi)
        div = np.minimum(d_lo, d_hi)
        upd = div < best
        if np.any(upd):
            best[upd] = div[upd]
            blame["l"][upd] = l
            blame["k"][upd] = ks[a[pick[upd]]]
            blame["kp"][upd] = ks[b[pick[upd]]]
            blame["j"][upd] = js[a[pick[upd]]]
            blame["jp"][upd] = js[b[pick[upd]]]
    return best, blame, k_scan


def in_melnikov_set(omega, Z: Optional[NormalForm], gamma: float, tau: float, K: float,
                    n: int = 2, k_max: Optional[int] = None, L_scan: Optional[float] = None,
                    beta: Optional[float] = None, s: float = 0.0, safety: float = 2.0) -> MelnikovVerdict:
    """Second-order Melnikov condition at a single frequency; see ``melnikov_scan``."""
    threshold = 2 * gamma / max(K, 1) ** tau
    best, blame, k_scan = melnikov_scan(omega, Z, gamma, tau, K, n, k_max, L_scan, safety)
    hyp = True
    if Z is not None and beta is not None:
        hyp = beta_norm(Z.to_operator(), NormParams(s=s, beta=-beta)) <= gamma / 4
    info = {key: (tuple(int(x) for x in v[0]) if key == "l" else int(v[0])) for key, v in blame.items()}
    return MelnikovVerdict(bool(best[0] >= threshold), float(best[0]), threshold,
                           info if best[0] < threshold else {**info, "note": "closest tuple"}, hyp, k_scan)


# ---------------------------------------------------------------- homological equation

def _eigen_frame(Z: NormalForm):
    U = Z.unitary()
    E = Z.sphere.flat_eigenvalues + Z.flat_eigenvalues()
    return U, E


def solve_homological(omega, Z: NormalForm, M: BlockOperator, gamma: float, tau: float,
                      K: float) -> Tuple[BlockOperator, BlockOperator]:
    """Solve -omega.d_phi S + i[D^2+Z, S] + M = Diag M + R.

    In the eigenbasis of each block of D^2 + Z the equation is diagonal:
    S^ = i M^ / (-omega.l + lambda_k + mu_kj - lambda_k' - mu_k'j').
    Modes |l| > K are left in R; the (l = 0, k = k') blocks stay in Diag M.
    """
    omega = np.asarray(omega, dtype=float)
    U, E = _eigen_frame(Z)
    modes = M.modes
    sp = M.sphere
    Mhat = U.conj().T @ M.coef @ U
    wl = modes.vectors @ omega
    div = -wl[:, None, None] + E[None, :, None] - E[None, None, :]
    solve = np.broadcast_to((modes.norms <= K + 1e-9)[:, None, None], div.shape).copy()
    same = sp.block_of[:, None] == sp.block_of[None, :]
    solve[modes.zero] &= ~same
    threshold = 2 * gamma / max(K, 1) ** tau
    small = solve & (np.abs(div) < threshold)
    if np.any(small):
        i, a, b = (int(x[0]) for x in np.nonzero(small))
        raise ResonanceError(
            f"divisor {abs(div[i, a, b]):.3g} < {threshold:.3g} at l={tuple(int(x) for x in modes.vectors[i])}, "
            f"k={sp.block_of[a]}, k'={sp.block_of[b]}")
    Shat = np.zeros_like(Mhat)
    Shat[solve] = 1j * Mhat[solve] / div[solve]
    S = U @ Shat @ U.conj().T
    tail = M.coef.copy()
    tail[modes.norms <= K + 1e-9] = 0
    return BlockOperator(sp, modes, S), M._new(tail)


def homological_residual(omega, Z: NormalForm, M: BlockOperator, S: BlockOperator,
                         R: BlockOperator) -> BlockOperator:
    """-omega.d_phi S + i[D^2 + Z, S] + M - Diag M - R, by generic routines."""
    lam = S.sphere.flat_eigenvalues
    Zop = Z.to_operator(S.d, S.L_max)
    D2S = S.scale_rows(lam) - S.scale_cols(lam)
    return (-S.derivative(omega) + 1j * (D2S + commutator(Zop, S)) + M
            - diag_part(M) - R)


# ---------------------------------------------------------------- KAM step

def remainder_after_step(S: BlockOperator, M: BlockOperator, R: BlockOperator,
                         tol: float, p_max: int) -> BlockOperator:
    """New remainder after conjugating by e^S.

    R + sum_{q>=1} [ad_S^q(Diag M + R - M)/(q+1)! + ad_S^q(M)/q!]
    """
    if series_norm(S) == 0:
        return R
    ad = adjoint_action(S)
    y = diag_part(M) + R - M
    m = M
    total = R
    ref = None
    for q in range(1, p_max + 1):
        y, m = ad(y), ad(m)
        piece = y / math.factorial(q + 1) + m / math.factorial(q)
        total = total + piece
        size = series_norm(piece)
        if ref is None:
            ref = size
        if size <= tol * ref or size == 0:
            return total
    raise RuntimeError(f"remainder series did not converge in {p_max} terms")


def unitarity_defect(Phi: BlockOperator, points: Optional[np.ndarray] = None) -> float:
    """max over sample phases of ||Phi(phi)^H Phi(phi) - I||_2."""
    if points is None:
        G = Phi.modes.fft_size
        ph = 2 * np.pi * np.arange(G) / G
        points = np.array(list(itertools.product(ph, repeat=Phi.d)))
    worst = 0.0
    eye = np.eye(Phi.sphere.size)
    for phi in points:
        P = Phi.evaluate(phi)
        worst = max(worst, float(np.linalg.norm(P.conj().T @ P - eye, 2)))
    return worst


@dataclass
class StepRecord:
    step: int
    K: float
    sigma: float
    sigma_next: float
    eps: float
    eps_next: float
    generator_norm: float
    smallness: float
    a_priori_smallness_log10: float
    residual_norm: float
    unitarity_defect: float
    hamiltonian_defect: float
    z_increment: float
    melnikov_margin: float
    melnikov_threshold: float
    hypothesis_ok: bool
    truncation_loss: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepResult:
    Z_next: NormalForm
    M_next: BlockOperator
    Phi: BlockOperator
    record: StepRecord


def kam_step(omega, Z: NormalForm, M: BlockOperator, K: float, sigma: float, sigma_next: float,
             cfg: KamConfig, step: int = 0) -> StepResult:
    """One conjugation omega.d_phi - i(D^2+Z) + M -> omega.d_phi - i(D^2+Z_+) + M_+."""
    omega = np.asarray(omega, dtype=float)
    verdict = in_melnikov_set(omega, Z, cfg.gamma, cfg.tau, K, cfg.n, k_max=M.K_max,
                              L_scan=M.L_max, safety=cfg.localization_safety)
    if not verdict.member:
        raise Excised("melnikov", {"step": step, "K": K, **verdict.blame,
                                   "divisor": verdict.min_divisor, "threshold": verdict.threshold})
    Zop = Z.to_operator(M.d, M.L_max)
    hyp_ok = beta_norm(Zop, cfg.norm(sigma)) <= cfg.gamma / 4
    S, R = solve_homological(omega, Z, M, cfg.gamma, cfg.tau, K)
    gen = beta_norm(S, cfg.norm(sigma))
    smallness = cfg.smallness_constant * gen
    if smallness > 0.5:
        raise ArithmeticError(f"step {step}: generator too large ({gen:.3g}) for a convergent exponential")
    residual = homological_residual(omega, Z, M, S, R)
    Phi = lie_exponential(S, cfg.lie_tol, cfg.p_max)
    DiagM = diag_part(M)
    Zinc = NormalForm.from_operator(0.5 * (1j * DiagM + (1j * DiagM).adjoint()), tol=1e-8)
    Z_next = Z + Zinc
    M_next = remainder_after_step(S, M, R, cfg.lie_tol, cfg.p_max)
    eps = beta_norm(M, cfg.norm(sigma)) / cfg.gamma
    a = 2 * cfg.tau + cfg.n * cfg.tau / cfg.beta + cfg.n + 2 * cfg.d + 1
    record = StepRecord(
        step=step, K=float(K), sigma=sigma, sigma_next=sigma_next, eps=eps,
        eps_next=beta_norm(M_next, cfg.norm(sigma_next)) / cfg.gamma,
        generator_norm=gen, smallness=smallness,
        a_priori_smallness_log10=float(np.log10(max(eps, 1e-300)) + a * np.log10(max(K, 1))),
        residual_norm=decay_norm(residual, cfg.norm(sigma)),
        unitarity_defect=unitarity_defect(Phi),
        hamiltonian_defect=structure_defect(M_next, "hamiltonian"),
        z_increment=beta_norm(Zinc.to_operator(M.d, M.L_max), cfg.norm(sigma)),
        melnikov_margin=verdict.margin, melnikov_threshold=verdict.threshold,
        hypothesis_ok=bool(hyp_ok and verdict.hypothesis_ok),
        truncation_loss=M_next.truncation_loss)
    return StepResult(Z_next, M_next, Phi, record)


# ---------------------------------------------------------------- iteration

@dataclass
class KamHistory:
    records: List[StepRecord] = field(default_factory=list)
    eps_sequence: List[float] = field(default_factory=list)
    status: str = "running"
    blame: Optional[dict] = None

    def as_dict(self) -> dict:
        return {"status": self.status, "blame": self.blame, "eps": self.eps_sequence,
                "steps": [r.as_dict() for r in self.records]}

    def convergence_slope(self) -> float:
        """Least-squares slope of log(-log(eps_k/eps_0)) against k, over k >= 1."""
        eps = np.asarray(self.eps_sequence)
        k = np.arange(len(eps))
        ok = (k >= 1) & (eps > 0) & (eps < eps[0])
        if ok.sum() < 2:
            return math.nan
        y = np.log(-np.log(eps[ok] / eps[0]))
        return float(np.polyfit(k[ok], y, 1)[0])


@dataclass
class KamResult:
    Z: NormalForm
    Phi: BlockOperator
    M: BlockOperator
    history: KamHistory

    @property
    def status(self) -> str:
        return self.history.status

    def raise_for_status(self):
        if self.status == "not_converged":
            raise RuntimeError("KAM iteration did not converge within max_steps")


def sigma_schedule(sigma_0: float, steps: int) -> List[float]:
    out = [sigma_0]
    for k in range(steps):
        out.append((1 - 2.0 ** (-k - 3)) * out[-1])
    return out


def kam_iterate(omega, Z0: Optional[NormalForm], M0: BlockOperator, cfg: KamConfig,
                sigma_0: Optional[float] = None) -> KamResult:
    """Iterate kam_step with K_k = 4^k K_0 and sigma_{k+1} = (1 - 2^{-k-3}) sigma_k."""
    omega = np.asarray(omega, dtype=float)
    Z = Z0 if Z0 is not None else NormalForm.zeros(M0.sphere)
    sigmas = sigma_schedule(cfg.sigma / 2 if sigma_0 is None else sigma_0, cfg.max_steps)
    Phi = BlockOperator.identity(M0.sphere, M0.d, M0.L_max)
    M = M0
    history = KamHistory()
    eps = beta_norm(M, cfg.norm(sigmas[0])) / cfg.gamma
    history.eps_sequence.append(eps)
    if eps > cfg.theta_star:
        raise ArithmeticError(f"initial size {eps:.3g} exceeds theta_star = {cfg.theta_star}")
    margin, worst = diophantine_margin(omega, cfg.gamma, cfg.tau_0, M0.L_max)
    if margin < 0:
        history.status = "excised"
        history.blame = {"reason": "diophantine", "l": worst, "margin": margin}
        return KamResult(Z, Phi, M, history)
    for k in range(cfg.max_steps):
        if eps < cfg.stop_tol:
            history.status = "converged"
            break
        K = 4 ** k * cfg.K_0
        try:
            res = kam_step(omega, Z, M, K, sigmas[k], sigmas[k + 1], cfg, step=k)
        except Excised as exc:
            history.status = "excised"
            history.blame = {"reason": exc.reason, **exc.blame}
            return KamResult(Z, Phi, M, history)
        Z, M = res.Z_next, res.M_next
        Phi = res.Phi @ Phi
        eps = res.record.eps_next
        history.records.append(res.record)
        history.eps_sequence.append(eps)
    else:
        history.status = "converged" if eps < cfg.stop_tol else "not_converged"
    return KamResult(Z, Phi, M, history)
