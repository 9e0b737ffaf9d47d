"""Time evolution of the truncated Schrodinger system and its reduced form.

Original frame: i u' = -D^2 u + eps H(omega t) u, i.e. u' = (iD^2 - R(omega t)) u
with R = i eps H.  Reduced frame: v' = i(D^2 + Z) v, solved blockwise in
closed form.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .operators import BlockOperator, NormalForm
from .spectral import SphereSpec

_GAUSS = (0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6)


class CFLError(ValueError):
    """Time step too coarse for the largest eigenvalue."""


@dataclass
class EvolutionRun:
    sphere: SphereSpec
    times: np.ndarray
    states: np.ndarray
    frame: str
    orders: Sequence[float] = (0.0, 1.0)
    error_estimate: float = 0.0
    dt: float = math.nan
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise FloatingPointError("non-finite state in evolution run")

    def norms(self, s: float) -> np.ndarray:
        w = np.maximum(1.0, self.sphere.block_of.astype(float)) ** (2 * s)
        return np.sqrt(np.sum(w * np.abs(self.states) ** 2, axis=1))

    def block_norms(self) -> np.ndarray:
        """(times, K+1) array of ||Pi_k u(t)||."""
        return np.sqrt(np.add.reduceat(np.abs(self.states) ** 2, self.sphere.offsets[:-1], axis=1))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"H^{s:g}" for s in self.orders])
            table = np.column_stack([self.times] + [self.norms(s) for s in self.orders])
            for row in table:
                w.writerow([repr(float(x)) for x in row])


def _exp_antihermitian(Omega: np.ndarray) -> np.ndarray:
    # Omega = -iH with H Hermitian
    H = 0.5 * (1j * Omega + (1j * Omega).conj().T)
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * w)) @ V.conj().T


class _Generator:
    """A(t) = iD^2 - R(omega t) on the flattened coefficient space."""

    def __init__(self, omega, R: Optional[BlockOperator], sphere: SphereSpec):
        self.omega = np.asarray(omega, dtype=float)
        self.lam = sphere.flat_eigenvalues.astype(float)
        self.R = R
        if R is not None:
            live = np.any(R.coef != 0, axis=(1, 2))
            self.ls = R.modes.vectors[live]
            self.coef = R.coef[live]

    def __call__(self, t: float) -> np.ndarray:
        A = np.diag(1j * self.lam).astype(complex)
        if self.R is not None and len(self.ls):
            phase = np.exp(1j * (self.ls @ (self.omega * t)))
            A -= np.tensordot(phase, self.coef, axes=1)
        return A


def _magnus_step(gen: _Generator, t: float, h: float, order: int) -> np.ndarray:
    if order == 2:
        return _exp_antihermitian(h * gen(t + h / 2))
    A1, A2 = gen(t + _GAUSS[0] * h), gen(t + _GAUSS[1] * h)
    Omega = 0.5 * h * (A1 + A2) + (math.sqrt(3) / 12) * h * h * (A2 @ A1 - A1 @ A2)
    return _exp_antihermitian(Omega)


def _integrate(gen: _Generator, u0: np.ndarray, times: np.ndarray, dt: float, order: int):
    """Fixed-step Magnus run sampled at ``times``; returns (states, error estimate).

    Each step is taken both whole and as two halves; the halves are kept and
    their difference divided by 2^order - 1 accumulates into the estimate.
    """
    u = u0.astype(complex).copy()
    out = np.empty((len(times), u.size), dtype=complex)
    out[0] = u
    err = 0.0
    t = times[0]
    for i, t_next in enumerate(times[1:], start=1):
        n_sub = max(1, int(math.ceil((t_next - t) / dt - 1e-12)))
        h = (t_next - t) / n_sub
        for _ in range(n_sub):
            coarse = _magnus_step(gen, t, h, order) @ u
            fine = _magnus_step(gen, t, h / 2, order) @ u
            fine = _magnus_step(gen, t + h / 2, h / 2, order) @ fine
            err += float(np.linalg.norm(fine - coarse)) / (2 ** order - 1)
            u = fine
            t += h
        t = t_next
        out[i] = u
    return out, err


def evolve_original(u0, omega, V_op: Optional[BlockOperator], W_op: Optional[BlockOperator],
                    epsilon: float, T: float, dt: Optional[float] = None, n_out: int = 201,
                    tol: float = 1e-9, order: int = 4, max_refine: int = 6,
                    sphere: Optional[SphereSpec] = None, orders=(0.0, 1.0)) -> EvolutionRun:
    """Integrate i u' = -D^2 u + eps (V + W)(omega t) u from u(0) = u0.

    V_op, W_op are Hermitian multiplication operators (either may be None).
    Exact-exponential Magnus steps keep the flow unitary; dt is halved until
    the step-doubling error estimate falls below ``tol``.
    """
    ops = [X for X in (V_op, W_op) if X is not None]
    if sphere is None:
        if not ops:
            raise ValueError("sphere is required when no operator is given")
        sphere = ops[0].sphere
    R = None
    if ops and epsilon != 0:
        H = ops[0] if len(ops) == 1 else ops[0] + ops[1]
        R = 1j * epsilon * H
    u0 = np.asarray(u0, dtype=complex)
    if u0.shape != (sphere.size,):
        raise ValueError(f"initial state has shape {u0.shape}, expected ({sphere.size},)")
    lam_max = max(float(sphere.flat_eigenvalues.max()), 1.0)
    if dt is None:
        dt = 1.0 / lam_max
    if dt * lam_max > math.pi:
        raise CFLError(f"dt * lambda_max = {dt * lam_max:.3g} exceeds pi")
    times = np.linspace(0.0, T, n_out)
    gen = _Generator(omega, R, sphere)
    for _ in range(max_refine + 1):
        states, err = _integrate(gen, u0, times, dt, order)
        if err <= tol:
            break
        dt /= 2
    return EvolutionRun(sphere, times, states, "original", orders, err, dt,
                        {"epsilon": epsilon, "order": order, "converged": err <= tol})


def reduced_propagator(Z: Optional[NormalForm], sphere: SphereSpec, t: float,
                       epsilon: float = 1.0) -> np.ndarray:
    """exp(it(D^2 + eps Z)) as a dense unitary."""
    lam = sphere.flat_eigenvalues.astype(float)
    if Z is None:
        return np.diag(np.exp(1j * t * lam))
    U = Z.unitary()
    mu = Z.flat_eigenvalues()
    return (U * np.exp(1j * t * (lam + epsilon * mu))) @ U.conj().T


def evolve_reduced(v0, Z: Optional[NormalForm], T: float, epsilon: float = 1.0, n_out: int = 201,
                   sphere: Optional[SphereSpec] = None, orders=(0.0, 1.0)) -> EvolutionRun:
    """Blockwise exact flow v(t) = exp(it(D^2 + eps Z)) v0."""
    if sphere is None:
        if Z is None:
            raise ValueError("sphere is required when Z is None")
        sphere = Z.sphere
    v0 = np.asarray(v0, dtype=complex)
    lam = sphere.flat_eigenvalues.astype(float)
    times = np.linspace(0.0, T, n_out)
    if Z is None:
        states = v0[None, :] * np.exp(1j * np.outer(times, lam))
    else:
        U = Z.unitary()
        E = lam + epsilon * Z.flat_eigenvalues()
        w = U.conj().T @ v0
        states = (np.exp(1j * np.outer(times, E)) * w[None, :]) @ U.T
    return EvolutionRun(sphere, times, states, "reduced", orders, 0.0, math.nan, {"epsilon": epsilon})


def norm_band_check(run: EvolutionRun, epsilon: float, s: float = 1.0, upto: Optional[float] = None):
    """(C_fit, passed): C_fit = max_t | ||u(t)||_s / ||u_0||_s - 1 | / eps; passes when the band is < 1."""
    norms = run.norms(s)
    sel = run.times <= (upto if upto is not None else run.times[-1]) + 1e-12
    deviation = float(np.max(np.abs(norms[sel] / norms[0] - 1)))
    # rounding-level drift counts as none when eps = 0
    C_fit = deviation / epsilon if epsilon > 0 else (0.0 if deviation <= 1e-12 else math.inf)
    return C_fit, deviation < 1


def conjugacy_defect(original: EvolutionRun, reduced: EvolutionRun, Phi: BlockOperator, omega) -> np.ndarray:
    """|| Phi(omega t) u(t) - v(t) ||_{L^2} along the shared time grid."""
    if original.times.shape != reduced.times.shape or not np.allclose(original.times, reduced.times):
        raise ValueError("runs use different time grids")
    omega = np.asarray(omega, dtype=float)
    out = np.empty(len(original.times))
    for i, t in enumerate(original.times):
        out[i] = np.linalg.norm(Phi.evaluate(omega * t) @ original.states[i] - reduced.states[i])
    return out
