"""Order reduction of the unbounded perturbation.

For G = omega.d_phi - i D^2 + R + R' with R diagonal-free of order alpha < 1/2,
the generator A_k^k'(l) = i R_k^k'(l) / (lambda_k - lambda_k') removes R at
first order because the eigenvalue gaps grow like k + k'.  Conjugating by
T = e^A leaves omega.d_phi - i(D^2 + Z) + M with M smoothing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .operators import (BlockOperator, NormalForm, NormParams, beta_norm, conjugate_operator,
                        diag_part, lie_exponential, offdiag_mask, structure_defect)


class SmallnessError(ValueError):
    """Perturbation too large for the conjugation series to be trusted."""


def build_regularizer(R: BlockOperator, tol: float = 1e-12) -> BlockOperator:
    """Generator with A_k^k'(l) = i R_k^k'(l)/(lambda_k - lambda_k'), zero for k = k'."""
    same = ~offdiag_mask(R.sphere)
    diag_mass = float(np.max(np.abs(R.coef[:, same]), initial=0.0))
    if diag_mass > tol * max(1.0, R.max_abs()):
        raise ValueError(f"perturbation has diagonal blocks of size {diag_mass:.3g}; "
                         "the regularizer needs R_k^k = 0 for every mode")
    lam = R.sphere.flat_eigenvalues
    gap = lam[:, None] - lam[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(same, 0.0, 1j / np.where(same, 1.0, gap))
    return R._new(R.coef * factor[None])


def generator_residual(R: BlockOperator, A: BlockOperator) -> BlockOperator:
    """R + [A, -i D^2]; vanishes exactly for the regularizer of R."""
    lam = R.sphere.flat_eigenvalues
    # [A, -iD^2]_ab = i (lambda_a - lambda_b) A_ab
    return R + A._new(A.coef * (1j * (lam[:, None] - lam[None, :]))[None])


@dataclass
class RegularizedSystem:
    """T G T^{-1} = omega.d_phi - i(D^2 + Z) + M with T = Id + F."""

    Z: NormalForm
    M: BlockOperator
    F: BlockOperator
    generator: BlockOperator
    diagnostics: dict = field(default_factory=dict)

    @property
    def T(self) -> BlockOperator:
        return self.F + BlockOperator.identity(self.F.sphere, self.F.d, self.F.L_max)


def split_normal_form(total: BlockOperator):
    """total = -iZ + M with Z = i diag_part(total) and M the rest."""
    diag = diag_part(total)
    Zop = 1j * diag
    # Hermitian up to rounding when total is Hamiltonian
    Zop = 0.5 * (Zop + Zop.adjoint())
    return NormalForm.from_operator(Zop, tol=1e-8), total - diag


def conjugation_by_products(omega, T: BlockOperator, T_inv: BlockOperator,
                            perturbation: BlockOperator) -> BlockOperator:
    """T (omega.d_phi - iD^2 + P) T^{-1} - (omega.d_phi - iD^2) by explicit products.

    Independent of the Lie-series route: uses
    T d_phi T^{-1} = d_phi + T (d_phi T^{-1}).
    """
    minus_iD2 = -1j * T.sphere.flat_eigenvalues
    D2_part = (T.scale_cols(minus_iD2) @ T_inv
               - BlockOperator.diagonal(T.sphere, minus_iD2, T.d, T.L_max))
    return T @ perturbation @ T_inv + T @ T_inv.derivative(omega) + D2_part


def interior_defect(A: BlockOperator, fraction: float = 0.5) -> float:
    """max |entry| over blocks with k, k' <= fraction K_max and |l| <= fraction L_max."""
    K = math.floor(fraction * A.K_max)
    L = fraction * A.L_max
    inside = A.sphere.block_of <= K
    sel = A.coef[A.modes.norms <= L + 1e-9][:, inside][:, :, inside]
    return float(np.max(np.abs(sel), initial=0.0))


def regularize(omega, R: BlockOperator, R_prime: BlockOperator | None, params: NormParams,
               alpha: float, nu: float, tol: float = 1e-15, p_max: int = 80,
               smallness: float = 0.5, smallness_constant: float = 1.0,
               interior: float = 0.5, regularizer=build_regularizer) -> RegularizedSystem:
    """Conjugate G = omega.d_phi - iD^2 + R + R' to omega.d_phi - i(D^2+Z) + M.

    Parameters
    ----------
    omega : frequency vector.
    R : diagonal-free Hamiltonian perturbation of order ``alpha``.
    R_prime : Hamiltonian smoothing perturbation (or None).
    params : norm parameters (s, sigma) of the input; beta is ignored.
    smallness, smallness_constant : the generator must satisfy
        ``smallness_constant * <<A>>_{alpha-1, s+nu, sigma} <= smallness``.
    regularizer : generator builder (exposed for mutation testing).
    """
    if R_prime is None:
        R_prime = BlockOperator.zeros(R.sphere, R.d, R.L_max)
    for name, X in (("R", R), ("R'", R_prime)):
        defect = structure_defect(X, "hamiltonian")
        if defect > 1e-12 * max(1.0, X.max_abs()):
            raise ValueError(f"{name} is not Hamiltonian (defect {defect:.3g})")
    beta = 1 - 2 * alpha
    strong = params.with_(s=params.s + nu)
    A = regularizer(R)
    gen_norm = beta_norm(A, strong.with_(beta=alpha - 1))
    if smallness_constant * gen_norm > smallness:
        raise SmallnessError(f"generator norm {gen_norm:.3g} exceeds {smallness / smallness_constant:.3g}")
    total = conjugate_operator(omega, None, R + R_prime, A, tol, p_max)
    Z, M = split_normal_form(total)
    T = lie_exponential(A, tol, p_max)
    T_inv = lie_exponential(-A, tol, p_max)
    independent = conjugation_by_products(omega, T, T_inv, R + R_prime)
    residual = interior_defect(independent - total, interior)
    sigma_plus = 0.75 * params.sigma
    out = params.with_(sigma=sigma_plus)
    half = params.with_(sigma=0.5 * params.sigma)
    Zop = Z.to_operator(R.d, R.L_max)
    diagnostics = {
        "input_R_norm": beta_norm(R, strong.with_(beta=alpha)),
        "input_Rprime_norm": beta_norm(R_prime, params.with_(beta=-beta)),
        "generator_norm": gen_norm,
        "generator_identity_residual": float(np.max(np.abs(generator_residual(R, A).coef), initial=0.0)),
        "Z_norm": beta_norm(Zop, half.with_(beta=-beta)),
        "M_norm": beta_norm(M, half.with_(beta=-beta)),
        "M_norm_sigma_plus": beta_norm(M, out.with_(beta=-beta)),
        "F_norm": beta_norm(T - BlockOperator.identity(R.sphere, R.d, R.L_max), half.with_(beta=-beta)),
        "conjugacy_interior_residual": residual,
        "hamiltonian_defect_M": structure_defect(M, "hamiltonian"),
        "diagonal_mass_M": float(np.max(np.abs(diag_part(M).coef), initial=0.0)),
        "truncation_loss": {"total": total.truncation_loss, "T": T.truncation_loss},
        "series_terms_T": T.meta.get("terms"),
    }
    return RegularizedSystem(Z, M, T - BlockOperator.identity(R.sphere, R.d, R.L_max), A, diagnostics)
