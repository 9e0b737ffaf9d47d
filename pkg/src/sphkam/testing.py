"""Random instances and a dense reference algebra for property checks."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .operators import BlockOperator, FourierModes, NormalForm, offdiag_mask
from .spectral import SphereSpec


def random_block_operator(sphere: SphereSpec, d: int, L_max: float, rng: np.random.Generator,
                          decay: float = 1.0, scale: float = 1.0, modes_radius: Optional[float] = None
                          ) -> BlockOperator:
    """Gaussian coefficients damped by e^{-decay |l|} <k - k'>^{-2}."""
    modes = FourierModes(d, L_max)
    N = sphere.size
    coef = rng.normal(size=(len(modes), N, N)) + 1j * rng.normal(size=(len(modes), N, N))
    gap = np.abs(sphere.block_of[:, None] - sphere.block_of[None, :])
    coef *= np.exp(-decay * modes.norms)[:, None, None] * (np.maximum(gap, 1.0) ** -2.0)[None]
    if modes_radius is not None:
        coef[modes.norms > modes_radius + 1e-9] = 0
    return BlockOperator(sphere, modes, scale * coef)


def random_hamiltonian(sphere: SphereSpec, d: int, L_max: float, rng: np.random.Generator,
                       **kwargs) -> BlockOperator:
    """M with M(-l)^H = -M(l), i.e. iM Hermitian."""
    X = random_block_operator(sphere, d, L_max, rng, **kwargs)
    return 0.5 * (X - X.adjoint())


def random_hermitian(sphere: SphereSpec, d: int, L_max: float, rng: np.random.Generator,
                     **kwargs) -> BlockOperator:
    X = random_block_operator(sphere, d, L_max, rng, **kwargs)
    return 0.5 * (X + X.adjoint())


def random_diagonal_free(sphere: SphereSpec, d: int, L_max: float, rng: np.random.Generator,
                         **kwargs) -> BlockOperator:
    """Hamiltonian operator with every (k, k) block zero."""
    M = random_hamiltonian(sphere, d, L_max, rng, **kwargs)
    return M._new(M.coef * offdiag_mask(sphere)[None])


def random_normal_form(sphere: SphereSpec, rng: np.random.Generator, scale: float = 1.0,
                       decay: float = 0.0) -> NormalForm:
    """Hermitian blocks of size ~ scale * <k>^{-decay}."""
    blocks = []
    for k, dk in enumerate(sphere.dims):
        X = rng.normal(size=(dk, dk)) + 1j * rng.normal(size=(dk, dk))
        blocks.append(scale * max(1, k) ** -decay * 0.5 * (X + X.conj().T))
    return NormalForm(sphere, blocks)


def random_state(sphere: SphereSpec, d: int, L_max: float, rng: np.random.Generator,
                 decay: float = 1.0) -> np.ndarray:
    modes = FourierModes(d, L_max)
    z = rng.normal(size=(len(modes), sphere.size)) + 1j * rng.normal(size=(len(modes), sphere.size))
    return z * np.exp(-decay * modes.norms)[:, None]


# ---------------------------------------------------------------- dense reference

class DenseFrame:
    """Flattening of phi-dependent operators into Toeplitz matrices.

    Index (p, a) with p in the integer ball of radius ``radius``; an operator
    A acts as A_ab(p - q) on that space.  Column q = 0 of a product of such
    matrices holds the untruncated Fourier coefficients of the product as
    long as every intermediate index stays inside the ball.
    """

    def __init__(self, sphere: SphereSpec, d: int, radius: float):
        self.sphere = sphere
        self.points = FourierModes(d, radius)
        self.N = sphere.size

    @property
    def size(self) -> int:
        return len(self.points) * self.N

    def flatten(self, A: BlockOperator) -> np.ndarray:
        P = self.points.vectors
        N = self.N
        out = np.zeros((len(P), N, len(P), N), dtype=complex)
        for i, p in enumerate(P):
            for j, q in enumerate(P):
                idx = A.modes.index_of(tuple(p - q))
                if idx is not None:
                    out[i, :, j, :] = A.coef[idx]
        return out.reshape(self.size, self.size)

    def derivative(self, omega) -> np.ndarray:
        """omega.d_phi as the diagonal i omega.p."""
        w = 1j * (self.points.vectors @ np.asarray(omega, dtype=float))
        return np.diag(np.repeat(w, self.N))

    def laplacian(self) -> np.ndarray:
        return np.diag(np.tile(self.sphere.flat_eigenvalues.astype(complex), len(self.points)))

    def column_modes(self, X: np.ndarray, modes: FourierModes) -> np.ndarray:
        """Read coefficients C(l), |l| <= L_max, from column q = 0."""
        X = X.reshape(len(self.points), self.N, len(self.points), self.N)
        zero = self.points.zero
        out = np.zeros((len(modes), self.N, self.N), dtype=complex)
        for i, l in enumerate(modes.vectors):
            out[i] = X[self.points.index_of(tuple(l)), :, zero, :]
        return out
