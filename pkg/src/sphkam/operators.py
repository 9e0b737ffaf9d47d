"""Truncated phi-dependent block operators.

An operator A(phi) = sum_l A(l) e^{i l.phi} acting on coefficient sequences
indexed by spherical-harmonic blocks k <= K_max is stored densely: one
``(N, N)`` complex matrix per Fourier mode in the Euclidean ball
``|l| <= L_max``, with N the total truncated dimension.  Block (k, k') of
mode l is the slice ``coef[i, rows_k, cols_k']``.

Products are Galerkin: the block product is exact on the truncated space
and Fourier output modes outside the ball are dropped (their Frobenius mass
is accumulated in ``truncation_loss``).
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.fft import fftn

from .spectral import SphereSpec


class LieSeriesError(RuntimeError):
    """A Lie or exponential series failed to reach its tolerance."""


# ---------------------------------------------------------------- Fourier modes

@dataclass(frozen=True)
class FourierModes:
    """Integer vectors l in Z^d with Euclidean norm <= L_max, sorted."""

    d: int
    L_max: float

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.L_max < 0:
            raise ValueError("L_max must be non-negative")

    @functools.cached_property
    def vectors(self) -> np.ndarray:
        r = int(math.floor(self.L_max + 1e-12))
        axes = [np.arange(-r, r + 1)] * self.d
        grid = np.array(list(itertools.product(*axes)), dtype=int).reshape(-1, self.d)
        keep = np.einsum("ij,ij->i", grid, grid) <= self.L_max ** 2 + 1e-9
        out = grid[keep]
        out.flags.writeable = False
        return out

    @functools.cached_property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=1)

    @functools.cached_property
    def _lookup(self) -> Dict[Tuple[int, ...], int]:
        return {tuple(int(x) for x in v): i for i, v in enumerate(self.vectors)}

    def index_of(self, l) -> Optional[int]:
        return self._lookup.get(tuple(int(x) for x in l))

    @functools.cached_property
    def negation(self) -> np.ndarray:
        """Permutation p with vectors[p[i]] == -vectors[i]."""
        return np.array([self._lookup[tuple(-x for x in v)] for v in self._lookup])

    @property
    def zero(self) -> int:
        return self._lookup[(0,) * self.d]

    @property
    def radius(self) -> int:
        return int(math.floor(self.L_max + 1e-12))

    @functools.cached_property
    def fft_size(self) -> int:
        # products of two operators reach |l_i| <= 2r; 4r+1 points avoid aliasing
        return 4 * self.radius + 1

    @functools.cached_property
    def synthesis(self) -> np.ndarray:
        """(G^d, modes) matrix e^{i l.phi_j} on the uniform grid."""
        G = self.fft_size
        ph = 2 * np.pi * np.arange(G) / G
        pts = np.array(list(itertools.product(ph, repeat=self.d))).reshape(-1, self.d)
        return np.exp(1j * pts @ self.vectors.T)

    @functools.cached_property
    def grid_position(self) -> Tuple[np.ndarray, ...]:
        return tuple((self.vectors % self.fft_size).T)

    @functools.cached_property
    def discarded_position(self) -> Tuple[np.ndarray, ...]:
        """Grid slots of product modes that fall outside the ball."""
        G = self.fft_size
        axes = [np.arange(G)] * self.d
        slots = np.array(list(itertools.product(*axes)), dtype=int).reshape(-1, self.d)
        signed = np.where(slots > G // 2, slots - G, slots)
        out = np.einsum("ij,ij->i", signed, signed) > self.L_max ** 2 + 1e-9
        return tuple(slots[out].T)

    def __len__(self) -> int:
        return len(self.vectors)


def bracket(*parts) -> np.ndarray:
    """<x> := max(1, Euclidean norm of the concatenated arguments)."""
    sq = sum(np.asarray(p, dtype=float) ** 2 for p in parts)
    return np.maximum(1.0, np.sqrt(sq))


# ---------------------------------------------------------------- operators

class BlockOperator:
    """Immutable truncated block operator; see module docstring."""

    def __init__(self, sphere: SphereSpec, modes: FourierModes, coef,
                 truncation_loss: float = 0.0):
        coef = np.array(coef, dtype=complex)
        shape = (len(modes), sphere.size, sphere.size)
        if coef.shape != shape:
            raise ValueError(f"coefficient array has shape {coef.shape}, expected {shape}")
        coef.flags.writeable = False
        self.sphere = sphere
        self.modes = modes
        self.coef = coef
        self.truncation_loss = float(truncation_loss)
        self.meta: dict = {}

    # construction -------------------------------------------------------
    @classmethod
    def zeros(cls, sphere: SphereSpec, d: int, L_max: float) -> "BlockOperator":
        modes = FourierModes(d, L_max)
        return cls(sphere, modes, np.zeros((len(modes), sphere.size, sphere.size)))

    @classmethod
    def diagonal(cls, sphere: SphereSpec, values, d: int = 1, L_max: float = 0) -> "BlockOperator":
        """phi-independent diagonal operator with the given flat diagonal."""
        modes = FourierModes(d, L_max)
        coef = np.zeros((len(modes), sphere.size, sphere.size), dtype=complex)
        coef[modes.zero] = np.diag(np.asarray(values, dtype=complex))
        return cls(sphere, modes, coef)

    @classmethod
    def identity(cls, sphere: SphereSpec, d: int = 1, L_max: float = 0) -> "BlockOperator":
        return cls.diagonal(sphere, np.ones(sphere.size), d, L_max)

    @classmethod
    def from_blocks(cls, sphere: SphereSpec, d: int, L_max: float,
                    blocks: Mapping[Tuple[Tuple[int, ...], int, int], np.ndarray]) -> "BlockOperator":
        modes = FourierModes(d, L_max)
        coef = np.zeros((len(modes), sphere.size, sphere.size), dtype=complex)
        for (l, k, kp), b in blocks.items():
            i = modes.index_of(l)
            if i is None or not (0 <= k <= sphere.K_max and 0 <= kp <= sphere.K_max):
                raise KeyError(f"block {(l, k, kp)} outside truncation")
            b = np.asarray(b, dtype=complex)
            want = (sphere.dims[k], sphere.dims[kp])
            if b.shape != want:
                raise ValueError(f"block {(l, k, kp)} has shape {b.shape}, expected {want}")
            coef[i, sphere.block_slice(k), sphere.block_slice(kp)] = b
        return cls(sphere, modes, coef)

    def _new(self, coef, loss: float = 0.0) -> "BlockOperator":
        return BlockOperator(self.sphere, self.modes, coef, self.truncation_loss + loss)

    # views ----------------------------------------------------------------
    @property
    def d(self) -> int:
        return self.modes.d

    @property
    def K_max(self) -> int:
        return self.sphere.K_max

    @property
    def L_max(self) -> float:
        return self.modes.L_max

    def block(self, l, k: int, kp: int) -> np.ndarray:
        i = self.modes.index_of(l)
        sp = self.sphere
        if i is None:
            return np.zeros((sp.dims[k], sp.dims[kp]), dtype=complex)
        return self.coef[i, sp.block_slice(k), sp.block_slice(kp)].copy()

    def blocks(self, atol: float = 0.0) -> Iterator[Tuple[Tuple[Tuple[int, ...], int, int], np.ndarray]]:
        """Nonzero blocks as ((l, k, k'), matrix)."""
        sp = self.sphere
        for i, l in enumerate(self.modes.vectors):
            if not np.any(np.abs(self.coef[i]) > atol):
                continue
            for k in range(sp.K_max + 1):
                for kp in range(sp.K_max + 1):
                    b = self.coef[i, sp.block_slice(k), sp.block_slice(kp)]
                    if np.any(np.abs(b) > atol):
                        yield (tuple(int(x) for x in l), k, kp), b.copy()

    def evaluate(self, phi) -> np.ndarray:
        """A(phi) as an (N, N) matrix; phi may be complex."""
        phase = np.exp(1j * self.modes.vectors @ np.asarray(phi, dtype=complex).reshape(self.d))
        return np.tensordot(phase, self.coef, axes=(0, 0))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coef), initial=0.0))

    def is_phi_independent(self, tol: float = 0.0) -> bool:
        others = np.delete(self.coef, self.modes.zero, axis=0)
        return float(np.max(np.abs(others), initial=0.0)) <= tol

    def _check_compatible(self, other: "BlockOperator"):
        if not isinstance(other, BlockOperator):
            raise TypeError(f"expected BlockOperator, got {type(other).__name__}")
        if other.sphere != self.sphere or other.modes != self.modes:
            raise ValueError("operators have different truncations: "
                             f"({self.sphere}, {self.modes}) vs ({other.sphere}, {other.modes})")

    # linear structure ------------------------------------------------------
    def __add__(self, other):
        self._check_compatible(other)
        return self._new(self.coef + other.coef, other.truncation_loss)

    def __sub__(self, other):
        self._check_compatible(other)
        return self._new(self.coef - other.coef, other.truncation_loss)

    def __neg__(self):
        return self._new(-self.coef)

    def __mul__(self, scalar):
        if isinstance(scalar, BlockOperator):
            raise TypeError("use @ (compose) for operator products")
        return self._new(complex(scalar) * self.coef)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self._new(self.coef / complex(scalar))

    def __matmul__(self, other):
        return compose(self, other)

    def adjoint(self) -> "BlockOperator":
        """A*(l) = A(-l)^H, the L^2 adjoint of A(phi) for real phi."""
        return self._new(np.conj(np.swapaxes(self.coef[self.modes.negation], 1, 2)))

    def derivative(self, omega) -> "BlockOperator":
        """omega . d/dphi applied to A: mode l scaled by i omega.l."""
        w = self.modes.vectors @ np.asarray(omega, dtype=float).reshape(self.d)
        return self._new(self.coef * (1j * w)[:, None, None])

    def scale_rows(self, values) -> "BlockOperator":
        return self._new(np.asarray(values)[None, :, None] * self.coef)

    def scale_cols(self, values) -> "BlockOperator":
        return self._new(self.coef * np.asarray(values)[None, None, :])

    def restrict(self, K: int, L: float) -> "BlockOperator":
        """Zero every block with k or k' > K or |l| > L (same storage layout)."""
        coef = self.coef.copy()
        coef[self.modes.norms > L + 1e-9] = 0
        cut = self.sphere.block_of > K
        coef[:, cut, :] = 0
        coef[:, :, cut] = 0
        return self._new(coef)

    def embed(self, d: int, L_max: float) -> "BlockOperator":
        """Same operator in another Fourier truncation (modes outside are dropped)."""
        modes = FourierModes(d, L_max)
        if d != self.d:
            if self.is_phi_independent():
                coef = np.zeros((len(modes),) + self.coef.shape[1:], dtype=complex)
                coef[modes.zero] = self.coef[self.modes.zero]
                return BlockOperator(self.sphere, modes, coef, self.truncation_loss)
            raise ValueError("cannot change d of a phi-dependent operator")
        coef = np.zeros((len(modes),) + self.coef.shape[1:], dtype=complex)
        lost = 0.0
        for i, l in enumerate(self.modes.vectors):
            j = modes.index_of(l)
            if j is None:
                lost += float(np.sum(np.abs(self.coef[i]) ** 2))
            else:
                coef[j] = self.coef[i]
        return BlockOperator(self.sphere, modes, coef, self.truncation_loss + math.sqrt(lost))

    def allclose(self, other: "BlockOperator", atol: float = 1e-12) -> bool:
        self._check_compatible(other)
        return bool(np.max(np.abs(self.coef - other.coef), initial=0.0) <= atol)

    def __repr__(self):
        return (f"BlockOperator(n={self.sphere.n}, K_max={self.K_max}, d={self.d}, "
                f"L_max={self.L_max}, max|A|={self.max_abs():.3g})")


# ---------------------------------------------------------------- products

def _to_grid(coef: np.ndarray, modes: FourierModes) -> np.ndarray:
    # only the ball is populated, so a dense synthesis matrix beats a padded FFT
    G, d = modes.fft_size, modes.d
    flat = modes.synthesis @ coef.reshape(len(modes), -1)
    return flat.reshape((G,) * d + coef.shape[1:])


def _from_grid(values: np.ndarray, modes: FourierModes) -> Tuple[np.ndarray, float]:
    full = fftn(values, axes=tuple(range(modes.d)), norm="forward", overwrite_x=True)
    kept = full[modes.grid_position]
    lost = full[modes.discarded_position]
    return kept, float(np.sqrt(np.sum(np.abs(lost) ** 2)))


def compose(A: BlockOperator, B: BlockOperator) -> BlockOperator:
    """Fourier convolution with block products, truncated to |l| <= L_max."""
    A._check_compatible(B)
    if A.is_phi_independent() and B.is_phi_independent():
        coef = np.zeros_like(A.coef)
        z = A.modes.zero
        coef[z] = A.coef[z] @ B.coef[z]
        return BlockOperator(A.sphere, A.modes, coef, A.truncation_loss + B.truncation_loss)
    values = np.matmul(_to_grid(A.coef, A.modes), _to_grid(B.coef, B.modes))
    kept, lost = _from_grid(values, A.modes)
    return BlockOperator(A.sphere, A.modes, kept, A.truncation_loss + B.truncation_loss + lost)


def commutator(A: BlockOperator, B: BlockOperator) -> BlockOperator:
    """[A, B] = AB - BA (no factor i)."""
    return adjoint_action(A)(B)


def adjoint_action(S: BlockOperator) -> Callable[[BlockOperator], BlockOperator]:
    """X -> [S, X], reusing the grid values of S across calls."""
    S_grid = _to_grid(S.coef, S.modes)

    def ad(X: BlockOperator) -> BlockOperator:
        S._check_compatible(X)
        X_grid = _to_grid(X.coef, X.modes)
        kept, lost = _from_grid(S_grid @ X_grid - X_grid @ S_grid, S.modes)
        return BlockOperator(S.sphere, S.modes, kept, S.truncation_loss + X.truncation_loss + lost)

    return ad


def commutator_with_diagonal(A: BlockOperator, diag) -> BlockOperator:
    """[A, diag(v)] computed entrywise: A_ab (v_b - v_a)."""
    v = np.asarray(diag)
    return A._new(A.coef * (v[None, None, :] - v[None, :, None]))


# ---------------------------------------------------------------- norms

@dataclass(frozen=True)
class NormParams:
    """s: Sobolev index, sigma: analyticity width, beta: order, gamma: Lipschitz weight."""

    s: float = 0.0
    sigma: float = 0.0
    beta: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("s must be non-negative")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    def with_(self, **changes) -> "NormParams":
        return replace(self, **changes)


def block_norms(A: BlockOperator, kind: str = "spectral") -> np.ndarray:
    """Array (modes, K+1, K+1) of per-block norms ('spectral' or 'frobenius')."""
    sp = A.sphere
    if kind == "frobenius":
        sq = np.abs(A.coef) ** 2
        starts = sp.offsets[:-1]
        return np.sqrt(np.add.reduceat(np.add.reduceat(sq, starts, axis=1), starts, axis=2))
    if kind != "spectral":
        raise ValueError(f"unknown block norm {kind!r}")
    out = np.zeros((len(A.modes), sp.K_max + 1, sp.K_max + 1))
    live = np.flatnonzero(np.any(A.coef != 0, axis=(1, 2)))
    if live.size == 0:
        return out
    coef = A.coef[live]
    for k in range(sp.K_max + 1):
        rows = coef[:, sp.block_slice(k)]
        for kp in range(sp.K_max + 1):
            B = rows[:, :, sp.block_slice(kp)]
            # largest eigenvalue of the Gram matrix on the smaller side
            G = B.conj().transpose(0, 2, 1) @ B if B.shape[2] <= B.shape[1] else B @ B.conj().transpose(0, 2, 1)
            out[live, k, kp] = np.sqrt(np.maximum(np.linalg.eigvalsh(G)[:, -1], 0.0))
    return out


def offdiagonal_sup(norms: np.ndarray) -> np.ndarray:
    """sup over |k - k'| = h of block norms: (modes, K+1, K+1) -> (modes, K+1)."""
    K1 = norms.shape[1]
    h = np.abs(np.subtract.outer(np.arange(K1), np.arange(K1)))
    return np.stack([norms[:, h == j].max(axis=1) for j in range(K1)], axis=1)


def decay_norm(A: BlockOperator, params: NormParams, kind: str = "spectral") -> float:
    """|A|_{s,sigma}: sqrt(sum_{l,h} <l,h>^{2s} e^{2|l|sigma} sup_{|k-k'|=h} |A_k^k'(l)|^2).

    ``kind='frobenius'`` replaces block spectral norms by Frobenius norms,
    giving a cheap upper bound.
    """
    sup = offdiagonal_sup(block_norms(A, kind))
    h = np.arange(sup.shape[1])
    lnorm = A.modes.norms
    weight = bracket(lnorm[:, None], h[None, :]) ** (2 * params.s) * np.exp(2 * params.sigma * lnorm)[:, None]
    return float(np.sqrt(np.sum(weight * sup ** 2)))


def d_scaling(sphere: SphereSpec, power: float) -> np.ndarray:
    """Flat diagonal of D^power with D = diag(max(lambda_k, 1)^{1/2})."""
    return np.maximum(sphere.flat_eigenvalues, 1.0) ** (power / 2)


def scale_by_D(A: BlockOperator, power: float, side: str) -> BlockOperator:
    """D^power A (side='left') or A D^power (side='right')."""
    if power == 0:
        return A
    f = d_scaling(A.sphere, power)
    if side == "left":
        return A.scale_rows(f)
    if side == "right":
        return A.scale_cols(f)
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def beta_norm(A: BlockOperator, params: NormParams, kind: str = "spectral") -> float:
    """<<A>>_{beta,s,sigma} = |D^{-beta} A|_{s,sigma} + |A D^{-beta}|_{s,sigma}."""
    b = params.beta
    return (decay_norm(scale_by_D(A, -b, "left"), params, kind)
            + decay_norm(scale_by_D(A, -b, "right"), params, kind))


def lipschitz_norm(family: Sequence[Tuple[np.ndarray, BlockOperator]], params: NormParams,
                   kind: str = "decay") -> Tuple[float, bool]:
    """sup-norm over the grid plus gamma times the largest difference quotient.

    Returns (value, complete); ``complete`` is False when the grid has a
    single point and only the sup part could be evaluated.
    """
    norm = {"decay": decay_norm, "beta": beta_norm}[kind]
    sup = max(norm(A, params) for _, A in family)
    if len(family) < 2 or params.gamma == 0:
        return sup, len(family) >= 2
    lip = 0.0
    for (w1, A1), (w2, A2) in itertools.combinations(family, 2):
        dist = float(np.linalg.norm(np.asarray(w1, float) - np.asarray(w2, float)))
        if dist > 0:
            lip = max(lip, norm(A1 - A2, params) / dist)
    return sup + params.gamma * lip, True


def series_norm(A: BlockOperator) -> float:
    """Frobenius mass of all stored coefficients; bounds the unweighted decay norm."""
    return float(np.sqrt(np.sum(np.abs(A.coef) ** 2)))


# ---------------------------------------------------------------- structure

def project_fourier(A: BlockOperator, N: float) -> BlockOperator:
    """Keep Fourier modes with |l| < N."""
    coef = A.coef.copy()
    coef[A.modes.norms >= N] = 0
    return A._new(coef)


def diag_part(A: BlockOperator) -> BlockOperator:
    """Keep only the (l = 0, k = k') blocks."""
    coef = np.zeros_like(A.coef)
    z = A.modes.zero
    same = A.sphere.block_of[:, None] == A.sphere.block_of[None, :]
    coef[z] = np.where(same, A.coef[z], 0)
    return A._new(coef)


def offdiag_mask(sphere: SphereSpec) -> np.ndarray:
    return sphere.block_of[:, None] != sphere.block_of[None, :]


def structure_defect(A: BlockOperator, kind: str) -> float:
    if kind == "hermitian":
        return float(np.max(np.abs(A.coef - A.adjoint().coef), initial=0.0))
    if kind == "hamiltonian":
        return float(np.max(np.abs(A.coef + A.adjoint().coef), initial=0.0))
    if kind == "block_diagonal":
        off = A.coef[:, offdiag_mask(A.sphere)]
        return float(np.max(np.abs(off), initial=0.0))
    if kind == "normal_form":
        rest = A.coef.copy()
        rest[A.modes.zero] = 0
        return max(structure_defect(A, "block_diagonal"), structure_defect(A, "hermitian"),
                   float(np.max(np.abs(rest), initial=0.0)))
    raise ValueError(f"unknown structure kind {kind!r}")


def structure_check(A: BlockOperator, kind: str, tol: float = 1e-12) -> bool:
    """hermitian | hamiltonian | block_diagonal | normal_form, within tol."""
    return structure_defect(A, kind) <= tol


# ---------------------------------------------------------------- series

def lie_exponential(A: BlockOperator, tol: float = 1e-15, p_max: int = 80) -> BlockOperator:
    """e^A = sum_p A^p / p!, stopped when the p-th term drops below tol."""
    result = BlockOperator.identity(A.sphere, A.d, A.L_max)
    if series_norm(A) == 0:
        result.meta["terms"] = 0
        return result
    term = result
    coef = result.coef.copy()
    loss = 0.0
    for p in range(1, p_max + 1):
        term = (term @ A) / p
        coef += term.coef
        loss += term.truncation_loss
        if series_norm(term) < tol:
            out = BlockOperator(A.sphere, A.modes, coef, loss)
            out.meta["terms"] = p
            return out
    raise LieSeriesError(f"exponential series did not reach tol={tol:g} in {p_max} terms "
                         f"(last term {series_norm(term):.3g})")


def lie_series(S: BlockOperator, first: BlockOperator, coeff: Callable[[int], float],
               tol: float, p_max: int) -> Tuple[BlockOperator, int]:
    """sum_{p>=0} coeff(p) ad_S^p(first), stopped relative to the first term."""
    ad = adjoint_action(S)
    ref = series_norm(first)
    total = coeff(0) * first
    if ref == 0 or series_norm(S) == 0:
        return total, 0
    term = first
    for p in range(1, p_max + 1):
        term = ad(term)
        piece = coeff(p) * term
        total = total + piece
        if series_norm(piece) <= tol * ref:
            return total, p
    raise LieSeriesError(f"Lie series did not converge to rtol={tol:g} in {p_max} terms")


def conjugate_operator(omega, Z, M: BlockOperator, S: BlockOperator,
                       tol: float = 1e-15, p_max: int = 80) -> BlockOperator:
    """e^S (omega.d_phi - i(D^2+Z) + M) e^{-S}  -  (omega.d_phi - i D^2).

    Expanded as P + sum_{p>=1} ad_S^{p-1}(Q)/p! with P = -iZ + M and
    Q = [S, -iD^2] - omega.d_phi S + [S, P].
    """
    Zop = as_operator(Z, M)
    P = (-1j) * Zop + M
    if series_norm(S) == 0:
        return P
    Q = (commutator_with_diagonal(S, -1j * S.sphere.flat_eigenvalues)
         - S.derivative(omega) + commutator(S, P))
    series, _ = lie_series(S, Q, lambda p: 1.0 / math.factorial(p + 1), tol, p_max)
    return P + series


# ---------------------------------------------------------------- normal forms

class NormalForm:
    """phi-independent block-diagonal Hermitian operator with cached eigendata.

    ``blocks[k]`` is the Hermitian d_k x d_k block, ``eigenvalues[k]`` its
    ascending spectrum and ``eigenvectors[k]`` the unitary that
    diagonalizes it.
    """

    def __init__(self, sphere: SphereSpec, blocks: Sequence[np.ndarray]):
        if len(blocks) != sphere.K_max + 1:
            raise ValueError("need one block per k")
        self.sphere = sphere
        self.blocks = []
        self.eigenvalues = []
        self.eigenvectors = []
        for k, b in enumerate(blocks):
            b = np.asarray(b, dtype=complex)
            if b.shape != (sphere.dims[k],) * 2:
                raise ValueError(f"block {k} has shape {b.shape}")
            b = 0.5 * (b + b.conj().T)
            mu, U = np.linalg.eigh(b)
            self.blocks.append(b)
            self.eigenvalues.append(mu)
            self.eigenvectors.append(U)

    @classmethod
    def zeros(cls, sphere: SphereSpec) -> "NormalForm":
        return cls(sphere, [np.zeros((m, m)) for m in sphere.dims])

    @classmethod
    def from_operator(cls, Z: BlockOperator, tol: float = 1e-10) -> "NormalForm":
        if not structure_check(Z, "normal_form", tol):
            raise ValueError(f"operator is not a normal form (defect {structure_defect(Z, 'normal_form'):.3g})")
        z = Z.coef[Z.modes.zero]
        sp = Z.sphere
        return cls(sp, [z[sp.block_slice(k), sp.block_slice(k)] for k in range(sp.K_max + 1)])

    def to_operator(self, d: int = 1, L_max: float = 0) -> BlockOperator:
        modes = FourierModes(d, L_max)
        coef = np.zeros((len(modes), self.sphere.size, self.sphere.size), dtype=complex)
        coef[modes.zero] = self.matrix()
        return BlockOperator(self.sphere, modes, coef)

    def matrix(self) -> np.ndarray:
        from scipy.linalg import block_diag
        return block_diag(*self.blocks)

    def unitary(self) -> np.ndarray:
        from scipy.linalg import block_diag
        return block_diag(*self.eigenvectors)

    def flat_eigenvalues(self) -> np.ndarray:
        return np.concatenate(self.eigenvalues)

    def reconstruction_defect(self) -> float:
        return max(float(np.max(np.abs(U @ np.diag(mu) @ U.conj().T - b), initial=0.0))
                   for b, mu, U in zip(self.blocks, self.eigenvalues, self.eigenvectors))

    def __add__(self, other: "NormalForm") -> "NormalForm":
        return NormalForm(self.sphere, [a + b for a, b in zip(self.blocks, other.blocks)])


def as_operator(Z, like: BlockOperator) -> BlockOperator:
    """Normal form or operator, expressed in the truncation of ``like``."""
    if Z is None:
        return BlockOperator.zeros(like.sphere, like.d, like.L_max)
    if isinstance(Z, NormalForm):
        return Z.to_operator(like.d, like.L_max)
    if Z.modes != like.modes:
        return Z.embed(like.d, like.L_max)
    return Z


# ---------------------------------------------------------------- states

class StateVector:
    """Coefficients z_k(l): array (modes, N)."""

    def __init__(self, sphere: SphereSpec, modes: FourierModes, coef):
        coef = np.array(coef, dtype=complex)
        if coef.shape != (len(modes), sphere.size):
            raise ValueError(f"state has shape {coef.shape}, expected {(len(modes), sphere.size)}")
        self.sphere, self.modes, self.coef = sphere, modes, coef

    @classmethod
    def constant(cls, sphere: SphereSpec, vector, d: int = 1, L_max: float = 0) -> "StateVector":
        modes = FourierModes(d, L_max)
        coef = np.zeros((len(modes), sphere.size), dtype=complex)
        coef[modes.zero] = vector
        return cls(sphere, modes, coef)


def apply(A: BlockOperator, z: StateVector) -> StateVector:
    """(Az)_k(l) = sum_p A_k^k'(l - p) z_k'(p), truncated to |l| <= L_max."""
    if z.sphere != A.sphere or z.modes != A.modes:
        raise ValueError("state and operator truncations differ")
    values = np.einsum("...ij,...j->...i", _to_grid(A.coef, A.modes), _to_grid(z.coef, z.modes))
    kept, _ = _from_grid(values, A.modes)
    return StateVector(A.sphere, A.modes, kept)


def sobolev_norm(z: StateVector, params: NormParams) -> float:
    """||z||_{s,sigma}^2 = sum <l,k>^{2s} e^{2|l|sigma} |z_k(l)|^2."""
    sp = z.sphere
    lnorm = z.modes.norms
    block_sq = np.add.reduceat(np.abs(z.coef) ** 2, sp.offsets[:-1], axis=1)
    weight = (bracket(lnorm[:, None], np.arange(sp.K_max + 1)[None, :]) ** (2 * params.s)
              * np.exp(2 * params.sigma * lnorm)[:, None])
    return float(np.sqrt(np.sum(weight * block_sq)))


def hs_norm(u: np.ndarray, sphere: SphereSpec, s: float) -> float:
    """H^s norm of a flat coefficient vector: sum <k>^{2s} |u_k|^2."""
    w = np.maximum(1.0, sphere.block_of.astype(float)) ** (2 * s)
    return float(np.sqrt(np.sum(w * np.abs(u) ** 2)))


# ---------------------------------------------------------------- text dump

def dump_operator(A: BlockOperator, path, atol: float = 0.0):
    """Write header (d, K_max, L_max, n) and records 'l_vec k k' row col re im'."""
    sp = A.sphere
    with open(path, "w") as fh:
        fh.write("# block operator dump v1\n")
        fh.write(f"d {A.d}\nK_max {sp.K_max}\nL_max {A.L_max!r}\nn {sp.n}\n")
        for (l, k, kp), b in A.blocks(atol):
            for r, c in zip(*np.nonzero(np.abs(b) > atol)):
                v = b[r, c]
                fh.write(" ".join(map(str, l)) + f" {k} {kp} {r} {c} {float(v.real)!r} {float(v.imag)!r}\n")


def load_operator(path) -> BlockOperator:
    header: Dict[str, str] = {}
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) == 2 and parts[0] in ("d", "K_max", "L_max", "n"):
                header[parts[0]] = parts[1]
            else:
                records.append(parts)
    missing = {"d", "K_max", "L_max", "n"} - header.keys()
    if missing:
        raise ValueError(f"{path}: header lacks {sorted(missing)}")
    d, K, n = int(header["d"]), int(header["K_max"]), int(header["n"])
    L = float(header["L_max"])
    sphere = SphereSpec(n, K)
    modes = FourierModes(d, L)
    coef = np.zeros((len(modes), sphere.size, sphere.size), dtype=complex)
    for parts in records:
        if len(parts) != d + 6:
            raise ValueError(f"{path}: malformed record {' '.join(parts)}")
        l = tuple(int(x) for x in parts[:d])
        k, kp, r, c = (int(x) for x in parts[d:d + 4])
        i = modes.index_of(l)
        if i is None or not (0 <= r < sphere.dims[k] and 0 <= c < sphere.dims[kp]):
            raise ValueError(f"{path}: record outside truncation: {' '.join(parts)}")
        coef[i, sphere.offsets[k] + r, sphere.offsets[kp] + c] = complex(float(parts[d + 4]), float(parts[d + 5]))
    return BlockOperator(sphere, modes, coef)
