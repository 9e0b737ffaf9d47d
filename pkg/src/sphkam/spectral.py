"""Spectral data of the Laplace-Beltrami operator on S^n and matrix
elements of multiplicative potentials in the spherical-harmonic basis.

Only eigenvalues and multiplicities are available for general ``n``;
quadrature, Gaunt coefficients and operator assembly need ``n == 2``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np
from scipy.special import roots_legendre, sph_harm_y


def laplace_eigenvalue(k: int, n: int) -> int:
    """Eigenvalue ``k (k + n - 1)`` of minus the Laplacian on S^n."""
    if k < 0 or n < 1:
        raise ValueError("need k >= 0 and n >= 1")
    return k * (k + n - 1)


def block_dimension(k: int, n: int) -> int:
    """Multiplicity of the k-th eigenvalue on S^n.

    This is the number of degree-k harmonic polynomials in n+1 variables,
    ``(2k+n-1) (k+n-2)! / (k! (n-1)!)``; the k = 0 space is the constants.
    """
    if k < 0 or n < 1:
        raise ValueError("need k >= 0 and n >= 1")
    if k == 0:
        return 1
    return (2 * k + n - 1) * math.factorial(k + n - 2) // (
        math.factorial(k) * math.factorial(n - 1))


@dataclass(frozen=True)
class SphereSpec:
    """Truncated eigenspace layout of S^n: blocks k = 0..K_max.

    Flattened coefficient vectors are ordered by k, and within a block by
    ascending m (n = 2) or by position 0..d_k-1 otherwise.
    """

    n: int
    K_max: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if int(self.K_max) != self.K_max or self.K_max < 0:
            raise ValueError(f"K_max must be a non-negative integer, got {self.K_max!r}")

    @functools.cached_property
    def dims(self) -> np.ndarray:
        return np.array([block_dimension(k, self.n) for k in range(self.K_max + 1)])

    @functools.cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)])

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    @functools.cached_property
    def eigenvalues(self) -> np.ndarray:
        """lambda_k for k = 0..K_max (float array)."""
        return np.array([laplace_eigenvalue(k, self.n)
                         for k in range(self.K_max + 1)], dtype=float)

    @functools.cached_property
    def block_of(self) -> np.ndarray:
        """Block label k of every flat index."""
        return np.repeat(np.arange(self.K_max + 1), self.dims)

    @functools.cached_property
    def flat_eigenvalues(self) -> np.ndarray:
        return self.eigenvalues[self.block_of]

    @functools.cached_property
    def m_values(self) -> np.ndarray:
        """Order m of every flat index (n = 2 only)."""
        self.require_two_sphere()
        return np.concatenate([np.arange(-k, k + 1) for k in range(self.K_max + 1)])

    def block_slice(self, k: int) -> slice:
        return slice(int(self.offsets[k]), int(self.offsets[k + 1]))

    def flat_index(self, k: int, m: int) -> int:
        """Position of harmonic (k, m) in the flattened basis (n = 2)."""
        self.require_two_sphere()
        if not (0 <= k <= self.K_max and -k <= m <= k):
            raise IndexError(f"harmonic ({k}, {m}) outside truncation K_max={self.K_max}")
        return int(self.offsets[k]) + m + k

    def require_two_sphere(self):
        if self.n != 2:
            raise ValueError("quadrature and matrix elements are implemented for n = 2 only")

    @functools.cached_property
    def padded_index(self) -> np.ndarray:
        """(K_max+1, max d_k) flat indices, padded with ``size`` (a dummy slot)."""
        width = int(self.dims.max())
        idx = np.full((self.K_max + 1, width), self.size, dtype=int)
        for k in range(self.K_max + 1):
            idx[k, : self.dims[k]] = np.arange(self.offsets[k], self.offsets[k + 1])
        return idx


@dataclass(frozen=True)
class HarmonicIndex:
    k: int
    m: int

    def __post_init__(self):
        if self.k < 0 or abs(self.m) > self.k:
            raise ValueError(f"invalid harmonic index ({self.k}, {self.m})")


def _as_index(h) -> HarmonicIndex:
    return h if isinstance(h, HarmonicIndex) else HarmonicIndex(*h)


# ---------------------------------------------------------------- quadrature

@functools.lru_cache(maxsize=32)
def sphere_quadrature(degree: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Product rule on S^2 exact for band-limited integrands of total degree
    ``degree``: Gauss-Legendre in cos(theta) times a uniform azimuthal grid.

    Returns flattened (theta, phi, weights).
    """
    n_theta = degree // 2 + 1
    n_phi = degree + 1
    x, w = roots_legendre(n_theta)
    theta = np.arccos(x)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    wt = np.outer(w, np.full(n_phi, 2 * np.pi / n_phi))
    return th.ravel(), ph.ravel(), wt.ravel()


@functools.lru_cache(maxsize=32)
def harmonics_on_grid(k_max: int, degree: int) -> np.ndarray:
    """All Y_k^m, k <= k_max, sampled on ``sphere_quadrature(degree)``.

    Rows follow the flattened (k, m ascending) order. Read-only.
    """
    theta, phi, _ = sphere_quadrature(degree)
    rows = [sph_harm_y(k, m, theta, phi)
            for k in range(k_max + 1) for m in range(-k, k + 1)]
    out = np.array(rows)
    out.flags.writeable = False
    return out


def gaunt_coefficient(a, b, c) -> complex:
    """Triple product ``int Y_a Y_b conj(Y_c) dOmega`` by exact quadrature."""
    a, b, c = _as_index(a), _as_index(b), _as_index(c)
    kmax = max(a.k, b.k, c.k)
    degree = max(a.k + b.k + c.k, 1)
    Y = harmonics_on_grid(kmax, degree)
    _, _, w = sphere_quadrature(degree)
    pos = lambda h: h.k * h.k + h.m + h.k
    return complex(np.sum(w * Y[pos(a)] * Y[pos(b)] * np.conj(Y[pos(c)])))


# ---------------------------------------------------------------- potentials

Key = Tuple[Tuple[int, ...], int, int]


@dataclass(frozen=True)
class PotentialSpec:
    """Finite expansion V(phi, x) = sum c(l,k,m) e^{i l.phi} Y_k^m(x).

    ``coefficients`` maps (l, k, m) to a complex amplitude, with l a length-d
    integer tuple. The expansion must describe a real function.
    """

    d: int
    coefficients: Mapping[Key, complex] = field(default_factory=dict)
    odd: bool = False

    def __post_init__(self):
        clean: Dict[Key, complex] = {}
        for (l, k, m), c in self.coefficients.items():
            l = tuple(int(x) for x in l)
            if len(l) != self.d:
                raise ValueError(f"mode {l} does not have length d={self.d}")
            if k < 0 or abs(m) > k:
                raise ValueError(f"invalid harmonic ({k}, {m})")
            if self.odd and k % 2 == 0 and c != 0:
                raise ValueError(f"odd potential has a coefficient at even k={k}")
            if c != 0:
                clean[(l, int(k), int(m))] = complex(c)
        object.__setattr__(self, "coefficients", clean)

    @property
    def k_pot(self) -> int:
        return max((k for _, k, _ in self.coefficients), default=0)

    @property
    def l_pot(self) -> float:
        return max((float(np.linalg.norm(l)) for l, _, _ in self.coefficients), default=0.0)

    def reality_defect(self) -> float:
        """max |c(-l,k,-m) - (-1)^m conj c(l,k,m)|; zero for real potentials."""
        worst = 0.0
        for (l, k, m), c in self.coefficients.items():
            partner = self.coefficients.get((tuple(-x for x in l), k, -m), 0.0)
            worst = max(worst, abs(partner - (-1) ** m * np.conj(c)))
        return worst

    def is_real(self, tol: float = 1e-12) -> bool:
        return self.reality_defect() <= tol

    def scaled(self, factor: float) -> "PotentialSpec":
        return PotentialSpec(self.d, {key: factor * c for key, c in self.coefficients.items()},
                             self.odd)

    def multiply(self, other: "PotentialSpec") -> "PotentialSpec":
        """Coefficients of the pointwise product, via Gaunt coefficients."""
        if other.d != self.d:
            raise ValueError("frequency dimensions differ")
        out: Dict[Key, complex] = {}
        for (l1, k1, m1), c1 in self.coefficients.items():
            for (l2, k2, m2), c2 in other.coefficients.items():
                l = tuple(x + y for x, y in zip(l1, l2))
                m = m1 + m2
                for k in range(abs(k1 - k2), k1 + k2 + 1):
                    if abs(m) > k or (k1 + k2 + k) % 2:
                        continue
                    g = gaunt_coefficient((k1, m1), (k2, m2), (k, m))
                    out[(l, k, m)] = out.get((l, k, m), 0) + c1 * c2 * g
        return PotentialSpec(self.d, {key: c for key, c in out.items() if abs(c) > 1e-15})

    # file format: one record per line "l_1 ... l_d k m re im", '#' comments
    @classmethod
    def from_file(cls, path, d: int | None = None, odd: bool = False) -> "PotentialSpec":
        records = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if d is None:
                    d = len(parts) - 4
                if len(parts) != d + 4:
                    raise ValueError(f"{path}:{lineno}: expected {d + 4} fields, got {len(parts)}")
                l = tuple(int(x) for x in parts[:d])
                k, m = int(parts[d]), int(parts[d + 1])
                records.append(((l, k, m), complex(float(parts[d + 2]), float(parts[d + 3]))))
        if d is None:
            raise ValueError(f"{path}: no records and no d given")
        coeffs: Dict[Key, complex] = {}
        for key, c in records:
            coeffs[key] = coeffs.get(key, 0) + c
        return cls(d, coeffs, odd)

    def to_file(self, path, header: str = ""):
        with open(path, "w") as fh:
            if header:
                for hl in header.splitlines():
                    fh.write(f"# {hl}\n")
            fh.write("# " + " ".join(f"l{i + 1}" for i in range(self.d)) + " k m re im\n")
            for (l, k, m), c in sorted(self.coefficients.items()):
                fh.write(" ".join(map(str, l)) + f" {k} {m} {c.real!r} {c.imag!r}\n")


def random_potential(d: int, k_pot: int, l_pot: int, rng: np.random.Generator,
                     odd: bool = False, amplitude: float = 1.0) -> PotentialSpec:
    """Random real potential with modes |l| <= l_pot (Euclidean) and k <= k_pot."""
    grid = np.array(np.meshgrid(*[np.arange(-l_pot, l_pot + 1)] * d, indexing="ij")).reshape(d, -1).T
    modes = [tuple(int(x) for x in l) for l in grid if np.linalg.norm(l) <= l_pot]
    coeffs: Dict[Key, complex] = {}
    for l in modes:
        for k in range(k_pot + 1):
            if odd and k % 2 == 0:
                continue
            for m in range(-k, k + 1):
                key = (l, k, m)
                partner = (tuple(-x for x in l), k, -m)
                if partner in coeffs:
                    coeffs[key] = (-1) ** m * np.conj(coeffs[partner])
                    continue
                c = amplitude * (rng.normal() + 1j * rng.normal()) / np.sqrt(2)
                if partner == key:   # self-conjugate slot: l = 0, m = 0
                    c = amplitude * rng.normal()
                coeffs[key] = c
    return PotentialSpec(d, coeffs, odd)


# ---------------------------------------------------------------- assembly

def assemble_multiplication(V: PotentialSpec, spec: SphereSpec, L_max: float):
    """Block matrix of multiplication by V on the truncated harmonic basis.

    Entry ((k,m),(k',m')) at Fourier mode l is
    ``sum_c c(l,kp,mp) int Y_kp^mp Y_k'^m' conj(Y_k^m)``.
    """
    from .operators import BlockOperator, FourierModes

    spec.require_two_sphere()
    if not V.is_real():
        raise ValueError(f"potential is not real-valued (reality defect {V.reality_defect():.3g})")
    modes = FourierModes(V.d, L_max)
    degree = max(2 * spec.K_max + V.k_pot, 1)
    kY = max(spec.K_max, V.k_pot)
    Y = harmonics_on_grid(kY, degree)
    _, _, w = sphere_quadrature(degree)
    Ybasis = Y[: spec.size]
    coef = np.zeros((len(modes), spec.size, spec.size), dtype=complex)
    by_mode: Dict[Tuple[int, ...], list] = {}
    for (l, k, m), c in V.coefficients.items():
        by_mode.setdefault(l, []).append((k * k + m + k, c))
    for l, entries in by_mode.items():
        i = modes.index_of(l)
        if i is None:
            continue
        rows, amps = zip(*entries)
        values = np.asarray(amps) @ Y[list(rows)]
        coef[i] = (np.conj(Ybasis) * (w * values)) @ Ybasis.T
    return BlockOperator(spec, modes, coef)


def assemble_angular_power(alpha: float, spec: SphereSpec, d: int = 1, L_max: float = 0):
    """The operator (-i d/dphi)^alpha: diagonal with entries sign(m)|m|^alpha."""
    from .operators import BlockOperator

    if not 0 <= alpha < 0.5:
        raise ValueError(f"alpha must lie in [0, 1/2), got {alpha}")
    spec.require_two_sphere()
    m = spec.m_values
    return BlockOperator.diagonal(spec, np.sign(m) * np.abs(m) ** alpha, d=d, L_max=L_max)


def unbounded_perturbation(W: PotentialSpec, alpha: float, spec: SphereSpec, L_max: float,
                           symmetrize: bool = True):
    """W (-i d/dphi)^alpha as a block operator.

    The bare composition is not self-adjoint unless W is axially symmetric;
    with ``symmetrize`` the Hermitian part (W P + P W)/2 is returned, which
    coincides with W P whenever the two commute.
    """
    Wop = assemble_multiplication(W, spec, L_max)
    P = assemble_angular_power(alpha, spec, d=W.d, L_max=L_max)
    WP = Wop @ P
    if not symmetrize:
        return WP
    return 0.5 * (WP + P @ Wop)


def separation_holds(K: int, n: int = 2) -> bool:
    """Exact integer check of |lambda_k - lambda_k'| >= k + k' for k != k' <= K."""
    lam = [laplace_eigenvalue(k, n) for k in range(K + 1)]
    return all(abs(lam[a] - lam[b]) >= a + b
               for a in range(K + 1) for b in range(K + 1) if a != b)


def parity_defect(k_max: int, degree: int | None = None) -> float:
    """max |Y(-x) - (-1)^k Y(x)| over the quadrature grid."""
    degree = degree or max(2 * k_max, 1)
    theta, phi, _ = sphere_quadrature(degree)
    worst = 0.0
    for k in range(k_max + 1):
        for m in range(-k, k + 1):
            y = sph_harm_y(k, m, theta, phi)
            y_anti = sph_harm_y(k, m, np.pi - theta, phi + np.pi)
            worst = max(worst, float(np.max(np.abs(y_anti - (-1) ** k * y))))
    return worst


def gram_defect(k_max: int) -> float:
    """max |G - I| for the quadrature Gram matrix of all harmonics up to k_max."""
    degree = max(2 * k_max, 1)
    Y = harmonics_on_grid(k_max, degree)
    _, _, w = sphere_quadrature(degree)
    G = (np.conj(Y) * w) @ Y.T
    return float(np.max(np.abs(G - np.eye(len(Y)))))


def iter_harmonics(k_max: int) -> Iterable[HarmonicIndex]:
    for k in range(k_max + 1):
        for m in range(-k, k + 1):
            yield HarmonicIndex(k, m)
