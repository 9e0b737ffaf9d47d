"""scikit-learn style wrapper around the reduction pipeline.

``fit`` learns the normal form and the change of variables for one
frequency vector; ``transform`` maps states into the reduced frame and
``predict`` propagates initial states through the reduced flow.
"""
from __future__ import annotations

from typing import Optional, Tuple, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .evolution import reduced_propagator
from .kam import KamConfig
from .operators import BlockOperator
from .pipeline import reduce_system
from .spectral import PotentialSpec, SphereSpec, assemble_multiplication, unbounded_perturbation

SystemInput = Union[BlockOperator, Tuple[Optional[PotentialSpec], Optional[PotentialSpec]]]


class KamReducer(TransformerMixin, BaseEstimator):
    """Reduce a quasi-periodic perturbation of the sphere Laplacian to a normal form.

    Parameters mirror ``KamConfig``; ``nu`` and ``tau`` default to the
    smallest admissible choices.

    Attributes
    ----------
    config_ : KamConfig
    omega_ : (d,) frequency vector used in ``fit``
    normal_form_ : NormalForm, the limit Z
    transform_ : BlockOperator, Phi(phi) taking original to reduced coordinates
    history_ : KamHistory
    status_ : 'converged', 'excised' or 'not_converged'
    """

    def __init__(self, n: int = 2, d: int = 2, s: float = 2.5, sigma: float = 0.5, alpha: float = 0.3,
                 gamma: float = 0.05, nu: Optional[float] = None, tau: Optional[float] = None,
                 K_0: int = 1, K_max: int = 8, L_max: float = 4, epsilon: float = 1e-3,
                 max_steps: int = 6, stop_tol: float = 1e-12):
        self.n = n
        self.d = d
        self.s = s
        self.sigma = sigma
        self.alpha = alpha
        self.gamma = gamma
        self.nu = nu
        self.tau = tau
        self.K_0 = K_0
        self.K_max = K_max
        self.L_max = L_max
        self.epsilon = epsilon
        self.max_steps = max_steps
        self.stop_tol = stop_tol

    def _config(self) -> KamConfig:
        return KamConfig(**self.get_params())

    def _perturbation(self, X: SystemInput, cfg: KamConfig) -> BlockOperator:
        if isinstance(X, BlockOperator):
            return X
        V, W = X
        sp = SphereSpec(cfg.n, cfg.K_max)
        H = BlockOperator.zeros(sp, cfg.d, cfg.L_max)
        if V is not None:
            H = H + assemble_multiplication(V, sp, cfg.L_max)
        if W is not None:
            H = H + unbounded_perturbation(W, cfg.alpha, sp, cfg.L_max)
        return 1j * cfg.epsilon * H

    def fit(self, X: SystemInput, y=None, omega=None):
        """X is a Hamiltonian perturbation R or a pair (V, W) of potentials."""
        if omega is None:
            raise ValueError("fit needs the frequency vector: fit(X, omega=...)")
        cfg = self._config()
        result = reduce_system(np.asarray(omega, dtype=float), self._perturbation(X, cfg), cfg)
        self.config_ = cfg
        self.omega_ = result.omega
        self.result_ = result
        self.normal_form_ = result.Z
        self.transform_ = result.Phi
        self.history_ = result.history
        self.status_ = result.status
        self.sphere_ = result.Phi.sphere
        return self

    def _states(self, U) -> Tuple[np.ndarray, bool]:
        U = np.asarray(U, dtype=complex)
        single = U.ndim == 1
        U = np.atleast_2d(U)
        if U.shape[1] != self.sphere_.size:
            raise ValueError(f"states have {U.shape[1]} coefficients, expected {self.sphere_.size}")
        return U, single

    def _frame(self, t: float) -> np.ndarray:
        return self.transform_.evaluate(self.omega_ * t)

    def transform(self, U, t: float = 0.0):
        """v = Phi(omega t) u for each row u of U."""
        check_is_fitted(self, "transform_")
        U, single = self._states(U)
        out = U @ self._frame(t).T
        return out[0] if single else out

    def inverse_transform(self, V, t: float = 0.0):
        check_is_fitted(self, "transform_")
        V, single = self._states(V)
        out = V @ self._frame(t).conj()
        return out[0] if single else out

    def predict(self, U0, times):
        """States u(t) at ``times``, obtained through the reduced flow.

        Returns an array (len(times), N) for a single state, else
        (n_states, len(times), N).
        """
        check_is_fitted(self, "transform_")
        U0, single = self._states(U0)
        V0 = self.transform(U0, 0.0)
        out = np.empty((U0.shape[0], len(times), U0.shape[1]), dtype=complex)
        for j, t in enumerate(np.asarray(times, dtype=float)):
            prop = reduced_propagator(self.normal_form_, self.sphere_, t)
            out[:, j] = self.inverse_transform(V0 @ prop.T, t)
        return out[0] if single else out
