"""End-to-end reduction: assemble, regularize, iterate."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .kam import KamConfig, KamResult, kam_iterate, unitarity_defect
from .operators import BlockOperator, NormalForm, beta_norm, structure_defect
from .regularization import RegularizedSystem, regularize
from .spectral import (PotentialSpec, SphereSpec, assemble_multiplication,
                       unbounded_perturbation)


@dataclass
class AssembledSystem:
    sphere: SphereSpec
    V_op: Optional[BlockOperator]
    W_op: Optional[BlockOperator]
    epsilon: float

    @property
    def hermitian(self) -> BlockOperator:
        ops = [X for X in (self.V_op, self.W_op) if X is not None]
        if not ops:
            raise ValueError("system has no perturbation")
        return ops[0] if len(ops) == 1 else ops[0] + ops[1]

    @property
    def perturbation(self) -> BlockOperator:
        """R = i eps (V + W-part), the Hamiltonian perturbation of omega.d_phi - iD^2."""
        return 1j * self.epsilon * self.hermitian


def assemble_system(V: Optional[PotentialSpec], W: Optional[PotentialSpec], cfg: KamConfig) -> AssembledSystem:
    sphere = SphereSpec(cfg.n, cfg.K_max)
    V_op = assemble_multiplication(V, sphere, cfg.L_max) if V is not None else None
    W_op = unbounded_perturbation(W, cfg.alpha, sphere, cfg.L_max) if W is not None else None
    if V_op is None and W_op is None:
        V_op = BlockOperator.zeros(sphere, cfg.d, cfg.L_max)
    return AssembledSystem(sphere, V_op, W_op, cfg.epsilon)


@dataclass
class ReductionResult:
    omega: np.ndarray
    regularized: RegularizedSystem
    kam: KamResult
    Phi: BlockOperator

    @property
    def Z(self) -> NormalForm:
        return self.kam.Z

    @property
    def status(self) -> str:
        return self.kam.status

    @property
    def history(self):
        return self.kam.history

    def summary(self, cfg: KamConfig) -> dict:
        Zop = self.Z.to_operator(self.Phi.d, self.Phi.L_max)
        ident = BlockOperator.identity(self.Phi.sphere, self.Phi.d, self.Phi.L_max)
        return {
            "status": self.status,
            "Z_beta_norm": beta_norm(Zop, cfg.norm(cfg.sigma / 4)),
            "transform_defect": beta_norm(self.Phi - ident, cfg.norm(cfg.sigma / 4)),
            "unitarity_defect": unitarity_defect(self.Phi),
            "final_remainder": beta_norm(self.kam.M, cfg.norm(cfg.sigma / 4)) / cfg.gamma,
            "hamiltonian_defect": structure_defect(self.kam.M, "hamiltonian"),
        }


def reduce_system(omega, R: BlockOperator, cfg: KamConfig, R_prime: Optional[BlockOperator] = None,
                  regularizer=None) -> ReductionResult:
    """Regularize to a smoothing remainder, then run the KAM iteration from sigma/2."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (cfg.d,):
        raise ValueError(f"omega has shape {omega.shape}, expected ({cfg.d},)")
    kwargs = {} if regularizer is None else {"regularizer": regularizer}
    reg = regularize(omega, R, R_prime, cfg.norm(cfg.sigma), cfg.alpha, cfg.nu,
                     tol=cfg.lie_tol, p_max=cfg.p_max, **kwargs)
    kam = kam_iterate(omega, reg.Z, reg.M, cfg, sigma_0=cfg.sigma / 2)
    return ReductionResult(omega, reg, kam, kam.Phi @ reg.T)


def reduce_potentials(omega, V: Optional[PotentialSpec], W: Optional[PotentialSpec],
                      cfg: KamConfig) -> Tuple[AssembledSystem, ReductionResult]:
    system = assemble_system(V, W, cfg)
    return system, reduce_system(omega, system.perturbation, cfg)
