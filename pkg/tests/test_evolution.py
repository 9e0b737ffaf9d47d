import numpy as np
import pytest

from sphkam.evolution import (CFLError, conjugacy_defect, norm_band_check, evolve_original, evolve_reduced,
                              reduced_propagator)
from sphkam.operators import BlockOperator
from sphkam.spectral import SphereSpec, assemble_multiplication, random_potential
from sphkam.testing import random_normal_form

SP = SphereSpec(2, 3)
OMEGA = np.array([0.7548776662466927, 1.324717957244746])


def _state(seed=0):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=SP.size) + 1j * rng.normal(size=SP.size)
    return u / np.linalg.norm(u)


def _potential(seed=1):
    return assemble_multiplication(random_potential(2, 2, 1, np.random.default_rng(seed)), SP, 2)


def test_free_flow_is_a_phase_per_eigenvalue():
    u0 = _state()
    run = evolve_original(u0, OMEGA, None, None, 0.0, 3.0, sphere=SP, n_out=7)
    expected = np.exp(1j * np.outer(run.times, SP.flat_eigenvalues)) * u0
    assert np.max(np.abs(run.states - expected)) < 1e-12


def test_perturbed_flow_conserves_the_l2_norm():
    run = evolve_original(_state(), OMEGA, _potential(), None, 0.3, 5.0, n_out=11)
    assert np.max(np.abs(run.norms(0.0) - 1)) < 1e-12
    assert run.error_estimate <= 1e-9


@pytest.mark.parametrize("order, lo, hi", [(2, 3.0, 6.0), (4, 10.0, 40.0)])
def test_magnus_integrator_has_its_order(order, lo, hi):
    V = _potential()
    u0 = _state()
    kw = dict(n_out=2, order=order, tol=np.inf, max_refine=0)
    ref = evolve_original(u0, OMEGA, V, None, 0.5, 2.0, dt=0.005, **dict(kw, order=4)).states[-1]
    e1 = np.linalg.norm(evolve_original(u0, OMEGA, V, None, 0.5, 2.0, dt=0.1, **kw).states[-1] - ref)
    e2 = np.linalg.norm(evolve_original(u0, OMEGA, V, None, 0.5, 2.0, dt=0.05, **kw).states[-1] - ref)
    assert lo <= e1 / e2 <= hi


def test_step_is_refined_until_the_estimate_meets_tol():
    run = evolve_original(_state(), OMEGA, _potential(), None, 0.5, 2.0, dt=0.2, n_out=3, tol=1e-10)
    assert run.dt < 0.2
    assert run.error_estimate <= 1e-10
    assert run.meta["converged"]


def test_coarse_step_is_refused():
    with pytest.raises(CFLError):
        evolve_original(_state(), OMEGA, _potential(), None, 0.1, 1.0, dt=1.0)


def test_reduced_flow_preserves_each_block():
    Z = random_normal_form(SP, np.random.default_rng(2), scale=0.1)
    run = evolve_reduced(_state(), Z, 10.0, n_out=21)
    blocks = run.block_norms()
    assert np.max(np.abs(blocks - blocks[0])) < 1e-13
    U = reduced_propagator(Z, SP, run.times[5])
    assert np.allclose(U @ run.states[0], run.states[5], atol=1e-13)


def test_reduced_flow_without_normal_form_is_free():
    u0 = _state()
    run = evolve_reduced(u0, None, 1.0, sphere=SP, n_out=3)
    assert np.allclose(run.states[-1], np.exp(1j * SP.flat_eigenvalues) * u0)


def test_identity_conjugates_free_flows():
    u0 = _state()
    a = evolve_original(u0, OMEGA, None, None, 0.0, 2.0, sphere=SP, n_out=5)
    b = evolve_reduced(u0, None, 2.0, sphere=SP, n_out=5)
    Phi = BlockOperator.identity(SP, 2, 1)
    assert np.max(conjugacy_defect(a, b, Phi, OMEGA)) < 1e-12
    C, ok = norm_band_check(a, 0.0)
    assert C == 0 and ok


def test_mismatched_grids_are_rejected():
    u0 = _state()
    a = evolve_reduced(u0, None, 2.0, sphere=SP, n_out=5)
    b = evolve_reduced(u0, None, 2.0, sphere=SP, n_out=6)
    with pytest.raises(ValueError, match="time grids"):
        conjugacy_defect(a, b, BlockOperator.identity(SP, 2, 1), OMEGA)


def test_csv_lists_requested_sobolev_orders(tmp_path):
    run = evolve_reduced(_state(), None, 1.0, sphere=SP, n_out=4, orders=(0, 1, 2))
    run.to_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "t,H^0,H^1,H^2"
    assert len(lines) == 5
