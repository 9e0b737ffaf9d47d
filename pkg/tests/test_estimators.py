import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sphkam.estimators import KamReducer
from sphkam.evolution import evolve_original
from sphkam.pipeline import assemble_system
from sphkam.spectral import random_potential

OMEGA = [0.7548776662466927, 1.324717957244746]


@pytest.fixture(scope="module")
def potentials():
    rng = np.random.default_rng(1)
    return random_potential(2, 3, 1, rng, odd=True), random_potential(2, 3, 1, rng, odd=True)


@pytest.fixture(scope="module")
def fitted(potentials):
    return KamReducer(K_max=4, L_max=2, tau=20.0).fit(potentials, omega=OMEGA)


def test_params_round_trip_through_clone():
    est = KamReducer(epsilon=5e-4, K_max=5)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin.set_params(gamma=0.1).gamma == 0.1


def test_fit_requires_the_frequency(potentials):
    with pytest.raises(ValueError, match="omega"):
        KamReducer().fit(potentials)


def test_unfitted_transform_raises():
    with pytest.raises(NotFittedError):
        KamReducer().transform(np.zeros(9))


def test_fitted_attributes(fitted):
    assert fitted.status_ == "converged"
    assert fitted.config_.K_max == 4
    assert len(fitted.normal_form_.blocks) == 5
    assert fitted.history_.eps_sequence[-1] < 1e-12


def test_transform_is_unitary_and_invertible(fitted):
    rng = np.random.default_rng(0)
    U = rng.normal(size=(3, 25)) + 1j * rng.normal(size=(3, 25))
    V = fitted.transform(U, t=1.7)
    assert np.allclose(np.linalg.norm(V, axis=1), np.linalg.norm(U, axis=1), rtol=1e-12)
    assert np.allclose(fitted.inverse_transform(V, t=1.7), U, atol=1e-12)
    with pytest.raises(ValueError, match="coefficients"):
        fitted.transform(np.zeros(10))


def test_predict_matches_direct_integration(fitted, potentials):
    cfg = fitted.config_
    system = assemble_system(*potentials, cfg)
    rng = np.random.default_rng(3)
    u0 = rng.normal(size=25) + 1j * rng.normal(size=25)
    u0 /= np.linalg.norm(u0)
    run = evolve_original(u0, OMEGA, system.V_op, system.W_op, cfg.epsilon, 2.0, n_out=5, tol=1e-10)
    pred = fitted.predict(u0, run.times)
    assert pred.shape == (5, 25)
    assert np.max(np.abs(pred - run.states)) < 1e-8
