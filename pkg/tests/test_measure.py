import numpy as np
import pytest

from sphkam.measure import (estimate_excised_measure, measure_exponent, sublevel_check, wilson_interval)
from sphkam.operators import FourierModes
from sphkam.testing import random_normal_form
from sphkam.spectral import SphereSpec


def _excised_length(gamma, tau, K, k_max, box=(0.5, 1.5)):
    """Exact length of {omega in box : min |omega l + k^2 - k'^2| < 2 gamma / K^tau} on S^1, d = 1."""
    theta = 2 * gamma / max(K, 1) ** tau
    intervals = []
    for (l,) in FourierModes(1, K).vectors:
        for k in range(k_max + 1):
            for kp in range(k_max + 1):
                c = k * k - kp * kp
                if l == 0:
                    assert k == kp or abs(c) >= theta
                    continue
                centre = -c / l
                half = theta / abs(l)
                intervals.append((max(box[0], centre - half), min(box[1], centre + half)))
    intervals = sorted(iv for iv in intervals if iv[1] > iv[0])
    total, end = 0.0, -np.inf
    for a, b in intervals:
        a = max(a, end)
        if b > a:
            total += b - a
            end = b
    return total


@pytest.mark.parametrize("gamma, tau, K", [(0.01, 3.5, 1), (0.05, 1.0, 2), (0.05, 0.5, 3)])
def test_fraction_matches_exact_interval_length(gamma, tau, K):
    rep = estimate_excised_measure(None, gamma, tau, K, 1, n=1, N_samples=20000, seed=3)
    exact = _excised_length(gamma, tau, K, rep.k_scan)
    sd = np.sqrt(exact * (1 - exact) / rep.sampled_count)
    assert abs(rep.excised_fraction - exact) <= 4 * sd + 1e-12
    assert rep.ci[0] <= rep.excised_fraction <= rep.ci[1]


def test_single_resonance_has_width_four_gamma():
    # only omega = lambda_1 - lambda_0 = 1 is reachable at K = 1
    assert _excised_length(0.01, 3.5, 1, 10) == pytest.approx(0.04)


def test_doubling_gamma_doubles_the_fraction():
    small = estimate_excised_measure(None, 0.01, 3.5, 1, 1, n=1, N_samples=20000, seed=5, keep_samples=True)
    big = estimate_excised_measure(None, 0.02, 3.5, 1, 1, n=1, N_samples=20000, seed=5, keep_samples=True)
    # same samples: the excised sets are nested
    assert np.all((small.margins < 0) <= (big.margins < 0))
    assert big.excised_fraction / small.excised_fraction == pytest.approx(2.0, rel=0.15)


def test_vanishing_gamma_excises_nothing():
    rep = estimate_excised_measure(None, 1e-12, 3.5, 2, 2, n=2, N_samples=2000, seed=0)
    assert rep.excised_count == 0


def test_large_normal_form_is_refused():
    Z = random_normal_form(SphereSpec(2, 3), np.random.default_rng(0), scale=1.0)
    with pytest.raises(ValueError, match="gamma/4"):
        estimate_excised_measure(Z, 0.05, 20, 1, 2)


def test_measure_exponent_values():
    assert measure_exponent(3.5, 1, 1, 1.0) == pytest.approx(-1.5)
    assert measure_exponent(20, 2, 2, 0.4) == pytest.approx(-20 + 2 + 15 + 1)


def test_csv_has_one_row_per_sample(tmp_path):
    rep = estimate_excised_measure(None, 0.05, 3.5, 2, 2, n=2, N_samples=50, seed=1, keep_samples=True)
    rep.to_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert len(lines) == 51
    assert lines[0].startswith("omega_1,omega_2,excised,margin")


def test_wilson_interval_contains_the_estimate():
    lo, hi = wilson_interval(10, 1000)
    assert lo < 0.01 < hi
    assert wilson_interval(0, 100)[0] == 0


# sublevel sets of lower-Lipschitz functions

def test_linear_function_passes():
    x = np.linspace(-1, 1, 2001)
    v = sublevel_check(x, 3 * x, a=3.0, eta=0.3)
    assert v.passed
    assert v.fraction == pytest.approx(0.1, abs=1e-3)


def test_function_away_from_zero_passes_without_lipschitz_bound():
    x = np.linspace(0, 1, 101)
    assert sublevel_check(x, np.ones_like(x), a=1.0, eta=0.5).passed


def test_flat_critical_point_is_inconclusive():
    x = np.linspace(-1, 1, 1001)
    assert sublevel_check(x, x ** 3, a=1.0, eta=0.01).status == "inconclusive"


def test_non_monotone_function_is_inconclusive():
    x = np.linspace(0, 4, 4001)
    saw = np.abs(((x + 0.5) % 1.0) - 0.5) * 2 - 0.5
    assert sublevel_check(x, saw, a=1.0, eta=0.05).status == "inconclusive"


def test_malformed_grids_are_rejected():
    with pytest.raises(ValueError):
        sublevel_check([0.0, 0.0, 1.0], [0.0, 1.0, 2.0], 1.0, 0.1)
    with pytest.raises(ValueError):
        sublevel_check([0.0], [0.0], 1.0, 0.1)
