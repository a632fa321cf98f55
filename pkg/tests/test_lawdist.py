import math

import numpy as np
import pytest
from scipy import stats

from svelift.coefficients import make_pair
from svelift.kernel import Kernel
from svelift.lawdist import (
    energy_distance_paths,
    energy_permutation_test,
    ks_critical,
    marginal_distance,
    wasserstein_1d,
)
from svelift.lift_grid import discretize
from svelift.see_sim import PathEnsemble, SimulationConfig, simulate
from svelift.volterra_sim import simulate_direct


def _ens(x, label="e"):
    x = np.asarray(x, dtype=float)
    X = np.stack([np.zeros_like(x), x], axis=1)[..., None]
    return PathEnsemble(np.array([0.0, 1.0]), X, np.arange(x.size), label=label)


def test_ks_critical_formula():
    assert ks_critical(10_000, 10_000) == pytest.approx(1.6276 * math.sqrt(2e-4), rel=1e-3)


def test_identical_ensembles():
    x = np.random.default_rng(0).normal(size=500)
    rep = marginal_distance(_ens(x), _ens(x), 1.0)
    assert rep.ks == 0.0 and rep.wasserstein == 0.0


def test_shift_oracle():
    rng = np.random.default_rng(1)
    n = 20_000
    rep = marginal_distance(_ens(rng.normal(size=n)), _ens(rng.normal(0.5, 1.0, size=n)), 1.0)
    assert rep.wasserstein == pytest.approx(0.5, abs=4 * math.sqrt(2.0 / n))
    assert rep.ks > rep.ks_critical


def test_wasserstein_unequal_sizes():
    assert wasserstein_1d([0.0, 1.0], [0.5]) == pytest.approx(0.5)
    assert wasserstein_1d([0.0, 0.0, 3.0], [0.0, 3.0]) == pytest.approx(0.5)
    rng = np.random.default_rng(7)
    a, b = rng.normal(size=301), rng.exponential(size=157)
    assert wasserstein_1d(a, b) == pytest.approx(stats.wasserstein_distance(a, b), rel=1e-12)


def test_too_few_samples():
    with pytest.raises(ValueError):
        marginal_distance(_ens(np.zeros(10)), _ens(np.zeros(10)), 1.0)


def test_time_off_grid():
    with pytest.raises(ValueError):
        marginal_distance(_ens(np.zeros(200)), _ens(np.zeros(200)), 0.5)


def test_energy_identical_zero():
    X = np.random.default_rng(2).normal(size=(50, 8))
    assert energy_distance_paths(X, X) == pytest.approx(0.0, abs=1e-12)


def test_permutation_same_law():
    rng = np.random.default_rng(3)
    rep = energy_permutation_test(rng.normal(size=(150, 6)), rng.normal(size=(150, 6)), seed=4)
    assert rep.statistic <= rep.null_quantile_95 or rep.pvalue > 0.05


def test_permutation_detects_shift():
    rng = np.random.default_rng(5)
    rep = energy_permutation_test(rng.normal(size=(150, 6)), rng.normal(0.5, 1, size=(150, 6)), seed=4)
    assert rep.pvalue <= 0.01


def test_lift_vs_direct_same_kernel_not_rejected():
    grid = discretize(Kernel.fractional(0.75), 40)
    pair = make_pair("linear_drift", {"a": -1.0}, "sin_sigma", {"c0": 1.0, "a": 0.3})
    h = 1 / 32
    a = simulate(SimulationConfig(grid, pair, 1.0, h, 200, 1))
    b = simulate_direct(grid, pair, None, 1.0, h, 2, 200, drift_rule="cell")
    rep = energy_permutation_test(a, b, seed=0)
    assert rep.pvalue > 0.05
