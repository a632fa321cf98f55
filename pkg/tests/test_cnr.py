import math

import numpy as np
import pytest

from svelift.cnr import (
    ADMISSIBLE_S,
    CouplingConfig,
    CouplingParams,
    build_schedule,
    check_hypotheses,
    coupling_bounds,
    girsanov_energy,
    simulate_coupled,
)
from svelift.coefficients import ModulusSpec, make_pair, mollify
from svelift.errors import BalanceFailure
from svelift.kernel import Kernel, fractional_eps_m, fractional_R_m
from svelift.lift_grid import discretize


@pytest.fixture(scope="module")
def lipschitz_schedule():
    return build_schedule(Kernel.fractional(0.75), ModulusSpec.lipschitz(1.0), ModulusSpec.lipschitz(1.0), k_max=4)


class TestSchedule:
    def test_identity_and_admissibility(self, lipschitz_schedule):
        s = lipschitz_schedule
        assert s.mode == "singular" and len(s.rows) == 4
        for row in s.rows:
            assert row.lam_minus_one * row.delta1 == row.delta3 / 2
            assert row.S <= ADMISSIBLE_S
            assert row.eps <= 1

    def test_S_follows_closed_forms(self, lipschitz_schedule):
        eta = lipschitz_schedule.kernel.weight.eta
        for row in lipschitz_schedule.rows:
            e = fractional_eps_m(0.75, eta, row.m)
            R = fractional_R_m(0.75, eta, row.m)
            assert row.S == pytest.approx(e + R * e, rel=1e-9)

    def test_monotone_rows(self, lipschitz_schedule):
        rows = lipschitz_schedule.rows
        assert all(a.S > b.S for a, b in zip(rows, rows[1:]))
        assert all(a.m < b.m and a.M <= b.M for a, b in zip(rows, rows[1:]))
        assert all(r.M >= r.m for r in rows)

    def test_J_and_lambda(self, lipschitz_schedule):
        for r in lipschitz_schedule.rows:
            assert r.J == pytest.approx(r.S**-0.25, rel=1e-15)
            assert r.lam == 1 + r.lam_minus_one

    def test_refuses_when_balance_fails(self):
        with pytest.raises(BalanceFailure, match="liminf"):
            build_schedule(Kernel.fractional(0.75), ModulusSpec.lipschitz(1.0), ModulusSpec.holder(0.6))

    def test_regular_mode(self):
        k = Kernel.atomic([1.0, 1.0], [0.0, 3.0])
        s = build_schedule(k, ModulusSpec.lipschitz(1.0), ModulusSpec.holder(0.8), k_max=3)
        assert s.mode == "regular" and s.identity_factor == 1.0
        for r in s.rows:
            assert r.m == r.M == 1.0
            assert r.R_m == 2.0
            assert r.lam_minus_one * r.delta1 == r.delta3
            assert r.delta2 == 1.0
        assert all(a.eps > b.eps for a, b in zip(s.rows, s.rows[1:]))

    def test_table(self, lipschitz_schedule):
        tab = lipschitz_schedule.as_table()
        assert tab[0]["k"] == 1 and "delta3" in tab[0]

    def test_argument_checks(self):
        k = Kernel.fractional(0.75)
        with pytest.raises(ValueError):
            build_schedule(k, ModulusSpec.lipschitz(1.0), ModulusSpec.lipschitz(1.0), mode="bogus")
        with pytest.raises(ValueError):
            build_schedule(Kernel.atomic([1.0], [0.0]), ModulusSpec.lipschitz(1.0), ModulusSpec.lipschitz(1.0),
                           mode="singular")


@pytest.fixture(scope="module")
def grid():
    return discretize(Kernel.fractional(0.75), 20, 1e-2, 1e2)


def _params(grid, **kw):
    top = float(grid.theta.max())
    base = dict(m=top, M_bar=top, delta0=1e-6, delta1=1e-9, delta2=1e-3, delta3=0.05, lam=10.0, J=1.0)
    base.update(kw)
    return CouplingParams(**base)


class TestCoupling:
    def test_identical_pairs_never_separate(self, grid):
        pair = make_pair("linear_drift", {"a": -1.0}, "constant_sigma", {"s": 1.0})
        cfg = CouplingConfig(grid, pair, pair, _params(grid), 1.0, 1 / 64, 40, 1)
        ens = simulate_coupled(cfg)
        for r in ens.results:
            assert math.isinf(r.tau) and r.energy == 0.0 and r.control_integral == 0.0
            assert r.in_omega_hat and r.lyapunov_max == 0.0

    def test_tiny_delta3_fires_at_first_difference(self, grid):
        target = make_pair("linear_drift", {"a": -1.0}, "constant_sigma", {"s": 1.0})
        ref = make_pair("linear_drift", {"a": -1.0, "c": 1e-3}, "constant_sigma", {"s": 1.0})
        h = 1 / 64
        cfg = CouplingConfig(grid, target, ref, _params(grid, delta3=1e-300, delta1=1.0, delta2=1.0), 1.0, h, 10, 1)
        for r in simulate_coupled(cfg).results:
            assert r.tau == h and r.tau_event == "delta3"

    def test_energy_cap_and_tv(self, grid):
        target = make_pair("linear_drift", {"a": -1.0}, "sin_sigma", {"c0": 1.0, "a": 0.3})
        ref = mollify(make_pair("linear_drift", {"a": -1.0, "c": 5e-4}, "sin_sigma", {"c0": 1.0, "a": 0.3}), 1e-6)
        cfg = CouplingConfig(grid, target, ref, _params(grid), 1.0, 1 / 256, 100, 3, threads=2)
        ens = simulate_coupled(cfg)
        b = ens.bounds
        assert all(girsanov_energy(r) <= b.energy_cap * (1 + 1e-12) for r in ens.results)
        assert ens.tv_estimate() <= b.tv_bound
        agg = ens.aggregate()
        assert agg["paths"] == 100 and agg["aborted"] == 0
        p, se = ens.violation_rate()
        assert p <= b.control_bound + 3 * se

    def test_thread_count_irrelevant(self, grid):
        target = make_pair("linear_drift", {"a": -1.0}, "sin_sigma", {"c0": 1.0, "a": 0.3})
        ref = make_pair("linear_drift", {"a": -1.0, "c": 1e-3}, "sin_sigma", {"c0": 1.0, "a": 0.3})
        mk = lambda th: CouplingConfig(grid, target, ref, _params(grid), 0.5, 1 / 64, 300, 8, threads=th)
        a, b = simulate_coupled(mk(1)), simulate_coupled(mk(4))
        assert a.results == b.results

    def test_bounds_formula(self, grid):
        pair = make_pair("linear_drift", {"a": -1.0}, "constant_sigma", {"s": 2.0})
        p = _params(grid)
        b = coupling_bounds(CouplingConfig(grid, pair, pair, p, 1.0, 1 / 64, 1, 0))
        assert b.energy_cap == pytest.approx(p.lam**2 * p.delta1 / 4.0, rel=1e-15)
        assert b.tv_bound == pytest.approx(p.lam * math.sqrt(p.delta1) / 4.0, rel=1e-15)
        R = grid.R_m(p.m)
        rho = p.delta1 + grid.eps_m(p.m) * p.delta2  # Lipschitz(1) reference drift modulus
        assert b.control_bound == pytest.approx(324 * p.J * R / p.delta3 * p.delta0, rel=1e-12)
        A = 9 * p.J * ((1 + R) * p.delta0 + math.sqrt(rho) * math.sqrt(p.delta1)) + p.delta3 / 3
        assert b.omega_threshold == pytest.approx(A, rel=1e-12)

    def test_hypotheses(self, grid):
        target = make_pair("linear_drift", {"a": -1.0}, "constant_sigma", {"s": 1.0})
        ref = make_pair("linear_drift", {"a": -1.0, "c": 1e-4}, "constant_sigma", {"s": 1.0})
        rep = check_hypotheses(CouplingConfig(grid, target, ref, _params(grid, delta0=1e-6), 1.0, 0.25, 1, 0))
        assert rep["sup_drift_gap"] == pytest.approx(1e-8)
        assert rep["ok"]

    def test_param_validation(self, grid):
        with pytest.raises(ValueError):
            _params(grid, lam=1.0)
        with pytest.raises(ValueError):
            CouplingParams(5.0, 2.0, 1, 1, 1, 1, 2.0, 1.0)
        pair = make_pair("zero_drift")
        with pytest.raises(ValueError, match="c_ue"):
            CouplingConfig(grid, pair, pair, _params(grid), 1.0, 0.25, 1, 0)
