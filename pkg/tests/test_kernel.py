import math

import numpy as np
import pytest
from scipy import special

from svelift.coefficients import ModulusSpec
from svelift.errors import AssumptionViolation
from svelift.kernel import (
    INF,
    Kernel,
    RegularityWeight,
    assumption_integral,
    check_balance,
    compute_eps_m,
    compute_R_m,
    default_eta,
    eval_kernel,
    eval_r_m,
    fractional_eps_m,
    fractional_R_m,
)

# mpmath (40 digits) tanh-sinh quadrature of the defining integrals in log(θ), frozen
INV_GAMMA_075 = 0.816048939098262981
R1_075_HALF = 1.80063263231421213914  # = 8/(pi sqrt 2)
EPS_075_HALF = {1: 0.48016870195045657043, 10: 0.085387411602361327023, 100: 0.015184267592899777248}
R_075_HALF = {1: 1.8006326323142121391, 10: 3.2020279350885497634, 100: 5.6941003473374164678}


class TestEvalKernel:
    def test_single_zero_node_is_constant(self):
        k = Kernel.atomic([1.0], [0.0])
        for t in (1e-3, 1.0, 50.0):
            assert eval_kernel(k, t) == 1.0

    def test_fractional_at_one(self):
        assert Kernel.fractional(0.75)(1.0) == pytest.approx(INV_GAMMA_075, rel=1e-14)

    def test_atomic_exponential(self):
        assert Kernel.atomic([2.0], [1.0])(math.log(2.0)) == pytest.approx(1.0, rel=1e-15)

    def test_gamma_kernel(self):
        k = Kernel.gamma(0.75, 2.0)
        t = 0.3
        assert k(t) == pytest.approx(math.exp(-2 * t) * t**-0.25 / special.gamma(0.75), rel=1e-13)

    def test_vectorized(self):
        out = Kernel.fractional(0.6)(np.array([0.1, 1.0, 2.0]))
        assert out.shape == (3,)
        assert np.all(np.diff(out) < 0)

    @pytest.mark.parametrize("t", [0.0, -1.0, np.nan])
    def test_rejects_nonpositive(self, t):
        with pytest.raises(ValueError):
            eval_kernel(Kernel.fractional(0.75), t)

    @pytest.mark.parametrize("alpha", [0.4, 0.5, 1.0, 1.2])
    def test_alpha_domain(self, alpha):
        with pytest.raises(ValueError, match=r"alpha must lie in \(1/2,1\)"):
            Kernel.fractional(alpha)

    def test_integral_matches_closed_form(self):
        k = Kernel.fractional(0.75)
        got = k.integral(0.0, 1.0)
        assert got == pytest.approx(1.0 / special.gamma(1.75), rel=1e-13)

    def test_log_kernel_integral_against_quadrature(self):
        k = Kernel.log_counterexample()
        from scipy import integrate

        ref, _ = integrate.quad(lambda s: float(k(s)), 0.5, 1.0, epsrel=1e-10)
        assert float(k.integral(0.5, 1.0)) == pytest.approx(ref, rel=1e-7)


class TestWeight:
    def test_below_level(self):
        assert eval_r_m(RegularityWeight(0.5), 4.0, 1.0) == 1.0

    def test_above_level(self):
        assert eval_r_m(RegularityWeight(0.5), 4.0, 16.0) == pytest.approx(0.5, rel=1e-15)

    def test_identity_weight(self):
        w = RegularityWeight(None)
        assert eval_r_m(w, 3.0, 1e6) == 1.0
        assert w.r(123.0) == 1.0

    def test_unbounded_level(self):
        assert eval_r_m(RegularityWeight(0.5), INF, 1e6) == 1.0

    def test_level_below_one_rejected(self):
        with pytest.raises(ValueError):
            eval_r_m(RegularityWeight(0.5), 0.5, 1.0)

    def test_default_eta(self):
        assert default_eta(0.75) == 0.375
        assert default_eta(0.6) == 0.5


class TestRm:
    def test_atomic_hand_value(self):
        k = Kernel.atomic([1.0, 1.0], [0.0, 9.0], eta=0.5)
        assert compute_R_m(k, 4.0) == pytest.approx(5.0 / 3.0, rel=1e-15)

    def test_fractional_m1(self):
        k = Kernel.fractional(0.75, eta=0.5)
        assert compute_R_m(k, 1.0) == pytest.approx(8.0 / (math.pi * math.sqrt(2.0)), rel=1e-12)
        assert compute_R_m(k, 1.0) == pytest.approx(R1_075_HALF, rel=1e-12)

    @pytest.mark.parametrize("m", [1, 10, 100])
    def test_fractional_golden(self, m):
        k = Kernel.fractional(0.75, eta=0.5)
        assert compute_R_m(k, float(m)) == pytest.approx(R_075_HALF[m], rel=1e-12)
        assert compute_eps_m(k, float(m)) == pytest.approx(EPS_075_HALF[m], rel=1e-12)

    def test_regular_is_total_mass(self):
        k = Kernel.atomic([1.0, 2.0], [0.0, 5.0])
        for m in (1.0, 10.0, 1e6):
            assert compute_R_m(k, m) == 3.0

    def test_regular_eps_is_zero(self):
        k = Kernel.atomic([1.0, 2.0], [0.0, 5.0])
        assert compute_eps_m(k, 7.0) == 0.0

    def test_atomic_inside_level_eps_zero(self):
        k = Kernel.atomic([1.0, 1.0], [1.0, 3.0], eta=0.5)
        assert compute_eps_m(k, 4.0) == 0.0

    def test_closed_forms_far_out(self):
        k = Kernel.fractional(0.75)
        eta = k.weight.eta
        for m in (1e6, 1e20):
            assert compute_R_m(k, m) == pytest.approx(fractional_R_m(0.75, eta, m), rel=1e-9)
            assert compute_eps_m(k, m) == pytest.approx(fractional_eps_m(0.75, eta, m), rel=1e-9)


class TestAssumption:
    def test_counterexample_value(self):
        assert assumption_integral(Kernel.log_counterexample()) == pytest.approx(1.0 / math.log(2.0), abs=1e-6)

    def test_atomic_unit(self):
        assert assumption_integral(Kernel.atomic([1.0], [0.0])) == 1.0

    def test_fractional_finite(self):
        v = assumption_integral(Kernel.fractional(0.75, eta=0.5))
        assert v == pytest.approx(R1_075_HALF, rel=1e-12)

    def test_log_kernel_smaller_eta_diverges(self):
        from svelift.kernel import LogTailMeasure

        with pytest.raises(AssumptionViolation):
            Kernel(LogTailMeasure(), RegularityWeight(0.45))

    def test_fractional_small_eta_diverges(self):
        with pytest.raises(AssumptionViolation):
            Kernel.fractional(0.75, eta=0.2)


class TestBalance:
    def test_holder_passes(self):
        rep = check_balance(Kernel.fractional(0.75), ModulusSpec.holder(0.8))
        assert rep.verdict and rep.analytic_verdict

    def test_holder_fails(self):
        rep = check_balance(Kernel.fractional(0.6), ModulusSpec.holder(0.6))
        assert not rep.verdict and rep.analytic_verdict is False
        assert "liminf" in rep.liminf_name

    @pytest.mark.parametrize("k", [Kernel.fractional(0.6), Kernel.gamma(0.9, 1.0), Kernel.log_counterexample()])
    def test_lipschitz_always_passes(self, k):
        assert check_balance(k, ModulusSpec.lipschitz(3.0)).verdict

    def test_regular_mode(self):
        k = Kernel.atomic([1.0], [2.0])
        assert check_balance(k, ModulusSpec.holder(0.7)).verdict
        rep = check_balance(k, ModulusSpec.holder(0.4))
        assert rep.mode == "regular" and not rep.verdict

    def test_bad_sequence(self):
        with pytest.raises(ValueError):
            check_balance(Kernel.fractional(0.75), ModulusSpec.lipschitz(1.0), [10.0, 1.0, 100.0])
