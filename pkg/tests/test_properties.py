"""Randomized inequalities for the lift maps and the moduli."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from svelift.coefficients import ModulusSpec
from svelift.kernel import Kernel
from svelift.lift_grid import discretize, dissipation, integral_map, norms

SETTINGS = settings(max_examples=200, deadline=None)

finite = dict(allow_nan=False, allow_infinity=False)


@st.composite
def instances(draw):
    size = draw(st.integers(1, 12))
    theta = sorted(set(draw(st.lists(st.floats(0.0, 1e6, **finite), min_size=size, max_size=size))))
    weights = draw(st.lists(st.floats(1e-3, 10.0, **finite), min_size=len(theta), max_size=len(theta)))
    eta = draw(st.floats(0.05, 0.5, **finite))
    n = draw(st.integers(1, 3))
    y = np.array(draw(st.lists(st.floats(-1e3, 1e3, **finite), min_size=len(theta) * n,
                               max_size=len(theta) * n))).reshape(len(theta), n)
    m = draw(st.floats(1.0, 1e5, **finite))
    M = m * draw(st.floats(1.0, 1e3, **finite))
    grid = discretize(Kernel.atomic(weights, theta, eta=eta))
    return grid, y, m, M


@SETTINGS
@given(instances())
def test_norm_sandwich(inst):
    grid, y, m, _ = inst
    h, mm, v = norms(grid, y, m)
    r_m = float(grid.kernel.weight.r(m))
    tol = 1e-12 * (mm + 1e-300)
    assert h <= mm + tol
    assert mm <= h / math.sqrt(r_m) + tol
    assert h <= v + tol


@SETTINGS
@given(instances())
def test_integral_map_cauchy_schwarz(inst):
    grid, y, m, _ = inst
    lhs = np.sum(integral_map(grid, y, m) ** 2)
    _, mm, _ = norms(grid, y, m)
    assert lhs <= grid.R_m(m) * mm**2 * (1 + 1e-12) + 1e-300


@SETTINGS
@given(instances())
def test_truncation_gap(inst):
    grid, y, m, M = inst
    lhs = np.sum((integral_map(grid, y, M) - integral_map(grid, y, m)) ** 2)
    rhs = grid.eps_m(m) * dissipation(grid, y, m)
    assert lhs <= rhs * (1 + 1e-10) + 1e-18 * (1 + np.sum(y * y))


moduli = st.one_of(
    st.builds(ModulusSpec.lipschitz, st.floats(0.0, 100.0, **finite)),
    st.builds(ModulusSpec.holder, st.floats(0.05, 1.0, **finite), st.floats(0.0, 10.0, **finite)),
)
args = st.floats(0.0, 1e6, **finite)


@SETTINGS
@given(moduli, args, args)
def test_modulus_monotone_subadditive(spec, s, t):
    lo, hi = min(s, t), max(s, t)
    assert spec.rho(0.0) == 0.0
    assert spec.rho(lo) <= spec.rho(hi) * (1 + 1e-12)
    assert spec.rho(s + t) <= (spec.rho(s) + spec.rho(t)) * (1 + 1e-12)


@SETTINGS
@given(moduli, args, args, st.floats(0.0, 1.0, **finite))
def test_modulus_concave(spec, s, t, lam):
    mid = lam * s + (1 - lam) * t
    assert spec.rho(mid) >= (lam * spec.rho(s) + (1 - lam) * spec.rho(t)) * (1 - 1e-12)


@SETTINGS
@given(st.floats(0.05, 1.0, **finite), st.floats(0.1, 5.0, **finite),
       st.floats(-50, 50, **finite), st.floats(-50, 50, **finite))
def test_holder_modulus_dominates_power(gamma, c, x, z):
    # |φ(x) - φ(z)|^2 <= ρ(|x - z|^2) for φ(x) = c |x|^γ sign(x)
    phi = lambda u: c * math.copysign(abs(u) ** gamma, u)
    spec = ModulusSpec.holder(gamma, c * 2.0 ** (1.0 - gamma))
    assert (phi(x) - phi(z)) ** 2 <= spec.rho((x - z) ** 2) * (1 + 1e-9) + 1e-12
