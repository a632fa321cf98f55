"""Direct convolution scheme for the Volterra equation and the non-uniqueness example.

The scheme is

    X_i = x(t_i) + Σ_{l<i} [c_{i-l} b(X_l) + a_{i-l} σ(X_l) ΔW_l],

with ``a_k = K(kh)`` and drift weights ``c_k = h a_k`` (``"point"``) or
``c_k = ∫_{(k-1)h}^{kh} K`` (``"cell"``).  The kernel is never evaluated at 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .coefficients import CoefficientPair, make_pair
from .errors import SimulationAbort
from .kernel import Kernel
from .lift_grid import LiftGrid, discretize
from .rng import brownian_increments, map_blocks
from .see_sim import Drivers, PathEnsemble, SimulationConfig, _merge, constant_state, grid_steps, simulate

MAX_STEPS = 2**14


def _weights(kernel, h: float, S: int, drift_rule: str) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(1, S + 1) * h
    if isinstance(kernel, LiftGrid):
        a = kernel.K_N(k)
        cell = lambda: kernel.cell_integral(k - h, k)
    elif isinstance(kernel, Kernel):
        a = np.asarray(kernel(k), dtype=float)
        cell = lambda: np.asarray(kernel.integral(k - h, k), dtype=float)
    else:
        raise TypeError("kernel must be a Kernel or a LiftGrid")
    if drift_rule == "point":
        c = h * a
    elif drift_rule == "cell":
        c = cell()
    else:
        raise ValueError(f"unknown drift rule {drift_rule!r}")
    return a, c


def _forcing(forcing, t: np.ndarray, n: int) -> np.ndarray:
    if forcing is None:
        return np.zeros((t.size, n))
    if callable(forcing):
        x = np.asarray(forcing(t), dtype=float)
    else:
        x = np.asarray(forcing, dtype=float)
    x = x.reshape(t.size, -1)
    if x.shape[1] != n:
        raise ValueError(f"forcing has dimension {x.shape[1]}, expected {n}")
    return x


def convolve(a, c, x, b_values, noise_values) -> np.ndarray:
    """Open-loop convolution: ``X_i = x_i + Σ_{l<i} c_{i-l} b_l + a_{i-l} g_l``.

    ``b_values`` and ``noise_values`` (the products ``σ_l ΔW_l``) have shape (P, S, n).
    """
    P, S, n = b_values.shape
    X = np.empty((P, S + 1, n))
    X[:, 0] = x[0]
    for i in range(1, S + 1):
        X[:, i] = (
            x[i]
            + np.einsum("l,pln->pn", c[i - 1::-1], b_values[:, :i])
            + np.einsum("l,pln->pn", a[i - 1::-1], noise_values[:, :i])
        )
    return X


def convolve_drivers(kernel, drivers: Drivers, h: float, forcing=None, drift_rule: str = "point") -> np.ndarray:
    """Direct-scheme output for externally fixed coefficient values and noise."""
    P, S, n = drivers.b.shape
    a, c = _weights(kernel, h, S, drift_rule)
    x = _forcing(forcing, np.arange(S + 1) * h, n)
    g = np.einsum("psnd,psd->psn", drivers.sigma, drivers.dW)
    return convolve(a, c, x, drivers.b, g)


def _direct_block(pair, x, a, c, h, S, seed, tag, keep, ids):
    P, n, d = ids.size, pair.n, pair.d
    dW = brownian_increments(seed, tag, ids, S, d, h)
    X = np.empty((P, S + 1, n))
    B = np.zeros((P, S, n))
    G = np.zeros((P, S, n))
    Ss = np.zeros((P, S, n, d)) if keep else None
    X[:, 0] = x[0]
    alive = np.ones(P, dtype=bool)
    dead_at = np.full(P, S + 1)
    aborts = []
    for i in range(S):
        with np.errstate(all="ignore"):
            b = pair.drift(X[:, i])
            s = pair.diffusion(X[:, i])
        ok = np.isfinite(b).all(axis=-1) & np.isfinite(s).all(axis=(-1, -2))
        for p in np.flatnonzero(alive & ~ok):
            aborts.append(SimulationAbort("non-finite coefficient value", path=int(ids[p]), step=i))
            dead_at[p] = i + 1
        alive &= ok
        B[:, i] = np.where(alive[:, None], b, 0.0)
        s = np.where(alive[:, None, None], s, 0.0)
        G[:, i] = np.einsum("pnd,pd->pn", s, dW[:, i])
        if keep:
            Ss[:, i] = s
        X[:, i + 1] = (
            x[i + 1]
            + np.einsum("l,pln->pn", c[i::-1], B[:, : i + 1])
            + np.einsum("l,pln->pn", a[i::-1], G[:, : i + 1])
        )
    for p in np.flatnonzero(~alive):
        X[p, dead_at[p]:] = np.nan
    return X, None, (Drivers(B, Ss, dW) if keep else None), aborts


def simulate_direct(kernel, pair: CoefficientPair, forcing=None, T: float = 1.0, h: float = 2**-8, seed: int = 0,
                    samples: int = 1, drift_rule: str = "point", tag: str = "direct", threads: int = 1,
                    keep_drivers: bool = False) -> PathEnsemble:
    """Seeded ensemble from the direct scheme; ``kernel`` is a Kernel or a LiftGrid."""
    S = grid_steps(T, h)
    if S > MAX_STEPS:
        raise ValueError(f"direct scheme is capped at {MAX_STEPS} steps, got {S}")
    t = np.arange(S + 1) * h
    x = _forcing(forcing, t, pair.n)
    a, c = _weights(kernel, h, S, drift_rule)
    parts = map_blocks(
        lambda ids: _direct_block(pair, x, a, c, h, S, seed, tag, keep_drivers, ids), samples, threads
    )
    return _merge(t, np.arange(samples), parts, tag)


# ---------------------------------------------------------------------------
# Deterministic example with many solutions
# ---------------------------------------------------------------------------


def branch_constant(alpha: float, beta: float) -> float:
    """``C = (β Γ(αβ/(1-β)) / Γ(α/(1-β)))^{1/(1-β)}``."""
    if not (0 < alpha <= 1):
        raise ValueError("alpha must lie in (0,1]")
    if not (0 < beta < 1):
        raise ValueError("beta must lie in (0,1)")
    p = alpha / (1.0 - beta)
    return (beta * special.gamma(p * beta) / special.gamma(p)) ** (1.0 / (1.0 - beta))


def closed_form_solution(alpha: float, beta: float, t0: float, t):
    """``C (t - t0)^{α/(1-β)}`` for ``t > t0`` and 0 otherwise.

    Together with its negative and the zero path these solve
    ``X_t = ∫_0^t K(t-s) |X_s|^β sign(X_s) ds`` for ``K(t) = t^{α-1}/Γ(α)``.
    """
    C = branch_constant(alpha, beta)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    s = np.maximum(t - t0, 0.0)
    out = C * np.power(s, alpha / (1.0 - beta))
    return float(out) if out.ndim == 0 else out


def fractional_cell_weights(alpha: float, h: float, S: int) -> np.ndarray:
    """``∫_{(k-1)h}^{kh} s^{α-1}/Γ(α) ds`` for ``k = 1..S``."""
    k = np.arange(1, S + 1, dtype=float)
    return h**alpha * (k**alpha - (k - 1.0) ** alpha) / special.gamma(alpha + 1.0)


def residual_check(alpha: float, beta: float, t0: float, T: float, h: float, zero: bool = False) -> float:
    """Max over the grid of ``|X_i - Σ_{l<i} c_{i-l} b(X_l)|`` with ``X`` the branch.

    ``zero=True`` substitutes the zero solution instead.
    """
    S = grid_steps(T, h)
    t = np.arange(S + 1) * h
    X = np.zeros_like(t) if zero else closed_form_solution(alpha, beta, t0, t)
    b = np.sign(X) * np.abs(X) ** beta
    c = fractional_cell_weights(alpha, h, S)
    conv = np.zeros_like(t)
    for i in range(1, S + 1):
        conv[i] = np.dot(c[i - 1::-1], b[:i])
    return float(np.max(np.abs(X - conv)))


@dataclass(frozen=True, eq=False)
class RegularizationDemo:
    alpha: float
    beta: float
    t: np.ndarray
    branch: np.ndarray  # upper closed-form branch; the lower one is its negative
    perturbed: dict  # δ -> deterministic path (σ = 0, forcing δ K_N)
    noisy_lift: PathEnsemble
    noisy_direct: PathEnsemble

    def separation(self) -> float:
        """Distance at the final time between the ``+δ`` and ``-δ`` paths."""
        pos = [d for d in self.perturbed if d > 0]
        neg = [d for d in self.perturbed if d < 0]
        return float(abs(self.perturbed[max(pos)][-1] - self.perturbed[min(neg)][-1]))


def demo_regularization(alpha: float = 0.75, beta: float = 0.5, T: float = 1.0, h: float = 2**-8,
                        delta: float = 1e-3, N: int = 100, samples: int = 1000, seed: int = 0,
                        seed_direct: int | None = None, threads: int = 1) -> RegularizationDemo:
    """Noise-free branches versus noise-driven ensembles for the power drift.

    Without noise, forcings ``±δ K_N`` started from zero drift to the two
    nonzero branches while ``δ = 0`` stays at zero.  With unit diffusion, the
    lift on ``K_N`` and the direct scheme on ``K`` give ensembles whose laws can
    be compared.
    """
    kernel = Kernel.fractional(alpha)
    grid = discretize(kernel, N)
    t = np.arange(grid_steps(T, h) + 1) * h
    quiet = make_pair("power_drift", {"beta": beta}, "zero_sigma")
    noisy = make_pair("power_drift", {"beta": beta}, "constant_sigma", {"s": 1.0})
    perturbed = {}
    for dlt in (delta, -delta, 0.0):
        cfg = SimulationConfig(grid, quiet, T, h, 1, seed, y0=constant_state(grid, dlt), tag="quiet")
        perturbed[dlt] = simulate(cfg).X[0, :, 0]
    lift = simulate(SimulationConfig(grid, noisy, T, h, samples, seed, tag="lift", threads=threads))
    direct = simulate_direct(kernel, noisy, None, T, h, seed if seed_direct is None else seed_direct, samples,
                             drift_rule="cell", tag="direct", threads=threads)
    return RegularizationDemo(alpha, beta, t, closed_form_solution(alpha, beta, 0.0, t), perturbed, lift, direct)


def branch_gap(alpha: float, beta: float, t: float) -> float:
    """Distance between the two nonzero branches at time ``t``."""
    return 2.0 * closed_form_solution(alpha, beta, 0.0, t)

