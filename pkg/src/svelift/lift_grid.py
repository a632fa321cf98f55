"""Finite quadrature of a Bernstein measure and the discrete lift maps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernel import INF, AtomicMeasure, DensityMeasure, Kernel, _check_level


@dataclass(frozen=True, eq=False)
class LiftGrid:
    """Nodes ``θ_j`` and weights ``w_j`` of a discrete Bernstein measure."""

    theta: np.ndarray
    weights: np.ndarray
    kernel: Kernel

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if th.ndim != 1 or th.shape != w.shape or th.size == 0:
            raise ValueError("grid needs matching 1-d node and weight arrays")
        if np.any(np.diff(th) <= 0) or th[0] < 0:
            raise ValueError("grid nodes must be >= 0 and strictly increasing")
        if np.any(~(w > 0)) or not np.all(np.isfinite(w)):
            raise ValueError("grid weights must be positive and finite")
        th.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "weights", w)
        r = self.kernel.weight.r(th)
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @property
    def size(self) -> int:
        return self.theta.size

    def r_m(self, m) -> np.ndarray:
        _check_level(m)
        if m is INF:
            return np.ones_like(self.theta)
        return self.kernel.weight.r_m(m, self.theta)

    def K_N(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-np.multiply.outer(t, self.theta)) @ self.weights

    def cell_integral(self, a, b):
        """``∫_a^b K_N(s) ds``."""
        return AtomicMeasure(tuple(self.weights), tuple(self.theta)).kernel_integral(a, b)

    def R_m(self, m) -> float:
        return float(np.sum(self.weights * self.r_m(m)))

    def eps_m(self, m) -> float:
        """Discrete ``Σ w (1 - r_m)^2 θ^{-1} r_m^{-1}``; nodes with ``θ <= m`` contribute 0."""
        rm = self.r_m(m)
        out = np.zeros_like(rm)
        big = rm < 1.0
        out[big] = (1.0 - rm[big]) ** 2 / (self.theta[big] * rm[big])
        return float(np.sum(self.weights * out))

    def as_kernel(self) -> Kernel:
        """The grid itself as an atomic kernel carrying the source weight."""
        return Kernel(AtomicMeasure(tuple(self.weights), tuple(self.theta)), self.kernel.weight)


def discretize(kernel: Kernel, N: int = 100, theta_min: float = 1e-4, theta_max: float = 1e4,
               absorb_low_mass: bool = True) -> LiftGrid:
    """Geometric-cell quadrature of the Bernstein measure.

    Cells partition ``[theta_min, theta_max]`` geometrically.  Each node carries
    its cell's mass and sits at the cell's density barycenter.  With
    ``absorb_low_mass`` the mass below ``theta_min`` is merged into the first
    node (mass and first moment both preserved).  Atomic measures pass through.
    """
    meas = kernel.measure
    if isinstance(meas, AtomicMeasure):
        return LiftGrid(meas.theta.copy(), meas.c.copy(), kernel)
    if not isinstance(meas, DensityMeasure):
        raise TypeError(f"cannot discretize measure of type {type(meas).__name__}")
    if not (isinstance(N, (int, np.integer)) and N >= 1):
        raise ValueError("N must be a positive integer")
    if not (0 < theta_min < theta_max < math.inf):
        raise ValueError("need 0 < theta_min < theta_max < inf")
    lo_supp = meas.support_min
    if theta_max <= lo_supp:
        raise ValueError("cell range does not meet the support of the measure")

    edges = np.geomspace(theta_min, theta_max, N + 1)
    mass = np.empty(N)
    moment = np.empty(N)
    for j in range(N):
        mass[j], moment[j] = meas.cell_moments(max(edges[j], lo_supp), max(edges[j + 1], lo_supp))
    if absorb_low_mass and theta_min > lo_supp:
        m0, f0 = meas.cell_moments(lo_supp, theta_min)
        first = int(np.argmax(mass > 0))
        mass[first] += m0
        moment[first] += f0
    keep = mass > 0
    if not np.any(keep):
        raise ValueError("cell range does not meet the support of the measure")
    mass, moment = mass[keep], moment[keep]
    return LiftGrid(moment / mass, mass, kernel)


@dataclass(frozen=True)
class KernelErrorReport:
    t: np.ndarray
    K: np.ndarray
    K_N: np.ndarray
    rel_err: np.ndarray

    @property
    def sup(self) -> float:
        return float(np.max(self.rel_err))


def kernel_error(grid: LiftGrid, t_grid) -> KernelErrorReport:
    t = np.asarray(t_grid, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("t_grid must lie in (0, inf)")
    K = np.asarray(grid.kernel(t), dtype=float).reshape(t.shape)
    KN = grid.K_N(t)
    return KernelErrorReport(t, K, KN, np.abs(K - KN) / K)


def _state(grid: LiftGrid, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[-2] != grid.size:
        raise ValueError(f"state has {y.shape[-2]} nodes, grid has {grid.size}")
    return y


def integral_map(grid: LiftGrid, y, m=INF) -> np.ndarray:
    """``μ_m[y] = Σ_j w_j r_m(θ_j) y_j``; ``y`` has shape ``(..., N, n)``."""
    y = _state(grid, y)
    c = grid.weights * grid.r_m(m)
    return np.einsum("j,...jk->...k", c, y)


def norms(grid: LiftGrid, y, m=INF) -> tuple:
    """``(‖y‖_H, ‖y‖_m, ‖y‖_V)`` with weights ``w r``, ``w r_m``, ``w (θ+1) r``."""
    y = _state(grid, y)
    sq = np.sum(y * y, axis=-1)
    h = np.sqrt(sq @ (grid.weights * grid.r))
    mm = np.sqrt(sq @ (grid.weights * grid.r_m(m)))
    v = np.sqrt(sq @ (grid.weights * (grid.theta + 1.0) * grid.r))
    return h, mm, v


def dissipation(grid: LiftGrid, y, m) -> np.ndarray:
    """``Σ_j w_j θ_j r_m(θ_j) |y_j|^2``."""
    y = _state(grid, y)
    return np.sum(y * y, axis=-1) @ (grid.weights * grid.theta * grid.r_m(m))


def reconstruct_forcing(grid: LiftGrid, y, t_grid) -> np.ndarray:
    """``x(t) = Σ_j w_j e^{-θ_j t} y_j`` for each ``t``; returns shape ``(len(t), n)``."""
    y = _state(grid, y)
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if np.any(~(t > 0)):
        raise ValueError("t_grid must lie in (0, inf)")
    c = np.exp(-np.multiply.outer(t, grid.theta)) * grid.weights
    return np.einsum("tj,...jk->...tk", c, y)
