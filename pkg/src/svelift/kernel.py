"""Completely monotone kernels represented through their Bernstein measures.

A kernel ``K(t) = ∫ exp(-θ t) μ(dθ)`` is stored as the measure ``μ`` together
with a regularity weight ``r(θ) = min(1, θ^-η)``.  Integrals against density
measures are evaluated in the variable ``u = log(θ - shift)``, which turns the
power-law ends of every integrand used here into exponentially decaying ones
and lets the part beyond ``θ = 1e8`` be integrated on an infinite interval.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

from .errors import AssumptionViolation

THETA_MAX = 1e8
TAIL_TOL = 1e-3
ALPHA_EPS = 1e-6
_QUAD_OPTS = dict(epsabs=0.0, epsrel=1e-11, limit=400)
_LOG_TINY = -745.0


class _Unbounded:
    """Sentinel for the truncation level ``m = ∞`` (no flattening of the weight)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INF"

    def __reduce__(self):
        return (_Unbounded, ())


INF = _Unbounded()


def _check_level(m) -> None:
    if m is INF:
        return
    if not np.isfinite(m) or m < 1:
        raise ValueError(f"truncation level m must be >= 1 (or INF), got {m!r}")


def _safe_exp(v: float) -> float:
    return math.exp(v) if v > _LOG_TINY else 0.0


def _log_theta(theta: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(theta)


# ---------------------------------------------------------------------------
# Regularity weight
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegularityWeight:
    """The weight ``r(θ) = min(1, θ^-η)``; ``eta=None`` means ``r ≡ 1``."""

    eta: float | None = None

    def __post_init__(self):
        if self.eta is not None and not (0.0 < self.eta <= 0.5):
            raise ValueError(f"eta must lie in (0, 1/2], got {self.eta}")

    @property
    def identity(self) -> bool:
        return self.eta is None

    def log_r(self, log_theta):
        lt = np.asarray(log_theta, dtype=float)
        if self.eta is None:
            return np.zeros_like(lt)
        return -self.eta * np.maximum(lt, 0.0)

    def r(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.eta is None:
            return np.ones_like(theta)
        with np.errstate(divide="ignore"):
            return np.minimum(1.0, np.power(theta, -self.eta))

    def log_r_m(self, m, log_theta):
        """log of ``r(m ∨ θ) / r(m)``; vanishes for ``θ <= m``."""
        lt = np.asarray(log_theta, dtype=float)
        if self.eta is None or m is INF:
            return np.zeros_like(lt)
        return -self.eta * np.maximum(lt - math.log(m), 0.0)

    def r_m(self, m, theta):
        _check_level(m)
        return np.exp(self.log_r_m(m, _log_theta(np.asarray(theta, dtype=float))))


def eval_r_m(weight: RegularityWeight, m, theta):
    """Flattened weight ``r_m(θ) = r(m ∨ θ) / r(m)``."""
    _check_level(m)
    out = weight.r_m(m, theta)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Bernstein measures
# ---------------------------------------------------------------------------


class BernsteinMeasure:
    kind: str = "abstract"

    @property
    def total_mass(self) -> float:
        raise NotImplementedError

    def kernel(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def kernel_integral(self, a, b) -> np.ndarray:
        """``∫_a^b K(s) ds`` for ``0 <= a <= b`` (arrays broadcast)."""
        raise NotImplementedError

    def integrate(self, log_factor, lower: float = 0.0, breakpoints: Sequence[float] = ()):
        """Return ``(value, tail)`` of ``∫_{θ > lower} exp(log_factor) dμ``.

        ``log_factor(theta, log_theta)`` is evaluated on scalars.
        """
        raise NotImplementedError


@dataclass(frozen=True)
class AtomicMeasure(BernsteinMeasure):
    """Finite sum of point masses ``Σ c_i δ_{θ_i}``."""

    weights: tuple
    nodes: tuple
    kind: str = field(default="atomic", init=False)

    def __post_init__(self):
        w = tuple(float(x) for x in np.atleast_1d(self.weights))
        th = tuple(float(x) for x in np.atleast_1d(self.nodes))
        if len(w) != len(th) or not w:
            raise ValueError("atomic measure needs equally many (>0) weights and nodes")
        if any(not (x > 0 and math.isfinite(x)) for x in w):
            raise ValueError("atomic weights must be positive and finite")
        if any(not (x >= 0 and math.isfinite(x)) for x in th):
            raise ValueError("atomic nodes must be finite and >= 0")
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError("atomic nodes must be strictly increasing")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "nodes", th)

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.weights)

    @property
    def theta(self) -> np.ndarray:
        return np.asarray(self.nodes)

    @property
    def total_mass(self) -> float:
        return float(sum(self.weights))

    def kernel(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-np.multiply.outer(t, self.theta)) @ self.c

    def kernel_integral(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        th = self.theta
        out = np.zeros(np.broadcast(a, b).shape)
        for ci, ti in zip(self.c, th):
            if ti == 0.0:
                out = out + ci * (b - a)
            else:
                # e^{-θa}(1 - e^{-θ(b-a)})/θ, stable for small θ(b-a)
                out = out + ci * np.exp(-ti * a) * (-np.expm1(-ti * (b - a))) / ti
        return out

    def integrate(self, log_factor, lower=0.0, breakpoints=()):
        total = 0.0
        for ci, ti in zip(self.weights, self.nodes):
            if ti < lower:
                continue
            lt = math.log(ti) if ti > 0 else -math.inf
            total += ci * _safe_exp(float(log_factor(ti, lt)))
        return total, 0.0


class DensityMeasure(BernsteinMeasure):
    """Absolutely continuous measure on ``[shift + s_min, ∞)``.

    Subclasses supply ``log_mass_u(u)``: the log of ``density(θ) dθ/du`` with
    ``θ = shift + e^u``.
    """

    shift: float = 0.0
    s_min: float = 0.0

    def log_mass_u(self, u: float) -> float:
        raise NotImplementedError

    def density(self, theta):
        theta = np.asarray(theta, dtype=float)
        s = theta - self.shift
        out = np.zeros_like(s)
        ok = s > self.s_min if self.s_min > 0 else s > 0
        us = np.log(s[ok])
        out[ok] = np.exp([self.log_mass_u(u) for u in us]) / s[ok]
        return out

    @property
    def support_min(self) -> float:
        return self.shift + self.s_min

    def _u_of(self, theta: float) -> float:
        s = theta - self.shift
        return math.log(s) if s > 0 else -math.inf

    def _theta_of(self, u: float) -> tuple[float, float]:
        if self.shift > 0:
            lt = float(np.logaddexp(math.log(self.shift), u))
        else:
            lt = u
        th = math.exp(lt) if lt < 709.0 else math.inf
        return th, lt

    def integrate(self, log_factor, lower=0.0, breakpoints=()):
        u_lo = self._u_of(max(lower, self.support_min))
        if self.s_min > 0:
            u_lo = max(u_lo, math.log(self.s_min))

        def g(u):
            th, lt = self._theta_of(u)
            return _safe_exp(self.log_mass_u(u) + float(log_factor(th, lt)))

        def log_g(u):
            th, lt = self._theta_of(u)
            return self.log_mass_u(u) + float(log_factor(th, lt))

        u_tail = max(self._u_of(THETA_MAX), u_lo)
        cuts = {self._u_of(self.shift + 1.0), u_tail}
        cuts.update(self._u_of(b) for b in breakpoints)
        cuts = sorted(c for c in cuts if math.isfinite(c) and u_lo < c <= u_tail)
        edges = [u_lo, *cuts]
        if edges[-1] != u_tail:
            edges.append(u_tail)

        partial = 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            for x0, x1 in zip(edges[:-1], edges[1:]):
                if x1 <= x0:
                    continue
                val, _ = integrate.quad(g, x0, x1, **_QUAD_OPTS)
                partial += val

        # tail beyond θ_max: decay test on the log-variable integrand, then QAGI
        u1 = max(u_tail + 1.0, 1e3)
        e1, e2 = log_g(u1), log_g(2.0 * u1)
        if math.isfinite(e1) and e2 > -math.inf and (e2 - e1) / math.log(2.0) > -1.0 - 1e-9:
            raise AssumptionViolation(
                "weighted Bernstein mass diverges: integrand tail decays no faster than 1/log(θ)",
                partial=partial,
            )
        far = sorted(c for c in (self._u_of(b) for b in breakpoints) if math.isfinite(c) and c > u_tail)
        tail, tail_err = 0.0, 0.0
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", integrate.IntegrationWarning)
            for x0, x1 in zip([u_tail, *far], [*far, math.inf]):
                val, err = integrate.quad(g, x0, x1, **_QUAD_OPTS)
                tail += val
                tail_err += err
        total = partial + tail
        if not math.isfinite(total):
            raise AssumptionViolation("weighted Bernstein mass is not finite", partial=partial, tail=tail)
        if caught and tail_err > TAIL_TOL * abs(total):
            raise AssumptionViolation(
                f"tail beyond θ={THETA_MAX:g} not certified (error {tail_err:.3g} vs total {total:.6g})",
                partial=partial,
                tail=tail,
            )
        return total, tail

    def kernel(self, t):
        t = np.asarray(t, dtype=float)
        out = np.array([self.integrate(lambda th, lt, tt=tt: -th * tt)[0] for tt in t.ravel()])
        return out.reshape(t.shape)

    def kernel_integral(self, a, b):
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))

        def one(x, y):
            def lf(th, lt):
                # (e^{-θx} - e^{-θy}) / θ
                if th == 0.0:
                    return math.log(y - x) if y > x else -math.inf
                if math.isinf(th):
                    return -math.inf
                d = -math.expm1(-th * (y - x))
                return -th * x + math.log(d) - lt if d > 0 else -math.inf

            return self.integrate(lf)[0]

        return np.vectorize(one)(a, b)

    def cell_moments(self, lo: float, hi: float) -> tuple[float, float]:
        """Mass and first moment of the measure restricted to ``[lo, hi]``."""

        def piece(extra):
            def g(u):
                th, lt = self._theta_of(u)
                return _safe_exp(self.log_mass_u(u) + extra(th, lt))

            u0 = self._u_of(max(lo, self.support_min))
            u1 = self._u_of(hi)
            if not u1 > u0:
                return 0.0
            return integrate.quad(g, u0, u1, **_QUAD_OPTS)[0]

        return piece(lambda th, lt: 0.0), piece(lambda th, lt: lt)


@dataclass(frozen=True)
class PowerLawMeasure(DensityMeasure):
    """``μ(dθ) = (θ - β)^{-α} 1_{θ>β} dθ / (Γ(α)Γ(1-α))``.

    ``beta = 0`` is the fractional kernel ``t^{α-1}/Γ(α)``; ``beta > 0`` the
    Gamma kernel ``e^{-βt} t^{α-1}/Γ(α)``.
    """

    alpha: float
    beta: float = 0.0

    def __post_init__(self):
        lo, hi = 0.5 + ALPHA_EPS, 1.0 - ALPHA_EPS
        if not (lo < self.alpha < hi):
            raise ValueError(f"alpha must lie in (1/2,1), got {self.alpha}")
        if self.beta < 0 or not math.isfinite(self.beta):
            raise ValueError(f"beta must be >= 0, got {self.beta}")

    @property
    def kind(self) -> str:
        return "fractional" if self.beta == 0.0 else "gamma"

    @property
    def shift(self) -> float:
        return self.beta

    @property
    def norm(self) -> float:
        return 1.0 / (special.gamma(self.alpha) * special.gamma(1.0 - self.alpha))

    @property
    def total_mass(self) -> float:
        return math.inf

    def log_mass_u(self, u):
        return math.log(self.norm) + (1.0 - self.alpha) * u

    def density(self, theta):
        theta = np.asarray(theta, dtype=float)
        s = theta - self.beta
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(s > 0, self.norm * np.power(np.where(s > 0, s, 1.0), -self.alpha), 0.0)

    def kernel(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-self.beta * t) * np.power(t, self.alpha - 1.0) / special.gamma(self.alpha)

    def kernel_integral(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.beta == 0.0:
            return (np.power(b, self.alpha) - np.power(a, self.alpha)) / special.gamma(self.alpha + 1.0)
        scale = self.beta ** (-self.alpha)
        return scale * (special.gammainc(self.alpha, self.beta * b) - special.gammainc(self.alpha, self.beta * a))

    def _antiderivatives(self, theta):
        s = np.maximum(np.asarray(theta, dtype=float) - self.beta, 0.0)
        a = self.alpha
        mass = self.norm * np.power(s, 1.0 - a) / (1.0 - a)
        moment = self.norm * (np.power(s, 2.0 - a) / (2.0 - a) + self.beta * np.power(s, 1.0 - a) / (1.0 - a))
        return mass, moment

    def cell_moments(self, lo, hi):
        m0, f0 = self._antiderivatives(lo)
        m1, f1 = self._antiderivatives(hi)
        return float(m1 - m0), float(f1 - f0)


@dataclass(frozen=True)
class LogTailMeasure(DensityMeasure):
    """``μ(dθ) = θ^{-a} (log θ)^{-b} 1_{θ >= lower} dθ``.

    With ``a = 1/2, b = 2, lower = 2`` and ``r(θ) = min(1, θ^{-1/2})`` the
    weighted mass is exactly ``1/log 2`` while ``∫ min(1, θ^{-η}) dμ`` diverges for
    every ``η < 1/2``.
    """

    a: float = 0.5
    b: float = 2.0
    lower: float = 2.0
    kind: str = field(default="log_tail", init=False)

    def __post_init__(self):
        if not self.lower > 1.0:
            raise ValueError("lower support point must exceed 1")

    @property
    def s_min(self) -> float:
        return self.lower

    @property
    def total_mass(self) -> float:
        return math.inf if self.a <= 1.0 else float("nan")

    def log_mass_u(self, u):
        return (1.0 - self.a) * u - self.b * math.log(u)


# ---------------------------------------------------------------------------
# Kernel
# ---------------------------------------------------------------------------


def default_eta(alpha: float) -> float:
    """Weight exponent used when none is given: ``min(1/2, 1.5(1-α))``."""
    return min(0.5, 1.5 * (1.0 - alpha))


@dataclass(frozen=True)
class Kernel:
    """A completely monotone kernel and the regularity weight attached to it.

    Construction certifies ``∫ r dμ < ∞`` and raises
    :class:`~svelift.errors.AssumptionViolation` otherwise.
    """

    measure: BernsteinMeasure
    weight: RegularityWeight = RegularityWeight()

    def __post_init__(self):
        assumption_integral(self)

    @classmethod
    def atomic(cls, weights, nodes, eta: float | None = None) -> "Kernel":
        return cls(AtomicMeasure(tuple(np.atleast_1d(weights)), tuple(np.atleast_1d(nodes))), RegularityWeight(eta))

    @classmethod
    def fractional(cls, alpha: float, eta: float | None = None) -> "Kernel":
        return cls(PowerLawMeasure(alpha), RegularityWeight(default_eta(alpha) if eta is None else eta))

    @classmethod
    def gamma(cls, alpha: float, beta: float, eta: float | None = None) -> "Kernel":
        if not beta > 0:
            raise ValueError("gamma kernel needs beta > 0")
        return cls(PowerLawMeasure(alpha, beta), RegularityWeight(default_eta(alpha) if eta is None else eta))

    @classmethod
    def log_counterexample(cls) -> "Kernel":
        return cls(LogTailMeasure(), RegularityWeight(0.5))

    @property
    def kind(self) -> str:
        return self.measure.kind

    @property
    def regular(self) -> bool:
        return math.isfinite(self.measure.total_mass)

    def __call__(self, t):
        return eval_kernel(self, t)

    def integral(self, a, b):
        return self.measure.kernel_integral(a, b)

    def r(self, theta):
        return self.weight.r(theta)


def eval_kernel(kernel: Kernel, t):
    """``K(t)`` for ``t > 0``; scalar in, scalar out."""
    arr = np.asarray(t, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("kernel is only defined for t > 0")
    out = kernel.measure.kernel(arr)
    return float(out) if np.ndim(out) == 0 else out


@lru_cache(maxsize=None)
def assumption_integral(kernel: Kernel) -> float:
    """``∫ r(θ) μ(dθ)``, certified finite."""
    w = kernel.weight
    val, _ = kernel.measure.integrate(lambda th, lt: float(w.log_r(lt)))
    return val


@lru_cache(maxsize=None)
def compute_R_m(kernel: Kernel, m) -> float:
    """``R_m = ∫ r_m dμ``."""
    _check_level(m)
    w = kernel.weight
    if w.identity or m is INF:
        return kernel.measure.integrate(lambda th, lt: 0.0)[0]
    lm = math.log(m)
    val, _ = kernel.measure.integrate(lambda th, lt: -w.eta * max(lt - lm, 0.0), breakpoints=(m,))
    return val


@lru_cache(maxsize=None)
def compute_eps_m(kernel: Kernel, m) -> float:
    """``ε_m = ∫ (1 - r_m)^2 θ^{-1} r_m^{-1} dμ``; the integrand lives on ``θ > m``."""
    _check_level(m)
    w = kernel.weight
    if w.identity or m is INF:
        return 0.0
    eta = w.eta
    lm = math.log(m)

    def lf(th, lt):
        x = lt - lm
        if not x > 0:
            return -math.inf
        one_minus = -math.expm1(-eta * x)
        return 2.0 * math.log(one_minus) - lt + eta * x

    val, _ = kernel.measure.integrate(lf, lower=m, breakpoints=(m,))
    return val


def fractional_R_m(alpha: float, eta: float, m: float) -> float:
    """Closed form of ``R_m`` for the fractional kernel with ``r = min(1, θ^-η)``."""
    c = 1.0 / (special.gamma(alpha) * special.gamma(1.0 - alpha))
    return c * eta / ((1.0 - alpha) * (alpha + eta - 1.0)) * m ** (1.0 - alpha)


def fractional_eps_m(alpha: float, eta: float, m: float) -> float:
    """Closed form of ``ε_m`` for the fractional kernel with ``r = min(1, θ^-η)``."""
    c = 1.0 / (special.gamma(alpha) * special.gamma(1.0 - alpha))
    return c * 2.0 * eta**2 / (alpha * (alpha - eta) * (alpha + eta)) * m ** (-alpha)


# ---------------------------------------------------------------------------
# Balance condition
# ---------------------------------------------------------------------------

DEFAULT_M_LADDER = tuple(10.0**k for k in range(0, 41))
DEFAULT_DELTA_LADDER = tuple(10.0 ** (-k) for k in range(1, 41))
_SLOPE_TOL = 1e-3


@dataclass(frozen=True)
class BalanceReport:
    mode: str  # "singular" or "regular"
    grid: np.ndarray  # m values (singular) or δ values (regular)
    R: np.ndarray
    eps: np.ndarray
    ratio: np.ndarray  # R_m ρ(ε²)/ε  or  ρ(δ²)/δ
    slope: float  # fitted log-log slope of ratio along the tail of the grid
    verdict: bool
    analytic_verdict: bool | None = None

    @property
    def liminf_name(self) -> str:
        if self.mode == "singular":
            return "liminf_{m->inf} R_m rho_sigma(eps_m^2)/eps_m"
        return "liminf_{delta->0} rho_sigma(delta^2)/delta"


def _tail_slope(x: np.ndarray, y: np.ndarray) -> float:
    n = len(x)
    k = max(3, n // 3)
    lx, ly = np.log(x[-k:]), np.log(y[-k:])
    return float(np.polyfit(lx, ly, 1)[0])


def _analytic_verdict(kernel: Kernel, modulus) -> bool | None:
    fam = getattr(modulus, "family", None)
    if isinstance(kernel.measure, PowerLawMeasure):
        if fam == "lipschitz":
            return True
        if fam == "holder":
            return kernel.measure.alpha * modulus.gamma > 0.5
    if fam == "lipschitz":
        return True
    return None


def check_balance(kernel: Kernel, modulus, m_sequence: Sequence[float] | None = None) -> BalanceReport:
    """Evaluate the balance sequence and decide whether its liminf vanishes.

    The verdict is read off the log-log slope of the sequence over the last
    third of the grid (a zero value counts as vanishing).
    """
    rho: Callable[[float], float] = modulus.rho
    if kernel.regular:
        deltas = np.asarray(m_sequence if m_sequence is not None else DEFAULT_DELTA_LADDER, dtype=float)
        if np.any(np.diff(deltas) >= 0):
            raise ValueError("delta sequence must be decreasing")
        ratio = np.array([rho(d * d) / d for d in deltas])
        mass = kernel.measure.total_mass
        if np.any(ratio[-max(3, len(ratio) // 3):] == 0):
            slope, verdict = -math.inf, True
        else:
            slope = -_tail_slope(deltas, ratio)  # slope in 1/δ
            verdict = slope < -_SLOPE_TOL
        return BalanceReport(
            mode="regular",
            grid=deltas,
            R=np.full_like(deltas, mass),
            eps=np.zeros_like(deltas),
            ratio=ratio,
            slope=slope,
            verdict=verdict,
            analytic_verdict=(modulus.gamma > 0.5) if getattr(modulus, "family", None) == "holder" else (
                True if getattr(modulus, "family", None) == "lipschitz" else None
            ),
        )

    ms = np.asarray(m_sequence if m_sequence is not None else DEFAULT_M_LADDER, dtype=float)
    if np.any(np.diff(ms) <= 0) or ms[0] < 1:
        raise ValueError("m sequence must be increasing and start at m >= 1")
    R = np.array([compute_R_m(kernel, float(m)) for m in ms])
    eps = np.array([compute_eps_m(kernel, float(m)) for m in ms])
    ratio = R * np.array([rho(e * e) for e in eps]) / eps
    tail = ratio[-max(3, len(ratio) // 3):]
    if np.any(tail == 0):
        slope, verdict = -math.inf, True
    else:
        slope = _tail_slope(ms, ratio)
        verdict = slope < -_SLOPE_TOL
    return BalanceReport(
        mode="singular",
        grid=ms,
        R=R,
        eps=eps,
        ratio=ratio,
        slope=slope,
        verdict=verdict,
        analytic_verdict=_analytic_verdict(kernel, modulus),
    )
