"""Drift/diffusion pairs with declared moduli of continuity.

Coefficient maps act on the last axis: ``b`` sends ``(..., n)`` to ``(..., n)``
and ``sigma`` sends ``(..., n)`` to ``(..., n, d)``.  Every map carries a
:class:`ModulusSpec` whose ``rho`` dominates ``|φ(x) - φ(y)|^2`` as a function of
``|x - y|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import CertificationError, ConfigError

GAUSS_POINTS = 33


# ---------------------------------------------------------------------------
# Moduli
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModulusSpec:
    """Concave, non-decreasing modulus ``ρ`` with ``ρ(0) = 0``.

    ``lipschitz``: ``ρ(t) = L^2 t``.  ``holder``: ``ρ(t) = 2c^2 (t^γ + t)``.
    ``custom``: piecewise-linear interpolation of a table of ``(t, ρ(t))``
    knots starting at ``(0, 0)``, extended linearly past the last knot.
    """

    family: str
    constant: float = 0.0
    gamma: float = 1.0
    table: tuple = ()

    def __post_init__(self):
        if self.family not in ("lipschitz", "holder", "custom"):
            raise ValueError(f"unknown modulus family {self.family!r}")
        if self.constant < 0 or not math.isfinite(self.constant):
            raise ValueError("modulus constant must be finite and >= 0")
        if self.family == "holder" and not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"Hölder exponent must lie in (0,1], got {self.gamma}")
        if self.family == "custom":
            pts = tuple((float(a), float(b)) for a, b in self.table)
            if len(pts) < 2 or pts[0] != (0.0, 0.0):
                raise ValueError("custom modulus table must start at (0, 0) and have >= 2 knots")
            t = np.array([p[0] for p in pts])
            v = np.array([p[1] for p in pts])
            if np.any(np.diff(t) <= 0) or np.any(np.diff(v) < 0):
                raise ValueError("custom modulus knots must be increasing in t and non-decreasing in value")
            slopes = np.diff(v) / np.diff(t)
            if np.any(np.diff(slopes) > 1e-12 * max(1.0, float(slopes.max()))):
                raise ValueError("custom modulus table is not concave")
            object.__setattr__(self, "table", pts)

    @classmethod
    def lipschitz(cls, L: float) -> "ModulusSpec":
        return cls("lipschitz", float(L))

    @classmethod
    def holder(cls, gamma: float, c: float = 1.0) -> "ModulusSpec":
        return cls("holder", float(c), float(gamma))

    @classmethod
    def custom(cls, table) -> "ModulusSpec":
        return cls("custom", table=tuple(table))

    @property
    def is_zero(self) -> bool:
        return self.family != "custom" and self.constant == 0.0

    def rho(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("modulus argument must be >= 0")
        if self.family == "lipschitz":
            out = self.constant**2 * t
        elif self.family == "holder":
            out = 2.0 * self.constant**2 * (np.power(t, self.gamma) + t)
        else:
            kt = np.array([p[0] for p in self.table])
            kv = np.array([p[1] for p in self.table])
            last = (kv[-1] - kv[-2]) / (kt[-1] - kt[-2])
            out = np.where(t <= kt[-1], np.interp(t, kt, kv), kv[-1] + last * (t - kt[-1]))
        return float(out) if out.ndim == 0 else out

    def min_trusted(self) -> float:
        """Smallest positive argument at which the modulus is backed by data."""
        return self.table[1][0] if self.family == "custom" else 0.0


def modulus_eval(spec: ModulusSpec, t):
    return spec.rho(t)


# ---------------------------------------------------------------------------
# Coefficient pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientPair:
    b: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    rho_b: ModulusSpec
    rho_sigma: ModulusSpec
    c_ue: float = 0.0
    n: int = 1
    d: int = 1
    name: str = ""

    def drift(self, x):
        return np.asarray(self.b(np.asarray(x, dtype=float)), dtype=float)

    def diffusion(self, x):
        return np.asarray(self.sigma(np.asarray(x, dtype=float)), dtype=float)


def linear_growth_constant(pair: CoefficientPair) -> float:
    """``max{|b(0)| + 1 + √ρ_b(1), |σ(0)| + 1 + √ρ_σ(1)}``."""
    zero = np.zeros(pair.n)
    b0 = float(np.linalg.norm(pair.drift(zero)))
    s0 = float(np.linalg.norm(pair.diffusion(zero)))
    return max(b0 + 1.0 + math.sqrt(pair.rho_b.rho(1.0)), s0 + 1.0 + math.sqrt(pair.rho_sigma.rho(1.0)))


def min_ellipticity(pair: CoefficientPair, xs) -> float:
    """Smallest eigenvalue of ``σσᵀ`` over the sample points ``xs`` of shape (K, n)."""
    s = pair.diffusion(np.asarray(xs, dtype=float).reshape(-1, pair.n))
    a = s @ np.swapaxes(s, -1, -2)
    return float(np.linalg.eigvalsh(a).min())


class _Clamped:
    """``x ↦ φ(x · min(1, k/|x|))``."""

    def __init__(self, f, k: float):
        self.f = f
        self.k = k

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        nrm = np.linalg.norm(x, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(nrm > self.k, self.k / nrm, 1.0)
        return self.f(x * scale)


def truncate(pair: CoefficientPair, k: float) -> CoefficientPair:
    """Radially clamp the argument of both maps to the closed ball of radius ``k``.

    The clamp is 1-Lipschitz, so the declared moduli stay valid.
    """
    if not k > 0:
        raise ValueError("truncation radius must be > 0")
    return CoefficientPair(
        _Clamped(pair.b, k), _Clamped(pair.sigma, k), pair.rho_b, pair.rho_sigma, pair.c_ue, pair.n, pair.d,
        f"{pair.name}|trunc{k:g}",
    )


def _bump_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    z, w = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    psi = w * np.exp(-1.0 / (1.0 - z * z))
    if n == 1:
        offs = z[:, None]
        wts = psi
    else:
        # product rule scaled so every offset lies in the unit ball
        zz = np.stack(np.meshgrid(z, z, indexing="ij"), axis=-1).reshape(-1, 2) / math.sqrt(2.0)
        offs = zz
        wts = np.outer(psi, psi).ravel()
    return offs, wts / wts.sum()


class _Mollified:
    """Convex combination ``Σ_i ω_i φ(x - h z_i)`` of shifts, ``|z_i| <= 1``."""

    def __init__(self, f, h: float, n: int):
        self.f = f
        self.h = h
        offs, wts = _bump_rule(n)
        self.offsets = h * offs
        self.weights = wts

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        shifted = x[..., None, :] - self.offsets
        vals = np.asarray(self.f(shifted), dtype=float)
        extra = vals.ndim - shifted.ndim + 1  # matrix-valued maps carry one more axis
        w = self.weights.reshape((-1,) + (1,) * extra)
        return np.sum(vals * w, axis=x.ndim - 1)


def mollify_bandwidth(spec: ModulusSpec, target: float) -> float:
    """Largest ``h`` with ``ρ(h^2) <= target`` (infinite when ``ρ ≡ 0``)."""
    if spec.is_zero:
        return math.inf
    if not target > 0:
        raise ValueError("target must be > 0")
    g = lambda h: spec.rho(h * h) - target
    hi = 1.0
    while g(hi) < 0:
        hi *= 2.0
        if hi > 1e150:
            return math.inf
    lo = hi / 2.0
    while g(lo) > 0:
        lo /= 2.0
        if lo < 1e-150:
            raise CertificationError("modulus cannot certify any positive bandwidth")
    h = optimize.brentq(g, lo, hi, xtol=1e-300, rtol=1e-14)
    while spec.rho(h * h) > target:
        h = math.nextafter(h, 0.0)
    if h * h < spec.min_trusted():
        raise CertificationError(
            f"bandwidth {h:.3g} lies below the first knot of the custom modulus table (t={spec.min_trusted():g})"
        )
    return h


def mollify(pair: CoefficientPair, delta0: float) -> CoefficientPair:
    """Smooth both maps so that the squared sup-error is at most ``delta0 / 2``.

    The bandwidth solves ``ρ(h^2) = delta0/2`` for each map.  When ``c_ue > 0``
    the diffusion bandwidth is further limited so that the ellipticity of the
    smoothed map stays at least ``c_ue / 2``.
    """
    if not delta0 > 0:
        raise ValueError("delta0 must be > 0")
    if pair.n > 2:
        raise ValueError("mollification is implemented for n <= 2 only")
    target_b = delta0 / 2.0
    target_s = delta0 / 2.0
    if pair.c_ue > 0:
        # ‖σ_h - σ‖ <= (1 - 2^{-1/2}) √c keeps λ_min(σ_h σ_hᵀ) >= c/2
        target_s = min(target_s, (1.0 - 2.0**-0.5) ** 2 * pair.c_ue)
    hb = mollify_bandwidth(pair.rho_b, target_b)
    hs = mollify_bandwidth(pair.rho_sigma, target_s)
    b = pair.b if math.isinf(hb) else _Mollified(pair.b, hb, pair.n)
    s = pair.sigma if math.isinf(hs) else _Mollified(pair.sigma, hs, pair.n)
    name = f"{pair.name}|moll(hb={hb:.3g},hs={hs:.3g})"
    return CoefficientPair(b, s, pair.rho_b, pair.rho_sigma, pair.c_ue / 2.0, pair.n, pair.d, name)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


def _elementwise_drift(f):
    return lambda x: f(np.asarray(x, dtype=float))


def _diag_sigma(f):
    def sigma(x):
        v = f(np.asarray(x, dtype=float))
        return v[..., :, None] * np.eye(v.shape[-1])

    return sigma


def _holder_dim(gamma: float, c: float, n: int) -> ModulusSpec:
    # Σ c²t_i^γ <= c² n^{1-γ} (Σ t_i)^γ
    return ModulusSpec.holder(gamma, c * n ** ((1.0 - gamma) / 2.0))


@dataclass(frozen=True)
class _Entry:
    kind: str  # "drift" or "sigma"
    params: tuple
    build: Callable = field(repr=False)


def _need(params: dict, key: str, name: str, cond=lambda v: True, msg: str = "") -> float:
    if key not in params:
        raise ConfigError(f"{name}.{key}", "missing parameter")
    v = params[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
        raise ConfigError(f"{name}.{key}", f"expected a finite number, got {v!r}")
    if not cond(v):
        raise ConfigError(f"{name}.{key}", msg or f"invalid value {v!r}")
    return float(v)


def _power_drift(p, n):
    beta = _need(p, "beta", "power_drift", lambda v: 0 < v <= 1, "beta must lie in (0,1]")
    f = lambda x: np.sign(x) * np.abs(x) ** beta
    mod = ModulusSpec.lipschitz(1.0) if beta == 1.0 else _holder_dim(beta, 2.0 ** (1.0 - beta), n)
    return _elementwise_drift(f), mod, 0.0


def _linear_drift(p, n):
    a = _need(p, "a", "linear_drift")
    c = float(p.get("c", 0.0))
    return _elementwise_drift(lambda x: a * x + c), ModulusSpec.lipschitz(abs(a)), 0.0


def _constant_drift(p, n):
    c = _need(p, "c", "constant_drift")
    return _elementwise_drift(lambda x: np.full_like(x, c)), ModulusSpec.lipschitz(0.0), 0.0


def _zero_drift(p, n):
    return _elementwise_drift(np.zeros_like), ModulusSpec.lipschitz(0.0), 0.0


def _constant_sigma(p, n):
    s = _need(p, "s", "constant_sigma")
    return _diag_sigma(lambda x: np.full_like(x, s)), ModulusSpec.lipschitz(0.0), s * s


def _holder_sigma(p, n):
    gamma = _need(p, "gamma", "holder_sigma", lambda v: 0 < v <= 1, "gamma must lie in (0,1]")
    c0 = _need(p, "c0", "holder_sigma", lambda v: v >= 0, "c0 must be >= 0")
    f = lambda x: c0 + np.minimum(np.abs(x), 1.0) ** gamma
    mod = ModulusSpec.lipschitz(1.0) if gamma == 1.0 else _holder_dim(gamma, 1.0, n)
    return _diag_sigma(f), mod, c0 * c0


def _sin_sigma(p, n):
    c0 = _need(p, "c0", "sin_sigma")
    a = _need(p, "a", "sin_sigma")
    cue = (abs(c0) - abs(a)) ** 2 if abs(c0) > abs(a) else 0.0
    return _diag_sigma(lambda x: c0 + a * np.sin(x)), ModulusSpec.lipschitz(abs(a)), cue


def _zero_sigma(p, n):
    return _diag_sigma(np.zeros_like), ModulusSpec.lipschitz(0.0), 0.0


REGISTRY: dict[str, _Entry] = {
    "power_drift": _Entry("drift", ("beta",), _power_drift),
    "linear_drift": _Entry("drift", ("a", "c"), _linear_drift),
    "constant_drift": _Entry("drift", ("c",), _constant_drift),
    "zero_drift": _Entry("drift", (), _zero_drift),
    "constant_sigma": _Entry("sigma", ("s",), _constant_sigma),
    "holder_sigma": _Entry("sigma", ("gamma", "c0"), _holder_sigma),
    "sin_sigma": _Entry("sigma", ("c0", "a"), _sin_sigma),
    "zero_sigma": _Entry("sigma", (), _zero_sigma),
}


def make_pair(drift: str, drift_params: dict | None = None, sigma: str = "zero_sigma",
              sigma_params: dict | None = None, dim: int = 1) -> CoefficientPair:
    """Build a pair from registry names; the diffusion is diagonal, so ``d = n``."""
    for key, kind in ((drift, "drift"), (sigma, "sigma")):
        if key not in REGISTRY:
            raise ConfigError(kind, f"unknown registry name {key!r}")
        if REGISTRY[key].kind != kind:
            raise ConfigError(kind, f"{key!r} is not a {kind} entry")
    if not (isinstance(dim, int) and dim >= 1):
        raise ConfigError("dim", "dimension must be a positive integer")
    dp = dict(drift_params or {})
    sp = dict(sigma_params or {})
    for key, params in ((drift, dp), (sigma, sp)):
        unknown = set(params) - set(REGISTRY[key].params)
        if unknown:
            raise ConfigError(f"{key}.{sorted(unknown)[0]}", "unknown parameter")
    b, rb, _ = REGISTRY[drift].build(dp, dim)
    s, rs, cue = REGISTRY[sigma].build(sp, dim)
    return CoefficientPair(b, s, rb, rs, cue, dim, dim, f"{drift}+{sigma}")
