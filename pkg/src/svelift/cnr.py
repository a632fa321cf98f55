"""Control-and-reimburse coupling: schedules, coupled simulation and energy accounting.

A target lift ``Y`` and a controlled reference lift ``Ŷ`` share their noise.
The reference receives the extra drift ``λ μ_m[Y - Ŷ]`` until the stopping time
``τ`` fires.  The control needed to remove that drift by a change of measure is
``v = λ σ̄ᵀ(σ̄σ̄ᵀ)^{-1} μ_m[Y - Ŷ]``, and its energy ``∫|v|^2`` bounds the total
variation distance between the controlled and uncontrolled reference laws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientPair, ModulusSpec, mollify_bandwidth
from .errors import BalanceFailure, ScheduleSearchError, SimulationAbort
from .kernel import INF, Kernel, check_balance, compute_eps_m, compute_R_m
from .lift_grid import LiftGrid
from .rng import brownian_increments, map_blocks
from .see_sim import grid_steps, step, step_factors

ADMISSIBLE_S = 108.0**-4
LADDER_CAP = 1e300


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleRow:
    k: int
    m: float
    M: float
    delta0: float
    delta1: float
    delta2: float
    delta3: float
    lam: float
    lam_minus_one: float
    J: float
    S: float  # ρ_b(ε^2)^{1/2} + R ρ_σ(ε^2)/ε  (δ replaces ε in the regular case)
    R_m: float
    eps: float  # ε_{m_k} (singular) or δ_k (regular)
    h_b: float  # mollification bandwidths for Δ0/2
    h_sigma: float


@dataclass(frozen=True)
class CnrSchedule:
    mode: str
    rows: tuple
    kernel: Kernel = field(repr=False)
    rho_b: ModulusSpec
    rho_sigma: ModulusSpec

    @property
    def identity_factor(self) -> float:
        """``(λ-1)Δ1 = factor · Δ3``: 1/2 for singular kernels, 1 for regular ones."""
        return 0.5 if self.mode == "singular" else 1.0

    def as_table(self) -> list[dict]:
        return [row.__dict__.copy() for row in self.rows]


def _row(k, m, M, S, R, e, delta0, delta1, delta2, rho_b, rho_s, factor) -> ScheduleRow:
    lmo = math.sqrt(S) / e
    # Δ3 is defined through the identity so that it holds bit-for-bit
    delta3 = (lmo * delta1) / factor
    hb = mollify_bandwidth(rho_b, delta0 / 2.0) if delta0 > 0 else 0.0
    hs = mollify_bandwidth(rho_s, delta0 / 2.0) if delta0 > 0 else 0.0
    return ScheduleRow(k, m, M, delta0, delta1, delta2, delta3, 1.0 + lmo, lmo, S ** -0.25, S, R, e, hb, hs)


def _ladder(start: float, ratio: float):
    x = start
    while x <= LADDER_CAP:
        yield x
        x *= ratio


def build_schedule(kernel: Kernel, rho_b: ModulusSpec, rho_sigma: ModulusSpec, k_max: int = 5,
                   mode: str = "auto", m_start: float = 1.0, ratio: float = 2.0) -> CnrSchedule:
    """Emit ``k_max`` schedule rows along a geometric ladder of truncation levels.

    Singular kernels: ``m`` runs over ``m_start·ratio^j``; a level is accepted
    when ``ε_m <= 1``, ``S_m <= 108^{-4}`` and the balance ratio
    ``R_m ρ_σ(ε_m^2)/ε_m`` is below the previous row's.  ``M_k`` is the first
    ladder level from ``m_k`` up with ``ρ(ε_M/r(M)) <= Δ0`` for both moduli.
    Regular kernels use ``δ = ratio^{-j}`` and ``m = M = 1``.
    """
    if mode == "auto":
        mode = "regular" if kernel.regular else "singular"
    if mode not in ("singular", "regular"):
        raise ValueError(f"unknown schedule mode {mode!r}")
    if mode == "singular" and kernel.regular:
        raise ValueError("singular schedule requested for a regular kernel")
    if not (isinstance(k_max, int) and k_max >= 1):
        raise ValueError("k_max must be a positive integer")
    if not ratio > 1:
        raise ValueError("ladder ratio must exceed 1")

    report = check_balance(kernel, rho_sigma)
    if not report.verdict:
        raise BalanceFailure(
            f"balance condition fails: {report.liminf_name} does not vanish (tail slope {report.slope:.3g})",
            report=report,
        )

    rows = []
    if mode == "regular":
        mass = compute_R_m(kernel, 1.0)
        for j, dlt in enumerate(_ladder(1.0, ratio)):
            dlt = 1.0 / dlt
            S = rho_b.rho(dlt * dlt) ** 0.5 + rho_sigma.rho(dlt * dlt) / dlt
            if S == 0.0:
                raise ScheduleSearchError("both moduli vanish; the coefficients are constant")
            if S > ADMISSIBLE_S or (rows and S >= rows[-1].S):
                continue
            delta0 = rho_b.rho(dlt * dlt) ** 0.5 * dlt + rho_sigma.rho(dlt * dlt)
            rows.append(_row(len(rows) + 1, 1.0, 1.0, S, mass, dlt, delta0, dlt * dlt, 1.0, rho_b, rho_sigma, 1.0))
            if len(rows) == k_max:
                break
        else:
            raise ScheduleSearchError(f"δ ladder exhausted with {len(rows)} of {k_max} rows")
        return CnrSchedule("regular", tuple(rows), kernel, rho_b, rho_sigma)

    r = kernel.weight
    M_prev = m_start
    last_ratio = math.inf
    for m in _ladder(m_start, ratio):
        e = compute_eps_m(kernel, m)
        if not (0 < e <= 1):
            continue
        R = compute_R_m(kernel, m)
        bal = R * rho_sigma.rho(e * e) / e
        S = rho_b.rho(e * e) ** 0.5 + bal
        if S > ADMISSIBLE_S or bal >= last_ratio:
            continue
        delta0 = (rho_b.rho(e * e) ** 0.5 * e + R * rho_sigma.rho(e * e)) / (1.0 + R)
        # smallest admissible M >= max(m, previous M)
        for M in _ladder(max(m, M_prev), ratio):
            q = compute_eps_m(kernel, M) / float(r.r(M))
            if rho_b.rho(q) <= delta0 and rho_sigma.rho(q) <= delta0:
                break
        else:
            raise ScheduleSearchError(f"no admissible M found below {LADDER_CAP:g} for m={m:g}")
        M_prev = M
        last_ratio = bal
        rows.append(_row(len(rows) + 1, m, M, S, R, e, delta0, e * e / 2.0, e / 2.0, rho_b, rho_sigma, 0.5))
        if len(rows) == k_max:
            break
    else:
        raise ScheduleSearchError(
            f"m ladder reached {LADDER_CAP:g} with {len(rows)} of {k_max} admissible rows "
            f"(S <= 108^-4 needs larger m than floating point allows)"
        )
    return CnrSchedule("singular", tuple(rows), kernel, rho_b, rho_sigma)


# ---------------------------------------------------------------------------
# Coupled simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CouplingParams:
    m: float
    M_bar: float
    delta0: float
    delta1: float
    delta2: float
    delta3: float
    lam: float
    J: float
    M: object = INF  # truncation level of the target equation

    def __post_init__(self):
        if not self.m >= 1 or not self.M_bar >= self.m:
            raise ValueError("need 1 <= m <= M_bar")
        if self.M is not INF and self.M < self.M_bar:
            raise ValueError("need M >= M_bar")
        for name in ("delta0", "delta1", "delta2", "delta3"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not self.lam > 1:
            raise ValueError("lambda must exceed 1")
        if not self.J >= 1:
            raise ValueError("J must be >= 1")

    @classmethod
    def from_row(cls, row: ScheduleRow, M=INF) -> "CouplingParams":
        return cls(row.m, row.M, row.delta0, row.delta1, row.delta2, row.delta3, row.lam, row.J, M)


@dataclass(frozen=True, eq=False)
class CouplingConfig:
    grid: LiftGrid
    target: CoefficientPair
    reference: CoefficientPair
    params: CouplingParams
    T: float
    h: float
    samples: int
    seed: int
    y0: np.ndarray | None = None
    tag: str = "cnr"
    threads: int = 1

    def __post_init__(self):
        grid_steps(self.T, self.h)
        if self.reference.c_ue <= 0:
            raise ValueError("reference pair must declare c_ue > 0")
        if (self.target.n, self.target.d) != (self.reference.n, self.reference.d):
            raise ValueError("target and reference pairs have different dimensions")
        y0 = np.zeros((self.grid.size, self.target.n)) if self.y0 is None else np.asarray(self.y0, dtype=float)
        if y0.shape != (self.grid.size, self.target.n):
            raise ValueError("initial state has the wrong shape")
        object.__setattr__(self, "y0", y0)

    @property
    def steps(self) -> int:
        return grid_steps(self.T, self.h)


@dataclass(frozen=True)
class CouplingResult:
    path_id: int
    tau: float  # grid time at which a threshold was first reached (inf if never)
    tau_event: str  # "delta1", "delta2", "delta3" or ""
    zeta: float
    in_omega_hat: bool
    energy: float  # ∫|v|^2 dt
    control_integral: float  # ∫_0^τ |μ_m[Y-Ŷ]|^2 dt actually applied (fractional last step)
    overshoot: float  # grid integral at τ minus Δ1 when the Δ1 threshold fired
    lyapunov_max: float
    aborted: str = ""


@dataclass(frozen=True)
class CouplingBounds:
    R_m: float
    eps_m: float
    c_ue: float
    omega_threshold: float  # right side of the Ω̂ inequality
    control_bound: float  # bound on P(not Ω̂)
    energy_cap: float  # λ^2 Δ1 / c_ue
    tv_bound: float  # λ Δ1^{1/2} / (2 √c_ue)
    inclusion_holds: bool  # threshold below every τ-trigger level, so Ω̂ ⊂ {ζ < τ}


def coupling_bounds(cfg: CouplingConfig) -> CouplingBounds:
    p = cfg.params
    R = cfg.grid.R_m(p.m)
    e = cfg.grid.eps_m(p.m)
    rb, rs = cfg.reference.rho_b, cfg.reference.rho_sigma
    arg = p.delta1 + e * p.delta2
    A = 9.0 * p.J * ((1.0 + R) * p.delta0 + rb.rho(arg) ** 0.5 * p.delta1**0.5 + R * rs.rho(arg)) + p.delta3 / 3.0
    ctrl = 324.0 * p.J * R / p.delta3 * (p.delta0 + rs.rho(arg))
    c = cfg.reference.c_ue
    incl = A < min(2.0 * (p.lam - 1.0) * p.delta1, 2.0 * p.delta2, p.delta3)
    return CouplingBounds(R, e, c, A, ctrl, p.lam**2 * p.delta1 / c, p.lam * p.delta1**0.5 / (2.0 * c**0.5), incl)


def check_hypotheses(cfg: CouplingConfig, xs=None) -> dict:
    """Sampled check of ``sup|b - b̄|^2 <= Δ0`` (same for σ) and the ``M̄`` conditions."""
    p = cfg.params
    n = cfg.target.n
    if xs is None:
        xs = np.linspace(-10.0, 10.0, 4001)[:, None] * np.ones(n)
    xs = np.asarray(xs, dtype=float).reshape(-1, n)
    db = np.sum((cfg.target.drift(xs) - cfg.reference.drift(xs)) ** 2, axis=-1).max()
    ds = np.sum((cfg.target.diffusion(xs) - cfg.reference.diffusion(xs)) ** 2, axis=(-1, -2)).max()
    r_M = float(cfg.grid.kernel.weight.r(p.M_bar))
    q = cfg.grid.eps_m(p.M_bar) / r_M
    return {
        "sup_drift_gap": float(db),
        "sup_diffusion_gap": float(ds),
        "rho_b_Mbar": float(cfg.reference.rho_b.rho(q)),
        "rho_sigma_Mbar": float(cfg.reference.rho_sigma.rho(q)),
        "ok": bool(db <= p.delta0 and ds <= p.delta0 and cfg.reference.rho_b.rho(q) <= p.delta0
                   and cfg.reference.rho_sigma.rho(q) <= p.delta0),
    }


def _pinv_apply(s: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``σᵀ(σσᵀ)^{-1} u`` per path, plus a mask of paths where the solve failed."""
    a = s @ np.swapaxes(s, -1, -2)
    ok = np.isfinite(a).all(axis=(-1, -2))
    if a.shape[-1] == 1:
        ok &= a[..., 0, 0] > 0
        z = np.where(ok[:, None], u / np.where(ok, a[..., 0, 0], 1.0)[:, None], 0.0)
    else:
        ok &= np.linalg.eigvalsh(np.where(ok[:, None, None], a, np.eye(a.shape[-1]))).min(axis=-1) > 0
        safe = np.where(ok[:, None, None], a, np.eye(a.shape[-1]))
        z = np.linalg.solve(safe, u[..., None])[..., 0]
        z = np.where(ok[:, None], z, 0.0)
    return np.einsum("pnd,pn->pd", s, z), ~ok


def _coupled_block(cfg: CouplingConfig, bounds: CouplingBounds, ids: np.ndarray) -> list[CouplingResult]:
    grid, p = cfg.grid, cfg.params
    S, P, n, d, h = cfg.steps, ids.size, cfg.target.n, cfg.target.d, cfg.h
    factors = step_factors(grid, h)
    dW = brownian_increments(cfg.seed, cfg.tag, ids, S, d, h)
    w = grid.weights
    c_m = w * grid.r_m(p.m)
    c_M = w * grid.r_m(p.M)
    c_Mb = w * grid.r_m(p.M_bar)
    c_diss = w * grid.theta * grid.r_m(p.m)
    c_V = w * (grid.theta + 1.0) * grid.r

    Y = np.broadcast_to(cfg.y0, (P,) + cfg.y0.shape).copy()
    Yh = Y.copy()
    I1 = np.zeros(P)
    I2 = np.zeros(P)
    IV = np.zeros(P)
    energy = np.zeros(P)
    applied = np.zeros(P)
    overshoot = np.zeros(P)
    tau = np.full(P, math.inf)
    event = np.full(P, "", dtype=object)
    zeta = np.full(P, p.J)
    zeta_hit = np.zeros(P, dtype=bool)
    lyap_max = np.zeros(P)
    omega = np.ones(P, dtype=bool)
    aborted = np.full(P, "", dtype=object)
    alive = np.ones(P, dtype=bool)

    for i in range(S):
        t = i * h
        D = Y - Yh
        u = np.einsum("j,pjk->pk", c_m, D)
        active = alive & ~(tau <= t)
        xY = np.einsum("j,pjk->pk", c_M, Y)
        xH = np.einsum("j,pjk->pk", c_Mb, Yh)
        with np.errstate(all="ignore"):
            bY, sY = cfg.target.drift(xY), cfg.target.diffusion(xY)
            bH, sH = cfg.reference.drift(xH), cfg.reference.diffusion(xH)
        finite = (np.isfinite(bY).all(-1) & np.isfinite(sY).all((-1, -2))
                  & np.isfinite(bH).all(-1) & np.isfinite(sH).all((-1, -2)))
        for q in np.flatnonzero(alive & ~finite):
            aborted[q] = str(SimulationAbort("non-finite coefficient value", path=int(ids[q]), step=i))
        alive &= finite

        usq = np.sum(u * u, axis=-1)
        inc1 = usq * h
        # control runs only for the part of the step before the Δ1 budget is used up
        frac = np.ones(P)
        crossing = active & (I1 + inc1 >= p.delta1)
        with np.errstate(divide="ignore", invalid="ignore"):
            frac[crossing] = np.clip((p.delta1 - I1[crossing]) / inc1[crossing], 0.0, 1.0)
        frac[~active] = 0.0

        v, bad = _pinv_apply(np.where(alive[:, None, None], sH, 0.0), u)
        for q in np.flatnonzero(alive & active & bad):
            aborted[q] = str(SimulationAbort("σ̄σ̄ᵀ solve failed", path=int(ids[q]), step=i))
        alive &= ~(active & bad)
        v *= p.lam
        energy += np.where(alive, np.sum(v * v, axis=-1) * frac * h, 0.0)
        applied += np.where(alive, usq * frac * h, 0.0)

        # left-point integrands at t_i, before the state advances
        diss = np.sum(D * D, axis=-1) @ c_diss
        vnorm = np.sum(Y * Y, axis=-1) @ c_V
        open_ = np.isinf(tau)
        live = open_ & ~zeta_hit  # t_i < τ∧ζ

        ctrl = p.lam * frac[:, None] * u
        zero = ~alive
        bY[zero] = 0.0
        bH[zero] = 0.0
        sY[zero] = 0.0
        sH[zero] = 0.0
        ctrl[zero] = 0.0
        Y = step(Y, bY, sY, dW[:, i], h, grid, factors)
        Yh = step(Yh, bH + ctrl, sH, dW[:, i], h, grid, factors)

        I1 = I1 + np.where(open_, inc1, 0.0)
        I2 = I2 + np.where(open_, diss * h, 0.0)
        IV = IV + vnorm * h
        t1 = (i + 1) * h

        Dn = Y - Yh
        nm = np.sum(Dn * Dn, axis=-1) @ c_m
        pending = alive & np.isinf(tau)
        hit1 = pending & (I1 >= p.delta1)
        hit2 = pending & (I2 >= p.delta2)
        hit3 = pending & (nm >= p.delta3)
        fired = hit1 | hit2 | hit3
        overshoot[hit1] = I1[hit1] - p.delta1
        event[hit3] = "delta3"
        event[hit2] = "delta2"
        event[hit1] = "delta1"
        tau[fired] = t1

        newz = ~zeta_hit & ((IV >= p.J) | (t1 >= p.J))
        zeta[newz] = np.minimum(t1, p.J)
        # Lyapunov functional on grid times up to τ∧ζ (inclusive)
        L = nm + 2.0 * I2 + 2.0 * (p.lam - 1.0) * I1
        lyap_max = np.where(live, np.maximum(lyap_max, L), lyap_max)
        omega &= ~(live & (L > bounds.omega_threshold))
        zeta_hit |= newz

    return [
        CouplingResult(int(ids[q]), float(tau[q]), str(event[q]), float(zeta[q]), bool(omega[q]),
                       float(energy[q]), float(applied[q]), float(overshoot[q]), float(lyap_max[q]),
                       str(aborted[q]))
        for q in range(P)
    ]


@dataclass(frozen=True, eq=False)
class CouplingEnsemble:
    results: tuple
    params: CouplingParams
    bounds: CouplingBounds
    horizon: float

    @property
    def valid(self) -> list[CouplingResult]:
        return [r for r in self.results if not r.aborted]

    def violation_rate(self) -> tuple[float, float]:
        """Empirical ``P(not Ω̂)`` and its standard error."""
        v = np.array([not r.in_omega_hat for r in self.valid], dtype=float)
        p = float(v.mean())
        return p, math.sqrt(max(p * (1.0 - p), 0.0) / v.size)

    def tv_estimate(self) -> float:
        """``E[∫|v|^2]^{1/2} / 2``."""
        return 0.5 * math.sqrt(float(np.mean([r.energy for r in self.valid])))

    def aggregate(self) -> dict:
        p, se = self.violation_rate()
        return {
            "paths": len(self.results),
            "aborted": len(self.results) - len(self.valid),
            "violation_rate": p,
            "violation_se": se,
            "control_bound": self.bounds.control_bound,
            "omega_threshold": self.bounds.omega_threshold,
            "energy_cap": self.bounds.energy_cap,
            "energy_max": max((r.energy for r in self.valid), default=0.0),
            "tv_estimate": self.tv_estimate(),
            "tv_bound": self.bounds.tv_bound,
            "tau_fired": sum(math.isfinite(r.tau) for r in self.valid),
            "overshoot_max": max((r.overshoot for r in self.valid), default=0.0),
        }


def simulate_coupled(cfg: CouplingConfig) -> CouplingEnsemble:
    bounds = coupling_bounds(cfg)
    parts = map_blocks(lambda ids: _coupled_block(cfg, bounds, ids), cfg.samples, cfg.threads)
    return CouplingEnsemble(tuple(r for part in parts for r in part), cfg.params, bounds, cfg.T)


def girsanov_energy(result: CouplingResult) -> float:
    return result.energy
