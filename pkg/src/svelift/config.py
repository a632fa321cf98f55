"""Experiment configuration: loading, validation and orchestration.

A config is a YAML or JSON mapping.  Sections (all optional except ``kernel``)::

    experiment: kernel-info        # what ``run`` executes
    seed: 0
    threads: 1
    kernel: {kind: fractional, alpha: 0.75, eta: null}
    grid: {N: 100, theta_min: 1.0e-4, theta_max: 1.0e4}
    coefficients:
      dim: 1
      drift: {name: zero_drift, params: {}}
      sigma: {name: zero_sigma, params: {}}
    simulation: {T: 1.0, h: 0.00390625, samples: 100, y0: 0.0, drift_rule: point}
    balance: true                  # refuse configs whose diffusion modulus fails the balance test
    schedule: {k_max: 3, mode: auto, m_start: 1.0, ratio: 2.0}
    cnr: {...}                     # coupling run, see ``_cnr_section``
    demo: {alpha: 0.75, beta: 0.5, delta: 1.0e-3, N: 100, samples: 1000}
"""

from __future__ import annotations

import hashlib
import json
import math
import platform
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .cnr import CouplingConfig, CouplingParams, build_schedule, simulate_coupled
from .coefficients import CoefficientPair, make_pair, mollify
from .errors import AssumptionViolation, BalanceFailure, ConfigError, SveliftError
from .io import sha256_file, write_ensemble, write_rows, write_table
from .kernel import INF, Kernel, check_balance, compute_eps_m, compute_R_m
from .lift_grid import LiftGrid, discretize, kernel_error
from .see_sim import SimulationConfig, constant_state, grid_steps, simulate
from .volterra_sim import MAX_STEPS, demo_regularization, simulate_direct

EXPERIMENTS = (
    "kernel-info",
    "discretize",
    "kernel-error",
    "simulate-lift",
    "simulate-direct",
    "demo-regularization",
    "cnr",
    "schedule",
)
KERNEL_KINDS = ("fractional", "gamma", "atomic", "log_tail")


# ---------------------------------------------------------------------------
# field helpers
# ---------------------------------------------------------------------------


def _section(raw: dict, key: str, required: bool = False) -> dict:
    v = raw.get(key)
    if v is None:
        if required:
            raise ConfigError(key, "missing section")
        return {}
    if not isinstance(v, dict):
        raise ConfigError(key, "expected a mapping")
    return v


def _num(sec: dict, key: str, where: str, default=None, cond=None, msg: str = "") -> float | None:
    if key not in sec or sec[key] is None:
        if default is ...:
            raise ConfigError(f"{where}.{key}", "missing value")
        return default
    v = sec[key]
    if isinstance(v, str):
        try:
            v = float(v)
        except ValueError:
            raise ConfigError(f"{where}.{key}", f"expected a number, got {v!r}") from None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}.{key}", f"expected a finite number, got {v!r}")
    if cond is not None and not cond(v):
        raise ConfigError(f"{where}.{key}", msg or f"invalid value {v!r}")
    return float(v)


def _int(sec: dict, key: str, where: str, default=None, lo: int = 1) -> int:
    if key not in sec or sec[key] is None:
        if default is ...:
            raise ConfigError(f"{where}.{key}", "missing value")
        return default
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(f"{where}.{key}", f"expected an integer >= {lo}, got {v!r}")
    return v


def _unknown(sec: dict, allowed, where: str) -> None:
    extra = sorted(set(sec) - set(allowed))
    if extra:
        raise ConfigError(f"{where}.{extra[0]}" if where else extra[0], "unknown field")


# ---------------------------------------------------------------------------
# sections
# ---------------------------------------------------------------------------


def _kernel(sec: dict) -> Kernel:
    _unknown(sec, ("kind", "alpha", "beta", "eta", "weights", "nodes"), "kernel")
    kind = sec.get("kind")
    if kind not in KERNEL_KINDS:
        raise ConfigError("kernel.kind", f"expected one of {', '.join(KERNEL_KINDS)}, got {kind!r}")
    eta = _num(sec, "eta", "kernel", None, lambda v: 0 < v <= 0.5, "eta must lie in (0,1/2]")
    try:
        if kind in ("fractional", "gamma"):
            alpha = _num(sec, "alpha", "kernel", ..., lambda v: 0.5 < v < 1, "alpha must lie in (1/2,1)")
            if kind == "fractional":
                return Kernel.fractional(alpha, eta)
            beta = _num(sec, "beta", "kernel", ..., lambda v: v > 0, "beta must be > 0")
            return Kernel.gamma(alpha, beta, eta)
        if kind == "atomic":
            w, nd = sec.get("weights"), sec.get("nodes")
            if not isinstance(w, list) or not w:
                raise ConfigError("kernel.weights", "expected a non-empty list")
            if not isinstance(nd, list) or len(nd) != len(w):
                raise ConfigError("kernel.nodes", "expected a list as long as kernel.weights")
            return Kernel.atomic([float(x) for x in w], [float(x) for x in nd], eta)
        if eta is not None:
            raise ConfigError("kernel.eta", "the log-tail kernel fixes its own weight")
        return Kernel.log_counterexample()
    except AssumptionViolation as exc:
        raise ConfigError("kernel.eta" if eta is not None else "kernel", str(exc)) from None
    except ValueError as exc:
        msg = str(exc)
        key = next((k for k in ("alpha", "beta", "eta", "weights", "nodes") if k in msg), "kind")
        raise ConfigError(f"kernel.{key}", msg) from None


def _grid_spec(sec: dict) -> dict:
    _unknown(sec, ("N", "theta_min", "theta_max", "absorb_low_mass"), "grid")
    lo = _num(sec, "theta_min", "grid", 1e-4, lambda v: v > 0, "theta_min must be > 0")
    hi = _num(sec, "theta_max", "grid", 1e4, lambda v: v > lo, "theta_max must exceed theta_min")
    absorb = sec.get("absorb_low_mass", True)
    if not isinstance(absorb, bool):
        raise ConfigError("grid.absorb_low_mass", "expected true or false")
    return {"N": _int(sec, "N", "grid", 100), "theta_min": lo, "theta_max": hi, "absorb_low_mass": absorb}


def _coef_entry(sec, where: str, default: str) -> tuple[str, dict]:
    if sec is None:
        return default, {}
    if isinstance(sec, str):
        return sec, {}
    if not isinstance(sec, dict):
        raise ConfigError(where, "expected a registry name or {name, params}")
    _unknown(sec, ("name", "params"), where)
    params = sec.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError(f"{where}.params", "expected a mapping")
    return sec.get("name", default), params


def _pair(sec: dict, where: str = "coefficients") -> CoefficientPair:
    _unknown(sec, ("dim", "drift", "sigma"), where)
    dim = _int(sec, "dim", where, 1)
    d_name, d_par = _coef_entry(sec.get("drift"), f"{where}.drift", "zero_drift")
    s_name, s_par = _coef_entry(sec.get("sigma"), f"{where}.sigma", "zero_sigma")
    try:
        return make_pair(d_name, d_par, s_name, s_par, dim)
    except ConfigError as exc:
        # registry errors name the entry; prefix the section
        head, _, key = exc.field.partition(".")
        if not key:
            name = f"{where}.{head}"
        else:
            name = f"{where}.{'drift' if head == d_name else 'sigma'}.params.{key}"
        raise ConfigError(name, str(exc).split(": ", 1)[-1]) from None


def _sim(sec: dict) -> dict:
    _unknown(sec, ("T", "h", "samples", "y0", "M", "drift_rule", "keep_state"), "simulation")
    T = _num(sec, "T", "simulation", 1.0, lambda v: v > 0, "T must be > 0")
    h = _num(sec, "h", "simulation", 2.0**-8, lambda v: v > 0, "h must be > 0")
    try:
        steps = grid_steps(T, h)
    except ValueError as exc:
        raise ConfigError("simulation.h", str(exc)) from None
    M = sec.get("M")
    M = INF if M is None or M == "inf" else _num(sec, "M", "simulation", None, lambda v: v >= 1, "M must be >= 1")
    rule = sec.get("drift_rule", "point")
    if rule not in ("point", "cell"):
        raise ConfigError("simulation.drift_rule", "expected 'point' or 'cell'")
    y0 = sec.get("y0", 0.0)
    try:
        y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    except (TypeError, ValueError):
        raise ConfigError("simulation.y0", "expected a number or a list of numbers") from None
    if not np.all(np.isfinite(y0)) or y0.ndim != 1:
        raise ConfigError("simulation.y0", "expected finite values")
    return {
        "T": T,
        "h": h,
        "steps": steps,
        "samples": _int(sec, "samples", "simulation", 100),
        "y0": y0,
        "M": M,
        "drift_rule": rule,
        "keep_state": bool(sec.get("keep_state", False)),
    }


def _schedule(sec: dict) -> dict:
    _unknown(sec, ("k_max", "mode", "m_start", "ratio"), "schedule")
    mode = sec.get("mode", "auto")
    if mode not in ("auto", "singular", "regular"):
        raise ConfigError("schedule.mode", "expected auto, singular or regular")
    return {
        "k_max": _int(sec, "k_max", "schedule", 3),
        "mode": mode,
        "m_start": _num(sec, "m_start", "schedule", 1.0, lambda v: v >= 1, "m_start must be >= 1"),
        "ratio": _num(sec, "ratio", "schedule", 2.0, lambda v: v > 1, "ratio must exceed 1"),
    }


_PARAM_KEYS = ("m", "M_bar", "delta0", "delta1", "delta2", "delta3", "lam", "J")


def _cnr_section(sec: dict) -> dict:
    """``reference`` (a coefficients block), ``mollify`` (Δ0 used to smooth it, or null) and
    ``params`` (explicit coupling parameters; ``m``/``M_bar`` may be ``grid_max``)."""
    _unknown(sec, ("reference", "mollify", "params"), "cnr")
    ref = _section(sec, "reference")
    moll = _num(sec, "mollify", "cnr", None, lambda v: v > 0, "mollify must be > 0")
    params = _section(sec, "params", required=True) if "params" in sec else None
    if params is None:
        raise ConfigError("cnr.params", "missing section")
    _unknown(params, _PARAM_KEYS, "cnr.params")
    out = {}
    for k in _PARAM_KEYS:
        if params.get(k) == "grid_max" and k in ("m", "M_bar"):
            out[k] = "grid_max"
        else:
            out[k] = _num(params, k, "cnr.params", ...)
    return {"reference": ref, "mollify": moll, "params": out}


def _demo(sec: dict) -> dict:
    _unknown(sec, ("alpha", "beta", "delta", "N", "samples", "T", "h", "seed_direct"), "demo")
    out = {
        "alpha": _num(sec, "alpha", "demo", 0.75, lambda v: 0.5 < v < 1, "alpha must lie in (1/2,1)"),
        "beta": _num(sec, "beta", "demo", 0.5, lambda v: 0 < v < 1, "beta must lie in (0,1)"),
        "delta": _num(sec, "delta", "demo", 1e-3, lambda v: v > 0, "delta must be > 0"),
        "N": _int(sec, "N", "demo", 100),
        "samples": _int(sec, "samples", "demo", 1000),
        "T": _num(sec, "T", "demo", 1.0, lambda v: v > 0, "T must be > 0"),
        "h": _num(sec, "h", "demo", 2.0**-8, lambda v: v > 0, "h must be > 0"),
        "seed_direct": _int(sec, "seed_direct", "demo", None, lo=0),
    }
    try:
        steps = grid_steps(out["T"], out["h"])
    except ValueError as exc:
        raise ConfigError("demo.h", str(exc)) from None
    if steps > MAX_STEPS:
        raise ConfigError("demo.h", f"direct scheme is capped at {MAX_STEPS} steps")
    return out


# ---------------------------------------------------------------------------
# validated config
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    raw: dict
    experiment: str
    seed: int
    threads: int
    kernel: Kernel
    grid_spec: dict
    pair: CoefficientPair
    sim: dict
    schedule: dict | None = None
    cnr: dict | None = None
    demo: dict = field(default_factory=dict)
    m_values: tuple = (1.0, 10.0, 100.0)
    t_values: tuple = ()
    source: str = ""

    @cached_property
    def grid(self) -> LiftGrid:
        return discretize(self.kernel, **self.grid_spec)

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, seed: int | None = None, threads: int | None = None) -> "ExperimentConfig":
        raw = dict(self.raw)
        if seed is not None:
            raw["seed"] = seed
        if threads is not None:
            raw["threads"] = threads
        return validate(raw, self.source)


_TOP = ("experiment", "seed", "threads", "kernel", "grid", "coefficients", "simulation", "balance", "schedule",
        "cnr", "demo", "m_values", "t_values")


def _float_list(raw: dict, key: str, cond, msg: str) -> tuple | None:
    v = raw.get(key)
    if v is None:
        return None
    if not isinstance(v, list) or not v:
        raise ConfigError(key, "expected a non-empty list of numbers")
    out = []
    for i, x in enumerate(v):
        try:
            x = float(x)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}[{i}]", f"expected a number, got {x!r}") from None
        if not cond(x):
            raise ConfigError(f"{key}[{i}]", msg)
        out.append(x)
    return tuple(out)


def validate(raw: dict, source: str = "") -> ExperimentConfig:
    """Validate a parsed mapping; every failure raises ConfigError naming the field."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    _unknown(raw, _TOP, "")
    exp = raw.get("experiment", "kernel-info")
    if exp not in EXPERIMENTS:
        raise ConfigError("experiment", f"expected one of {', '.join(EXPERIMENTS)}, got {exp!r}")
    seed = _int(raw, "seed", "", 0, lo=0) if "seed" in raw else 0
    threads = _int(raw, "threads", "", 1) if "threads" in raw else 1
    kernel = _kernel(_section(raw, "kernel", required=exp != "demo-regularization") or {"kind": "fractional",
                                                                                           "alpha": 0.75})
    grid_spec = _grid_spec(_section(raw, "grid"))
    pair = _pair(_section(raw, "coefficients"))
    sim = _sim(_section(raw, "simulation"))
    if sim["y0"].size not in (1, pair.n):
        raise ConfigError("simulation.y0", f"expected 1 or {pair.n} values")
    if exp == "simulate-direct" and sim["steps"] > MAX_STEPS:
        raise ConfigError("simulation.h", f"direct scheme is capped at {MAX_STEPS} steps, got {sim['steps']}")
    schedule = _schedule(_section(raw, "schedule")) if "schedule" in raw or exp == "schedule" else None
    cnr = _cnr_section(_section(raw, "cnr", required=True)) if exp == "cnr" else None
    m_values = _float_list(raw, "m_values", lambda v: v >= 1, "m must be >= 1") or (1.0, 10.0, 100.0)
    t_values = _float_list(raw, "t_values", lambda v: v > 0, "t must be > 0") or tuple(np.geomspace(1e-2, 1.0, 50))

    balance = raw.get("balance", False)
    if not isinstance(balance, bool):
        raise ConfigError("balance", "expected true or false")
    if balance or schedule is not None:
        # cheap refusal before any simulation is attempted
        rep = check_balance(kernel, pair.rho_sigma)
        if not rep.verdict:
            raise ConfigError(
                "coefficients.sigma",
                f"schedule refused: balance condition fails, {rep.liminf_name} does not vanish "
                f"(tail slope {rep.slope:.3g})",
            )
    return ExperimentConfig(raw, exp, seed, threads, kernel, grid_spec, pair, sim, schedule, cnr,
                            _demo(_section(raw, "demo")), m_values, t_values, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file not found: {path}")
    text = path.read_text()
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError("config", f"cannot parse {path.name}: {exc}") from None
    return validate(raw if raw is not None else {}, str(path))


# ---------------------------------------------------------------------------
# experiment stages; each returns the list of written files
# ---------------------------------------------------------------------------


def write_kernel_info(cfg: ExperimentConfig, out: Path) -> list[Path]:
    """``m,R_m,eps_m,R_rho_ratio`` table, kernel values and the balance verdict."""
    k, rho = cfg.kernel, cfg.pair.rho_sigma
    rows = []
    for m in cfg.m_values:
        R, e = compute_R_m(k, m), compute_eps_m(k, m)
        rows.append((m, R, e, R * rho.rho(e * e) / e if e > 0 else math.nan))
    files = [write_rows(out, ("m", "R_m", "eps_m", "R_rho_ratio"), rows)]
    t = np.asarray(cfg.t_values)
    files.append(write_table(out.with_name(out.stem + "_K.csv"), ("t", "K"), (t, k(t))))
    rep = check_balance(k, rho)
    files.append(write_rows(out.with_name(out.stem + "_balance.csv"), ("key", "value"), [
        ("mode", rep.mode), ("slope", rep.slope), ("verdict", rep.verdict),
        ("analytic_verdict", "" if rep.analytic_verdict is None else rep.analytic_verdict),
    ]))
    return files


def write_grid(cfg: ExperimentConfig, out: Path) -> list[Path]:
    g = cfg.grid
    return [write_table(out, ("theta", "weight", "r_theta"), (g.theta, g.weights, g.r))]


def write_kernel_error(cfg: ExperimentConfig, out: Path) -> list[Path]:
    rep = kernel_error(cfg.grid, np.asarray(cfg.t_values))
    return [write_table(out, ("t", "K", "K_N", "rel_err"), (rep.t, rep.K, rep.K_N, rep.rel_err))]


def _y0(cfg: ExperimentConfig) -> np.ndarray:
    return np.broadcast_to(cfg.sim["y0"], (cfg.pair.n,)).copy()


def run_lift(cfg: ExperimentConfig, seed: int | None = None, threads: int | None = None, keep_state: bool = False):
    s = cfg.sim
    sc = SimulationConfig(cfg.grid, cfg.pair, s["T"], s["h"], s["samples"], cfg.seed if seed is None else seed,
                          M=s["M"], y0=constant_state(cfg.grid, _y0(cfg)), tag="lift",
                          keep_state=keep_state or s["keep_state"], threads=cfg.threads if threads is None else threads)
    return simulate(sc)


def run_direct(cfg: ExperimentConfig, seed: int | None = None, threads: int | None = None):
    s = cfg.sim
    y0 = _y0(cfg)
    t = np.arange(s["steps"] + 1) * s["h"]
    # the lift started from the constant state y0 has forcing K_N(t) y0; use K(t) y0 here
    kt = np.zeros_like(t)
    kt[1:] = cfg.kernel(t[1:])
    forcing = None if not np.any(y0) else kt[:, None] * y0[None, :]
    return simulate_direct(cfg.kernel, cfg.pair, forcing, s["T"], s["h"], cfg.seed if seed is None else seed,
                           s["samples"], s["drift_rule"], "direct", cfg.threads if threads is None else threads)


def write_simulation(cfg: ExperimentConfig, out: Path, direct: bool = False, dump_state: bool = False) -> list[Path]:
    ens = run_direct(cfg) if direct else run_lift(cfg, keep_state=dump_state)
    return [write_ensemble(out, ens, dump_state=dump_state and not direct)]


def write_demo(cfg: ExperimentConfig, out: Path, alpha: float | None = None, beta: float | None = None) -> list[Path]:
    d = dict(cfg.demo)
    if alpha is not None:
        d["alpha"] = alpha
    if beta is not None:
        d["beta"] = beta
    demo = demo_regularization(d["alpha"], d["beta"], d["T"], d["h"], d["delta"], d["N"], d["samples"], cfg.seed,
                               d["seed_direct"], cfg.threads)
    dl = d["delta"]
    files = [write_table(out, ("t", "branch_plus", "branch_minus", "perturbed_plus", "perturbed_minus", "unperturbed"),
                         (demo.t, demo.branch, -demo.branch, demo.perturbed[dl], demo.perturbed[-dl],
                          demo.perturbed[0.0]))]
    files.append(write_ensemble(out.with_name(out.stem + "_lift.csv"), demo.noisy_lift))
    files.append(write_ensemble(out.with_name(out.stem + "_direct.csv"), demo.noisy_direct))
    from .lawdist import marginal_distance

    rep = marginal_distance(demo.noisy_lift, demo.noisy_direct, float(demo.t[-1])) if d["samples"] >= 100 else None
    summary = [("separation", demo.separation()), ("branch_gap", 2.0 * demo.branch[-1])]
    if rep is not None:
        summary += [("ks", rep.ks), ("ks_critical", rep.ks_critical), ("wasserstein", rep.wasserstein)]
    files.append(write_rows(out.with_name(out.stem + "_summary.csv"), ("key", "value"), summary))
    return files


def make_schedule(cfg: ExperimentConfig):
    sc = cfg.schedule or _schedule({})
    try:
        return build_schedule(cfg.kernel, cfg.pair.rho_b, cfg.pair.rho_sigma, sc["k_max"], sc["mode"], sc["m_start"],
                              sc["ratio"])
    except BalanceFailure as exc:
        raise ConfigError("coefficients.sigma", f"schedule refused: {exc}") from None


_SCHEDULE_COLS = ("k", "m", "M", "delta0", "delta1", "delta2", "delta3", "lam", "lam_minus_one", "J", "S", "R_m",
                  "eps", "h_b", "h_sigma")


def write_schedule(cfg: ExperimentConfig, out: Path) -> list[Path]:
    sched = make_schedule(cfg)
    return [write_rows(out, _SCHEDULE_COLS, [[getattr(r, c) for c in _SCHEDULE_COLS] for r in sched.rows])]


def coupling_config(cfg: ExperimentConfig, seed: int | None = None, threads: int | None = None) -> CouplingConfig:
    c = cfg.cnr
    grid = cfg.grid
    top = float(grid.theta.max())
    p = {k: (top if v == "grid_max" else v) for k, v in c["params"].items()}
    ref = _pair(c["reference"], "cnr.reference") if c["reference"] else cfg.pair
    if c["mollify"] is not None:
        try:
            ref = mollify(ref, c["mollify"])
        except (SveliftError, ValueError) as exc:
            raise ConfigError("cnr.mollify", str(exc)) from None
    try:
        params = CouplingParams(p["m"], p["M_bar"], p["delta0"], p["delta1"], p["delta2"], p["delta3"], p["lam"],
                                p["J"], cfg.sim["M"])
        return CouplingConfig(grid, cfg.pair, ref, params, cfg.sim["T"], cfg.sim["h"], cfg.sim["samples"],
                              cfg.seed if seed is None else seed, constant_state(grid, _y0(cfg)), "cnr",
                              cfg.threads if threads is None else threads)
    except ValueError as exc:
        raise ConfigError("cnr.params", str(exc)) from None


_CNR_COLS = ("path_id", "tau", "tau_event", "zeta", "in_omega_hat", "energy", "control_integral", "overshoot",
             "lyapunov_max", "aborted")


def write_cnr(cfg: ExperimentConfig, out: Path) -> list[Path]:
    ens = simulate_coupled(coupling_config(cfg))
    files = [write_rows(out, _CNR_COLS, [[getattr(r, c) for c in _CNR_COLS] for r in ens.results])]
    agg = ens.aggregate()
    agg["inclusion_holds"] = ens.bounds.inclusion_holds
    files.append(write_rows(out.with_name(out.stem + "_aggregate.csv"), ("key", "value"), list(agg.items())))
    return files


_DEFAULT_NAMES = {
    "kernel-info": "kernel_info.csv",
    "discretize": "grid.csv",
    "kernel-error": "kernel_error.csv",
    "simulate-lift": "ensemble.csv",
    "simulate-direct": "ensemble.csv",
    "demo-regularization": "demo.csv",
    "cnr": "cnr.csv",
    "schedule": "schedule.csv",
}


def run_stage(cfg: ExperimentConfig, experiment: str, out: Path, **kw) -> list[Path]:
    """Run one stage; module failures are re-raised with the stage name."""
    stages = {
        "kernel-info": write_kernel_info,
        "discretize": write_grid,
        "kernel-error": write_kernel_error,
        "simulate-lift": write_simulation,
        "simulate-direct": lambda c, o, **k: write_simulation(c, o, direct=True),
        "demo-regularization": write_demo,
        "cnr": write_cnr,
        "schedule": write_schedule,
    }
    try:
        return stages[experiment](cfg, Path(out), **kw)
    except ConfigError:
        raise
    except (SveliftError, ValueError) as exc:
        raise SveliftError(f"stage {experiment!r} failed: {exc}") from exc


def write_manifest(cfg: ExperimentConfig, out_dir: Path, files) -> Path:
    out_dir = Path(out_dir)
    entries = {str(Path(f).relative_to(out_dir)) if Path(f).is_relative_to(out_dir) else str(f): sha256_file(f)
               for f in files}
    manifest = {
        "config_sha256": cfg.config_hash(),
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "versions": {"svelift": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "files": dict(sorted(entries.items())),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def run_experiment(cfg: ExperimentConfig, out_dir) -> Path:
    """Run ``cfg.experiment`` into ``out_dir``; the cnr recipe also writes its schedule table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    if cfg.experiment == "cnr" and cfg.schedule is not None:
        files += run_stage(cfg, "schedule", out_dir / "schedule.csv")
    files += run_stage(cfg, cfg.experiment, out_dir / _DEFAULT_NAMES[cfg.experiment])
    (out_dir / "config.json").write_text(json.dumps(cfg.raw, indent=2, sort_keys=True, default=str) + "\n")
    files.append(out_dir / "config.json")
    write_manifest(cfg, out_dir, files)
    return out_dir
