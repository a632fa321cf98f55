"""Two-sample comparisons of simulated laws."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from .rng import stream
from .see_sim import PathEnsemble

PERMUTATIONS = 199
MIN_SAMPLES = 100


def ks_critical(n: int, m: int, level: float = 0.01) -> float:
    """Asymptotic two-sample KS critical value ``c(α) √((n+m)/(nm))``."""
    c = math.sqrt(-0.5 * math.log(level / 2.0))
    return c * math.sqrt((n + m) / (n * m))


def wasserstein_1d(a, b) -> float:
    """1-Wasserstein distance between two empirical laws on the line.

    Equal sizes use the sorted-sample coupling directly; otherwise the
    quantile functions are integrated exactly over their common breakpoints.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    qa = np.arange(1, a.size + 1) / a.size
    qb = np.arange(1, b.size + 1) / b.size
    q = np.union1d(qa, qb)
    dq = np.diff(np.concatenate([[0.0], q]))
    ia = np.minimum(np.searchsorted(qa, q, side="left"), a.size - 1)
    ib = np.minimum(np.searchsorted(qb, q, side="left"), b.size - 1)
    return float(np.sum(np.abs(a[ia] - b[ib]) * dq))


@dataclass(frozen=True)
class MarginalReport:
    t: float
    component: int
    ks: float
    ks_pvalue: float
    ks_critical: float
    wasserstein: float
    n_a: int
    n_b: int


def marginal_distance(ens_a: PathEnsemble, ens_b: PathEnsemble, t: float, component: int = 0,
                      level: float = 0.01) -> MarginalReport:
    """KS statistic and 1-Wasserstein distance between the time-``t`` marginals."""
    a = ens_a.marginal(t, component)
    b = ens_b.marginal(t, component)
    if min(a.size, b.size) < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples per ensemble")
    res = stats.ks_2samp(a, b)
    return MarginalReport(t, component, float(res.statistic), float(res.pvalue), ks_critical(a.size, b.size, level),
                          wasserstein_1d(a, b), a.size, b.size)


def _paths(ens) -> np.ndarray:
    if isinstance(ens, PathEnsemble):
        X = ens.X[ens.valid]
        return X.reshape(X.shape[0], -1), ens.h
    X = np.asarray(ens, dtype=float)
    return X.reshape(X.shape[0], -1), 1.0


def _energy_from_distances(D: np.ndarray, na: int) -> float:
    nb = D.shape[0] - na
    ab = D[:na, na:].mean()
    aa = D[:na, :na].sum() / (na * (na - 1)) if na > 1 else 0.0
    bb = D[na:, na:].sum() / (nb * (nb - 1)) if nb > 1 else 0.0
    return float(2.0 * ab - aa - bb)


def energy_distance_paths(ens_a, ens_b, weight: float | None = None) -> float:
    """Energy distance with the discrete ``L^2(0,T)`` path metric.

    ``weight`` scales squared Euclidean distances between flattened paths
    (default: the time step, giving ``Σ_i h |x_i - y_i|^2``).
    """
    A, ha = _paths(ens_a)
    B, _ = _paths(ens_b)
    if A.shape[1] != B.shape[1]:
        raise ValueError("ensembles do not share a time grid")
    wt = ha if weight is None else weight
    D = cdist(np.vstack([A, B]), np.vstack([A, B])) * math.sqrt(wt)
    return max(_energy_from_distances(D, A.shape[0]), 0.0)


@dataclass(frozen=True)
class PermutationReport:
    statistic: float
    pvalue: float
    null_quantile_95: float
    permutations: int


def energy_permutation_test(ens_a, ens_b, weight: float | None = None, permutations: int = PERMUTATIONS,
                            seed: int = 0) -> PermutationReport:
    """Permutation test of equal path laws based on the energy distance."""
    A, ha = _paths(ens_a)
    B, _ = _paths(ens_b)
    wt = ha if weight is None else weight
    Z = np.vstack([A, B])
    D = cdist(Z, Z) * math.sqrt(wt)
    na = A.shape[0]
    obs = _energy_from_distances(D, na)
    rng = stream(seed, "permutation", 0)
    null = np.empty(permutations)
    for k in range(permutations):
        idx = rng.permutation(Z.shape[0])
        null[k] = _energy_from_distances(D[np.ix_(idx, idx)], na)
    p = (1.0 + np.sum(null >= obs)) / (permutations + 1.0)
    return PermutationReport(max(obs, 0.0), float(p), float(np.quantile(null, 0.95)), permutations)
