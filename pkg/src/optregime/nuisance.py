"""Empirical conditional tables, treatment weights and cross-fitting.

All nuisance functions are saturated: a conditional probability or mean is
the stratum frequency or stratum average among the fitting rows.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import EmptyStratumError, FoldTooSmallError, ZeroWeightError
from .trajectory import Dataset

DEFAULT_FLOOR = 1e-6


def _parse_target(target):
    """Accept ``"S1=1"``, ``"Y"``, ``("event", name, level)`` or ``("mean", name)``."""
    if isinstance(target, str):
        if "=" in target:
            name, level = target.split("=")
            return "event", name.strip(), int(level)
        return "mean", target.strip(), None
    kind = target[0]
    if kind == "event":
        return "event", target[1], int(target[2])
    return "mean", target[1], None


@dataclass(frozen=True)
class ConditionalTable:
    """Stratum -> estimate map for one target given discrete conditioning columns.

    For event targets the estimate is a proportion and ``n_levels`` is the
    number of observed target levels (used for Laplace smoothing of unseen
    strata). Strata never observed are absent from ``estimates``.
    """

    kind: str
    target: str
    level: object
    conditioning: tuple
    estimates: dict
    counts: dict
    n_levels: int = 2
    laplace: float = None

    def lookup(self, key):
        """Estimate for a stratum key; ``(value, smoothed)``."""
        key = tuple(int(k) for k in key)
        if key in self.estimates:
            return self.estimates[key], False
        if self.laplace is None or self.kind != "event":
            raise EmptyStratumError(
                f"stratum {dict(zip(self.conditioning, key))} unseen for target {self.target}"
            )
        return self.laplace / (self.laplace * self.n_levels), True

    def predict_rows(self, ds):
        codes, keys = ds.strata(self.conditioning)
        values = np.array([self.lookup(k)[0] for k in keys], dtype=np.float64)
        return values[codes]

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(self.conditioning) + ["estimate", "count"])
            for key in sorted(self.estimates):
                w.writerow(list(key) + [repr(self.estimates[key]), self.counts[key]])


def fit_conditional(ds, target, conditioning, laplace=None):
    """Saturated estimate of P(target event | strata) or E[target | strata]."""
    kind, name, level = _parse_target(target)
    conditioning = tuple(conditioning)
    codes, keys = ds.strata(conditioning)
    G = len(keys)
    counts = np.bincount(codes, minlength=G)
    values = ds.column(name) if isinstance(name, str) else np.asarray(name)
    if kind == "event":
        hits = np.bincount(codes, weights=(values == level).astype(np.float64), minlength=G)
        est = hits / counts
        n_levels = len(np.unique(values))
    else:
        est = np.bincount(codes, weights=values.astype(np.float64), minlength=G) / counts
        n_levels = 0
    key_tuples = [tuple(int(v) for v in k) for k in keys]
    return ConditionalTable(
        kind, name if isinstance(name, str) else "<array>", level, conditioning,
        dict(zip(key_tuples, est.tolist())), dict(zip(key_tuples, counts.tolist())),
        max(n_levels, 2), laplace,
    )


def predict(table, stratum, return_flag=False):
    """Stored estimate for ``stratum`` (a tuple of conditioning codes)."""
    value, smoothed = table.lookup(stratum)
    return (value, smoothed) if return_flag else value


class EmpiricalNuisances:
    """Saturated treatment and testing propensities fit on ``train``.

    ``pi(ds, t)`` is P(A_t = 1 | H_t, S_t) evaluated at each row of ``ds``;
    ``p_s(ds, t, level)`` is P(S_t = level | H_t), with ``level=None``
    meaning each row's own S_t.
    """

    def __init__(self, train, laplace=None, floor=DEFAULT_FLOOR):
        self.K = train.K
        self.floor = floor
        self.laplace = laplace
        self._pi = []
        self._s = []
        self.s_levels = []
        for t in range(train.K + 1):
            hist = tuple(train.history_columns(t))
            self._pi.append(fit_conditional(train, ("event", f"A{t}", 1), hist + (f"S{t}",), laplace))
            levels = np.unique(train.S[:, t])
            self.s_levels.append(levels)
            self._s.append({int(s): fit_conditional(train, ("event", f"S{t}", int(s)), hist, laplace)
                            for s in levels})
        self._rows = {}

    def treatment_table(self, t):
        return self._pi[t]

    def s_table(self, t, level):
        return self._s[t][int(level)]

    def _memo(self, ds, key, fn):
        slot = self._rows.setdefault(id(ds), (ds, {}))
        if slot[0] is not ds:
            slot = self._rows[id(ds)] = (ds, {})
        cache = slot[1]
        if key not in cache:
            cache[key] = fn()
        return cache[key]

    def pi(self, ds, t):
        return self._memo(ds, ("pi", t), lambda: self._pi[t].predict_rows(ds))

    def p_s(self, ds, t, level=None):
        if level is not None:
            if int(level) not in self._s[t]:
                return np.zeros(ds.n)
            return self._memo(ds, ("ps", t, int(level)), lambda: self._s[t][int(level)].predict_rows(ds))

        def own():
            out = np.zeros(ds.n)
            for s in self.s_levels[t]:
                mask = ds.S[:, t] == s
                if mask.any():
                    out[mask] = self.p_s(ds, t, s)[mask]
            unseen = ~np.isin(ds.S[:, t], self.s_levels[t])
            if unseen.any():
                raise EmptyStratumError(f"treatment level unseen at t={t}")
            return out

        return self._memo(ds, ("ps", t, None), own)


def treatment_weight_rows(ds, nuisances, t_from, t_to, floor=DEFAULT_FLOOR):
    """Per-row product of p(S_m | H_m) over m = t_from..t_to (empty product 1)."""
    w = np.ones(ds.n)
    for m in range(t_from, t_to + 1):
        f = nuisances.p_s(ds, m)
        if np.any(f < floor):
            raise ZeroWeightError(f"treatment probability below {floor} at t={m}")
        w = w * f
    return w


def treatment_weight(trajectory, nuisances, t_from, t_to, floor=DEFAULT_FLOOR):
    """W for one subject under fitted nuisances."""
    ds = Dataset.from_trajectories([trajectory])
    return float(treatment_weight_rows(ds, nuisances, t_from, t_to, floor)[0])


def conditional_mean(ds, X, columns):
    """Row-wise empirical E[X | columns]; X may be 1-D or 2-D."""
    codes, keys = ds.strata(columns)
    return _kernels.group_mean(codes, np.asarray(X, dtype=np.float64), len(keys))


@dataclass(frozen=True)
class CrossFitPlan:
    M: int
    folds: np.ndarray
    seed: int

    def fold_indices(self, k):
        return np.flatnonzero(self.folds == k)


def make_crossfit(ds, M=2, seed=0):
    """Random partition into M folds whose sizes differ by at most one."""
    if M < 2:
        raise ValueError("cross-fitting needs M >= 2")
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.n)
    folds = np.empty(ds.n, dtype=np.int64)
    folds[order] = np.arange(ds.n) % M
    return CrossFitPlan(M, folds, seed)


def crossfit_estimate(ds, plan, estimator, min_rows=1):
    """Average of ``estimator(train, evaluate)`` over folds.

    ``train`` is the complement of the evaluation fold; the closure fits its
    nuisances there and takes unconditional means on ``evaluate``.
    """
    estimates = []
    for k in range(plan.M):
        held = plan.folds == k
        if held.sum() < min_rows or (~held).sum() < min_rows:
            raise FoldTooSmallError(f"fold {k} has {int(held.sum())} rows")
        estimates.append(estimator(ds.subset(np.flatnonzero(~held)), ds.subset(np.flatnonzero(held))))
    return float(np.mean(estimates))
