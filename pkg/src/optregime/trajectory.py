"""Longitudinal records, deterministic regimes and censoring under a regime.

Time runs t = 0..K. At each t the record holds covariates ``L_t`` (a vector
of integer codes), a test result ``R_t``, a treatment ``S_t`` and a test
indicator ``A_t``. A result is observed at t+1 only when a test was done at
t; otherwise ``R_{t+1}`` holds the ``MISSING`` code, written ``?`` in CSV.
The terminal health utility is ``Yd``; total utility subtracts a fixed
cost per test, ``Y = Yd - c_star * sum(A)``.
"""

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    HistoryNotRecoverableError,
    InvalidDataError,
    UnreachableStratumError,
)

MISSING = -(2**31)


def _parse_code(text):
    text = text.strip()
    return MISSING if text == "?" else int(text)


def _format_code(value):
    return "?" if value == MISSING else str(int(value))


@dataclass(frozen=True)
class Trajectory:
    """One subject. ``L`` is a tuple (over t) of tuples of covariate codes."""

    L: tuple
    R: tuple
    S: tuple
    A: tuple
    Yd: float
    c_star: float = 0.0

    def __post_init__(self):
        K = len(self.S) - 1
        if not (len(self.R) == len(self.A) == len(self.L) == K + 1):
            raise InvalidDataError("per-time fields must all have length K+1")
        _check_record(np.array([self.R]), np.array([self.A]))

    @property
    def K(self):
        return len(self.S) - 1

    @property
    def Y(self):
        return self.Yd - self.c_star * sum(self.A)


def _check_record(R, A):
    K = A.shape[1] - 1
    if np.any(R[:, 0] == MISSING):
        raise InvalidDataError("R0 must be observed")
    if np.any(A[:, K] != 0):
        raise InvalidDataError("A_K must be 0")
    for t in range(K):
        untested = A[:, t] == 0
        if np.any(untested != (R[:, t + 1] == MISSING)):
            raise InvalidDataError(f"R{t + 1} must be '?' exactly when A{t} = 0")


class Dataset:
    """Column-oriented collection of trajectories sharing K and covariate widths."""

    def __init__(self, L, R, S, A, Yd, c_star=0.0, latent=None, validate=True):
        self.R = np.asarray(R, dtype=np.int64)
        self.S = np.asarray(S, dtype=np.int64)
        self.A = np.asarray(A, dtype=np.int64)
        self.Yd = np.asarray(Yd, dtype=np.float64)
        n, k1 = self.S.shape
        self.L = tuple(np.asarray(l, dtype=np.int64).reshape(n, -1) for l in L)
        if len(self.L) != k1:
            raise InvalidDataError("need one covariate block per time point")
        self.c_star = float(c_star)
        self.latent = dict(latent or {})
        if validate:
            _check_record(self.R, self.A)
        self._cache = {}

    @property
    def n(self):
        return self.S.shape[0]

    @property
    def K(self):
        return self.S.shape[1] - 1

    @property
    def Y(self):
        if "Y" not in self._cache:
            self._cache["Y"] = self.Yd - self.c_star * self.A.sum(axis=1)
        return self._cache["Y"]

    def column_names(self):
        names = []
        for t in range(self.K + 1):
            names += [f"L{t}_{j}" for j in range(self.L[t].shape[1])]
            names += [f"R{t}", f"S{t}", f"A{t}"]
        return names + ["Yd"]

    def column(self, name):
        if name == "Yd":
            return self.Yd
        if name == "Y":
            return self.Y
        kind, rest = name[0], name[1:]
        if kind == "L":
            t, j = rest.split("_")
            return self.L[int(t)][:, int(j)]
        table = {"R": self.R, "S": self.S, "A": self.A}.get(kind)
        if table is None or not rest.isdigit() or int(rest) > self.K:
            raise KeyError(name)
        return table[:, int(rest)]

    def history_columns(self, t):
        """Names of the observed history before S_t is chosen."""
        names = []
        for m in range(t + 1):
            names += [f"L{m}_{j}" for j in range(self.L[m].shape[1])]
            names.append(f"R{m}")
            if m < t:
                names += [f"S{m}", f"A{m}"]
        return names

    def strata(self, columns):
        """Integer stratum codes for the joint levels of ``columns``.

        Returns ``(codes, keys)`` where ``keys[g]`` holds the column values of
        stratum g. Codes follow the lexicographic order of the keys.
        """
        columns = tuple(columns)
        hit = self._cache.get(("strata", columns))
        if hit is not None:
            return hit
        if not columns:
            result = (np.zeros(self.n, dtype=np.int64), np.zeros((1, 0), dtype=np.int64))
        else:
            combined = np.zeros(self.n, dtype=np.int64)
            for name in columns:
                levels, inv = np.unique(self.column(name), return_inverse=True)
                combined = combined * len(levels) + inv
            _, first, codes = np.unique(combined, return_index=True, return_inverse=True)
            keys = np.stack([self.column(c)[first] for c in columns], axis=1)
            result = (codes.astype(np.int64), keys)
        self._cache[("strata", columns)] = result
        return result

    def subset(self, idx):
        idx = np.asarray(idx)
        latent = {k: np.asarray(v)[idx] for k, v in self.latent.items()}
        return Dataset(
            [l[idx] for l in self.L], self.R[idx], self.S[idx], self.A[idx],
            self.Yd[idx], self.c_star, latent, validate=False,
        )

    def trajectory(self, i):
        return Trajectory(
            tuple(tuple(int(v) for v in l[i]) for l in self.L),
            tuple(int(v) for v in self.R[i]),
            tuple(int(v) for v in self.S[i]),
            tuple(int(v) for v in self.A[i]),
            float(self.Yd[i]),
            self.c_star,
        )

    @classmethod
    def from_trajectories(cls, trajectories, c_star=None):
        trajectories = list(trajectories)
        first = trajectories[0]
        K = first.K
        L = [np.array([tr.L[t] for tr in trajectories], dtype=np.int64).reshape(len(trajectories), -1)
             for t in range(K + 1)]
        return cls(
            L,
            [tr.R for tr in trajectories],
            [tr.S for tr in trajectories],
            [tr.A for tr in trajectories],
            [tr.Yd for tr in trajectories],
            first.c_star if c_star is None else c_star,
        )

    def to_csv(self, path):
        names = self.column_names()
        cols = [self.column(c) for c in names[:-1]]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for i in range(self.n):
                w.writerow([_format_code(c[i]) for c in cols] + [repr(float(self.Yd[i]))])

    @classmethod
    def read_csv(cls, path, c_star=0.0):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            rows = [r for r in reader if r]
        index = {name: i for i, name in enumerate(header)}
        if "Yd" not in index:
            raise InvalidDataError("dataset CSV needs a Yd column")
        K = max(int(h[1:]) for h in header if h[0] == "S" and h[1:].isdigit())
        for t in range(K + 1):
            for kind in "RSA":
                if f"{kind}{t}" not in index:
                    raise InvalidDataError(f"missing column {kind}{t}")

        def grab(name):
            return np.array([_parse_code(r[index[name]]) for r in rows], dtype=np.int64)

        L = []
        for t in range(K + 1):
            width = sum(1 for h in header if h.startswith(f"L{t}_"))
            block = [grab(f"L{t}_{j}") for j in range(width)]
            L.append(np.stack(block, axis=1) if block else np.zeros((len(rows), 0), dtype=np.int64))
        R = np.stack([grab(f"R{t}") for t in range(K + 1)], axis=1)
        S = np.stack([grab(f"S{t}") for t in range(K + 1)], axis=1)
        A = np.stack([grab(f"A{t}") for t in range(K + 1)], axis=1)
        Yd = np.array([float(r[index["Yd"]]) for r in rows])
        return cls(L, R, S, A, Yd, c_star)


@dataclass(frozen=True)
class Regime:
    """Deterministic decision table.

    ``history_vars[t]`` names the columns rule t reads, ``tables[t]`` maps a
    tuple of their codes to ``(s, a)``. With ``reduced_history`` the rules are
    declared to depend only on test results, baseline covariates and past
    treatments, which lets them be evaluated after an early test.
    """

    history_vars: tuple
    tables: tuple
    reduced_history: bool = False

    def __post_init__(self):
        K = len(self.tables) - 1
        for key, (s, a) in self.tables[K].items():
            if a != 0:
                raise InvalidDataError("regime must not test at the final time")

    @property
    def K(self):
        return len(self.tables) - 1

    def action(self, t, key):
        try:
            return self.tables[t][tuple(int(k) for k in key)]
        except KeyError:
            raise UnreachableStratumError(f"no rule at t={t} for stratum {tuple(key)}") from None

    @classmethod
    def constant(cls, actions, reduced_history=True):
        """Regime that ignores history: ``actions[t] = (s, a)``."""
        return cls(tuple(() for _ in actions), tuple({(): tuple(a)} for a in actions), reduced_history)

    def to_csv(self, path):
        var_cols = []
        for hv in self.history_vars:
            var_cols += [v for v in hv if v not in var_cols]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + var_cols + ["s", "a", "reduced_history"])
            for t, (hv, table) in enumerate(zip(self.history_vars, self.tables)):
                for key in sorted(table):
                    vals = dict(zip(hv, key))
                    cells = [_format_code(vals[v]) if v in vals else "" for v in var_cols]
                    s, a = table[key]
                    w.writerow([t] + cells + [s, a, int(self.reduced_history)])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
        var_cols = [c for c in reader.fieldnames if c not in ("t", "s", "a", "reduced_history")]
        K = max(int(r["t"]) for r in rows)
        history_vars, tables = [], []
        for t in range(K + 1):
            mine = [r for r in rows if int(r["t"]) == t]
            hv = tuple(c for c in var_cols if mine and mine[0][c].strip() != "")
            history_vars.append(hv)
            tables.append({tuple(_parse_code(r[c]) for c in hv): (int(r["s"]), int(r["a"])) for r in mine})
        reduced = bool(rows) and all(r.get("reduced_history", "0").strip() == "1" for r in rows)
        return cls(tuple(history_vars), tuple(tables), reduced)


class CensorKind(str, Enum):
    UNCENSORED = "UNCENSORED"
    CENSORED = "CENSORED"


class Violation(str, Enum):
    S_MISMATCH = "S_MISMATCH"
    A_OBS0_REG1 = "A_OBS0_REG1"
    A_OBS1_REG0 = "A_OBS1_REG0"


_EVENTS = (None, Violation.S_MISMATCH, Violation.A_OBS0_REG1, Violation.A_OBS1_REG0)


@dataclass(frozen=True)
class CensorStatus:
    kind: CensorKind
    first_violation_time: int = -1
    violation_event: Violation = None


@dataclass
class RegimeFollow:
    """Vectorised result of following a regime on a dataset.

    ``s_g``/``a_g`` hold the regime's actions (-1 once they can no longer be
    evaluated, i.e. after NDE-censoring). Event arrays use codes 0 (none),
    1 (S mismatch), 2 (untested but regime tests), 3 (tested but regime
    does not). ``substituted`` marks subjects whose regime history used an
    observed result after an early test.
    """

    s_g: np.ndarray
    a_g: np.ndarray
    censor_time: np.ndarray
    censor_event: np.ndarray
    nde_time: np.ndarray
    nde_event: np.ndarray
    substituted: np.ndarray
    early_test: np.ndarray = field(default=None)

    @property
    def censored(self):
        return self.censor_time >= 0

    @property
    def nde_censored(self):
        return self.nde_time >= 0

    def status(self, i):
        def make(time, event):
            if time[i] < 0:
                return CensorStatus(CensorKind.UNCENSORED)
            return CensorStatus(CensorKind.CENSORED, int(time[i]), _EVENTS[event[i]])

        return make(self.censor_time, self.censor_event), make(self.nde_time, self.nde_event)


def _regime_history(ds, names, s_g, a_g):
    cols = []
    for name in names:
        kind, rest = name[0], name[1:]
        if kind == "L":
            cols.append(ds.column(name))
        elif kind == "R":
            m = int(rest)
            if m == 0:
                cols.append(ds.R[:, 0])
            else:
                tested = a_g[:, m - 1] == 1
                cols.append(np.where(tested, ds.R[:, m], MISSING))
        elif kind == "S":
            cols.append(s_g[:, int(rest)])
        elif kind == "A":
            cols.append(a_g[:, int(rest)])
        else:
            raise KeyError(name)
    if not cols:
        return np.zeros((ds.n, 0), dtype=np.int64)
    return np.stack(cols, axis=1)


def follow_regime(ds, regime, nde=True):
    """Evaluate ``regime`` along each subject's record.

    Standard censoring stops at the first S or A mismatch. NDE-censoring
    ignores early tests (observed A=1, regime A=0); following the regime past
    such an event needs a reduced-history regime, otherwise
    ``HistoryNotRecoverableError`` is raised. With ``nde=False`` evaluation
    stops at standard censoring and no such check is made.
    """
    K = ds.K
    if regime.K != K:
        raise InvalidDataError(f"regime has K={regime.K}, data K={K}")
    n = ds.n
    s_g = np.full((n, K + 1), -1, dtype=np.int64)
    a_g = np.full((n, K + 1), -1, dtype=np.int64)
    c_time = np.full(n, -1, dtype=np.int64)
    c_event = np.zeros(n, dtype=np.int64)
    d_time = np.full(n, -1, dtype=np.int64)
    d_event = np.zeros(n, dtype=np.int64)
    early = np.zeros(n, dtype=bool)
    substituted = np.zeros(n, dtype=bool)
    for t in range(K + 1):
        active = (d_time < 0) if nde else (c_time < 0)
        if not active.any():
            break
        if nde and not regime.reduced_history and np.any(active & early):
            raise HistoryNotRecoverableError(
                f"regime reads history at t={t} after an early test but is not reduced-history"
            )
        hist = _regime_history(ds, regime.history_vars[t], s_g, a_g)
        if t > 0:
            uses_r = any(v[0] == "R" and v != "R0" for v in regime.history_vars[t])
            substituted |= active & early & uses_r
        idx = np.flatnonzero(active)
        if hist.shape[1]:
            keys, inv = np.unique(hist[idx], axis=0, return_inverse=True)
            inv = inv.reshape(-1)
        else:
            keys, inv = [()], np.zeros(len(idx), dtype=np.int64)
        acts = np.array([regime.action(t, k) for k in keys], dtype=np.int64).reshape(-1, 2)
        s_g[idx, t] = acts[inv, 0]
        a_g[idx, t] = acts[inv, 1]
        s_obs, a_obs = ds.S[idx, t], ds.A[idx, t]
        s_bad = s_obs != s_g[idx, t]
        a_up = (a_obs == 0) & (a_g[idx, t] == 1)
        a_down = (a_obs == 1) & (a_g[idx, t] == 0)
        event = np.where(s_bad, 1, np.where(a_up, 2, np.where(a_down, 3, 0)))
        new_c = (c_time[idx] < 0) & (event > 0)
        c_time[idx[new_c]] = t
        c_event[idx[new_c]] = event[new_c]
        nde_event = np.where(event == 3, 0, event)
        new_d = (d_time[idx] < 0) & (nde_event > 0)
        d_time[idx[new_d]] = t
        d_event[idx[new_d]] = nde_event[new_d]
        early[idx[a_down & ~s_bad]] = True
    return RegimeFollow(s_g, a_g, c_time, c_event, d_time, d_event, substituted, early)


def apply_regime(trajectory, regime):
    """Censoring status (standard, NDE) and the regime's action sequence."""
    ds = Dataset.from_trajectories([trajectory])
    fol = follow_regime(ds, regime, nde=True)
    std, nde = fol.status(0)
    actions = [(int(fol.s_g[0, t]), int(fol.a_g[0, t])) for t in range(ds.K + 1)]
    return std, nde, actions


def _cost_array(ds, cost_fn, t):
    if cost_fn is None:
        return np.full(ds.n, ds.c_star)
    return np.broadcast_to(np.asarray(cost_fn(t, ds), dtype=np.float64), (ds.n,))


def regime_utility(ds, follow, cost_fn=None):
    """Y_g: total utility with the cost of every unrequested test added back.

    ``cost_fn(t, ds)`` returns per-subject (or scalar) cost of a test at t;
    the default is the dataset's fixed ``c_star``.
    """
    Yg = ds.Y.astype(np.float64).copy()
    for t in range(ds.K):
        extra = (ds.A[:, t] == 1) & (follow.a_g[:, t] == 0)
        if extra.any():
            Yg = Yg + np.where(extra, _cost_array(ds, cost_fn, t), 0.0)
    return Yg


def cost_adjusted_utility(trajectory, regime, cost_fn=None):
    """Y_g for one subject.

    ``cost_fn(t, trajectory)`` gives the cost of a test at t (default: the
    trajectory's ``c_star``). For an NDE-censored subject the value is never
    used by an estimator; Y is returned unchanged in that case.
    """
    ds = Dataset.from_trajectories([trajectory])
    fol = follow_regime(ds, regime, nde=True)
    if fol.nde_censored[0]:
        return trajectory.Y
    wrapped = None if cost_fn is None else (lambda t, _ds: cost_fn(t, trajectory))
    return float(regime_utility(ds, fol, wrapped)[0])
