"""Optimal-regime structural nested mean models.

A blip gamma_t(h, s, a) is the mean gain from taking (s, a) instead of
(0, 0) at t, with optimal play afterwards. Blips are linear in their
parameters, so each stage is solved in closed form going backwards: the
outcome is corrected to optimal future play, centred within history strata,
and regressed on the centred blip features.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularSystemError, UnknownStratumError
from .nuisance import conditional_mean
from .trajectory import Regime


@dataclass(frozen=True)
class StageBlip:
    """Blip model at one time.

    ``kind`` is ``"saturated"`` (one parameter per history stratum and
    non-reference action) or ``"linear"`` with ``terms`` such as ``"s"``,
    ``"a"``, ``"s*a"`` or ``"s*R1"``. Every linear term must contain ``s`` or
    ``a`` so the blip vanishes at (0, 0). ``history_vars=None`` means the
    full observed history.
    """

    t: int
    kind: str = "saturated"
    history_vars: tuple = None
    terms: tuple = ()

    def __post_init__(self):
        if self.kind not in ("saturated", "linear"):
            raise ValueError(f"unknown blip kind {self.kind!r}")
        if self.kind == "linear":
            if not self.terms:
                raise ValueError("linear blip needs terms")
            for term in self.terms:
                factors = term.split("*")
                if "s" not in factors and "a" not in factors:
                    raise ValueError(f"term {term!r} does not vanish at (s, a) = (0, 0)")

    def to_json(self):
        doc = {"t": self.t, "kind": self.kind}
        if self.history_vars is not None:
            doc["history_vars"] = list(self.history_vars)
        if self.terms:
            doc["terms"] = list(self.terms)
        return doc

    @classmethod
    def from_json(cls, doc):
        hv = doc.get("history_vars")
        return cls(int(doc["t"]), doc.get("kind", "saturated"),
                   None if hv is None else tuple(hv), tuple(doc.get("terms", ())))


def saturated_spec(K):
    return tuple(StageBlip(t) for t in range(K + 1))


def load_blip_spec(path_or_text):
    """Read a blip spec from JSON: a single stage object or a list of them."""
    try:
        doc = json.loads(path_or_text)
    except (json.JSONDecodeError, TypeError):
        with open(path_or_text) as fh:
            doc = json.load(fh)
    docs = doc if isinstance(doc, list) else [doc]
    return tuple(sorted((StageBlip.from_json(d) for d in docs), key=lambda s: s.t))


def action_grid(ds, t, allow_testing=True):
    """Lexicographically ordered (s, a) pairs available at t; (0, 0) always included."""
    s_levels = sorted(set(np.unique(ds.S[:, t]).tolist()) | {0})
    a_levels = [0]
    if t < ds.K and allow_testing:
        a_levels = sorted(set(np.unique(ds.A[:, t]).tolist()) | {0})
    return tuple((s, a) for s in s_levels for a in a_levels)


@dataclass
class StagePsi:
    """Fitted parameters for one stage.

    Saturated: ``coef[g, j]`` is the blip of ``actions[j]`` in stratum
    ``strata[g]`` (zero for the reference action). Linear: ``coef`` is the
    vector of term coefficients.
    """

    t: int
    kind: str
    history_vars: tuple
    actions: tuple
    coef: np.ndarray
    strata: dict = field(default_factory=dict)
    terms: tuple = ()

    @property
    def n_params(self):
        if self.kind == "saturated":
            return self.coef.shape[0] * (len(self.actions) - 1)
        return len(self.coef)

    def flat(self):
        if self.kind == "saturated":
            ref = self.actions.index((0, 0))
            return np.delete(self.coef, ref, axis=1).reshape(-1)
        return np.asarray(self.coef, dtype=np.float64)

    def with_flat(self, values):
        values = np.asarray(values, dtype=np.float64)
        if self.kind == "saturated":
            ref = self.actions.index((0, 0))
            coef = np.insert(values.reshape(self.coef.shape[0], -1), ref, 0.0, axis=1)
            return StagePsi(self.t, self.kind, self.history_vars, self.actions, coef, self.strata, self.terms)
        return StagePsi(self.t, self.kind, self.history_vars, self.actions, values, self.strata, self.terms)

    def stratum_rows(self, ds):
        key = ("psi_rows", self.history_vars, id(self.strata))
        hit = ds._cache.get(key)
        if hit is not None and hit[0] is self.strata:
            return hit[1]
        codes, keys = ds.strata(self.history_vars)
        rows = np.empty(len(keys), dtype=np.int64)
        for g, k in enumerate(keys):
            k = tuple(int(v) for v in k)
            if k not in self.strata:
                raise UnknownStratumError(f"t={self.t}: no blip parameter for stratum {k}")
            rows[g] = self.strata[k]
        result = rows[codes]
        ds._cache[key] = (self.strata, result)
        return result

    def _action_index(self, s, a):
        """Column of ``coef`` for each (s, a); -1 outside the grid."""
        idx = np.full(s.shape, -1, dtype=np.int64)
        for j, (sv, av) in enumerate(self.actions):
            idx[(s == sv) & (a == av)] = j
        return idx

    def features(self, ds, s, a):
        """Design matrix V_t(H_t, s, a) with one row per subject."""
        s = np.broadcast_to(np.asarray(s), (ds.n,))
        a = np.broadcast_to(np.asarray(a), (ds.n,))
        if self.kind == "linear":
            cols = []
            for term in self.terms:
                col = np.ones(ds.n)
                for f in term.split("*"):
                    col = col * (s if f == "s" else a if f == "a" else ds.column(f))
                cols.append(col)
            return np.stack(cols, axis=1).astype(np.float64)
        rows = self.stratum_rows(ds)
        others = [act for act in self.actions if act != (0, 0)]
        V = np.zeros((ds.n, len(self.strata) * len(others)))
        for j, (sv, av) in enumerate(others):
            hit = np.flatnonzero((s == sv) & (a == av))
            V[hit, rows[hit] * len(others) + j] = 1.0
        return V

    def gamma(self, ds, s, a):
        if self.kind == "linear":
            return self.features(ds, s, a) @ self.coef
        rows = self.stratum_rows(ds)
        if np.ndim(s) == 0 and np.ndim(a) == 0:
            if (int(s), int(a)) not in self.actions:
                return np.zeros(ds.n)
            return self.coef[rows, self.actions.index((int(s), int(a)))]
        s = np.broadcast_to(np.asarray(s), (ds.n,))
        a = np.broadcast_to(np.asarray(a), (ds.n,))
        idx = self._action_index(s, a)
        return np.where(idx >= 0, self.coef[rows, np.maximum(idx, 0)], 0.0)

    def gamma_at(self, history, s, a):
        """Blip for one history given as a mapping of column name to code."""
        if (s, a) == (0, 0):
            return 0.0
        if self.kind == "linear":
            total = 0.0
            for c, term in zip(self.coef, self.terms):
                v = 1.0
                for f in term.split("*"):
                    v *= s if f == "s" else a if f == "a" else history[f]
                total += c * v
            return float(total)
        key = tuple(int(history[v]) for v in self.history_vars)
        if key not in self.strata:
            raise UnknownStratumError(f"t={self.t}: no blip parameter for stratum {key}")
        if (s, a) not in self.actions:
            raise UnknownStratumError(f"t={self.t}: action {(s, a)} outside the fitted grid")
        return float(self.coef[self.strata[key], self.actions.index((s, a))])

    def optimal(self, ds, allow_testing=True):
        """Per-subject argmax over the action grid; ties go to the earlier pair."""
        best_s = np.zeros(ds.n, dtype=np.int64)
        best_a = np.zeros(ds.n, dtype=np.int64)
        best = np.full(ds.n, -np.inf)
        for sv, av in self.actions:
            if av != 0 and not allow_testing:
                continue
            g = self.gamma(ds, sv, av)
            better = g > best
            best_s[better], best_a[better], best[better] = sv, av, g[better]
        return best_s, best_a, best


@dataclass
class PsiVector:
    stages: list
    allow_testing: bool = True

    @property
    def K(self):
        return len(self.stages) - 1

    def flat(self):
        return np.concatenate([st.flat() for st in self.stages])

    def to_json(self):
        out = []
        for st in self.stages:
            doc = {"t": st.t, "kind": st.kind, "history_vars": list(st.history_vars),
                   "actions": [list(a) for a in st.actions]}
            if st.kind == "saturated":
                doc["strata"] = [[list(k), st.coef[r].tolist()] for k, r in sorted(st.strata.items())]
            else:
                doc["terms"] = list(st.terms)
                doc["coef"] = np.asarray(st.coef).tolist()
            out.append(doc)
        return out


def _empty_stage(ds, blip, allow_testing):
    t = blip.t
    hv = tuple(ds.history_columns(t)) if blip.history_vars is None else tuple(blip.history_vars)
    actions = action_grid(ds, t)
    if blip.kind == "linear":
        return StagePsi(t, "linear", hv, actions, np.zeros(len(blip.terms)), {}, tuple(blip.terms))
    _, keys = ds.strata(hv)
    strata = {tuple(int(v) for v in k): g for g, k in enumerate(keys)}
    return StagePsi(t, "saturated", hv, actions, np.zeros((len(keys), len(actions))), strata)


def observed_actions_of(ds, regime, t):
    """Actions a regime prescribes at each subject's observed history at t."""
    hv = regime.history_vars[t]
    codes, keys = ds.strata(hv)
    acts = np.array([regime.action(t, k) for k in keys], dtype=np.int64).reshape(-1, 2)
    return acts[codes, 0], acts[codes, 1]


def _centered(ds, t, X):
    return X - conditional_mean(ds, X, ds.history_columns(t))


def _solve_stage(ds, stage, t, outcome, q_fn, shift=None):
    V = stage.features(ds, ds.S[:, t], ds.A[:, t])
    Q = V if q_fn is None else np.asarray(q_fn(ds, t, ds.S[:, t], ds.A[:, t]), dtype=np.float64)
    Vc = _centered(ds, t, V)
    Qc = Vc if q_fn is None else _centered(ds, t, Q)
    yc = _centered(ds, t, outcome)
    M = Qc.T @ Vc / ds.n
    b = Qc.T @ yc / ds.n
    if shift is not None:
        b = b - shift
    if M.shape[0] == 0:
        return stage.with_flat(np.zeros(0))
    if np.linalg.matrix_rank(M) < M.shape[0]:
        raise SingularSystemError(f"t={t}: estimating-equation matrix is singular")
    return stage.with_flat(np.linalg.solve(M, b))


def g_estimate(ds, blip_spec=None, q_spec=None, nuisances=None, allow_testing=True,
               frozen=None, shifts=None):
    """Closed-form backward g-estimation.

    ``q_spec`` maps t to ``q(ds, t, s, a) -> (n, p_t)``; the default uses
    the blip features. ``allow_testing=False`` restricts the optimal
    actions used in later-stage corrections to a = 0. ``frozen`` maps t to a
    Regime (or to an ``(s, a)`` pair of arrays) whose actions replace the
    argmax in those corrections, and ``shifts`` maps t to a vector subtracted
    from the stage's mean estimating function. Both exist for the two-step
    projection-adjusted solve. ``nuisances`` is unused: the conditional means
    are always the in-sample stratum averages.
    """
    spec = saturated_spec(ds.K) if blip_spec is None else tuple(blip_spec)
    q_spec = q_spec or {}
    stages = [None] * (ds.K + 1)
    correction = np.zeros(ds.n)
    for t in range(ds.K, -1, -1):
        stage = _empty_stage(ds, spec[t], allow_testing)
        outcome = ds.Y + correction
        stage = _solve_stage(ds, stage, t, outcome, q_spec.get(t), None if shifts is None else shifts.get(t))
        stages[t] = stage
        s_opt, a_opt = _stage_actions(ds, stage, t, allow_testing, frozen)
        correction = correction + stage.gamma(ds, s_opt, a_opt) - stage.gamma(ds, ds.S[:, t], ds.A[:, t])
    return PsiVector(stages, allow_testing)


def _stage_actions(ds, stage, t, allow_testing, frozen):
    if frozen is not None and t in frozen:
        f = frozen[t]
        if isinstance(f, Regime):
            return observed_actions_of(ds, f, t)
        return f
    s_opt, a_opt, _ = stage.optimal(ds, allow_testing)
    return s_opt, a_opt


def stage_estimating_functions(ds, psi, q_spec=None, frozen=None):
    """Per-subject U_t at ``psi`` for every t, stacked column-wise.

    Returns ``(U, blocks)`` where ``blocks[t]`` is the column slice of stage t.
    """
    q_spec = q_spec or {}
    pieces, blocks = [None] * (psi.K + 1), [None] * (psi.K + 1)
    correction = np.zeros(ds.n)
    for t in range(psi.K, -1, -1):
        stage = psi.stages[t]
        V = stage.features(ds, ds.S[:, t], ds.A[:, t])
        q_fn = q_spec.get(t)
        Q = V if q_fn is None else np.asarray(q_fn(ds, t, ds.S[:, t], ds.A[:, t]), dtype=np.float64)
        delta = ds.Y + correction - stage.gamma(ds, ds.S[:, t], ds.A[:, t])
        pieces[t] = _centered(ds, t, delta)[:, None] * _centered(ds, t, Q)
        s_opt, a_opt = _stage_actions(ds, stage, t, psi.allow_testing, frozen)
        correction = correction + stage.gamma(ds, s_opt, a_opt) - stage.gamma(ds, ds.S[:, t], ds.A[:, t])
    start = 0
    for t in range(psi.K + 1):
        blocks[t] = slice(start, start + pieces[t].shape[1])
        start += pieces[t].shape[1]
    return np.concatenate(pieces, axis=1), blocks


def value_contributions(ds, psi, frozen=None):
    """Per-subject Delta_0 + gamma_0(optimal): Y corrected to optimal play at every t."""
    total = ds.Y.astype(np.float64).copy()
    for t, stage in enumerate(psi.stages):
        s_opt, a_opt = _stage_actions(ds, stage, t, psi.allow_testing, frozen)
        total += stage.gamma(ds, s_opt, a_opt) - stage.gamma(ds, ds.S[:, t], ds.A[:, t])
    return total


def conditioning_mask(ds, conditioning):
    mask = np.ones(ds.n, dtype=bool)
    for name, value in (conditioning or {}).items():
        mask &= ds.column(name) == int(value)
    return mask


def snmm_value(ds, blip_spec=None, psi_hat=None, nuisances=None, conditioning=None, frozen=None):
    """P_n[Delta_0(psi) + gamma_0(optimal; psi)], optionally within a baseline stratum."""
    psi = g_estimate(ds, blip_spec) if psi_hat is None else psi_hat
    m = value_contributions(ds, psi, frozen)
    mask = conditioning_mask(ds, conditioning)
    return float(m[mask].mean())


def optimal_regime(ds, psi, reduced_history=True):
    """Decision table over every observed history stratum from the fitted blips."""
    tables, hvs = [], []
    for t, stage in enumerate(psi.stages):
        hv = tuple(ds.history_columns(t))
        codes, keys = ds.strata(hv)
        first = np.unique(codes, return_index=True)[1]
        rep = ds.subset(first)
        s_opt, a_opt, _ = stage.optimal(rep, psi.allow_testing)
        tables.append({tuple(int(v) for v in k): (int(s), int(a))
                       for k, s, a in zip(keys, s_opt, a_opt)})
        hvs.append(hv)
    return Regime(tuple(hvs), tuple(tables), reduced_history)


def eval_blip(stage_psi, history, s, a):
    """gamma_t(history, s, a) for one history mapping; exactly 0 at (0, 0)."""
    return stage_psi.gamma_at(history, s, a)


def optimal_action(stage_psi, history, allow_testing=True):
    """Argmax of the blip over the action grid, ties to the smallest pair."""
    best, best_val = (0, 0), -np.inf
    for s, a in stage_psi.actions:
        if a != 0 and not allow_testing:
            continue
        v = stage_psi.gamma_at(history, s, a)
        if v > best_val:
            best, best_val = (s, a), v
    return best


def _history_of(trajectory, t):
    h = {}
    for m in range(t + 1):
        for j, v in enumerate(trajectory.L[m]):
            h[f"L{m}_{j}"] = v
        h[f"R{m}"] = trajectory.R[m]
        if m < t:
            h[f"S{m}"] = trajectory.S[m]
            h[f"A{m}"] = trajectory.A[m]
    return h


def compute_delta(trajectory, psi, t):
    """Y blipped down at t and corrected to optimal play after t."""
    value = trajectory.Y - psi.stages[t].gamma_at(_history_of(trajectory, t), trajectory.S[t], trajectory.A[t])
    for m in range(t + 1, psi.K + 1):
        stage = psi.stages[m]
        h = _history_of(trajectory, m)
        s_opt, a_opt = optimal_action(stage, h, psi.allow_testing)
        value += stage.gamma_at(h, s_opt, a_opt) - stage.gamma_at(h, trajectory.S[m], trajectory.A[m])
    return float(value)


def voi(ds, blip_spec=None, nuisances=None, conditioning=None, basis=None):
    """(value under optimal regime, value under best no-test regime, difference).

    With ``basis`` (a BasisSpec) both values use the projection-adjusted
    pipeline; otherwise plain g-estimation.
    """
    if basis is not None:
        from .nde_projection import adjusted_voi

        return adjusted_voi(ds, basis, blip_spec, conditioning)
    psi_opt = g_estimate(ds, blip_spec)
    psi_nt = g_estimate(ds, blip_spec, allow_testing=False)
    v_opt = snmm_value(ds, psi_hat=psi_opt, conditioning=conditioning)
    v_nt = snmm_value(ds, psi_hat=psi_nt, conditioning=conditioning)
    return v_opt, v_nt, v_opt - v_nt

