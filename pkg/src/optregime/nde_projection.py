"""Mean-zero functions implied by the no-direct-effect restriction and
least-squares projection onto their span.

For each time t with a test decision, ``construct_T`` turns outcome-basis
columns b_t into functions T_t that have mean zero whenever testing affects
the outcome only through later treatment. The span of T_t times
history-stratum indicators, summed over t, is the projection space.
Subtracting the projection of an estimating function onto that space keeps
it unbiased and can only shrink its variance.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .basis import BasisSpec, build_basis_columns, fit_outcome_basis
from .nuisance import EmpiricalNuisances, conditional_mean, treatment_weight_rows
from .snmm import (
    conditioning_mask,
    g_estimate,
    optimal_regime,
    saturated_spec,
    stage_estimating_functions,
    value_contributions,
)

@dataclass
class TbMatrix:
    t: int
    T: np.ndarray
    D: np.ndarray
    form: str


def _weights(ds, nuisances, t_from, t_to):
    return treatment_weight_rows(ds, nuisances, t_from, t_to, getattr(nuisances, "floor", 1e-6))


def construct_T(ds, b, nuisances, t, form="projection", eta_transform=None):
    """Evaluate T_t for every basis column in ``b`` (n x delta).

    ``form="projection"`` removes from D = b / W_{t+1..K} * (A_t - Pi_t) its
    empirical projections onto the testing and treatment scores.
    ``form="eta"`` uses the nested outcome-regression representation; there
    ``eta_transform(k, table)`` may replace the fitted eta_k table (shape
    strata x treatment levels x delta) to study misspecification.

    The two forms agree in any law where testing has no direct effect. At
    the empirical measure they differ by the sample's departure from that
    restriction, which vanishes only as n grows.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 1:
        b = b[:, None]
    K = ds.K
    resid = ds.A[:, t] - nuisances.pi(ds, t)
    D = b / _weights(ds, nuisances, t + 1, K)[:, None] * resid[:, None]
    if form == "projection":
        h_t = tuple(ds.history_columns(t))
        T = D - (conditional_mean(ds, D, h_t + (f"S{t}", f"A{t}")) - conditional_mean(ds, D, h_t + (f"S{t}",)))
        for m in range(t + 1, K + 1):
            h_m = tuple(ds.history_columns(m))
            T = T - (conditional_mean(ds, D, h_m + (f"S{m}",)) - conditional_mean(ds, D, h_m))
        return TbMatrix(t, T, D, form)
    if form != "eta":
        raise ValueError(f"unknown form {form!r}")
    # eta_k(h, s) tables, built backwards from eta_K = E[b | H_K, S_K]
    tables, lookups = {}, {}
    target = b
    for k in range(K, t - 1, -1):
        codes, keys = ds.strata(ds.history_columns(k))
        levels = np.unique(ds.S[:, k])
        s_idx = np.searchsorted(levels, ds.S[:, k])
        G, nS = len(keys), len(levels)
        cell = codes * nS + s_idx
        counts = np.bincount(cell, minlength=G * nS)
        sums = _kernels.group_sum(cell, target, G * nS)
        with np.errstate(invalid="ignore", divide="ignore"):
            eta = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], 0.0)
        eta = eta.reshape(G, nS, -1)
        if eta_transform is not None:
            eta = eta_transform(k, eta)
        tables[k] = eta
        lookups[k] = (codes, s_idx)
        target = eta.sum(axis=1)[codes]
    def eta_at(k):
        codes, s_idx = lookups[k]
        return tables[k][codes, s_idx]

    def y_at(k):
        if k == K + 1:
            return b
        return tables[k].sum(axis=1)[lookups[k][0]]

    total = np.zeros_like(b)
    for k in range(t + 1, K + 2):
        w = _weights(ds, nuisances, t + 1, k - 1)
        total += (y_at(k) - eta_at(k - 1)) / w[:, None]
    return TbMatrix(t, total * resid[:, None], D, form)


def coefficient_strata(ds, t, history="saturated"):
    """Stratum codes over which the projection coefficients d_t may vary."""
    if history == "constant":
        return np.zeros(ds.n, dtype=np.int64), np.zeros((1, 0), dtype=np.int64)
    return ds.strata(ds.history_columns(t))


def _orthonormal_groups(codes, G, n_groups):
    """Per-stratum SVD of the rows of G.

    Returns ``(Q, W, deficient)``: within each stratum the columns of Q are an
    orthonormal basis of the span of G's rows (zero-padded past the rank),
    and ``W[g]`` maps coordinates in that basis back to coefficients on G's
    columns. Singular values below the least-squares default cutoff,
    relative to the largest over all strata, count as zero. Working with
    the rows rather than the Gram matrix keeps the conditioning of G instead
    of squaring it.
    """
    n, p = G.shape
    Q = np.zeros((n, p))
    W = np.zeros((n_groups, p, p))
    if p == 0:
        return Q, W, False
    order = np.argsort(codes, kind="stable")
    bounds = np.concatenate(([0], np.cumsum(np.bincount(codes, minlength=n_groups))))
    parts = []
    for g in range(n_groups):
        rows = order[bounds[g]:bounds[g + 1]]
        if len(rows):
            parts.append((g, rows, *np.linalg.svd(G[rows], full_matrices=False)))
    top = max((sv[0] for _, _, _, sv, _ in parts if len(sv)), default=0.0)
    cutoff = top * max(n, p) * np.finfo(np.float64).eps
    deficient = False
    for g, rows, u, sv, vt in parts:
        keep = sv > cutoff
        r = int(keep.sum())
        deficient |= r < p
        Q[rows, :r] = u[:, keep]
        W[g, :r, :] = vt[keep] / sv[keep, None]
    return Q, W, deficient


def _project_block(codes, Q, M, n_groups):
    """Within-stratum projection of the columns of M onto the span of Q."""
    coords = _kernels.group_outer(codes, Q, M, n_groups)
    return _kernels.rowwise_apply(codes, coords.transpose(0, 2, 1), Q)


@dataclass
class ProjectionFit:
    """Least-squares projection of U onto the span of the T blocks.

    ``d[t]`` has shape (strata_t, p, delta_t); the fitted value for row i
    is sum_t d[t][code_t(i)] @ T_t(i). ``residual_blocks[t]`` holds the
    backward-orthogonalised T_t used to compute ``d[t]``.
    """

    method: str
    d: list
    fitted: np.ndarray
    residual: np.ndarray
    residual_blocks: list = field(default_factory=list)
    c_ols: np.ndarray = None
    rank_deficient: bool = False
    strata_keys: list = field(default_factory=list)

    def to_json(self):
        out = {"method": self.method, "rank_deficient": self.rank_deficient, "blocks": []}
        for t, (d, keys) in enumerate(zip(self.d, self.strata_keys)):
            out["blocks"].append({
                "t": t,
                "strata": [[int(v) for v in k] for k in keys],
                "coefficients": np.asarray(d).tolist(),
            })
        if self.c_ols is not None:
            out["c_ols"] = np.asarray(self.c_ols).tolist()
        return out


class Omega:
    """Prepared projection space: T blocks, coefficient strata and the
    backward orthogonalisation, reusable across many U.

    The recursion is exact only when each block's strata refine those of
    every earlier block, which holds for history strata.
    """

    def __init__(self, blocks, codes, keys=None):
        self.blocks = [np.asarray(B, dtype=np.float64) for B in blocks]
        self.codes = [np.asarray(c, dtype=np.int64) for c in codes]
        self.n_groups = [int(c.max()) + 1 if len(c) else 1 for c in self.codes]
        self.keys = keys or [None] * len(self.blocks)
        self.rank_deficient = False
        self._orthogonalise()

    @property
    def n(self):
        return self.blocks[0].shape[0]

    def _orthogonalise(self):
        K = len(self.blocks) - 1
        level = {j: self.blocks[j] for j in range(K + 1)}
        self.levels = [None] * (K + 1)
        self.levels[K] = dict(level)
        self.bases = [None] * (K + 1)
        self.coef_maps = [None] * (K + 1)
        for s in range(K, -1, -1):
            Q, W, deficient = _orthonormal_groups(self.codes[s], level[s], self.n_groups[s])
            self.rank_deficient |= deficient
            self.bases[s], self.coef_maps[s] = Q, W
            if s == 0:
                break
            for j in range(s):
                if Q.shape[1] and level[j].shape[1]:
                    level[j] = level[j] - _project_block(self.codes[s], Q, level[j], self.n_groups[s])
            self.levels[s - 1] = {j: level[j] for j in range(s)}
        self.orthogonal = [self.levels[t][t] for t in range(K + 1)]

    def project(self, U):
        U = np.asarray(U, dtype=np.float64)
        one_d = U.ndim == 1
        U2 = U[:, None] if one_d else U
        K = len(self.blocks) - 1
        d = [None] * (K + 1)
        fitted = np.zeros_like(U2)
        for t in range(K + 1):
            Q = self.bases[t]
            if Q.shape[1] == 0:
                d[t] = np.zeros((self.n_groups[t], U2.shape[1], 0))
                continue
            # the orthogonalised blocks span mutually orthogonal pieces
            fitted += _project_block(self.codes[t], Q, U2, self.n_groups[t])
            R = U2.copy()
            for j in range(t):
                if d[j].shape[2]:
                    R -= _kernels.rowwise_apply(self.codes[j], d[j], self.levels[t][j])
            d[t] = _kernels.group_outer(self.codes[t], R, Q, self.n_groups[t]) @ self.coef_maps[t]
        resid = U2 - fitted
        if one_d:
            fitted, resid = fitted[:, 0], resid[:, 0]
        return ProjectionFit("recursive", d, fitted, resid, self.orthogonal,
                             rank_deficient=self.rank_deficient, strata_keys=self.keys)

    def stacked_design(self):
        cols = []
        for B, c, G in zip(self.blocks, self.codes, self.n_groups):
            for g in range(G):
                cols.append(B * (c == g)[:, None])
        return np.concatenate(cols, axis=1) if cols else np.zeros((self.n, 0))

    def project_pooled(self, U):
        U = np.asarray(U, dtype=np.float64)
        one_d = U.ndim == 1
        U2 = U[:, None] if one_d else U
        X = self.stacked_design()
        coef, _, rank, _ = np.linalg.lstsq(X, U2, rcond=None)
        c = coef.T
        fitted = X @ coef
        resid = U2 - fitted
        deficient = X.shape[1] > 0 and rank < X.shape[1]
        if one_d:
            fitted, resid = fitted[:, 0], resid[:, 0]
        return ProjectionFit("pooled", [], fitted, resid, c_ols=c, rank_deficient=bool(deficient),
                             strata_keys=self.keys)


def project(U, tb_matrices, history_strata, method="recursive"):
    """Project the columns of U onto the span of T_t * 1{stratum_t}.

    ``tb_matrices`` is a list of (n x delta_t) arrays or TbMatrix objects
    indexed by t, ``history_strata`` the matching list of stratum code
    arrays. ``method`` is ``"recursive"`` (backward orthogonalisation over
    t) or ``"pooled"`` (one least-squares fit on the stacked design).
    """
    blocks = [m.T if isinstance(m, TbMatrix) else m for m in tb_matrices]
    omega = Omega(blocks, history_strata)
    return omega.project(U) if method == "recursive" else omega.project_pooled(U)


def adjust_estimating_function(U, fit):
    """U minus its fitted projection."""
    return np.asarray(U, dtype=np.float64) - fit.fitted


def build_omega(ds, basis_spec, nuisances=None, form="projection"):
    """Projection space for ``ds``: T blocks for every t < K with saturated or
    constant coefficient strata."""
    nuisances = EmpiricalNuisances(ds) if nuisances is None else nuisances
    phi = fit_outcome_basis(basis_spec, ds.Yd)
    blocks, codes, keys = [], [], []
    for t in range(ds.K):
        b = build_basis_columns(ds, basis_spec, t, phi)
        blocks.append(construct_T(ds, b, nuisances, t, form).T)
        c, k = coefficient_strata(ds, t, basis_spec.history)
        codes.append(c)
        keys.append([tuple(int(v) for v in row) for row in k])
    if not blocks:
        blocks, codes, keys = [np.zeros((ds.n, 0))], [np.zeros(ds.n, dtype=np.int64)], [[()]]
    return Omega(blocks, codes, keys)


def _actions(ds, psi):
    return {t: stage.optimal(ds, psi.allow_testing)[:2] for t, stage in enumerate(psi.stages)}


def _same_actions(a, b):
    return all(np.array_equal(a[t][0], b[t][0]) and np.array_equal(a[t][1], b[t][1]) for t in a)


@dataclass
class AdjustedFit:
    """Result of the two-step projection-adjusted g-estimation.

    ``frozen`` holds the per-subject actions (at observed histories) used
    for the later-stage corrections; at convergence they equal the argmax
    of ``psi_tilde``. ``psi_hat`` is the unadjusted solution under the same
    frozen actions, at which the projections are evaluated.
    """

    psi_tilde: object
    psi_hat: object
    frozen: dict
    omega: Omega
    passes: int
    converged: bool
    _contrib: tuple = field(default=None, repr=False)

    def regime(self, ds, reduced_history=True):
        return optimal_regime(ds, self.psi_tilde, reduced_history)

    def contributions(self, ds):
        """Per-subject corrected outcomes at ``psi_tilde`` and ``psi_hat``."""
        if self._contrib is None or self._contrib[0] is not ds:
            self._contrib = (ds, value_contributions(ds, self.psi_tilde, self.frozen),
                             value_contributions(ds, self.psi_hat, self.frozen))
        return self._contrib[1], self._contrib[2]

    def value(self, ds, conditioning=None):
        """Projection-adjusted value of the frozen regime."""
        mask = conditioning_mask(ds, conditioning)
        share = mask.mean()
        m_tilde, m_hat = self.contributions(ds)
        theta_hat = m_hat[mask].mean()
        U = np.where(mask, m_hat - theta_hat, 0.0) / share
        return float(m_tilde[mask].mean() - self.omega.project(U).fitted.mean())


def adjusted_g_estimate(ds, blip_spec=None, q_spec=None, basis_spec=None, nuisances=None,
                        allow_testing=True, omega=None, max_passes=5):
    """Projection-adjusted g-estimation.

    Step one solves the unadjusted equations; the stacked per-subject
    estimating functions are projected onto the NDE space at that solution,
    and the stage equations are re-solved with the mean projection
    subtracted. Later-stage corrections use frozen actions; when the
    adjusted argmax disagrees with them the actions are re-frozen at the new
    argmax and both steps repeat (up to ``max_passes``).
    """
    spec = saturated_spec(ds.K) if blip_spec is None else tuple(blip_spec)
    basis_spec = BasisSpec() if basis_spec is None else basis_spec
    omega = build_omega(ds, basis_spec, nuisances) if omega is None else omega
    psi_hat = g_estimate(ds, spec, q_spec, allow_testing=allow_testing)
    frozen = _actions(ds, psi_hat)
    converged = False
    for passes in range(1, max_passes + 1):
        if passes > 1:
            psi_hat = g_estimate(ds, spec, q_spec, allow_testing=allow_testing, frozen=frozen)
        U, blocks = stage_estimating_functions(ds, psi_hat, q_spec, frozen)
        fitted_mean = omega.project(U).fitted.mean(axis=0)
        shifts = {t: fitted_mean[blocks[t]] for t in range(ds.K + 1)}
        psi_tilde = g_estimate(ds, spec, q_spec, allow_testing=allow_testing, frozen=frozen, shifts=shifts)
        new = _actions(ds, psi_tilde)
        if _same_actions(new, frozen):
            converged = True
            break
        frozen = new
    return AdjustedFit(psi_tilde, psi_hat, frozen, omega, passes, converged)


def adjusted_voi(ds, basis_spec=None, blip_spec=None, conditioning=None, nuisances=None, omega=None):
    """(adjusted value of optimal regime, of best no-test regime, difference)."""
    basis_spec = BasisSpec() if basis_spec is None else basis_spec
    omega = build_omega(ds, basis_spec, nuisances) if omega is None else omega
    fit_opt = adjusted_g_estimate(ds, blip_spec, basis_spec=basis_spec, omega=omega)
    fit_nt = adjusted_g_estimate(ds, blip_spec, basis_spec=basis_spec, omega=omega, allow_testing=False)
    v_opt = fit_opt.value(ds, conditioning)
    v_nt = fit_nt.value(ds, conditioning)
    return v_opt, v_nt, v_opt - v_nt
