"""Simulation designs, exact truths and Monte Carlo drivers.

Every design has one test decision at t=0 and one treatment decision at
t=1 (K = 1). A latent disease state ``u`` drives the test result and the
outcome mean; testing never changes the outcome except through treatment,
so the no-direct-effect restriction holds by construction. Each design is
described by a ``Law`` that the generator, the exact-enumeration oracle and
the oracle nuisances all read.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .basis import BasisSpec
from .errors import OptRegimeError, UnsupportedQueryError
from .ipw import estimate_value
from .nde_projection import adjusted_g_estimate, build_omega
from .nuisance import DEFAULT_FLOOR, EmpiricalNuisances
from .snmm import conditioning_mask, g_estimate, optimal_regime, value_contributions
from .trajectory import MISSING, Dataset, Regime

DGP_NAMES = ("DGP1", "DGP_PRIME", "DGP2", "DGP3")
RHO_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)


@dataclass(frozen=True)
class Law:
    """Joint law of one design.

    ``latent`` maps latent level to probability; ``l0`` gives P(L0=1 | u) or
    is None when there is no baseline covariate; ``test`` gives P(A0=1 | L0);
    ``result`` maps u to a {result: probability} dict; ``treat`` gives
    P(S1=1 | L0, A0, R1); ``mean`` gives E[Yd | u, S1].
    """

    latent: dict
    l0: object
    test: object
    result: object
    treat: object
    mean: object
    c_star: float
    latent_name: str = "u"

    @property
    def has_l0(self):
        return self.l0 is not None


@dataclass(frozen=True)
class DgpSpec:
    """A design plus sample size and seed.

    ``rho`` is P(A0=1) for DGP1, DGP_PRIME and DGP3; ``eps_q``, ``eps`` and
    ``eps_prime`` are the DGP3 treatment probabilities when untested, when
    tested positive and when tested negative. ``c_star=None`` takes the
    design's own testing cost.
    """

    name: str = "DGP1"
    n: int = 25_000
    seed: int = 0
    rho: float = 0.5
    eps_q: float = 0.5
    eps: float = 0.5
    eps_prime: float = 0.5
    c_star: float = None

    def __post_init__(self):
        name = self.name.upper().replace("'", "_PRIME").replace("-", "_")
        if name == "DGPPRIME":
            name = "DGP_PRIME"
        if name not in DGP_NAMES:
            raise ValueError(f"unknown design {self.name!r}")
        object.__setattr__(self, "name", name)
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        for label in ("eps_q", "eps", "eps_prime"):
            if not 0.0 < getattr(self, label) < 1.0:
                raise ValueError(f"{label} must lie in (0, 1)")

    def law(self):
        rho = self.rho
        if self.name in ("DGP1", "DGP_PRIME"):
            if self.name == "DGP1":
                p_neg, p_pos, p_untested = 0.15, 0.85, 0.15
            else:
                p_neg, p_pos, p_untested = 0.90, 0.95, 0.01
            law = Law(
                latent={0: 0.5, 1: 0.5},
                l0=None,
                test=lambda l0: rho,
                result=lambda u: {u: 1.0},
                treat=lambda l0, a0, r1: p_untested if a0 == 0 else (p_pos if r1 == 1 else p_neg),
                mean=lambda u, s: -5.0 * u + 2.0 * s * u - 0.1 * s * (1 - u),
                c_star=3.0,
                latent_name="Rstar1",
            )
        elif self.name == "DGP2":
            table = {(0, 1, 0): 0.45, (1, 1, 0): 0.55, (0, 0, MISSING): 0.45, (1, 0, MISSING): 0.55,
                     (0, 1, 1): 0.85, (1, 1, 1): 0.90}
            law = Law(
                latent={0: 0.4, 1: 0.6},
                l0=lambda z: 0.55 if z == 1 else 0.45,
                test=lambda l0: 0.1 if l0 == 1 else 0.9,
                result=lambda z: {1: 0.95, 0: 0.05} if z == 1 else {1: 0.05, 0: 0.95},
                treat=lambda l0, a0, r1: table[(l0, a0, r1)],
                mean=lambda z, s: -5.0 * z + 9.0 * s * z - 3.0 * s * (1 - z),
                c_star=0.9,
                latent_name="Z0",
            )
        else:
            eq, e, ep = self.eps_q, self.eps, self.eps_prime
            law = Law(
                latent={-1: 0.5, 1: 0.5},
                l0=None,
                test=lambda l0: rho,
                result=lambda z: {z: 1.0},
                treat=lambda l0, a0, r1: eq if a0 == 0 else (e if r1 == 1 else ep),
                mean=lambda z, s: 10.0 * z,
                c_star=0.0,
                latent_name="Z0",
            )
        if self.c_star is not None:
            law = replace(law, c_star=float(self.c_star))
        return law


def _rng(seed, *stream):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(s) for s in stream]]))


def _lookup(fn, *columns):
    """Apply a scalar function row-wise by evaluating it once per distinct input."""
    code = 0
    for col in columns:
        lv, c = np.unique(col, return_inverse=True)
        code = code * len(lv) + c.reshape(-1)
    _, first, inv = np.unique(code, return_index=True, return_inverse=True)
    rows = [[int(col[i]) for col in columns] for i in first]
    values = np.array([fn(*r) for r in rows], dtype=np.float64)
    return values[inv.reshape(-1)]


def generate(spec, rep=0):
    """Draw ``spec.n`` subjects; replication ``rep`` gets an independent stream.

    The latent state is kept in ``dataset.latent`` and never read by the
    estimators.
    """
    law = spec.law()
    rng = _rng(spec.seed, rep)
    n = spec.n
    levels = np.array(sorted(law.latent))
    u = rng.choice(levels, size=n, p=[law.latent[v] for v in levels])
    if law.has_l0:
        l0 = (rng.random(n) < _lookup(law.l0, u)).astype(np.int64)
    else:
        l0 = np.zeros(n, dtype=np.int64)
    a0 = (rng.random(n) < _lookup(law.test, l0)).astype(np.int64)
    # test result given the latent state, drawn by inverse cdf over the result levels
    r_star = np.empty(n, dtype=np.int64)
    draw = rng.random(n)
    for v in levels:
        hit = u == v
        dist = law.result(int(v))
        res_levels = sorted(dist)
        cdf = np.cumsum([dist[r] for r in res_levels])
        idx = np.minimum(np.searchsorted(cdf, draw[hit], side="right"), len(res_levels) - 1)
        r_star[hit] = np.array(res_levels)[idx]
    r1 = np.where(a0 == 1, r_star, MISSING)
    s1 = (rng.random(n) < _lookup(law.treat, l0, a0, r1)).astype(np.int64)
    yd = _lookup(law.mean, u, s1) + rng.standard_normal(n)
    L = [l0[:, None] if law.has_l0 else np.zeros((n, 0), dtype=np.int64), np.zeros((n, 0), dtype=np.int64)]
    zeros = np.zeros(n, dtype=np.int64)
    return Dataset(
        L,
        np.stack([zeros, r1], axis=1),
        np.stack([zeros, s1], axis=1),
        np.stack([a0, zeros], axis=1),
        yd,
        law.c_star,
        latent={law.latent_name: u, "Rstar1": r_star},
    )


class OracleNuisances:
    """True testing and treatment probabilities of a design, with the same
    interface as ``EmpiricalNuisances``."""

    def __init__(self, spec, floor=DEFAULT_FLOOR):
        self.law = spec.law()
        self.K = 1
        self.floor = floor

    def _l0(self, ds):
        return ds.L[0][:, 0] if ds.L[0].shape[1] else np.zeros(ds.n, dtype=np.int64)

    def pi(self, ds, t):
        if t > 0:
            return np.zeros(ds.n)
        return _lookup(self.law.test, self._l0(ds))

    def p_s(self, ds, t, level=None):
        if t == 0:
            ref = np.zeros(ds.n, dtype=np.int64) if level is None else np.full(ds.n, int(level))
            return (ref == 0).astype(np.float64)
        p1 = _lookup(self.law.treat, self._l0(ds), ds.A[:, 0], ds.R[:, 1])
        s = ds.S[:, 1] if level is None else np.full(ds.n, int(level))
        return np.where(s == 1, p1, 1.0 - p1)


# exact truths by enumeration over the latent state and the observed lattice


def _l0_levels(law):
    return (0, 1) if law.has_l0 else (0,)


def _history_vars(law):
    base = ("L0_0",) if law.has_l0 else ()
    return base + ("R0",), base + ("R0", "S0", "A0", "R1")


def _cells(law, l0, a0):
    """(u, r1, probability) given L0 = l0 and the test decision, unnormalised."""
    for u, pu in law.latent.items():
        pl = 1.0 if not law.has_l0 else (law.l0(u) if l0 == 1 else 1.0 - law.l0(u))
        if a0 == 0:
            yield u, MISSING, pu * pl
        else:
            for r, pr in law.result(u).items():
                yield u, r, pu * pl * pr


def _result_levels(law):
    return sorted({r for u in law.latent for r in law.result(u)})


def _best_treatment(law, l0, a0, r1):
    """Treatment maximising E[Yd | l0, a0, r1]; ties go to s = 0."""
    cells = [(u, p) for u, r, p in _cells(law, l0, a0) if r == r1]
    mass = sum(p for _, p in cells)
    if mass == 0:
        return 0, 0.0
    gains = [sum(p * law.mean(u, s) for u, p in cells) / mass for s in (0, 1)]
    s = int(np.argmax(gains))
    return s, gains[s]


def oracle_regime(spec, allow_testing=True):
    """Optimal regime of the design, tabulated over every history the data can show."""
    law = spec.law()
    hv0, hv1 = _history_vars(law)
    t0, t1 = {}, {}
    for l0 in _l0_levels(law):
        best_a, best_v = 0, -np.inf
        for a0 in ((0, 1) if allow_testing else (0,)):
            value = 0.0
            for r1 in ([MISSING] if a0 == 0 else _result_levels(law)):
                s, _ = _best_treatment(law, l0, a0, r1)
                value += sum(p * law.mean(u, s) for u, r, p in _cells(law, l0, a0) if r == r1)
            value -= law.c_star * a0 * sum(p for _, _, p in _cells(law, l0, 0))
            if value > best_v + 1e-12:
                best_a, best_v = a0, value
        t0[(l0, 0) if law.has_l0 else (0,)] = (0, best_a)
        for a0 in (0, 1):
            for r1 in ([MISSING] if a0 == 0 else _result_levels(law)):
                key = ((l0,) if law.has_l0 else ()) + (0, 0, a0, r1)
                t1[key] = (_best_treatment(law, l0, a0, r1)[0], 0)
    return Regime((hv0, hv1), (t0, t1), reduced_history=True)


def regime_value(spec, regime, conditioning=None):
    """E[Y_g] by enumeration, optionally within a baseline stratum {"L0_0": l}."""
    law = spec.law()
    conditioning = dict(conditioning or {})
    unknown = set(conditioning) - ({"L0_0"} if law.has_l0 else set())
    if unknown:
        raise UnsupportedQueryError(f"cannot condition on {sorted(unknown)} in {spec.name}")
    total, mass = 0.0, 0.0
    for l0 in _l0_levels(law):
        if "L0_0" in conditioning and int(conditioning["L0_0"]) != l0:
            continue
        h0 = {"L0_0": l0, "R0": 0}
        s0, a0 = regime.action(0, [h0[v] for v in regime.history_vars[0]])
        for u, r1, p in _cells(law, l0, a0):
            h1 = dict(h0, S0=s0, A0=a0, R1=r1)
            s1, _ = regime.action(1, [h1[v] for v in regime.history_vars[1]])
            total += p * (law.mean(u, s1) - law.c_star * a0)
            mass += p
    return total / mass


QUERIES = ("value", "optimal_regime", "optimal_regime_no_test", "value_opt", "value_no_test", "voi")


def analytic_oracle(spec, query, regime=None, conditioning=None):
    """Exact truth for ``query``; see ``QUERIES``. ``value`` needs ``regime``."""
    if query == "value":
        if regime is None:
            raise UnsupportedQueryError("value query needs a regime")
        return regime_value(spec, regime, conditioning)
    if query == "optimal_regime":
        return oracle_regime(spec)
    if query == "optimal_regime_no_test":
        return oracle_regime(spec, allow_testing=False)
    if query == "value_opt":
        return regime_value(spec, oracle_regime(spec), conditioning)
    if query == "value_no_test":
        return regime_value(spec, oracle_regime(spec, False), conditioning)
    if query == "voi":
        return (regime_value(spec, oracle_regime(spec), conditioning)
                - regime_value(spec, oracle_regime(spec, False), conditioning))
    raise UnsupportedQueryError(f"unknown query {query!r}")


def regime_matches(estimated, reference):
    """True when both regimes prescribe the same actions on every stratum
    they both tabulate (histories are compared on the reference's variables)."""
    for t in range(reference.K + 1):
        ref_vars = reference.history_vars[t]
        est_vars = estimated.history_vars[t]
        for key, act in estimated.tables[t].items():
            named = dict(zip(est_vars, key))
            if any(v not in named for v in ref_vars):
                continue
            ref_key = tuple(named[v] for v in ref_vars)
            if ref_key in reference.tables[t] and reference.tables[t][ref_key] != tuple(act):
                return False
    return True


def dgp3_variance_ratio(rho, eps_q, eps, eps_prime):
    """var(NDE-IPW) / var(IPW) for the oracle estimators of the never-test,
    always-treat regime in DGP3: rho^2 (1 + eps_q/(2 eps) + eps_q/(2 eps'))."""
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    for v in (eps_q, eps, eps_prime):
        if not 0.0 < v < 1.0:
            raise ValueError("treatment probabilities must lie in (0, 1)")
    return rho ** 2 * (1.0 + eps_q / (2.0 * eps) + eps_q / (2.0 * eps_prime))


# Monte Carlo


ESTIMATORS = ("IPW", "NDE_IPW", "IPW_PROJECTED", "NDE_IPW_PROJECTED", "SNMM", "SNMM_PROJECTED", "MEAN_Y")


@dataclass
class McReport:
    """Per-estimator Monte Carlo summaries.

    ``inverse_re[m]`` is var(m) / var(reference), so the reference has 1.
    ``selection_rate`` is reported for estimators that choose a regime.
    ``raw`` keeps one dict per replication.
    """

    spec: DgpSpec
    estimators: tuple
    reference: str
    reps: int
    mean: dict
    sd: dict
    inverse_re: dict
    selection_rate: dict
    excluded: int
    raw: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def rows(self):
        out = []
        for m in self.estimators:
            out.append((m, "mean", self.mean[m]))
            out.append((m, "sd", self.sd[m]))
            out.append((m, "inverse_re", self.inverse_re[m]))
            if m in self.selection_rate:
                out.append((m, "selection_rate", self.selection_rate[m]))
        return out


def _replication(args):
    spec, rep, estimators, regime_mode, nuisance_mode, basis_spec = args
    record = {"rep": rep, "estimates": {}, "selected": {}}
    try:
        ds = generate(spec, rep)
        truth = oracle_regime(spec)
        nuis = OracleNuisances(spec) if nuisance_mode == "oracle" else EmpiricalNuisances(ds)
        needs_proj = any(m.endswith("PROJECTED") for m in estimators)
        omega = build_omega(ds, basis_spec, nuis) if needs_proj else None
        fit = None
        if regime_mode == "estimated" or "SNMM_PROJECTED" in estimators:
            fit = adjusted_g_estimate(ds, basis_spec=basis_spec, omega=omega) if needs_proj else None
        psi = g_estimate(ds) if regime_mode == "estimated" or "SNMM" in estimators else None
        for m in estimators:
            if m == "MEAN_Y":
                record["estimates"][m] = float(ds.Y.mean())
                continue
            if m.startswith("SNMM"):
                est = estimate_value(ds, None, m, nuis, basis_spec, omega=omega)
                chosen = fit.regime(ds) if m.endswith("PROJECTED") else optimal_regime(ds, psi)
                record["selected"][m] = regime_matches(chosen, truth)
            else:
                if regime_mode == "oracle":
                    regime = truth
                elif m.endswith("PROJECTED"):
                    regime = fit.regime(ds)
                else:
                    regime = optimal_regime(ds, psi)
                est = estimate_value(ds, regime, m, nuis, basis_spec, omega=omega)
            record["estimates"][m] = est.theta
    except OptRegimeError as exc:
        record["error"] = exc.as_record()
    return record


def _threads(threads):
    if threads is None:
        threads = int(os.environ.get("OPTREGIME_THREADS", "0") or 0) or (os.cpu_count() or 1)
    return max(1, int(threads))


def parallel_map(fn, items, threads=None):
    """Ordered map over a process pool (serial when one worker)."""
    items = list(items)
    threads = _threads(threads)
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))


def summarize(spec, estimators, records, reference="IPW"):
    """Aggregate per-replication records into an McReport."""
    good = [r for r in records if "error" not in r]
    errors = [r for r in records if "error" in r]
    mean, sd, inv, sel = {}, {}, {}, {}
    for m in estimators:
        vals = np.array([r["estimates"][m] for r in good])
        mean[m] = float(vals.mean()) if len(vals) else float("nan")
        sd[m] = float(vals.std(ddof=1)) if len(vals) > 1 else float("nan")
        flags = [r["selected"][m] for r in good if m in r["selected"]]
        if flags:
            sel[m] = float(np.mean(flags))
    ref_var = sd.get(reference, float("nan")) ** 2
    for m in estimators:
        inv[m] = sd[m] ** 2 / ref_var if ref_var > 0 else float("nan")
    return McReport(spec, tuple(estimators), reference, len(records), mean, sd, inv, sel,
                    len(errors), records, errors)


def run_monte_carlo(spec, estimators=ESTIMATORS[:4], reps=100, regime="oracle",
                    nuisances="empirical", basis_spec=None, reference="IPW", threads=None):
    """Replicate ``spec`` ``reps`` times and summarise each estimator.

    ``regime="oracle"`` evaluates the IPW-type estimators at the design's
    optimal regime; ``"estimated"`` uses the regime selected by the matching
    SNMM fit (unadjusted for plain, adjusted for projected methods).
    Failed replications are recorded and excluded.
    """
    if reps < 2:
        raise ValueError("reps must be at least 2")
    basis_spec = basis_spec or BasisSpec()
    estimators = tuple(m.upper().replace("-", "_") for m in estimators)
    jobs = [(spec, rep, estimators, regime, nuisances, basis_spec) for rep in range(reps)]
    records = parallel_map(_replication, jobs, threads)
    ref = reference if reference in estimators else estimators[0]
    return summarize(spec, estimators, records, ref)


def sweep(spec, rhos=RHO_GRID, reps=50, estimators=ESTIMATORS[:4], threads=None, basis_spec=None):
    """Monte Carlo over a grid of testing probabilities; one report per rho."""
    return [run_monte_carlo(replace(spec, rho=float(r)), estimators, reps, basis_spec=basis_spec,
                            threads=threads) for r in rhos]


# value of information


def voi_estimates(ds, adjusted=True, conditionings=(None,), basis_spec=None):
    """VoI, optimal value and no-test value for each conditioning stratum.

    Returns a list of ``(voi, value_opt, value_no_test)`` tuples. With
    ``adjusted`` both regimes come from the projection-adjusted fit.
    """
    out = []
    if adjusted:
        basis_spec = basis_spec or BasisSpec()
        omega = build_omega(ds, basis_spec)
        fit_opt = adjusted_g_estimate(ds, basis_spec=basis_spec, omega=omega)
        fit_nt = adjusted_g_estimate(ds, basis_spec=basis_spec, omega=omega, allow_testing=False)
        for c in conditionings:
            v_opt, v_nt = fit_opt.value(ds, c), fit_nt.value(ds, c)
            out.append((v_opt - v_nt, v_opt, v_nt))
        return out, (fit_opt.regime(ds), fit_nt.regime(ds))
    psi_opt = g_estimate(ds)
    psi_nt = g_estimate(ds, allow_testing=False)
    m_opt, m_nt = value_contributions(ds, psi_opt), value_contributions(ds, psi_nt)
    for c in conditionings:
        mask = conditioning_mask(ds, c)
        v_opt, v_nt = float(m_opt[mask].mean()), float(m_nt[mask].mean())
        out.append((v_opt - v_nt, v_opt, v_nt))
    return out, (optimal_regime(ds, psi_opt), optimal_regime(ds, psi_nt))


@dataclass
class BootstrapResult:
    reject: bool
    quantile: float
    boot_mean: float
    boot_sd: float
    estimate: float
    values: np.ndarray
    redraws: int = 0


def bootstrap_voi_values(ds, adjusted=True, B=100, conditionings=(None,), seed=0,
                         basis_spec=None, max_redraws=20):
    """(B x len(conditionings)) bootstrap VoIs; each resample refits everything."""
    rng = _rng(seed, 0xB007)
    values = np.empty((B, len(conditionings)))
    redraws = 0
    b = 0
    while b < B:
        idx = rng.integers(0, ds.n, ds.n)
        try:
            est, _ = voi_estimates(ds.subset(idx), adjusted, conditionings, basis_spec)
        except OptRegimeError:
            redraws += 1
            if redraws > max_redraws:
                raise
            continue
        values[b] = [e[0] for e in est]
        b += 1
    return values, redraws


def bootstrap_decision(values, estimate, alpha=0.05, redraws=0):
    q = float(np.quantile(values, alpha))
    return BootstrapResult(q > 0.0, q, float(values.mean()), float(values.std(ddof=1)),
                           float(estimate), values, redraws)


def bootstrap_voi_test(ds, adjusted=True, B=100, alpha=0.05, conditioning=None, seed=0, basis_spec=None):
    """One-sided test of VoI <= 0: reject when the alpha-quantile of the
    bootstrap VoIs is above zero."""
    if B < 50:
        raise ValueError("B must be at least 50")
    values, redraws = bootstrap_voi_values(ds, adjusted, B, (conditioning,), seed, basis_spec)
    est, _ = voi_estimates(ds, adjusted, (conditioning,), basis_spec)
    return bootstrap_decision(values[:, 0], est[0][0], alpha, redraws)


def _voi_replication(args):
    spec, rep, adjusted, conditionings, basis_spec = args
    ds = generate(spec, rep)
    try:
        est, (reg_opt, reg_nt) = voi_estimates(ds, adjusted, conditionings, basis_spec)
    except OptRegimeError as exc:
        return {"rep": rep, "error": exc.as_record()}
    return {
        "rep": rep,
        "voi": [e[0] for e in est],
        "value_opt": [e[1] for e in est],
        "value_no_test": [e[2] for e in est],
        "selected": regime_matches(reg_opt, oracle_regime(spec)),
        "selected_no_test": regime_matches(reg_nt, oracle_regime(spec, False)),
    }


def voi_study(spec, reps=100, adjusted=True, conditionings=(None,), basis_spec=None, threads=None):
    """Per-replication VoI estimates and regime-selection flags."""
    jobs = [(spec, rep, adjusted, tuple(conditionings), basis_spec) for rep in range(reps)]
    return parallel_map(_voi_replication, jobs, threads)


def _bootstrap_replication(args):
    spec, rep, adjusted, conditionings, B, alpha, basis_spec = args
    ds = generate(spec, rep)
    try:
        values, redraws = bootstrap_voi_values(ds, adjusted, B, conditionings, seed=spec.seed * 7919 + rep,
                                               basis_spec=basis_spec)
        est, _ = voi_estimates(ds, adjusted, conditionings, basis_spec)
    except OptRegimeError as exc:
        return {"rep": rep, "error": exc.as_record()}
    results = [bootstrap_decision(values[:, j], est[j][0], alpha, redraws) for j in range(len(conditionings))]
    return {
        "rep": rep,
        "reject": [r.reject for r in results],
        "quantile": [r.quantile for r in results],
        "boot_mean": [r.boot_mean for r in results],
        "boot_sd": [r.boot_sd for r in results],
        "estimate": [r.estimate for r in results],
    }


def bootstrap_study(spec, reps=50, adjusted=True, conditionings=(None,), B=100, alpha=0.05,
                    basis_spec=None, threads=None):
    """Bootstrap VoI tests on ``reps`` independent datasets."""
    jobs = [(spec, rep, adjusted, tuple(conditionings), B, alpha, basis_spec) for rep in range(reps)]
    return parallel_map(_bootstrap_replication, jobs, threads)


def dgp3_mc_ratio(rho=0.5, eps_q=0.5, eps=0.5, eps_prime=0.5, n=100_000, reps=200, seed=0, threads=None):
    """Monte Carlo check of ``dgp3_variance_ratio`` with oracle nuisances.

    Returns ``(across_rep_ratio, per_subject_ratio)``: the ratio of the
    across-replication variances of the two estimates, and the ratio of the
    per-subject contribution variances pooled over all replications.
    """
    spec = DgpSpec("DGP3", n=n, seed=seed, rho=rho, eps_q=eps_q, eps=eps, eps_prime=eps_prime)
    jobs = [(spec, rep) for rep in range(reps)]
    rows = parallel_map(_dgp3_replication, jobs, threads)
    est = np.array([r[0] for r in rows])
    second = np.array([r[1] for r in rows])
    across = est[:, 1].var(ddof=1) / est[:, 0].var(ddof=1)
    pooled_mean = est.mean(axis=0)
    pooled_var = second.mean(axis=0) - pooled_mean ** 2
    return float(across), float(pooled_var[1] / pooled_var[0])


def _dgp3_replication(args):
    from .ipw import ipw_contributions

    spec, rep = args
    ds = generate(spec, rep)
    nuis = OracleNuisances(spec)
    regime = Regime.constant([(0, 0), (1, 0)])
    v_ipw, _ = ipw_contributions(ds, regime, nuis, "IPW")
    v_nde, _ = ipw_contributions(ds, regime, nuis, "NDE_IPW")
    return (v_ipw.mean(), v_nde.mean()), ((v_ipw ** 2).mean(), (v_nde ** 2).mean())


def enumerate_lattice(spec):
    """Probabilities of every observable (L0, A0, R1, S1) cell; sums to one."""
    law = spec.law()
    cells = {}
    for l0, a0 in product(_l0_levels(law), (0, 1)):
        pa = law.test(l0) if a0 == 1 else 1.0 - law.test(l0)
        for u, r1, p in _cells(law, l0, a0):
            for s1 in (0, 1):
                ps = law.treat(l0, a0, r1)
                key = (l0, a0, r1, s1)
                cells[key] = cells.get(key, 0.0) + p * pa * (ps if s1 else 1.0 - ps)
    return cells
