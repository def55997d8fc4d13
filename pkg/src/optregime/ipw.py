"""Inverse-probability-weighted value estimators for a fixed regime.

``IPW`` censors every departure from the regime. ``NDE_IPW`` keeps subjects
who tested earlier than the regime asks (their result is simply extra
information) and adds the cost of those tests back to the utility. The
``*_PROJECTED`` variants subtract the least-squares projection of the
centred contributions onto the no-direct-effect space.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec
from .errors import UnsupportedQueryError, ZeroWeightError
from .nuisance import DEFAULT_FLOOR, EmpiricalNuisances, crossfit_estimate
from .snmm import conditioning_mask
from .trajectory import Dataset, follow_regime, regime_utility

METHODS = ("IPW", "NDE_IPW", "IPW_PROJECTED", "NDE_IPW_PROJECTED", "SNMM", "SNMM_PROJECTED")


@dataclass
class ValueEstimate:
    """Point estimate with per-subject contributions whose mean is ``theta``."""

    method: str
    theta: float
    contributions: np.ndarray
    n: int
    n_uncensored: int
    sd_boot: float = None
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps({
            "method": self.method,
            "theta": self.theta,
            "sd_boot": self.sd_boot,
            "n": self.n,
            "n_uncensored": self.n_uncensored,
        }, sort_keys=True)


def _checked(p, floor, what, t):
    if np.any(p < floor):
        raise ZeroWeightError(f"{what} probability below {floor} at t={t}")
    return p


def _propensity(ds, nuisances, follow, nde, floor):
    """Product of the action probabilities the weight divides by."""
    w = np.ones(ds.n)
    for t in range(ds.K + 1):
        w = w * _checked(nuisances.p_s(ds, t), floor, "treatment", t)
        if t == ds.K:
            continue
        pi = nuisances.pi(ds, t)
        a_g = follow.a_g[:, t]
        if nde:
            factor = np.where(a_g == 1, pi, 1.0)
        else:
            factor = np.where(a_g == 1, pi, 1.0 - pi)
        live = ~(follow.nde_censored if nde else follow.censored)
        w = w * np.where(live, _checked(np.where(live, factor, 1.0), floor, "testing", t), 1.0)
    return w


def ipw_contributions(ds, regime, nuisances=None, method="IPW", cost_fn=None, floor=DEFAULT_FLOOR):
    """Per-subject V_ipw or V_nde-ipw and the uncensored mask."""
    nuisances = EmpiricalNuisances(ds) if nuisances is None else nuisances
    nde = method.startswith("NDE")
    follow = follow_regime(ds, regime, nde=nde)
    keep = ~(follow.nde_censored if nde else follow.censored)
    w = _propensity(ds, nuisances, follow, nde, floor)
    y = regime_utility(ds, follow, cost_fn) if nde else ds.Y
    return np.where(keep, y / w, 0.0), keep


def v_ipw(trajectory, regime, nuisances):
    """V_ipw for one subject under fitted nuisances."""
    ds = Dataset.from_trajectories([trajectory])
    return float(ipw_contributions(ds, regime, nuisances, "IPW")[0][0])


def v_nde_ipw(trajectory, regime, nuisances, cost_fn=None):
    """V_nde-ipw for one subject; ``cost_fn(t, ds)`` as in ``regime_utility``."""
    ds = Dataset.from_trajectories([trajectory])
    return float(ipw_contributions(ds, regime, nuisances, "NDE_IPW", cost_fn)[0][0])


def testing_factor(ds, regime, nuisances):
    """Per-subject product of 1{A_t=0}/(1-Pi_t) over t where the regime does not test.

    Multiplying V_nde-ipw by this factor recovers V_ipw when testing is free.
    """
    follow = follow_regime(ds, regime, nde=True)
    out = np.ones(ds.n)
    for t in range(ds.K):
        skip = follow.a_g[:, t] == 0
        pi = nuisances.pi(ds, t)
        out = np.where(skip, out * (ds.A[:, t] == 0) / np.where(skip, 1.0 - pi, 1.0), out)
    return out


def _project_mean(ds, values, mask, omega):
    """Conditional mean of ``values`` within ``mask`` and the fitted projection
    of the centred, rescaled contributions."""
    share = mask.mean()
    theta = values[mask].mean()
    centred = np.where(mask, values - theta, 0.0) / share
    return theta, omega.project(centred).fitted


def estimate_value(ds, regime=None, method="IPW", nuisances=None, basis_spec=None,
                   conditioning=None, cost_fn=None, omega=None, blip_spec=None):
    """Value of ``regime`` (or of the estimated optimal regime for SNMM methods).

    ``conditioning`` restricts to a baseline stratum such as ``{"L0_0": 1}``.
    Projected methods need ``basis_spec`` (default ``BasisSpec()``) or a
    prepared ``omega``.
    """
    from .nde_projection import adjusted_g_estimate, build_omega
    from .snmm import g_estimate, value_contributions

    method = method.upper().replace("-", "_")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    mask = conditioning_mask(ds, conditioning)
    share = mask.mean()
    projected = method.endswith("PROJECTED")
    if projected and omega is None:
        omega = build_omega(ds, basis_spec or BasisSpec(), nuisances)
    if method.startswith("SNMM"):
        if projected:
            fit = adjusted_g_estimate(ds, blip_spec, basis_spec=basis_spec, nuisances=nuisances, omega=omega)
            m_tilde = value_contributions(ds, fit.psi_tilde, fit.frozen)
            m_hat = value_contributions(ds, fit.psi_hat, fit.frozen)
            _, fitted = _project_mean(ds, m_hat, mask, omega)
            contrib = np.where(mask, m_tilde, 0.0) / share - fitted
        else:
            psi = g_estimate(ds, blip_spec)
            contrib = np.where(mask, value_contributions(ds, psi), 0.0) / share
        return ValueEstimate(method, float(contrib.mean()), contrib, ds.n, int(mask.sum()))
    base = method.replace("_PROJECTED", "")
    values, keep = ipw_contributions(ds, regime, nuisances, base, cost_fn)
    contrib = np.where(mask, values, 0.0) / share
    if projected:
        _, fitted = _project_mean(ds, values, mask, omega)
        contrib = contrib - fitted
    return ValueEstimate(method, float(contrib.mean()), contrib, ds.n, int((keep & mask).sum()))


def ipw_crossfit(ds, regime, method="IPW", M=2, seed=0, conditioning=None):
    """Cross-fitted IPW or NDE-IPW value: nuisances are fit on the training
    folds and contributions averaged on the held-out fold."""
    from .nuisance import make_crossfit

    method = method.upper().replace("-", "_")
    if method not in ("IPW", "NDE_IPW"):
        raise UnsupportedQueryError(f"cross-fitting is available for IPW and NDE_IPW, not {method}")
    plan = make_crossfit(ds, M, seed)

    def fold(train, held):
        values, _ = ipw_contributions(held, regime, EmpiricalNuisances(train), method)
        return values[conditioning_mask(held, conditioning)].mean()

    return crossfit_estimate(ds, plan, fold, min_rows=2)
