import numpy as np
import pytest

from optregime import ipw
from optregime.basis import BasisSpec
from optregime.errors import UnsupportedQueryError, ZeroWeightError
from optregime.ipw import (
    estimate_value,
    ipw_contributions,
    ipw_crossfit,
    v_ipw,
    v_nde_ipw,
)
from optregime.nuisance import EmpiricalNuisances
from optregime.simulation import DgpSpec, OracleNuisances, generate
from optregime.trajectory import MISSING, Regime, Trajectory

TREAT_UNTESTED = Regime.constant([(0, 0), (1, 0)])
DGP1_ORACLE = OracleNuisances(DgpSpec("DGP1"))


class ConstantNuisances:
    def __init__(self, pi, ps1):
        self.pi_value, self.ps1, self.floor = pi, ps1, 1e-6

    def pi(self, ds, t):
        return np.full(ds.n, self.pi_value if t < ds.K else 0.0)

    def p_s(self, ds, t, level=None):
        s = ds.S[:, t] if level is None else np.full(ds.n, level)
        if t == 0:
            return (s == 0).astype(float)
        return np.where(s == 1, self.ps1, 1.0 - self.ps1)


def test_plain_weight_substitution():
    y = -4.2
    tr = Trajectory(((), ()), (0, MISSING), (0, 1), (0, 0), y + 0.0, 3.0)
    assert v_ipw(tr, TREAT_UNTESTED, DGP1_ORACLE) == pytest.approx(y / 0.075)
    censored = Trajectory(((), ()), (0, 1), (0, 1), (1, 0), y, 3.0)
    assert v_ipw(censored, TREAT_UNTESTED, DGP1_ORACLE) == 0.0


def test_early_tester_keeps_cost_adjusted_outcome():
    y = 2.5
    tr = Trajectory(((), ()), (0, 1), (0, 1), (1, 0), y, 3.0)
    assert v_nde_ipw(tr, TREAT_UNTESTED, DGP1_ORACLE) == pytest.approx(y / 0.85)
    mismatch = Trajectory(((), ()), (0, MISSING), (0, 0), (0, 0), y, 3.0)
    assert v_nde_ipw(mismatch, TREAT_UNTESTED, DGP1_ORACLE) == 0.0
    must_test = Regime.constant([(0, 1), (1, 0)])
    skipped = Trajectory(((), ()), (0, MISSING), (0, 1), (0, 0), y, 3.0)
    assert v_nde_ipw(skipped, must_test, DGP1_ORACLE) == 0.0


def test_unit_weights_give_sample_mean(dgp1_small):
    followers = dgp1_small.subset(np.flatnonzero((dgp1_small.A[:, 0] == 0) & (dgp1_small.S[:, 1] == 1)))
    est = estimate_value(followers, TREAT_UNTESTED, "NDE_IPW", ConstantNuisances(0.0, 1.0))
    assert est.theta == pytest.approx(followers.Y.mean())


def test_testing_factor_recovers_plain_weights(dgp1_small):
    nuis = EmpiricalNuisances(dgp1_small)
    zero_cost = lambda t, ds: np.zeros(ds.n)
    nde, _ = ipw_contributions(dgp1_small, TREAT_UNTESTED, nuis, "NDE_IPW", cost_fn=zero_cost)
    plain, _ = ipw_contributions(dgp1_small, TREAT_UNTESTED, nuis, "IPW")
    factor = ipw.testing_factor(dgp1_small, TREAT_UNTESTED, nuis)
    assert np.abs(nde * factor - plain).max() < 1e-12


def test_positivity_violation(dgp1_small):
    with pytest.raises(ZeroWeightError):
        ipw_contributions(dgp1_small, TREAT_UNTESTED, ConstantNuisances(1.0, 0.5), "IPW")


@pytest.mark.parametrize("method", ["IPW_PROJECTED", "NDE_IPW_PROJECTED"])
def test_projected_contributions_average_to_estimate(dgp1_small, method):
    est = estimate_value(dgp1_small, TREAT_UNTESTED, method, basis_spec=BasisSpec(xi=3))
    assert est.contributions.mean() == pytest.approx(est.theta, abs=1e-12)
    plain = estimate_value(dgp1_small, TREAT_UNTESTED, method.replace("_PROJECTED", ""))
    assert np.var(est.contributions) <= np.var(plain.contributions) + 1e-12


def test_zero_dimensional_basis_changes_nothing(dgp1_small):
    plain = estimate_value(dgp1_small, TREAT_UNTESTED, "IPW").theta
    adjusted = estimate_value(dgp1_small, TREAT_UNTESTED, "IPW_PROJECTED", basis_spec=BasisSpec(xi=0)).theta
    assert adjusted == pytest.approx(plain, abs=1e-12)


def test_conditioning_restricts_population(dgp2_small):
    from optregime.simulation import oracle_regime

    regime = oracle_regime(DgpSpec("DGP2"))
    whole = estimate_value(dgp2_small, regime, "IPW").theta
    parts = [estimate_value(dgp2_small, regime, "IPW", conditioning={"L0_0": v}) for v in (0, 1)]
    share = dgp2_small.L[0][:, 0].mean()
    assert (1 - share) * parts[0].theta + share * parts[1].theta == pytest.approx(whole, abs=1e-10)


def test_crossfit_close_to_single_sample():
    ds = generate(DgpSpec("DGP1", n=25_000, seed=2))
    single = estimate_value(ds, TREAT_UNTESTED, "IPW")
    se = single.contributions.std() / np.sqrt(ds.n)
    assert abs(ipw_crossfit(ds, TREAT_UNTESTED, "IPW", M=2, seed=1) - single.theta) < 3 * se
    with pytest.raises(UnsupportedQueryError):
        ipw_crossfit(ds, TREAT_UNTESTED, "IPW_PROJECTED")


def test_json_record(dgp1_small):
    import json

    doc = json.loads(estimate_value(dgp1_small, TREAT_UNTESTED, "NDE_IPW").to_json())
    assert doc["method"] == "NDE_IPW" and doc["n"] == dgp1_small.n
