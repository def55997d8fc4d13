"""Regenerate tests/data/frozen_values.json from the current implementation.

Run only after an intentional numerical change: python3 tests/freeze_values.py
"""

import json
from pathlib import Path

from optregime.basis import BasisSpec
from optregime.ipw import estimate_value
from optregime.simulation import DgpSpec, generate, oracle_regime, voi_estimates

CASES = (("DGP1", 3000, 21), ("DGP2", 5000, 21), ("DGP_PRIME", 3000, 21))
METHODS = ("IPW", "NDE_IPW", "IPW_PROJECTED", "NDE_IPW_PROJECTED", "SNMM", "SNMM_PROJECTED")


def compute():
    out = {}
    for name, n, seed in CASES:
        spec = DgpSpec(name, n=n, seed=seed)
        ds = generate(spec)
        regime = oracle_regime(spec)
        basis = BasisSpec(xi=4)
        row = {m: estimate_value(ds, regime, m, basis_spec=basis).theta for m in METHODS}
        row["Y_mean"] = float(ds.Y.mean())
        if name == "DGP2":
            est, _ = voi_estimates(ds, True, (None, {"L0_0": 0}), basis)
            row["voi_adjusted"] = [e[0] for e in est]
        out[name] = row
    return out


if __name__ == "__main__":
    path = Path(__file__).parent / "data" / "frozen_values.json"
    path.write_text(json.dumps(compute(), indent=2, sort_keys=True) + "\n")
