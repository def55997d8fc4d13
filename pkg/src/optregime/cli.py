"""Command-line front end.

Commands: ``simulate``, ``estimate``, ``voi-test``, ``sweep`` and ``ratio``.
Every option can also come from a JSON file given with ``--config``; flags
on the command line win. Reports are CSV (one row per estimator and
statistic) and carry the configuration hash and library version.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field

from . import __version__
from .basis import BasisSpec
from .errors import OptRegimeError

COMMANDS = ("simulate", "estimate", "voi-test", "sweep", "ratio")
METHOD_NAMES = {"ipw": "IPW", "nde-ipw": "NDE_IPW", "snmm": "SNMM", "mean-y": "MEAN_Y"}
# fields that never change results and are left out of the configuration hash
_NOT_HASHED = ("out", "raw_out", "json_out", "threads", "config")


class UsageError(Exception):
    def __init__(self, flag, message):
        super().__init__(f"{flag}: {message}")
        self.flag = flag


@dataclass
class EstimatorConfig:
    method: str = "ipw"
    adjust_nde: bool = False
    xi: int = 6
    basis: str = "natural_spline"
    history: str = "saturated"
    crossfit: int = 0

    @property
    def name(self):
        base = METHOD_NAMES[self.method]
        return base + "_PROJECTED" if self.adjust_nde else base

    def basis_spec(self):
        return BasisSpec(self.xi, self.basis, self.history)


@dataclass
class RunConfig:
    command: str
    dgp: str = None
    data: str = None
    regime_file: str = None
    estimators: list = field(default_factory=list)
    n: int = 25_000
    reps: int = 100
    B: int = 100
    alpha: float = 0.05
    seed: int = 0
    rho: float = 0.5
    eps_q: float = 0.5
    eps: float = 0.5
    eps_prime: float = 0.5
    c_star: float = None
    condition: dict = None
    rhos: list = None
    regime: str = "oracle"
    nuisances: str = "empirical"
    out: str = None
    raw_out: str = None
    json_out: str = None
    threads: int = None
    config: str = None

    def digest(self):
        doc = {k: v for k, v in asdict(self).items() if k not in _NOT_HASHED}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _parser():
    p = argparse.ArgumentParser(prog="optregime", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="JSON file with default option values")
    p.add_argument("--dgp", default=S)
    p.add_argument("--data", default=S, help="dataset CSV")
    p.add_argument("--regime-file", dest="regime_file", default=S, help="regime CSV")
    p.add_argument("--method", action="append", default=S, choices=sorted(METHOD_NAMES))
    p.add_argument("--estimators", default=S, help="comma list, e.g. ipw,nde-ipw+nde")
    p.add_argument("--adjust-nde", dest="adjust_nde", action="store_true", default=S)
    p.add_argument("--xi", type=int, default=S)
    p.add_argument("--basis", default=S, choices=("natural_spline", "polynomial", "indicator"))
    p.add_argument("--history", default=S, choices=("saturated", "constant"))
    p.add_argument("--crossfit", type=int, default=S, help="number of folds (0 = none)")
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--reps", type=int, default=S)
    p.add_argument("--B", type=int, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--rho", type=float, default=S)
    p.add_argument("--eps-q", dest="eps_q", type=float, default=S)
    p.add_argument("--eps", type=float, default=S)
    p.add_argument("--eps-prime", dest="eps_prime", type=float, default=S)
    p.add_argument("--c-star", dest="c_star", type=float, default=S)
    p.add_argument("--condition", default=S, help="baseline stratum, e.g. L0_0=1")
    p.add_argument("--rhos", default=S, help="comma list of testing probabilities")
    p.add_argument("--regime", default=S, choices=("oracle", "estimated"))
    p.add_argument("--nuisances", default=S, choices=("empirical", "oracle"))
    p.add_argument("--out", default=S)
    p.add_argument("--raw-out", dest="raw_out", default=S)
    p.add_argument("--json-out", dest="json_out", default=S)
    p.add_argument("--threads", type=int, default=S)
    return p


def _parse_condition(value):
    if value is None or isinstance(value, dict):
        return value
    out = {}
    for part in str(value).split(","):
        if "=" not in part:
            raise UsageError("--condition", f"expected NAME=VALUE, got {part!r}")
        name, level = part.split("=", 1)
        try:
            out[name.strip()] = int(level)
        except ValueError:
            raise UsageError("--condition", f"level {level!r} is not an integer") from None
    return out


def _parse_estimators(text, defaults):
    """``ipw,nde-ipw+nde`` where ``+nde`` marks the projection adjustment."""
    out = []
    for item in text if isinstance(text, list) else str(text).split(","):
        if isinstance(item, dict):
            cfg = EstimatorConfig(**{**asdict(defaults), **item})
        else:
            item = item.strip().lower()
            adjust = item.endswith("+nde")
            cfg = EstimatorConfig(**{**asdict(defaults), "method": item.removesuffix("+nde"),
                                     "adjust_nde": adjust or defaults.adjust_nde})
        if cfg.method not in METHOD_NAMES:
            raise UsageError("--estimators", f"unknown method {cfg.method!r}")
        out.append(cfg)
    return out


def parse_config(argv, config_file=None):
    """Validated RunConfig from command-line arguments and an optional JSON file."""
    parser = _parser()
    try:
        ns = vars(parser.parse_args(argv))
    except SystemExit as exc:
        raise UsageError("arguments", "could not parse command line") from exc
    path = ns.get("config", config_file)
    values = {}
    if path:
        try:
            with open(path) as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError("--config", str(exc)) from None
    values.update(ns)
    est_defaults = EstimatorConfig(
        method="ipw",
        adjust_nde=bool(values.pop("adjust_nde", False)),
        xi=int(values.pop("xi", 6)),
        basis=values.pop("basis", "natural_spline"),
        history=values.pop("history", "saturated"),
        crossfit=int(values.pop("crossfit", 0)),
    )
    methods = values.pop("method", None)
    est_text = values.pop("estimators", None)
    if est_text is None:
        if methods:
            est_text = ",".join(methods)
        elif values["command"] == "estimate":
            est_text = "ipw"
        else:
            est_text = "ipw,nde-ipw,ipw+nde,nde-ipw+nde"
    values["estimators"] = _parse_estimators(est_text, est_defaults)
    values["condition"] = _parse_condition(values.get("condition"))
    if isinstance(values.get("rhos"), str):
        try:
            values["rhos"] = [float(r) for r in values["rhos"].split(",")]
        except ValueError:
            raise UsageError("--rhos", "expected a comma list of numbers") from None
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(values) - known
    if unknown:
        raise UsageError("--config", f"unknown fields {sorted(unknown)}")
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _validate(cfg):
    def prob(flag, value, upper_closed=False):
        ok = 0.0 < value <= 1.0 if upper_closed else 0.0 < value < 1.0
        if not ok:
            raise UsageError(flag, f"must lie in (0, 1{']' if upper_closed else ')'}, got {value}")

    prob("--rho", cfg.rho, upper_closed=cfg.command == "ratio")
    for flag, value in (("--eps-q", cfg.eps_q), ("--eps", cfg.eps), ("--eps-prime", cfg.eps_prime),
                        ("--alpha", cfg.alpha)):
        prob(flag, value)
    for r in cfg.rhos or ():
        prob("--rhos", r)
    if cfg.n < 2:
        raise UsageError("--n", "must be at least 2")
    if cfg.command in ("simulate", "sweep") and cfg.reps < 2:
        raise UsageError("--reps", "must be at least 2")
    if cfg.command == "voi-test" and cfg.B < 50:
        raise UsageError("--B", "must be at least 50")
    if cfg.command in ("simulate", "sweep") and not cfg.dgp:
        raise UsageError("--dgp", "required")
    if cfg.command == "estimate" and not cfg.data:
        raise UsageError("--data", "required")
    if cfg.command == "voi-test" and not (cfg.dgp or cfg.data):
        raise UsageError("--dgp", "voi-test needs --dgp or --data")
    if cfg.dgp:
        from .simulation import DgpSpec

        try:
            DgpSpec(cfg.dgp)
        except ValueError as exc:
            raise UsageError("--dgp", str(exc)) from None
    for est in cfg.estimators:
        if est.xi < 0:
            raise UsageError("--xi", "must be non-negative")
        if est.crossfit == 1 or est.crossfit < 0:
            raise UsageError("--crossfit", "needs at least 2 folds (0 disables)")


# running


def _spec(cfg, rho=None):
    from .simulation import DgpSpec

    return DgpSpec(cfg.dgp, n=cfg.n, seed=cfg.seed, rho=cfg.rho if rho is None else rho,
                   eps_q=cfg.eps_q, eps=cfg.eps, eps_prime=cfg.eps_prime, c_star=cfg.c_star)


def _fmt(value):
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(cfg, rows, path, header=("command", "dgp", "estimator", "statistic", "value")):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header) + ["config_hash", "version"])
    digest = cfg.digest()
    for row in rows:
        w.writerow([_fmt(v) for v in row] + [digest, __version__])
    text = buf.getvalue()
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def _run_simulate(cfg):
    from .simulation import run_monte_carlo

    names = [e.name for e in cfg.estimators]
    basis = cfg.estimators[0].basis_spec()
    report = run_monte_carlo(_spec(cfg), names, cfg.reps, cfg.regime, cfg.nuisances, basis,
                             threads=cfg.threads)
    rows = [(cfg.command, report.spec.name, m, stat, v) for m, stat, v in report.rows()]
    rows.append((cfg.command, report.spec.name, "*", "excluded", report.excluded))
    _write_rows(cfg, rows, cfg.out)
    if cfg.raw_out:
        raw = []
        for rec in report.raw:
            for m, v in sorted(rec.get("estimates", {}).items()):
                raw.append((rec["rep"], m, v))
        _write_rows(cfg, raw, cfg.raw_out, header=("rep", "estimator", "theta"))
    for m in report.estimators:
        print(f"{m}: mean={report.mean[m]:.6g} sd={report.sd[m]:.6g} inverse_re={report.inverse_re[m]:.4g}")
    return 0


def _run_sweep(cfg):
    from .simulation import RHO_GRID, sweep

    names = [e.name for e in cfg.estimators]
    rhos = cfg.rhos or list(RHO_GRID)
    reports = sweep(_spec(cfg), rhos, cfg.reps, names, cfg.threads, cfg.estimators[0].basis_spec())
    rows = []
    for rho, rep in zip(rhos, reports):
        for m, stat, v in rep.rows():
            rows.append((cfg.command, rep.spec.name, rho, m, stat, v))
    _write_rows(cfg, rows, cfg.out, header=("command", "dgp", "rho", "estimator", "statistic", "value"))
    for rho, rep in zip(rhos, reports):
        parts = " ".join(f"{m}={rep.inverse_re[m]:.4g}" for m in rep.estimators)
        print(f"rho={rho}: inverse_re {parts}")
    return 0


def _load_data(cfg):
    from .trajectory import Dataset

    return Dataset.read_csv(cfg.data, c_star=cfg.c_star or 0.0)


def _run_estimate(cfg):
    from .ipw import estimate_value, ipw_crossfit
    from .nde_projection import adjusted_g_estimate
    from .snmm import g_estimate, optimal_regime
    from .trajectory import Regime

    ds = _load_data(cfg)
    rows = []
    for est in cfg.estimators:
        name = est.name
        if name == "MEAN_Y":
            rows.append((cfg.command, cfg.data, name, "theta", float(ds.Y.mean())))
            continue
        regime = None
        if not name.startswith("SNMM"):
            if cfg.regime_file:
                regime = Regime.read_csv(cfg.regime_file)
            elif est.adjust_nde:
                regime = adjusted_g_estimate(ds, basis_spec=est.basis_spec()).regime(ds)
            else:
                regime = optimal_regime(ds, g_estimate(ds))
        if est.crossfit:
            theta = ipw_crossfit(ds, regime, name, est.crossfit, cfg.seed, cfg.condition)
            rows.append((cfg.command, cfg.data, name, "theta", theta))
            print(f"{name} (cross-fit, M={est.crossfit}): theta={theta:.6g}")
            continue
        value = estimate_value(ds, regime, name, basis_spec=est.basis_spec(), conditioning=cfg.condition)
        rows.append((cfg.command, cfg.data, name, "theta", value.theta))
        rows.append((cfg.command, cfg.data, name, "n_uncensored", value.n_uncensored))
        print(f"{name}: theta={value.theta:.6g} n_uncensored={value.n_uncensored}")
        if cfg.json_out:
            with open(cfg.json_out, "a") as fh:
                fh.write(value.to_json() + "\n")
    _write_rows(cfg, rows, cfg.out)
    return 0


def _run_voi_test(cfg):
    from .simulation import bootstrap_voi_test, generate

    ds = _load_data(cfg) if cfg.data else generate(_spec(cfg))
    rows = []
    source = cfg.data or cfg.dgp
    adjusted = any(e.adjust_nde for e in cfg.estimators)
    res = bootstrap_voi_test(ds, adjusted, cfg.B, cfg.alpha, cfg.condition, cfg.seed,
                             cfg.estimators[0].basis_spec())
    label = "SNMM_PROJECTED" if adjusted else "SNMM"
    for stat, v in (("voi", res.estimate), ("reject", res.reject), ("quantile", res.quantile),
                    ("boot_mean", res.boot_mean), ("boot_sd", res.boot_sd), ("redraws", res.redraws)):
        rows.append((cfg.command, source, label, stat, v))
    _write_rows(cfg, rows, cfg.out)
    print(f"{label}: voi={res.estimate:.6g} quantile={res.quantile:.6g} reject={str(res.reject).lower()}")
    return 0


def _run_ratio(cfg):
    from .simulation import dgp3_variance_ratio

    value = dgp3_variance_ratio(cfg.rho, cfg.eps_q, cfg.eps, cfg.eps_prime)
    _write_rows(cfg, [(cfg.command, "DGP3", "NDE_IPW/IPW", "variance_ratio", value)], cfg.out)
    print(f"{value:.6g}")
    return 0


_RUNNERS = {"simulate": _run_simulate, "sweep": _run_sweep, "estimate": _run_estimate,
            "voi-test": _run_voi_test, "ratio": _run_ratio}


def run(cfg):
    """Execute a validated config; returns the process exit code."""
    try:
        return _RUNNERS[cfg.command](cfg)
    except OptRegimeError as exc:
        record = exc.as_record()
        _write_rows(cfg, [(cfg.command, cfg.dgp or cfg.data, "*", "error", json.dumps(record, sort_keys=True))],
                    cfg.out)
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1


def _check_files(cfg):
    for flag, path in (("--data", cfg.data), ("--regime-file", cfg.regime_file)):
        if path and not os.path.isfile(path):
            raise UsageError(flag, f"no such file: {path}")


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
        _check_files(cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    if cfg.threads is None and os.environ.get("OPTREGIME_THREADS"):
        cfg.threads = int(os.environ["OPTREGIME_THREADS"])
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
