"""Command-line entry point: reproducible batch runs with CSV/JSON outputs.

Every command resolves its parameters from defaults, an optional flat
``key = value`` config file (section named after the command, e.g.
``[mc run]``) and command-line flags, in that order of precedence.  Outputs
go to ``--out`` (default ``$THIRRING_LAB_OUT`` or ``./out``):

* ``result.json``  summary payload (deterministic)
* ``*.csv``        data payloads (deterministic)
* ``manifest.json`` resolved parameters, version, wall time, timestamp

Exit codes: 0 success, 1 contract violation, 2 numerical failure,
3 failed verification.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ContractViolation, NumericalFailure

OUT_ENV = "THIRRING_LAB_OUT"
EXIT_OK, EXIT_CONTRACT, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3


class VerificationFailed(Exception):
    def __init__(self, payload):
        super().__init__("verification failed")
        self.payload = payload


# -- parameter schemas ------------------------------------------------------------

def _auto_float(s):
    return None if str(s).strip().lower() in ("auto", "none", "") else float(s)


def _int_list(s):
    if isinstance(s, (list, tuple)):
        return [int(v) for v in s]
    return [int(v) for v in str(s).replace(" ", "").split(",") if v]


def _opt_path(s):
    return None if str(s).strip().lower() in ("", "none") else str(s)


_THIRRING = {"lambda": (float, 0.0), "xi": (float, 0.5), "eta_plus": (float, 0.0)}

SCHEMAS = {
    ("thirring", "anomalies"): dict(_THIRRING),
    ("thirring", "eval2"): {**_THIRRING, "x0": (float, 1.0), "x1": (float, 0.0)},
    ("thirring", "evaln"): {**_THIRRING, "n": (int, 3), "configs": (int, 10), "seed": (int, 0),
                            "scale": (float, 3.0)},
    ("verify", "axioms"): {**_THIRRING, "trials": (int, 100), "seed": (int, 0), "n_max": (int, 4),
                           "gram_points": (int, 6)},
    ("verify", "bosonization"): {**_THIRRING, "tol": (float, 1e-3)},
    ("verify", "wti"): {**_THIRRING, "tol": (float, 1e-2), "order": (int, 24),
                        "separation": (float, 2.0)},
    ("ising", "exact"): {"L": (int, 64), "beta": (_auto_float, None), "xmax": (int, 0),
                         "stride": (int, 1)},
    ("mc", "run"): {"variant": (str, "dim"), "L": (int, 32), "J": (float, 1.0), "K": (float, 0.0),
                    "kernel": (str, "onsite"), "rate": (float, 1.0), "amplitude": (float, 1.0),
                    "beta": (_auto_float, None), "sweeps": (int, 20000),
                    "thermalization": (int, 2000), "chains": (int, 4), "seed": (int, 12345),
                    "cluster_every": (int, 1), "xmax": (int, 0)},
    ("mc", "locate-tc"): {"variant": (str, "dim"), "J": (float, 1.0), "K": (float, 0.0),
                          "kernel": (str, "onsite"), "rate": (float, 1.0),
                          "amplitude": (float, 1.0), "sizes": (_int_list, [16, 32, 64]),
                          "beta_lo": (float, 0.38), "beta_hi": (float, 0.50),
                          "n_coarse": (int, 7), "sweeps": (int, 20000),
                          "thermalization": (int, 2000), "chains": (int, 4),
                          "seed": (int, 12345), "n_boot": (int, 100)},
    ("fit", "powerlaw"): {"data": (str, "correlators.csv"), "observable": (_opt_path, None),
                          "reference": (_opt_path, None), "r_min": (_auto_float, None),
                          "r_max": (_auto_float, None), "r_floor": (float, 0.0),
                          "tolerance": (float, 2.0)},
    ("report", "kadanoff"): {"data": (str, "correlators.csv"), "jackknife": (_opt_path, None),
                             "reference": (_opt_path, None), "r_min": (_auto_float, None),
                             "r_max": (_auto_float, None), "r_floor": (float, 4.0),
                             "tolerance": (float, 2.0)},
}


def _flag(key):
    return "--" + key.replace("_", "-")


def load_config(path, section) -> dict:
    """Flat ``key = value`` pairs from ``section`` (or a file without sections)."""
    text = Path(path).read_text(encoding="utf-8")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text if text.lstrip().startswith("[") else f"[{section}]\n" + text)
    except configparser.Error as exc:
        raise ContractViolation(f"cannot parse config {path}: {exc}") from None
    if not cp.has_section(section):
        raise ContractViolation(f"config {path} has no section [{section}]")
    return dict(cp.items(section))


def resolve_params(cmd, config_path, overrides) -> dict:
    schema = SCHEMAS[cmd]
    params = {k: d for k, (_, d) in schema.items()}
    raw = {}
    if config_path:
        raw.update(load_config(config_path, " ".join(cmd)))
    raw.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ContractViolation(f"unknown parameter(s) for {' '.join(cmd)}: {', '.join(unknown)}")
    for k, v in raw.items():
        conv = schema[k][0]
        try:
            params[k] = conv(v)
        except (TypeError, ValueError):
            raise ContractViolation(f"bad value for {k}: {v!r}") from None
    return params


# -- output -----------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.16e" % float(v)
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ContractViolation(f"{path} holds no data rows")
    return rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, allow_nan=True)
        fh.write("\n")


# -- commands ---------------------------------------------------------------------

def _thirring_params(p):
    from .thirring_exact import ThirringParams
    return ThirringParams(lam=p["lambda"], xi=p["xi"], eta_plus=p["eta_plus"])


def cmd_thirring_anomalies(p, out, threads):
    from .thirring_exact import compute_anomalies
    an = compute_anomalies(_thirring_params(p))
    return {"nu": an.nu, "nu_bar": an.nu_bar, "a": an.a, "a_bar": an.a_bar,
            "eta": an.eta, "eta_plus": an.eta_plus}, {}


def cmd_thirring_eval2(p, out, threads):
    from .thirring_exact import two_point
    S = two_point((p["x0"], p["x1"]), _thirring_params(p))
    rows = [(i, j, S[i, j].real, S[i, j].imag) for i in range(2) for j in range(2)]
    write_csv(out / "two_point.csv", ["row", "col", "re", "im"], rows)
    return {"x": [p["x0"], p["x1"]], "S": [[S[i, j] for j in range(2)] for i in range(2)]}, {}


def cmd_thirring_evaln(p, out, threads):
    from .thirring_exact import n_point, wick_determinant
    params = _thirring_params(p)
    n = p["n"]
    if n < 1 or p["configs"] < 1:
        raise ContractViolation("need n >= 1 and configs >= 1")
    rng = np.random.default_rng(p["seed"])
    rows, worst = [], 0.0
    for c in range(p["configs"]):
        pts = rng.uniform(-p["scale"], p["scale"], size=(2 * n, 2))
        om = rng.choice([1, -1], size=n)
        sg = rng.permutation(-om)
        xs = [(tuple(pts[i]), int(om[i])) for i in range(n)]
        ys = [(tuple(pts[n + i]), int(sg[i])) for i in range(n)]
        v = complex(n_point(xs, ys, params))
        row = [c, v.real, v.imag]
        if params.lam == 0:
            w = complex(wick_determinant(xs, ys, params))
            rel = abs(v - w) / max(abs(w), 1e-300)
            worst = max(worst, rel)
            row += [w.real, w.imag, rel]
        rows.append(row)
    header = ["config", "re", "im"] + (["wick_re", "wick_im", "rel_err"] if params.lam == 0 else [])
    write_csv(out / "n_point.csv", header, rows)
    res = {"n": n, "configs": p["configs"]}
    if params.lam == 0:
        res["max_rel_err_vs_wick"] = worst
    return res, {}


def cmd_verify_axioms(p, out, threads):
    from .axioms_check import run_axiom_suite
    rep = run_axiom_suite(_thirring_params(p), trials=p["trials"], seed=p["seed"],
                          n_max=p["n_max"], gram_points=p["gram_points"], workers=threads)
    d = rep.to_dict()
    write_csv(out / "properties.csv", ["property", "worst", "tolerance", "passed"],
              [(q.name, q.worst, q.tolerance, q.passed) for q in rep.properties])
    if not rep.all_passed:
        raise VerificationFailed(d)
    return d, {}


def cmd_verify_bosonization(p, out, threads):
    from .bosonization_check import (bilinear_exponent_prediction, fermion_bilinear_exponent,
                                     match_beta)
    params = _thirring_params(p)
    beta = match_beta(params)
    measured = fermion_bilinear_exponent(params, 1)
    predicted = bilinear_exponent_prediction(params, 1)
    ok = abs(measured - predicted) <= p["tol"]
    if params.lam == 0:
        ok = ok and beta == 4 * math.pi and abs(measured - 2.0) <= p["tol"]
    d = {"beta": beta, "beta_over_4pi": beta / (4 * math.pi), "bilinear_exponent": measured,
         "predicted_exponent": predicted, "tol": p["tol"], "passed": bool(ok)}
    if not ok:
        raise VerificationFailed(d)
    return d, {}


def cmd_verify_wti(p, out, threads):
    from .wti_check import QuadratureSpec, extract_contact_coefficients
    params = _thirring_params(p)
    x, y = np.array([0.5 * p["separation"], 0.0]), np.array([-0.5 * p["separation"], 0.0])
    spec = QuadratureSpec(order=p["order"])
    res, ok = {}, True
    for ch in ("vector", "axial"):
        est = extract_contact_coefficients(x, y, ch, params, spec=spec)
        res[ch] = est.to_dict()
        ok = ok and abs(est.discrepancy) <= p["tol"]
    d = {"channels": res, "tol": p["tol"], "passed": bool(ok)}
    if not ok:
        raise VerificationFailed(d)
    return d, {}


def _fit_payload(fit):
    return fit.to_dict() if fit is not None else None


def cmd_ising_exact(p, out, threads):
    from .analysis import WindowPolicy, power_law_fit
    from .lattice_ising import IsingExactSpec, bulk_energy_correlator, locate_critical_coupling
    beta = p["beta"] if p["beta"] is not None else locate_critical_coupling()
    L = p["L"]
    xs = np.arange(1, (p["xmax"] or L // 4) + 1)
    vals = bulk_energy_correlator(IsingExactSpec(L, beta), xs, p["stride"])
    write_csv(out / "exact.csv", ["x", "value"], zip(xs, vals))
    try:
        fit = power_law_fit(xs, vals, policy=WindowPolicy(r_floor=4))
    except NumericalFailure:
        fit = None
    return {"L": L, "beta": beta, "x": xs, "value": vals, "fit": _fit_payload(fit)}, {}


def _lattice_model(p, L, beta=None):
    from .double_ising_mc import Kernel, LatticeModel, ashkin_teller_self_dual_beta
    from .lattice_ising import BETA_C_SELF_DUAL
    if beta is None:
        beta = (ashkin_teller_self_dual_beta(p["J"], p["K"])
                if p["variant"] == "dim" and p["kernel"] == "onsite" else BETA_C_SELF_DUAL)
    kern = Kernel(p["kernel"], rate=p["rate"], amplitude=p["amplitude"])
    return LatticeModel(p["variant"], L, J=p["J"], K=p["K"], kernel=kern, beta_T=beta)


def cmd_mc_run(p, out, threads):
    from .double_ising_mc import MCRun, measure_correlators
    model = _lattice_model(p, p["L"], p["beta"])
    run = MCRun(sweeps=p["sweeps"], thermalization=p["thermalization"], seed=p["seed"],
                chains=p["chains"], cluster_every=p["cluster_every"])
    xs = np.arange(1, (p["xmax"] or p["L"] // 4) + 1)
    res = measure_correlators(model, run, xs=xs, threads=threads)
    write_csv(out / "correlators.csv", ["observable", "separation", "mean", "jackknife_error", "chain_count"],
              (r for s in res.series.values() for r in s.rows()))
    jk_rows = []
    for name, s in res.series.items():
        for b, row in enumerate(s.jackknife):
            jk_rows.extend((name, b, int(x), v) for x, v in zip(s.separations, row))
    write_csv(out / "jackknife.csv", ["observable", "block", "separation", "value"], jk_rows)
    man = res.manifest()
    summary = {"model": man["model"], "beta_T": model.beta_T,
               "observables": list(res.series), **{k: man[k] for k in man if k != "model"}}
    return summary, {"wall_time_s": res.wall_time}


def cmd_mc_locate_tc(p, out, threads):
    from .double_ising_mc import MCRun, ashkin_teller_self_dual_beta, locate_tc
    sizes = p["sizes"]
    model = _lattice_model(p, min(sizes), beta=0.5 * (p["beta_lo"] + p["beta_hi"]))
    run = MCRun(sweeps=p["sweeps"], thermalization=p["thermalization"], seed=p["seed"],
                chains=p["chains"])
    est = locate_tc(model, run, sizes=sizes, bracket=(p["beta_lo"], p["beta_hi"]),
                    n_coarse=p["n_coarse"], n_boot=p["n_boot"], threads=threads)
    d = est.to_dict()
    if p["variant"] == "dim" and p["kernel"] == "onsite":
        d["self_dual_beta"] = ashkin_teller_self_dual_beta(p["J"], p["K"])
    return d, {}


_ALIASES = {"separation": "x", "mean": "value", "jackknife_error": "stderr"}


def _rows(path):
    return [{_ALIASES.get(k, k): v for k, v in r.items()} for r in read_csv(path)]


def _series_from_csv(path, observable=None):
    rows = _rows(path)
    if "observable" in rows[0]:
        names = sorted({r["observable"] for r in rows})
        if observable is None:
            if len(names) != 1:
                raise ContractViolation(f"{path} holds several observables {names}; choose one")
            observable = names[0]
        rows = [r for r in rows if r["observable"] == observable]
        if not rows:
            raise ContractViolation(f"observable {observable!r} not in {path}")
    x = np.array([float(r["x"]) for r in rows])
    v = np.array([float(r["value"]) for r in rows])
    e = np.array([float(r["stderr"]) for r in rows]) if "stderr" in rows[0] else None
    return observable, x, v, e


def _jackknife_from_csv(path, observable, x):
    rows = [r for r in _rows(path) if r["observable"] == observable]
    nb = 1 + max(int(r["block"]) for r in rows)
    col = {int(v): i for i, v in enumerate(x)}
    S = np.full((nb, len(x)), np.nan)
    for r in rows:
        S[int(r["block"]), col[int(r["x"])]] = float(r["value"])
    if np.isnan(S).any():
        raise ContractViolation(f"incomplete jackknife table in {path}")
    return S


def _reference_on(path, x):
    _, rx, rv, _ = _series_from_csv(path)
    lookup = dict(zip(rx, rv))
    missing = [v for v in x if v not in lookup]
    if missing:
        raise ContractViolation(f"reference {path} lacks separations {missing}")
    return np.array([lookup[v] for v in x])


def _fit(x, v, e, p, samples=None, reference=None):
    from .analysis import WindowPolicy, power_law_fit, ratio_fit
    pol = WindowPolicy(r_min=p["r_min"], r_max=p["r_max"], tolerance=p["tolerance"],
                       r_floor=p["r_floor"])
    if reference is not None:
        return ratio_fit(x, v, reference, e, pol, samples)
    return power_law_fit(x, v, e, pol, samples)


def cmd_fit_powerlaw(p, out, threads):
    obs, x, v, e = _series_from_csv(p["data"], p["observable"])
    ref = _reference_on(p["reference"], x) if p["reference"] else None
    fit = _fit(x, v, e, p, reference=ref)
    return {"observable": obs, "ratio_to_reference": ref is not None, "fit": fit.to_dict()}, {}


def cmd_report_kadanoff(p, out, threads):
    from .analysis import kadanoff_product
    jk = p["jackknife"]
    if jk is None:
        cand = Path(p["data"]).with_name("jackknife.csv")
        jk = str(cand) if cand.exists() else None
    fits, raw = {}, {}
    for obs in ("plus_Oplus", "minus_Ominus"):
        _, x, v, e = _series_from_csv(p["data"], obs)
        S = _jackknife_from_csv(jk, obs, x) if jk else None
        ref = _reference_on(p["reference"], x) if p["reference"] else None
        fits[obs] = _fit(x, v, e, p, S, ref)
        if ref is not None:
            raw[obs] = _fit(x, v, e, p, S).to_dict()
    prod, err = kadanoff_product(fits["plus_Oplus"], fits["minus_Ominus"])
    kp, km = fits["plus_Oplus"].kappa, fits["minus_Ominus"].kappa
    d = {"kappa_plus": kp, "kappa_plus_stderr": fits["plus_Oplus"].kappa_stderr,
         "kappa_minus": km, "kappa_minus_stderr": fits["minus_Ominus"].kappa_stderr,
         "product": prod, "product_stderr": err,
         "deviation_sigma": (prod - 1.0) / err if err > 0 else None,
         "splitting": kp - km, "ratio_to_reference": p["reference"] is not None,
         "fits": {k: f.to_dict() for k, f in fits.items()}}
    if raw:
        d["raw_fits"] = raw
    return d, {}


COMMANDS = {
    ("thirring", "anomalies"): cmd_thirring_anomalies,
    ("thirring", "eval2"): cmd_thirring_eval2,
    ("thirring", "evaln"): cmd_thirring_evaln,
    ("verify", "axioms"): cmd_verify_axioms,
    ("verify", "bosonization"): cmd_verify_bosonization,
    ("verify", "wti"): cmd_verify_wti,
    ("ising", "exact"): cmd_ising_exact,
    ("mc", "run"): cmd_mc_run,
    ("mc", "locate-tc"): cmd_mc_locate_tc,
    ("fit", "powerlaw"): cmd_fit_powerlaw,
    ("report", "kadanoff"): cmd_report_kadanoff,
}


# -- argument parsing ---------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ContractViolation(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="thirring-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    groups = ap.add_subparsers(dest="group", required=True, parser_class=_Parser)
    subs = {}
    for (group, name), schema in SCHEMAS.items():
        if group not in subs:
            subs[group] = groups.add_parser(group).add_subparsers(dest="name", required=True,
                                                                   parser_class=_Parser)
        sp = subs[group].add_parser(name)
        sp.add_argument("--config", help="flat key = value file, section [%s %s]" % (group, name))
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
        sp.add_argument("--threads", type=int, default=None, help="worker pool size")
        for key, (_, default) in schema.items():
            sp.add_argument(_flag(key), dest=key, default=None, metavar=key.upper(),
                            help=f"default: {default}")
    return ap


def main(argv=None) -> int:
    t0 = time.perf_counter()
    try:
        ns = build_parser().parse_args(argv)
        cmd = (ns.group, ns.name)
        schema = SCHEMAS[cmd]
        params = resolve_params(cmd, ns.config, {k: getattr(ns, k) for k in schema})
        threads = ns.threads if ns.threads is not None else (os.cpu_count() or 1)
        if threads < 1:
            raise ContractViolation("--threads must be >= 1")
        out = Path(ns.out or os.environ.get(OUT_ENV, "out"))
        out.mkdir(parents=True, exist_ok=True)
        manifest = {"command": " ".join(cmd), "version": __version__, "params": params,
                    "threads": threads, "argv": list(argv if argv is not None else sys.argv[1:])}
        code = EXIT_OK
        try:
            payload, extra = COMMANDS[cmd](params, out, threads)
        except VerificationFailed as vf:
            payload, extra, code = vf.payload, {}, EXIT_VERIFY
            print(f"error: {' '.join(cmd)}: verification failed", file=sys.stderr)
        write_json(out / "result.json", {"command": " ".join(cmd), "params": params,
                                         "result": payload})
        manifest.update(extra)
        manifest["wall_time_s"] = manifest.get("wall_time_s", time.perf_counter() - t0)
        manifest["timestamp"] = datetime.now(timezone.utc).isoformat()
        write_json(out / "manifest.json", manifest)
        json.dump(_jsonable(payload), sys.stdout, indent=2)
        sys.stdout.write("\n")
        return code
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except NumericalFailure as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
