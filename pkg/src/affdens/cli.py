"""Command-line front end.

Every subcommand reads one model file (TOML, or JSON when the suffix is
``.json``), writes its tables to ``--out`` and drops a ``manifest.json``
next to them. Exit status 2 signals a configuration problem, 3 a failed
regularity gate.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import re
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__, inference, oracle
from .affine import AffineModel, conditional_moments, integrated_model
from .apps import (
    BajdParams,
    CreditPortfolio,
    GateError,
    HestonParams,
    Obligor,
    bajd_expansion,
    heston_expansion,
    heston_marginal_expansion,
    integrated_bajd_expansion,
    portfolio_loss,
    price_call,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_CONFIG = 2
EXIT_GATE = 3

KINDS = ("bajd", "heston", "integrated_bajd", "generic_affine")


class ConfigError(Exception):
    def __init__(self, path, line: int | None, msg: str):
        self.path, self.line, self.msg = str(path), line, msg
        super().__init__(str(self))

    def __str__(self):
        loc = f"{self.path}:{self.line}" if self.line else self.path
        return f"{loc}: {self.msg}"


# field rules: (check, message when it fails); None marks a nested or free-form value
_POS = (lambda v: v > 0, "must be positive")
_NONNEG = (lambda v: v >= 0, "must be nonnegative")
_ANY = (None, "")

PARAM_FIELDS = {
    "bajd": {"kth": _NONNEG, "kappa": _POS, "sigma": _POS, "l": _NONNEG, "nu": _NONNEG},
    "heston": {"kappa_v": _ANY, "kth_v": _NONNEG, "sigma": _POS, "kth_x": _ANY,
               "rho": (lambda v: -1 < v < 1, "must lie in (-1, 1)")},
}
PARAM_FIELDS["integrated_bajd"] = PARAM_FIELDS["bajd"]

STATE_FIELDS = {
    "bajd": {"y0": _NONNEG, "dt": _POS},
    "integrated_bajd": {"y0": _NONNEG, "horizon": _POS},
    "heston": {"x0": _ANY, "v0": _NONNEG, "dt": _POS},
}

OPTIONAL_SECTIONS = {
    "pricing": {"r": _ANY},
    "simulation": {"N": _POS, "substeps": _POS},
    "portfolio": {"t": _NONNEG, "T": _POS, "obligors": None},
    "estimation": {"data": None, "n_iter": _POS, "burn": _NONNEG, "thin": _POS, "start": None},
}
INT_FIELDS = {"N", "substeps", "n_iter", "burn", "thin"}
OBLIGOR_FIELDS = dict(PARAM_FIELDS["bajd"], x0=_NONNEG, loading=_NONNEG)
GENERIC_FIELDS = {"m", "n", "a", "alpha", "b", "beta", "jump_m", "jump_mu"}


@dataclass
class ModelConfig:
    """Validated contents of a model file."""

    kind: str
    params: dict
    state: dict
    sections: dict = field(default_factory=dict)
    path: str = ""
    sha256: str = ""

    def bajd(self) -> BajdParams:
        return BajdParams(**self.params)

    def heston(self) -> HestonParams:
        return HestonParams(**self.params)

    def model(self) -> AffineModel:
        if self.kind in ("bajd", "integrated_bajd"):
            return self.bajd().model()
        if self.kind == "heston":
            return self.heston().model()
        return AffineModel.from_params(self.params)

    def to_dict(self) -> dict:
        d = {"model": {"kind": self.kind}, "params": self.params, "state": self.state}
        d.update(self.sections)
        return d


# parsing ----------------------------------------------------------------------

class _Locator:
    """Maps (section, key) pairs back to line numbers of the source text."""

    def __init__(self, text: str, is_json: bool):
        self.lines = text.splitlines()
        self.is_json = is_json

    def find(self, section: str | None, key: str | None = None, index: int = 0) -> int | None:
        if self.is_json:
            return self._find_json(section, key)
        header = None
        count = -1
        sec_line = None
        for no, raw in enumerate(self.lines, 1):
            line = raw.split("#", 1)[0].strip()
            m = re.match(r"^\[\[?\s*([^\]]+?)\s*\]\]?$", line)
            if m:
                header = m.group(1)
                if header == section:
                    count += 1
                    if count == index:
                        sec_line = no
                continue
            if key is None or header != section or count != index:
                continue
            if re.match(rf"^\"?{re.escape(key)}\"?\s*=", line):
                return no
        return sec_line

    def _find_json(self, section, key):
        start = 0
        if section:
            for part in section.split("."):
                hit = self._scan(part, start)
                if hit is None:
                    return None
                start = hit
        if key is None:
            return start + 1 if section else None
        hit = self._scan(key, start)
        return None if hit is None else hit + 1

    def _scan(self, key, start):
        pat = re.compile(rf"\"{re.escape(key)}\"\s*:")
        for i in range(start, len(self.lines)):
            if pat.search(self.lines[i]):
                return i
        return None


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ValueError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _load(path: Path):
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigError(path, None, f"cannot read config: {e.strerror}") from None
    text = raw.decode("utf-8", errors="replace")
    is_json = path.suffix.lower() == ".json"
    if is_json:
        try:
            data = json.loads(text, object_pairs_hook=_reject_duplicates)
        except json.JSONDecodeError as e:
            raise ConfigError(path, e.lineno, e.msg) from None
        except ValueError as e:
            key = str(e).split("'")[1] if "'" in str(e) else ""
            pat = re.compile(rf"\"{re.escape(key)}\"\s*:")
            hits = [i for i, ln in enumerate(text.splitlines(), 1) for _ in pat.finditer(ln)]
            raise ConfigError(path, hits[1] if len(hits) > 1 else None, str(e)) from None
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            m = re.search(r"line (\d+)", str(e))
            raise ConfigError(path, int(m.group(1)) if m else None, str(e)) from None
    if not isinstance(data, dict):
        raise ConfigError(path, 1, "top level must be a table")
    return data, _Locator(text, is_json), hashlib.sha256(raw).hexdigest()


def _check_fields(path, loc, section, table, spec, required, index=0):
    if not isinstance(table, dict):
        raise ConfigError(path, loc.find(section, None, index), f"[{section}] must be a table")
    for key in table:
        if key not in spec:
            raise ConfigError(path, loc.find(section, key, index),
                              f"unknown key {section}.{key} (expected one of: {', '.join(spec)})")
    out = {}
    for key, rule in spec.items():
        if key not in table:
            if key in required:
                raise ConfigError(path, loc.find(section, None, index), f"missing required field {section}.{key}")
            continue
        val = table[key]
        if rule is None:
            out[key] = val
            continue
        check, desc = rule
        ok_type = isinstance(val, (int, float)) and not isinstance(val, bool)
        if key in INT_FIELDS:
            ok_type = isinstance(val, int) and not isinstance(val, bool)
        if not ok_type:
            what = "an integer" if key in INT_FIELDS else "a number"
            raise ConfigError(path, loc.find(section, key, index), f"{section}.{key} must be {what}, got {val!r}")
        if not math.isfinite(val):
            raise ConfigError(path, loc.find(section, key, index), f"{section}.{key} must be finite")
        if check is not None and not check(val):
            raise ConfigError(path, loc.find(section, key, index), f"{section}.{key} {desc} (got {val!r})")
        out[key] = int(val) if key in INT_FIELDS else float(val)
    return out


def parse_config(path) -> ModelConfig:
    """Strict parse of a model file; raises :class:`ConfigError` with a line number where possible."""
    path = Path(path)
    data, loc, digest = _load(path)
    allowed = {"model", "params", "state", *OPTIONAL_SECTIONS}
    for sec in data:
        if sec not in allowed:
            raise ConfigError(path, loc.find(sec), f"unknown section [{sec}]")
    for sec in ("model", "params", "state"):
        if sec not in data:
            raise ConfigError(path, None, f"missing required section [{sec}]")
    model = data["model"]
    if not isinstance(model, dict):
        raise ConfigError(path, loc.find("model"), "[model] must be a table")
    for key in model:
        if key != "kind":
            raise ConfigError(path, loc.find("model", key), f"unknown key model.{key}")
    kind = model.get("kind")
    if kind not in KINDS:
        raise ConfigError(path, loc.find("model", "kind") if "kind" in model else loc.find("model"),
                          f"model.kind must be one of {', '.join(KINDS)}, got {kind!r}")

    if kind == "generic_affine":
        params = data["params"]
        if not isinstance(params, dict):
            raise ConfigError(path, loc.find("params"), "[params] must be a table")
        for key in params:
            if key not in GENERIC_FIELDS:
                raise ConfigError(path, loc.find("params", key), f"unknown key params.{key}")
        for key in ("m", "n", "alpha", "b", "beta"):
            if key not in params:
                raise ConfigError(path, loc.find("params"), f"missing required field params.{key}")
        try:
            AffineModel.from_params(params)
        except (ValueError, KeyError, TypeError) as e:
            raise ConfigError(path, loc.find("params"), f"params: {e}") from None
        state = data["state"]
        if not isinstance(state, dict) or set(state) - {"x0", "dt"} or not {"x0", "dt"} <= set(state):
            raise ConfigError(path, loc.find("state"), "[state] needs exactly x0 (list) and dt")
        if not (isinstance(state["dt"], (int, float)) and state["dt"] > 0):
            raise ConfigError(path, loc.find("state", "dt"), f"state.dt must be positive (got {state['dt']!r})")
        state = {"x0": [float(v) for v in state["x0"]], "dt": float(state["dt"])}
    else:
        params = _check_fields(path, loc, "params", data["params"], PARAM_FIELDS[kind], set(PARAM_FIELDS[kind]))
        state = _check_fields(path, loc, "state", data["state"], STATE_FIELDS[kind], set(STATE_FIELDS[kind]))

    sections = {}
    for sec, spec in OPTIONAL_SECTIONS.items():
        if sec not in data:
            continue
        req = {"t", "T", "obligors"} if sec == "portfolio" else {"r"} if sec == "pricing" else set()
        sections[sec] = _check_fields(path, loc, sec, data[sec], spec, req)
    if "portfolio" in sections:
        sections["portfolio"] = _parse_portfolio(path, loc, sections["portfolio"], kind)
    if "estimation" in sections:
        sections["estimation"] = _parse_estimation(path, loc, sections["estimation"], kind)
    cfg = ModelConfig(kind, params, state, sections, str(path), digest)
    if kind != "generic_affine":
        try:
            cfg.bajd() if kind != "heston" else cfg.heston()
        except ValueError as e:
            raise ConfigError(path, loc.find("params"), f"params: {e}") from None
    return cfg


def _parse_portfolio(path, loc, port, kind):
    if kind != "integrated_bajd":
        raise ConfigError(path, loc.find("portfolio"), "[portfolio] requires model.kind = integrated_bajd")
    if port["T"] <= port["t"]:
        raise ConfigError(path, loc.find("portfolio", "T"), "portfolio.T must exceed portfolio.t")
    obl = port["obligors"]
    if not isinstance(obl, list) or not obl:
        raise ConfigError(path, loc.find("portfolio", "obligors"), "portfolio.obligors must be a nonempty list of tables")
    out = []
    for i, o in enumerate(obl):
        out.append(_check_fields(path, loc, "portfolio.obligors", o, OBLIGOR_FIELDS, set(OBLIGOR_FIELDS), i))
    total = sum(o["loading"] for o in out)
    if abs(total - 1.0) > 1e-12:
        raise ConfigError(path, loc.find("portfolio", "obligors"), f"obligor loadings must sum to 1, got {total!r}")
    return dict(port, obligors=out)


def _parse_estimation(path, loc, est, kind):
    if kind not in ("bajd", "heston"):
        raise ConfigError(path, loc.find("estimation"), "[estimation] requires model.kind = bajd or heston")
    if "data" in est and not isinstance(est["data"], str):
        raise ConfigError(path, loc.find("estimation", "data"), "estimation.data must be a file path")
    if "start" in est:
        est["start"] = _check_fields(path, loc, "estimation.start", est["start"], PARAM_FIELDS[kind],
                                     set(PARAM_FIELDS[kind]))
    return est


# output helpers ---------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path: Path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _range(spec: str, flag: str):
    """``a:b:n`` -> ``numpy.linspace(a, b, n)``."""
    try:
        a, b, n = spec.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{flag} expects start:stop:count, got {spec!r}") from None
    if n < 1 or not (math.isfinite(a) and math.isfinite(b)):
        raise argparse.ArgumentTypeError(f"{flag} expects a finite range and a positive count")
    return np.linspace(a, b, n)


def _log_diff(g, ref):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where((g > 0) & (ref > 0), np.log(np.abs(g)) - np.log(np.abs(ref)), np.nan)


def _require(cfg: ModelConfig, kinds, command):
    if cfg.kind not in kinds:
        raise ConfigError(cfg.path, None, f"`{command}` needs model.kind in {{{', '.join(kinds)}}}, got {cfg.kind}")


def _require_section(cfg, name, command):
    if name not in cfg.sections:
        raise ConfigError(cfg.path, None, f"`{command}` needs a [{name}] section")


# expansions per kind ----------------------------------------------------------

def _fit(cfg: ModelConfig, J: int, strict: bool, marginal: bool = False):
    s = cfg.state
    if cfg.kind == "bajd":
        return bajd_expansion(cfg.bajd(), s["y0"], s["dt"], J, strict=strict)
    if cfg.kind == "integrated_bajd":
        return integrated_bajd_expansion(cfg.bajd(), s["y0"], s["horizon"], J)
    if cfg.kind == "heston":
        if marginal:
            return heston_marginal_expansion(cfg.heston(), s["x0"], s["v0"], s["dt"], J)
        return heston_expansion(cfg.heston(), s["x0"], s["v0"], s["dt"], J)
    raise ConfigError(cfg.path, None, "expansions need model.kind bajd, heston or integrated_bajd")


def _oracle_density(cfg: ModelConfig, y):
    s = cfg.state
    if cfg.kind == "bajd":
        p = cfg.bajd()
        return oracle.bajd_transition_density(y, s["y0"], s["dt"], *p.as_tuple())
    if cfg.kind == "integrated_bajd":
        return oracle.integrated_density(cfg.model(), y, s["horizon"], [s["y0"]])
    p = cfg.heston()
    return oracle.heston_marginal_density(y, s["dt"], *p.as_tuple(), s["v0"], s["x0"])


def _default_grid(exp, n=200):
    """Mean plus or minus four standard deviations of the fitted law."""
    sd = 1.0 / exp.std.A[0, 0]
    if exp.weight.params().get("family") == "gamma":
        mu = exp.std.D + 1.0
        sd_y = math.sqrt(mu) * sd
        lo = max(mu * sd - 4 * sd_y, 1e-3 * sd_y)
        return np.linspace(lo, mu * sd + 4 * sd_y, n)
    mu = -exp.std.shift[0] * sd
    return np.linspace(mu - 4 * sd, mu + 4 * sd, n)


# commands ---------------------------------------------------------------------

def cmd_moments(cfg, args, out):
    s = cfg.state
    if cfg.kind == "integrated_bajd":
        model, x0, t = integrated_model(cfg.model()), [s["y0"], 0.0], s["horizon"]
        names = ["y", "z"]
    else:
        model = cfg.model()
        if cfg.kind == "bajd":
            x0 = [s["y0"]]
        elif cfg.kind == "heston":
            x0 = [s["v0"], s["x0"]]
        else:
            x0 = s["x0"]
        t = s["dt"]
        names = {"bajd": ["y"], "heston": ["v", "x"]}.get(cfg.kind, [f"x{i}" for i in range(model.d)])
    mom = conditional_moments(model, x0, t, args.J)
    rows = [list(a) + [v] for a, v in mom.items()]
    _write_csv(out / "moments.csv", [f"power_{n}" for n in names] + ["moment"], rows)
    return ["moments.csv"], {}


def cmd_expand(cfg, args, out):
    exp = _fit(cfg, args.J, not args.no_strict, args.marginal)
    doc = exp.to_dict()
    if args.emit_coeffs:
        doc["coefficients"] = [{"alpha": list(a), "c": c} for a, c in exp.coeff_map().items()]
    _write_json(out / "expansion.json", doc)
    return ["expansion.json"], {"D": exp.std.D}


def cmd_density(cfg, args, out):
    if cfg.kind == "generic_affine":
        raise ConfigError(cfg.path, None, "`density` needs model.kind bajd, heston or integrated_bajd")
    exp = _fit(cfg, args.J, not args.no_strict, marginal=True)
    y = args.grid if args.grid is not None else _default_grid(exp)
    g = np.asarray(exp.density(y), dtype=float)
    ref = np.asarray(_oracle_density(cfg, y), dtype=float)
    diff = _log_diff(g, ref)
    _write_csv(out / "density.csv", ["xi", f"g_{args.J}", "g_oracle", "log_diff"], zip(y, g, ref, diff))
    fin = diff[np.isfinite(diff)]
    return ["density.csv"], {"sup_abs_log_diff": float(np.max(np.abs(fin))) if fin.size else float("nan")}


def _price_table(cfg, logK, J):
    p = cfg.heston()
    s = cfg.state
    r = cfg.sections.get("pricing", {}).get("r", p.kth_x)
    res = price_call(p, s["x0"], s["v0"], s["dt"], logK, r, J)
    ref = oracle.heston_call(logK, s["dt"], r, *p.as_tuple(), s["v0"], s["x0"])
    S0 = math.exp(s["x0"])
    iv = [oracle.implied_vol(c, S0, math.exp(k), s["dt"], r) for c, k in zip(res.price, logK)]
    iv_ref = [oracle.implied_vol(c, S0, math.exp(k), s["dt"], r) for c, k in zip(ref, logK)]
    return res, ref, np.array(iv), np.array(iv_ref)


def cmd_price(cfg, args, out):
    _require(cfg, ("heston",), "price")
    if args.strikes is None:
        raise ConfigError(cfg.path, None, "`price` needs --strikes start:stop:count (log-strikes)")
    res, ref, iv, iv_ref = _price_table(cfg, args.strikes, args.J)
    _write_csv(out / "price.csv", ["logK", f"C_{args.J}", "C_oracle", f"IV_{args.J}", "IV_oracle"],
               zip(args.strikes, res.price, ref, iv, iv_ref))
    return ["price.csv"], {"max_abs_iv_diff": float(np.nanmax(np.abs(iv - iv_ref))), "diagnostics": res.diagnostics}


def cmd_loss(cfg, args, out):
    _require(cfg, ("integrated_bajd",), "loss")
    _require_section(cfg, "portfolio", "loss")
    port = cfg.sections["portfolio"]
    obl = []
    for o in port["obligors"]:
        q = {k: o[k] for k in PARAM_FIELDS["bajd"]}
        obl.append(Obligor(BajdParams(**q), o["x0"], o["loading"]))
    pf = CreditPortfolio(obl, cfg.bajd(), cfg.state["y0"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = portfolio_loss(pf, port["t"], port["T"], args.J)
    _write_csv(out / "loss.csv", ["defaults", "probability"], enumerate(res.pmf))
    return ["loss.csv"], {"negative_mass": res.negative_mass, "survival": res.survival,
                          "warnings": [str(w.message) for w in caught]}


def _simulate(cfg, n_obs, seed):
    s = cfg.state
    if cfg.kind == "bajd":
        return inference.simulate_bajd_exact(cfg.bajd(), s["y0"], s["dt"], n_obs, seed=seed)
    sub = cfg.sections.get("simulation", {}).get("substeps", 20)
    return inference.simulate_heston(cfg.heston(), s["x0"], s["v0"], s["dt"], n_obs, substeps=sub, seed=seed)


def _seeds(seed, n):
    return [int(x) for x in np.random.SeedSequence(seed).generate_state(n)]


def cmd_simulate(cfg, args, out):
    _require(cfg, ("bajd", "heston"), "simulate")
    n_obs = cfg.sections.get("simulation", {}).get("N", 500)
    files = []
    for i, sd in enumerate(_seeds(args.seed, args.datasets)):
        name = "series.csv" if args.datasets == 1 else f"series_{i:03d}.csv"
        _simulate(cfg, n_obs, sd).to_csv(out / name)
        files.append(name)
    return files, {"N": n_obs}


def _datasets(cfg, args):
    est = cfg.sections.get("estimation", {})
    if "data" in est:
        src = Path(cfg.path).parent / est["data"]
        try:
            return [inference.TimeSeries.from_csv(src, cfg.state["dt"])]
        except (OSError, ValueError, IndexError) as e:
            raise ConfigError(cfg.path, None, f"cannot load estimation.data {str(src)!r}: {e}") from None
    n_obs = cfg.sections.get("simulation", {}).get("N", 500)
    return [_simulate(cfg, n_obs, sd) for sd in _seeds(args.seed, args.datasets)]


def _start(cfg):
    est = cfg.sections.get("estimation", {})
    vals = est.get("start", cfg.params)
    return BajdParams(**vals) if cfg.kind == "bajd" else HestonParams(**vals)


def cmd_fit(cfg, args, out):
    _require(cfg, ("bajd", "heston"), "fit")
    start = _start(cfg)
    names = list(PARAM_FIELDS[cfg.kind])
    rows, docs = [], []
    for i, data in enumerate(_datasets(cfg, args)):
        res = inference.mle_fit(data, start, args.method, args.J, stderr=True)
        docs.append(res.to_dict())
        rows.append([i, *res.params.as_tuple(), res.loglik, int(res.success), res.grad_norm, res.negative_density])
    _write_csv(out / "fit.csv", ["dataset", *names, "loglik", "success", "grad_norm", "negative_density"], rows)
    _write_json(out / "fit.json", {"method": args.method, "J": args.J, "fits": docs})
    return ["fit.csv", "fit.json"], {"successes": sum(d["success"] for d in docs), "datasets": len(docs)}


def cmd_posterior(cfg, args, out):
    _require(cfg, ("bajd", "heston"), "posterior")
    est = cfg.sections.get("estimation", {})
    data = _datasets(cfg, argparse.Namespace(seed=args.seed, datasets=1))[0]
    prior = inference.BAJD_PRIOR if cfg.kind == "bajd" else inference.HESTON_PRIOR
    theta0 = np.array(_start(cfg).as_tuple())
    lp = lambda th: inference.posterior_eval(data, cfg.kind, th, prior, args.method, args.J)
    n_iter, burn, thin = est.get("n_iter", 4000), est.get("burn", 1000), est.get("thin", 1)
    if burn >= n_iter:
        raise ConfigError(cfg.path, None, "estimation.burn must be smaller than estimation.n_iter")
    chain = inference.posterior_sample(lp, theta0, n_iter, burn, thin, seed=args.seed)
    names = list(PARAM_FIELDS[cfg.kind])
    _write_csv(out / "trace.csv", ["draw", *names, "logpost"],
               ([i, *d, l] for i, (d, l) in enumerate(zip(chain.draws, chain.logpost))))
    summary = {"accept_rate": chain.accept_rate, "burn_accept_rate": chain.burn_accept_rate,
               "mean": dict(zip(names, chain.draws.mean(axis=0))), "sd": dict(zip(names, chain.draws.std(axis=0))),
               "diagnostics": chain.diagnostics}
    _write_json(out / "posterior.json", summary)
    return ["trace.csv", "posterior.json"], {"accept_rate": chain.accept_rate}


def cmd_validate(cfg, args, out):
    if cfg.kind == "generic_affine":
        raise ConfigError(cfg.path, None, "`validate` needs model.kind bajd, heston or integrated_bajd")
    orders = args.orders
    summary = {}
    files = []
    if cfg.kind == "heston" and args.strikes is not None:
        cols, header = [args.strikes], ["logK"]
        for J in orders:
            _, _, iv, iv_ref = _price_table(cfg, args.strikes, J)
            cols.append(iv - iv_ref)
            header.append(f"iv_diff_{J}")
            summary[f"price_J{J}"] = float(np.nanmax(np.abs(iv - iv_ref)))
        _write_csv(out / "validate_price.csv", header, zip(*cols))
        files.append("validate_price.csv")
    exps = {J: _fit(cfg, J, not args.no_strict, marginal=True) for J in orders}
    y = args.grid if args.grid is not None else _default_grid(exps[max(orders)])
    ref = np.asarray(_oracle_density(cfg, y), dtype=float)
    cols, header = [y, ref], ["xi", "g_oracle"]
    for J, exp in exps.items():
        d = _log_diff(np.asarray(exp.density(y), dtype=float), ref)
        cols.append(d)
        header.append(f"log_diff_{J}")
        fin = d[np.isfinite(d)]
        summary[f"density_J{J}"] = float(np.max(np.abs(fin))) if fin.size else float("nan")
    _write_csv(out / "validate_density.csv", header, zip(*cols))
    files.append("validate_density.csv")
    if cfg.kind == "integrated_bajd":
        a = np.linspace(-10.0, 10.0, 41)
        s = cfg.state
        true = oracle.integrated_mgf(cfg.model(), a, s["horizon"], [s["y0"]])
        cols, header = [a], ["a"]
        for J, exp in exps.items():
            d = np.array([math.log(exp.exp_integral(float(v))) for v in a]) - np.log(true)
            cols.append(d)
            header.append(f"log_diff_{J}")
            summary[f"mgf_J{J}"] = float(np.max(np.abs(d)))
        _write_csv(out / "validate_mgf.csv", header, zip(*cols))
        files.append("validate_mgf.csv")
    return files, summary


COMMANDS = {
    "moments": cmd_moments,
    "expand": cmd_expand,
    "density": cmd_density,
    "price": cmd_price,
    "loss": cmd_loss,
    "fit": cmd_fit,
    "posterior": cmd_posterior,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def _orders(text):
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--orders expects comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 0:
        raise argparse.ArgumentTypeError("--orders must be nonnegative")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="affdens", description="Polynomial density expansions for affine models.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="model file (TOML, or JSON by suffix)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--J", type=int, default=4, help="expansion order")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--no-strict", action="store_true", help="record, but do not enforce, the L2 condition")
        if name in ("density", "validate"):
            p.add_argument("--grid", type=lambda s: _range(s, "--grid"))
        if name in ("price", "validate"):
            p.add_argument("--strikes", type=lambda s: _range(s, "--strikes"))
        if name == "expand":
            p.add_argument("--emit-coeffs", action="store_true")
            p.add_argument("--marginal", action="store_true", help="log-price marginal for heston")
        if name in ("fit", "posterior"):
            p.add_argument("--method", choices=("oracle", "expansion", "qml"), default="expansion")
        if name in ("fit", "simulate"):
            p.add_argument("--datasets", type=int, default=1)
        if name == "validate":
            p.add_argument("--orders", type=_orders, default=[2, 4, 10])
    return ap


def _manifest(cfg, args, files, summary):
    opts = {k: v for k, v in vars(args).items() if k not in ("config", "out", "command")}
    return {
        "command": args.command,
        "options": opts,
        "config_file": Path(cfg.path).name,
        "config_sha256": cfg.sha256,
        "config": cfg.to_dict(),
        "seed": args.seed,
        "versions": {"affdens": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "outputs": files,
        "summary": summary,
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "datasets", 1) < 1:
        print("error: --datasets must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        files, summary = COMMANDS[args.command](cfg, args, args.out)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except GateError as e:
        print(f"regularity gate failed: {e}", file=sys.stderr)
        return EXIT_GATE
    _write_json(args.out / "manifest.json", _manifest(cfg, args, files, summary))
    for f in files:
        print(args.out / f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
