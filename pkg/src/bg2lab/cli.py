"""Batch experiment runner.

Usage::

    bg2lab bg2 --config exp.ini --out results/ --seed 42 --workers 2
    bg2lab oracle-check --set model=asep --n 8

Each run writes ``<subcommand>.csv`` (a ``#schema=1`` comment line, a header
row, one row per experiment point) and ``<subcommand>.json`` into ``--out``.
Exit codes: 0 success, 1 failed sweep points, 2 invalid configuration,
3 numerical-accuracy failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import itertools
import json
import logging
import math
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import Bg2labError, ConfigError, NumericalAccuracyError
from .estimator import (BGExperiment, default_workers, energy_estimate_experiment,
                        ou_covariance_experiment, run_bg_variance, scaling_fit, trivial_limit_experiment)
from .models import Asep, ExpChain, ModelSpec, SpeedChange, Wasep
from .observables import TestFunction, weights
from .oracle import build_generator, row_sum_residual, stationarity_check
from .seeding import mix64

log = logging.getLogger("bg2lab")

SCHEMA = 1
COLUMNS = [
    "subcommand", "point_id", "model", "b", "gamma", "p", "beta", "lambda", "rho", "a", "n", "L", "t",
    "epsilon", "degree", "H", "replicas", "seed", "mean_square", "std_error", "reference", "bound_value",
    "fitted_exponent", "fitted_constant", "status", "wall_seconds", "build_id",
]
SUBCOMMANDS = ("bg2", "bg3", "trivial-limit", "crossover", "energy", "oracle-check", "sweep")

_MODEL_KEYS = ("model", "b", "gamma", "p", "beta", "lambda", "rho", "a")
_H_KEYS = ("H", "H_center", "H_width", "H_k")
_COMMON = _MODEL_KEYS + ("n", "seed", "workers", "out")
ALLOWED = {
    "bg2": _COMMON + _H_KEYS + ("L", "t", "replicas", "weights", "shifts", "block_mode"),
    "trivial-limit": _COMMON + _H_KEYS + ("t", "replicas", "shift_average"),
    "crossover": _COMMON + _H_KEYS + ("t", "replicas", "shift_average"),
    "energy": _COMMON + _H_KEYS + ("epsilon", "s", "t", "replicas", "shifts", "qv_partitions"),
    "oracle-check": _COMMON,
}
ALLOWED["bg3"] = ALLOWED["bg2"]
ALLOWED["sweep"] = tuple(sorted(set(ALLOWED["bg2"]) | {"target", "resume"}))

DEFAULTS = {
    "bg2": {"model": "wasep", "a": "2", "n": "64", "L": "optimal", "t": "0.25", "replicas": "100",
            "weights": "gradient", "shifts": "1", "block_mode": "cube"},
    "trivial-limit": {"model": "asep", "p": "0.7", "a": "1.25", "rho": "0.5", "n": "128,256,512,1024",
                      "t": "0.5", "replicas": "4000", "shift_average": "true"},
    "crossover": {"model": "wasep", "gamma": "1", "a": "2", "rho": "0.5", "n": "256",
                  "t": "0.01,0.05,0.1", "replicas": "2000", "shift_average": "true"},
    "energy": {"model": "wasep", "gamma": "0.5", "a": "2", "rho": "0.5", "n": "1024",
               "epsilon": "0.4,0.2,0.1,0.05", "s": "0", "t": "0.05", "replicas": "100", "shifts": "1",
               "qv_partitions": "0"},
    "oracle-check": {"model": "asep", "n": "8"},
}
DEFAULTS["bg3"] = dict(DEFAULTS["bg2"])
DEFAULTS["sweep"] = dict(DEFAULTS["bg2"], target="bg2", resume="true")

REQUIRED = {"sweep": ("target",)}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Validated key/value settings of one subcommand."""

    subcommand: str
    values: dict
    source: str = "<flags>"

    def get(self, key, default=None):
        return self.values.get(key, default)

    def has(self, key) -> bool:
        return key in self.values and self.values[key] != ""

    # typed accessors
    def float_(self, key, default=None):
        v = self.get(key)
        if v is None or v == "":
            return default
        try:
            return float(v)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {v!r}") from exc

    def int_(self, key, default=None):
        v = self.get(key)
        if v is None or v == "":
            return default
        try:
            return int(v, 0) if isinstance(v, str) else int(v)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {v!r}") from exc

    def bool_(self, key, default=False):
        v = str(self.get(key, default)).strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {v!r}")

    def list_(self, key, conv=float):
        v = self.get(key)
        if v is None or str(v).strip() == "":
            raise ConfigError(f"missing required key {key!r}")
        try:
            return [conv(x.strip()) for x in str(v).split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"{key}: bad list {v!r}") from exc


def load_config(subcommand: str, path: str | None, overrides: dict) -> ExperimentConfig:
    """Defaults, then the ``[subcommand]`` section of ``path``, then command-line overrides."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    values = dict(DEFAULTS.get(subcommand, {}))
    source = "<flags>"
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str  # keys are case-sensitive (H vs h)
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        for sec in cp.sections():
            if sec not in SUBCOMMANDS:
                raise ConfigError(f"unknown section [{sec}] in {path}")
        if cp.has_section(subcommand):
            values.update(dict(cp.items(subcommand)))
        source = str(path)
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(values) - set(ALLOWED[subcommand]))
    if unknown:
        raise ConfigError(f"unknown key(s) for {subcommand}: {', '.join(unknown)}")
    missing = [k for k in REQUIRED.get(subcommand, ()) if not values.get(k)]
    if missing:
        raise ConfigError(f"missing required key(s) for {subcommand}: {', '.join(missing)}")
    return ExperimentConfig(subcommand, values, source)


def build_model(cfg: ExperimentConfig, n: int) -> ModelSpec:
    name = str(cfg.get("model", "")).lower()
    f = cfg.float_
    if name == "wasep":
        var = Wasep(b=f("b", 1.0), gamma=f("gamma", 0.5))
    elif name == "asep":
        var = Asep(p=f("p", 0.7))
    elif name in ("speedchange", "speed-change", "speed"):
        var = SpeedChange(b=f("b", 1.0), gamma=f("gamma", 0.5))
    elif name in ("expchain", "exp-chain"):
        var = ExpChain(gamma_noise=f("gamma", 1.0), beta=f("beta", 1.0), lam=f("lambda", 0.0))
    else:
        raise ConfigError(f"unknown model {name!r}")
    return ModelSpec(var, n, a=f("a", 2.0), rho=f("rho", None))


def build_H(cfg: ExperimentConfig) -> TestFunction:
    name = cfg.get("H", "gaussian") or "gaussian"
    params = {}
    if name in ("gaussian", "hat"):
        if cfg.has("H_center"):
            params["center"] = cfg.float_("H_center")
        if cfg.has("H_width"):
            params["width"] = cfg.float_("H_width")
    elif name in ("sin", "cos") and cfg.has("H_k"):
        params["k"] = cfg.int_("H_k")
    return TestFunction.by_name(name, **params)


def n_grid(cfg: ExperimentConfig) -> list[int]:
    ns = cfg.list_("n", int)
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ConfigError(f"n grid must be strictly increasing, got {ns}")
    return ns


def point_seed(base_seed: int, index: int) -> int:
    """Base seed of experiment point ``index`` (replica streams then derive from it)."""
    return mix64(base_seed, index) >> 1


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


_BUILD_ID = None


def build_id() -> str:
    global _BUILD_ID
    if _BUILD_ID is None:
        desc = ""
        try:
            out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                                 capture_output=True, text=True, timeout=5)
            if out.returncode == 0:
                desc = out.stdout.strip()
        except (OSError, subprocess.SubprocessError):
            pass
        _BUILD_ID = f"{__version__}+{desc}" if desc else __version__
    return _BUILD_ID


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def base_record(sub: str, point_id: str, cfg: ExperimentConfig, model: ModelSpec) -> dict:
    var = model.variant
    rec = dict.fromkeys(COLUMNS, None)
    rec.update(subcommand=sub, point_id=point_id, model=type(var).__name__.lower(), rho=model.rho,
               a=model.a, n=model.n, build_id=build_id())
    for key, attr in (("b", "b"), ("gamma", "gamma"), ("p", "p"), ("beta", "beta"), ("lambda", "lam")):
        if hasattr(var, attr):
            rec[key] = float(getattr(var, attr))
    if isinstance(var, ExpChain):
        rec["gamma"] = float(var.gamma_noise)
    return rec


def write_csv(path: Path, rows: list[dict]):
    buf = io.StringIO()
    buf.write(f"#schema={SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in COLUMNS])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _jsonable(v):
    if isinstance(v, float) and (math.isnan(v) or math.isinf(v)):
        return None
    if isinstance(v, (np.floating,)):
        return _jsonable(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_outputs(out: Path, sub: str, cfg: ExperimentConfig, rows: list[dict], summary: dict):
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"{sub}.csv", rows)
    doc = {"schema": SCHEMA, "subcommand": sub, "config": cfg.values, "source": cfg.source,
           "build_id": build_id(), **summary, "points": rows}
    (out / f"{sub}.json").write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _bg_point(cfg: ExperimentConfig, sub: str, n: int, seed: int, workers: int, pid: str) -> dict:
    model = build_model(cfg, n)
    H = build_H(cfg)
    degree = 3 if sub == "bg3" else 2
    L = cfg.get("L", "optimal")
    L = "optimal" if str(L) == "optimal" else cfg.int_("L")
    exp = BGExperiment(model, L=L, t=cfg.float_("t"), v=weights(cfg.get("weights", "gradient"), n, H),
                       replicas=cfg.int_("replicas"), base_seed=seed, degree=degree,
                       shifts=cfg.int_("shifts", 1), block_mode=cfg.get("block_mode", "cube"))
    t0 = time.perf_counter()
    est = run_bg_variance(exp, workers)
    rec = base_record(sub, pid, cfg, model)
    rec.update(L=est.L, t=exp.t, degree=degree, H=H.name, replicas=exp.replicas, seed=seed,
               mean_square=est.mean_square, std_error=est.std_error, bound_value=est.bound_value,
               status="ok", wall_seconds=round(time.perf_counter() - t0, 3))
    return rec


def cmd_bg(cfg: ExperimentConfig, seed: int, workers: int):
    sub = cfg.subcommand
    rows = [_bg_point(cfg, sub, n, point_seed(seed, i), workers, f"{sub}-{i}")
            for i, n in enumerate(n_grid(cfg))]
    summary = {"status": "ok"}
    if len(rows) >= 2:
        C = (rows[0]["mean_square"] + 1.96 * rows[0]["std_error"]) / rows[0]["bound_value"]
        ok = [r["mean_square"] <= C * r["bound_value"] for r in rows]
        for r in rows:
            r["fitted_constant"] = C
        summary.update(fitted_constant=C, bound_checks=ok, status="pass" if all(ok) else "fail")
    if len(rows) >= 3 and all(r["mean_square"] > 0 for r in rows):
        rep = scaling_fit([(r["n"], r["mean_square"]) for r in rows])
        for r in rows:
            r["fitted_exponent"] = rep.fitted_exponent
        summary.update(fitted_exponent=rep.fitted_exponent, fit_residual=rep.fit_residual)
    return rows, summary


def cmd_trivial(cfg, seed, workers):
    H = build_H(cfg)
    ns = n_grid(cfg)
    model = build_model(cfg, ns[0])
    t = cfg.float_("t")
    t0 = time.perf_counter()
    rep = trivial_limit_experiment(model, H, ns, t, cfg.int_("replicas"), seed, workers,
                                   cfg.bool_("shift_average", True))
    wall = round(time.perf_counter() - t0, 3)
    rows = []
    for i, ((n, est), se) in enumerate(zip(rep.grid, rep.std_errors)):
        rec = base_record("trivial-limit", f"trivial-limit-{i}", cfg, model.with_(n=int(n)))
        rec.update(t=t, H=H.name, replicas=cfg.int_("replicas"), seed=seed + int(n), mean_square=est,
                   std_error=se, fitted_exponent=rep.fitted_exponent, status="ok", wall_seconds=wall)
        rows.append(rec)
    passed = bool(rep.fitted_exponent <= -0.1)
    return rows, {"fitted_exponent": rep.fitted_exponent, "exponent_stderr": rep.exponent_stderr,
                  "status": "pass" if passed else "fail"}


def cmd_crossover(cfg, seed, workers):
    H = build_H(cfg)
    (n,) = n_grid(cfg)[:1]
    model = build_model(cfg, n)
    ts = cfg.list_("t", float)
    t0 = time.perf_counter()
    tab = ou_covariance_experiment(model, H, ts, cfg.int_("replicas"), seed, workers,
                                   cfg.bool_("shift_average", True))
    wall = round(time.perf_counter() - t0, 3)
    rows = []
    for i, (t, e, s, a, z) in enumerate(zip(tab.times, tab.estimates, tab.std_errors, tab.analytic,
                                            tab.z_scores)):
        rec = base_record("crossover", f"crossover-{i}", cfg, model)
        rec.update(t=t, H=H.name, replicas=cfg.int_("replicas"), seed=seed, mean_square=e, std_error=s,
                   reference=a, status="pass" if abs(z) <= 3 else "fail", wall_seconds=wall)
        rows.append(rec)
    return rows, {"z_scores": tab.z_scores,
                  "status": "pass" if all(r["status"] == "pass" for r in rows) else "fail"}


def cmd_energy(cfg, seed, workers):
    H = build_H(cfg)
    (n,) = n_grid(cfg)[:1]
    model = build_model(cfg, n)
    eps = cfg.list_("epsilon", float)
    s, t = cfg.float_("s", 0.0), cfg.float_("t")
    t0 = time.perf_counter()
    rep = energy_estimate_experiment(model, H, eps, s, t, cfg.int_("replicas"), seed, workers,
                                     cfg.int_("shifts", 1), cfg.int_("qv_partitions", 0))
    wall = round(time.perf_counter() - t0, 3)
    rows = []
    for i, ((e, est), se) in enumerate(zip(rep.grid, rep.std_errors)):
        rec = base_record("energy", f"energy-{i}", cfg, model)
        rec.update(t=t - s, epsilon=e, H=H.name, replicas=cfg.int_("replicas"), seed=seed, mean_square=est,
                   std_error=se, fitted_exponent=rep.fitted_exponent, status="ok", wall_seconds=wall)
        rows.append(rec)
    slope = rep.fitted_exponent
    return rows, {"fitted_exponent": slope, "extra": rep.extra,
                  "status": "pass" if slope == slope and slope >= 0.7 else "fail"}


def cmd_oracle(cfg, seed, workers):
    (n,) = n_grid(cfg)[:1]
    model = build_model(cfg, n)
    t0 = time.perf_counter()
    sys_ = build_generator(model)
    res = stationarity_check(sys_)
    rows_res = row_sum_residual(sys_)
    rec = base_record("oracle-check", "oracle-check-0", cfg, model)
    ok = res <= 1e-10 and rows_res <= 1e-14
    rec.update(mean_square=res, reference=rows_res, seed=seed, status="pass" if ok else "fail",
               wall_seconds=round(time.perf_counter() - t0, 3))
    return [rec], {"stationarity_residual": res, "row_sum_residual": rows_res,
                   "status": "pass" if ok else "fail"}


_SWEEP_GRID_KEYS = ("n", "L", "t", "gamma", "b", "p", "rho", "a", "replicas")


def cmd_sweep(cfg: ExperimentConfig, seed: int, workers: int, out: Path):
    """Cartesian grid over comma-separated keys; one row per point, resumable."""
    target = cfg.get("target")
    if target not in ("bg2", "bg3"):
        raise ConfigError(f"sweep target must be bg2 or bg3, got {target!r}")
    axes = {}
    for key in _SWEEP_GRID_KEYS:
        if cfg.has(key):
            axes[key] = [x.strip() for x in str(cfg.get(key)).split(",") if x.strip()]
    keys = list(axes)
    points = [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]
    done_dir = out / "sweep_points"
    done_dir.mkdir(parents=True, exist_ok=True)
    resume = cfg.bool_("resume", True)
    rows, failed = [], 0
    for i, pt in enumerate(points):
        pid = f"sweep-{i}"
        marker = done_dir / f"{pid}.json"
        if resume and marker.exists():
            rec = json.loads(marker.read_text(encoding="utf-8"))
            if rec.get("status") == "ok":
                rows.append(rec)
                continue
        vals = dict(cfg.values)
        vals.update(pt)
        pcfg = ExperimentConfig(target, {k: v for k, v in vals.items() if k in ALLOWED[target]}, cfg.source)
        try:
            rec = _bg_point(pcfg, target, int(pt.get("n", vals["n"].split(",")[0])), point_seed(seed, i),
                            workers, pid)
        except (Bg2labError, ValueError, ArithmeticError, RuntimeError, OSError) as exc:
            log.error("sweep point %s failed: %s", pid, exc)
            model = None
            try:
                model = build_model(pcfg, int(pt.get("n", 8)))
            except Exception:  # noqa: BLE001 - best-effort echo of a broken point
                pass
            rec = base_record("sweep", pid, pcfg, model) if model else dict.fromkeys(COLUMNS)
            rec.update(point_id=pid, status="failed")
            failed += 1
        rec["subcommand"] = "sweep"
        if rec.get("status") == "ok":
            marker.write_text(json.dumps(_jsonable(rec), sort_keys=True), encoding="utf-8")
        rows.append(rec)
    return rows, {"points": len(points), "failed": failed, "status": "fail" if failed else "ok"}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bg2lab", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI file; the section named after the subcommand is used")
        p.add_argument("--seed", type=lambda s: int(s, 0), default=None, help="64-bit base seed")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: $BG2LAB_WORKERS or 1)")
        p.add_argument("--out", default=None, help="output directory (default: .)")
        p.add_argument("--n", default=None, help="site count or comma-separated grid")
        p.add_argument("--L", default=None, help="block length or 'optimal'")
        p.add_argument("--t", default=None, help="macro horizon (crossover: comma-separated grid)")
        p.add_argument("--gamma", default=None)
        p.add_argument("--replicas", default=None)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def run_config(argv=None) -> int:
    """Parse arguments, run one subcommand, write CSV + JSON; returns the exit code."""
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    sub = args.subcommand
    overrides = {"n": args.n, "L": args.L, "t": args.t, "gamma": args.gamma, "replicas": args.replicas}
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    try:
        cfg = load_config(sub, args.config, overrides)
        seed = args.seed if args.seed is not None else cfg.int_("seed", 0)
        workers = args.workers if args.workers is not None else cfg.int_("workers", default_workers())
        out = Path(args.out or cfg.get("out") or ".")
        if sub in ("bg2", "bg3"):
            rows, summary = cmd_bg(cfg, seed, workers)
        elif sub == "trivial-limit":
            rows, summary = cmd_trivial(cfg, seed, workers)
        elif sub == "crossover":
            rows, summary = cmd_crossover(cfg, seed, workers)
        elif sub == "energy":
            rows, summary = cmd_energy(cfg, seed, workers)
        elif sub == "oracle-check":
            rows, summary = cmd_oracle(cfg, seed, workers)
        else:
            rows, summary = cmd_sweep(cfg, seed, workers, out)
        summary["seed"] = seed
        write_outputs(out, sub, cfg, rows, summary)
    except NumericalAccuracyError as exc:
        print(f"numerical accuracy error: {exc}", file=sys.stderr)
        return 3
    except (Bg2labError, ValueError, TypeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    if sub == "sweep" and summary.get("failed"):
        return 1
    return 0


def main(argv=None) -> int:
    return run_config(argv)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
