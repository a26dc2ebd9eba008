"""Command-line interface.

Every command reads flags (optionally merged over a flat JSON ``--config``
file), writes its result to ``--output`` or standard output and returns
0 on success, 2 for configuration errors, 3 for unreadable data and 4 for
numerically degenerate problems. Diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from typing import Any, Sequence

import numpy as np

from . import __version__, harness, sem
from .anchor import AnchorConfig, anchor_fit, anchor_transform, environment_dummies
from .deconfound import CV, lava, spectral_lasso
from .errors import ConfigError, DegenerateProblemError, InvalidInputError, ParseError
from .inference import DdLassoConfig, dd_lasso_many
from .sparse import cv_lasso
from .spectral import Lava, fit_transform, kind_from_name, spectrum_csv

EXIT_OK, EXIT_CONFIG, EXIT_PARSE, EXIT_DEGENERATE = 0, 2, 3, 4

COMMANDS = ("transform", "deconfound", "ddlasso", "anchor", "simulate", "replicate", "coverage", "robustness")

DEFAULTS: dict[str, Any] = {
    "input": None, "response": "y", "anchors": None, "output": None, "seed": 0, "threads": 1,
    "kind": "trim", "tau": "median", "qhat": None, "lambda2": "median", "lambda": None, "gamma": "1",
    "spec": None, "replicates": None, "level": 0.95, "coords": None, "folds": 10, "n": None,
    "strengths": "0,1,4,16", "format": "json",
}
# settings that must not change the output bytes
_NOT_ECHOED = {"output", "threads"}
_DEFAULT_REPLICATES = {"replicate": 20, "coverage": 200, "robustness": 5}


# --------------------------------------------------------------------------
# data input


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def parse_dataset(path: str, response_col: str, anchor_cols: Sequence[str] = ()) -> sem.Dataset:
    """Read a CSV with a header row; lines starting with ``#`` are skipped.

    ``X`` holds the remaining columns in header order. A non-numeric anchor
    column is expanded into one indicator column per level.
    """
    try:
        with open(path, newline="") as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(lines))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if len(set(header)) != len(header):
        raise ParseError(f"{path}: duplicate column names")
    if response_col not in header:
        raise ConfigError(f"response column {response_col!r} not in header")
    for a in anchor_cols:
        if a not in header:
            raise ConfigError(f"anchor column {a!r} not in header")
        if a == response_col:
            raise ConfigError(f"column {a!r} cannot be both response and anchor")
    if len(body) < 2:
        raise ParseError(f"{path}: need at least two data rows, got {len(body)}")
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")

    def numeric(col: int) -> np.ndarray:
        out = np.empty(len(body))
        for i, row in enumerate(body):
            cell = row[col].strip()
            try:
                out[i] = float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {i + 2}, column {header[col]!r}: not a number: {cell!r}") from None
            if not math.isfinite(out[i]):
                raise ParseError(f"{path}: row {i + 2}, column {header[col]!r}: non-finite value")
        return out

    y = numeric(header.index(response_col))
    anchor_blocks, anchor_names = [], []
    for a in anchor_cols:
        col = header.index(a)
        cells = [row[col].strip() for row in body]
        if all(_is_number(c) for c in cells):
            anchor_blocks.append(numeric(col)[:, None])
            anchor_names.append(a)
        else:
            D, levels = environment_dummies(cells)
            anchor_blocks.append(D)
            anchor_names.extend(f"{a}={lv}" for lv in levels)
    x_names = [h for h in header if h != response_col and h not in anchor_cols]
    if not x_names:
        raise ConfigError("no predictor columns left")
    X = np.column_stack([numeric(header.index(h)) for h in x_names])
    A = np.hstack(anchor_blocks) if anchor_blocks else None
    return sem.Dataset(X=X, Y=y, A=A, x_names=x_names, anchor_names=anchor_names or None)


# --------------------------------------------------------------------------
# configuration


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", help="flat JSON file of settings; flags override it")
    g.add_argument("--input")
    g.add_argument("--response")
    g.add_argument("--anchors", help="comma-separated anchor columns")
    g.add_argument("--output", help="output file (default: standard output)")
    g.add_argument("--seed")
    g.add_argument("--threads")
    g.add_argument("--kind", choices=["trim", "pca", "lava", "identity"])
    g.add_argument("--tau")
    g.add_argument("--qhat")
    g.add_argument("--lambda2")
    g.add_argument("--lambda", dest="lambda")
    g.add_argument("--gamma", help="number, inf, or grid:a,b,...")
    g.add_argument("--spec", help="JSON spec file")
    g.add_argument("--replicates")
    g.add_argument("--level")
    g.add_argument("--coords", help="comma-separated 0-based coordinates")
    g.add_argument("--folds")
    g.add_argument("--n")
    g.add_argument("--strengths")
    g.add_argument("--format", choices=["json", "csv"])
    p = argparse.ArgumentParser(prog="deconfound", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for c in COMMANDS:
        sub.add_parser(c, parents=[common])
    return p


def _load_config_file(path: str) -> dict[str, Any]:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    return data


def _int(name: str, v: Any, lo: int = 0, hi: int | None = None) -> int:
    try:
        out = int(str(v))
    except ValueError:
        raise ConfigError(f"--{name} must be an integer, got {v!r}") from None
    if out < lo or (hi is not None and out > hi):
        raise ConfigError(f"--{name} out of range: {out}")
    return out


def _float(name: str, v: Any) -> float:
    try:
        out = float(str(v))
    except ValueError:
        raise ConfigError(f"--{name} must be a number, got {v!r}") from None
    if math.isnan(out):
        raise ConfigError(f"--{name} must not be NaN")
    return out


def _lam(v: Any) -> float | str:
    if str(v).lower() == CV:
        return CV
    out = _float("lambda", v)
    if not (out >= 0 and math.isfinite(out)):
        raise ConfigError("--lambda must be finite and >= 0")
    return out


def parse_gamma(v: Any) -> list[float]:
    """``1``, ``1.0``, ``inf`` or ``grid:a,b,...`` to a list of floats."""
    s = str(v).strip().lower()
    parts = s[5:].split(",") if s.startswith("grid:") else [s]
    out = []
    for part in parts:
        g = math.inf if part.strip() in ("inf", "infinity") else _float("gamma", part)
        if g < 0:
            raise ConfigError("--gamma must be >= 0")
        out.append(g)
    if not out:
        raise ConfigError("empty gamma grid")
    return out


def _shrink_param(name: str, v: Any) -> float | str:
    if str(v).lower() == "median":
        return "median"
    out = _float(name, v)
    if not out > 0:
        raise ConfigError(f"--{name} must be > 0")
    return out


def _normalize(cmd: str, raw: dict[str, Any]) -> dict[str, Any]:
    cfg = dict(raw)
    cfg["seed"] = _int("seed", cfg["seed"], 0, 2**64 - 1)
    cfg["threads"] = _int("threads", cfg["threads"], 1)
    cfg["folds"] = _int("folds", cfg["folds"], 2)
    cfg["level"] = _float("level", cfg["level"])
    if not 0 < cfg["level"] < 1:
        raise ConfigError("--level must lie in (0, 1)")
    # anchor regression is unpenalized unless asked; the Lasso-based commands cross-validate
    cfg["lambda"] = _lam(cfg["lambda"] if cfg["lambda"] is not None else (0.0 if cmd == "anchor" else CV))
    cfg["gamma"] = parse_gamma(cfg["gamma"])
    cfg["tau"] = _shrink_param("tau", cfg["tau"])
    cfg["lambda2"] = _shrink_param("lambda2", cfg["lambda2"])
    if cfg["qhat"] is not None:
        cfg["qhat"] = _int("qhat", cfg["qhat"], 0)
    if cfg["n"] is not None:
        cfg["n"] = _int("n", cfg["n"], 2)
    reps = cfg["replicates"] if cfg["replicates"] is not None else _DEFAULT_REPLICATES.get(cmd)
    cfg["replicates"] = None if reps is None else _int("replicates", reps, 1)
    cfg["coords"] = None if cfg["coords"] is None else [_int("coords", c, 0) for c in str(cfg["coords"]).split(",")]
    cfg["anchors"] = [] if not cfg["anchors"] else [a.strip() for a in str(cfg["anchors"]).split(",")]
    cfg["strengths"] = [_float("strengths", s) for s in str(cfg["strengths"]).split(",")]
    cfg["kind"] = str(cfg["kind"]).lower()
    return cfg


def build_config(argv: Sequence[str]) -> tuple[str, dict[str, Any]]:
    ns = _parser().parse_args(list(argv))
    raw = dict(DEFAULTS)
    if ns.config:
        raw.update(_load_config_file(ns.config))
    for key in DEFAULTS:
        val = getattr(ns, key, None)
        if val is not None:
            raw[key] = val
    return ns.command, _normalize(ns.command, raw)


def _echo(cmd: str, cfg: dict[str, Any]) -> dict[str, Any]:
    out = {k: v for k, v in cfg.items() if k not in _NOT_ECHOED}
    out["gamma"] = [repr(g) for g in cfg["gamma"]]
    out["command"] = cmd
    return out


def _header(cmd: str, cfg: dict[str, Any]) -> str:
    return (f"# deconfounding {__version__}\n"
            f"# config: {json.dumps(_echo(cmd, cfg), sort_keys=True)}\n")


def _need(cfg: dict[str, Any], key: str) -> Any:
    if cfg.get(key) is None:
        raise ConfigError(f"--{key} is required for this command")
    return cfg[key]


def _kind(cfg: dict[str, Any]):
    try:
        return kind_from_name(cfg["kind"], tau=cfg["tau"], qhat=cfg["qhat"], lambda2=cfg["lambda2"])
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc


def _read(cfg: dict[str, Any]) -> sem.Dataset:
    return parse_dataset(_need(cfg, "input"), cfg["response"], cfg["anchors"])


def _load_spec(cfg: dict[str, Any]):
    path = _need(cfg, "spec")
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec {path} is not valid JSON: {exc}") from exc
    try:
        if isinstance(data, list):
            return [sem.spec_from_dict(d) for d in data]
        return sem.spec_from_dict(data)
    except (InvalidInputError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid spec: {exc}") from exc


def _r(v: float) -> str:
    return repr(float(v))


# --------------------------------------------------------------------------
# commands


def cmd_transform(cfg: dict[str, Any]) -> str:
    ds = _read(cfg)
    Xc = ds.X - ds.X.mean(axis=0)
    return spectrum_csv(fit_transform(Xc, _kind(cfg)))


def cmd_deconfound(cfg: dict[str, Any]) -> str:
    ds = _read(cfg)
    kind = _kind(cfg)
    if isinstance(kind, Lava):
        fit = lava(ds.X, ds.Y, cfg["lambda"], kind.lambda2, folds=cfg["folds"], seed=cfg["seed"],
                   threads=cfg["threads"])
    else:
        fit = spectral_lasso(ds.X, ds.Y, kind, cfg["lambda"], folds=cfg["folds"], seed=cfg["seed"],
                             threads=cfg["threads"])
    buf = io.StringIO()
    buf.write(f"# lambda: {_r(fit.lambda_)}\n")
    dense = fit.dense_part is not None
    buf.write("term,beta,dense\n" if dense else "term,beta\n")
    buf.write(f"(intercept),{_r(fit.intercept)}" + (",0.0\n" if dense else "\n"))
    for k, name in enumerate(ds.x_names):
        buf.write(f"{name},{_r(fit.beta[k])}" + (f",{_r(fit.dense_part[k])}\n" if dense else "\n"))
    return buf.getvalue()


def cmd_ddlasso(cfg: dict[str, Any]) -> str:
    ds = _read(cfg)
    kind = _kind(cfg)
    coords = cfg["coords"] if cfg["coords"] is not None else list(range(ds.p))
    if any(j >= ds.p for j in coords):
        raise ConfigError(f"coordinate out of range for p={ds.p}")
    dd = DdLassoConfig(transform_y_reg=kind, transform_nodewise=kind, lambda_y=cfg["lambda"],
                       lambda_nodewise=cfg["lambda"], confidence_level=cfg["level"], folds=cfg["folds"],
                       seed=cfg["seed"])
    res = dd_lasso_many(ds.X, ds.Y, coords, dd, threads=cfg["threads"])
    buf = io.StringIO()
    buf.write("j,name,estimate,se,ci_low,ci_high,p_value\n")
    for r in res:
        buf.write(f"{r.j},{ds.x_names[r.j]},{_r(r.estimate)},{_r(r.se)},{_r(r.ci_low)},{_r(r.ci_high)},"
                  f"{_r(r.p_value)}\n")
    return buf.getvalue()


def cmd_anchor(cfg: dict[str, Any]) -> str:
    ds = _read(cfg)
    if ds.A is None:
        raise ConfigError("--anchors is required for the anchor command")
    buf = io.StringIO()
    buf.write("gamma,objective,rank_deficient,(intercept)," + ",".join(ds.x_names) + "\n")
    for g in cfg["gamma"]:
        lam = cfg["lambda"]
        if lam == CV:
            if math.isinf(g):
                raise ConfigError("--lambda cv needs a finite gamma")
            Xt, yt = anchor_transform(ds.X, ds.Y, ds.A, g)
            lam = cv_lasso(Xt, yt, folds=cfg["folds"], seed=cfg["seed"], threads=cfg["threads"]).lambda_min
        fit = anchor_fit(ds.X, ds.Y, ds.A, AnchorConfig(g, float(lam)))
        buf.write(f"{_r(g)},{_r(fit.anchor_objective)},{int(fit.rank_deficient)},{_r(fit.intercept)},"
                  + ",".join(_r(b) for b in fit.beta) + "\n")
    return buf.getvalue()


def cmd_simulate(cfg: dict[str, Any]) -> str:
    spec = _load_spec(cfg)
    if isinstance(spec, list):
        raise ConfigError("simulate takes a single spec")
    if isinstance(spec, sem.DenseConfoundSpec):
        ds = sem.gen_dense_confounded(spec, seed=cfg["seed"], n=cfg["n"])
    else:
        ds = sem.gen_anchor_sem(spec, _need(cfg, "n"), seed=cfg["seed"])
    cols = [ds.X, ds.Y[:, None]] + ([ds.A] if ds.A is not None else [])
    r = 0 if ds.A is None else ds.A.shape[1]
    names = [f"x{k + 1}" for k in range(ds.p)] + ["y"] + [f"a{k + 1}" for k in range(r)]
    M = np.hstack(cols)
    buf = io.StringIO()
    buf.write(",".join(names) + "\n")
    for row in M:
        buf.write(",".join(_r(v) for v in row) + "\n")
    return buf.getvalue()


def _report(cfg: dict[str, Any], cmd: str, rep: harness.ExperimentReport) -> str:
    if cfg["format"] == "csv":
        parts = []
        for name in rep.tables:
            parts.append(f"# table: {name}\n" + rep.to_csv(name))
        return "".join(parts)
    d = rep.to_dict()
    d["cli"] = _echo(cmd, cfg)
    return json.dumps(d, sort_keys=True, indent=2) + "\n"


def cmd_replicate(cfg: dict[str, Any]) -> str:
    spec = _load_spec(cfg)
    specs = spec if isinstance(spec, list) else [spec, spec]
    if len(specs) != 2 or not all(isinstance(s, sem.DenseConfoundSpec) for s in specs):
        raise ConfigError("replicate needs one dense spec or a list of two")
    try:
        rc = harness.ReplicabilityConfig(specs[0], specs[1], replicates=cfg["replicates"], seed=cfg["seed"],
                                         threads=cfg["threads"])
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc
    return _report(cfg, "replicate", harness.replicability_experiment(rc))


def cmd_coverage(cfg: dict[str, Any]) -> str:
    spec = _load_spec(cfg)
    if not isinstance(spec, sem.DenseConfoundSpec):
        raise ConfigError("coverage needs a dense spec")
    coords = cfg["coords"]
    if coords is None:
        nz = np.flatnonzero(spec.beta0)
        z = np.flatnonzero(spec.beta0 == 0)
        coords = [int(a[0]) for a in (nz, z) if a.size]
    try:
        cc = harness.CoverageConfig(spec, tuple(coords), replicates=cfg["replicates"], seed=cfg["seed"],
                                    level=cfg["level"], folds=cfg["folds"], threads=cfg["threads"])
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc
    return _report(cfg, "coverage", harness.coverage_experiment(cc))


def cmd_robustness(cfg: dict[str, Any]) -> str:
    spec = _load_spec(cfg)
    if not isinstance(spec, sem.AnchorSemSpec):
        raise ConfigError("robustness needs an anchor spec")
    gammas = [g for g in cfg["gamma"] if math.isfinite(g)]
    if not gammas:
        raise ConfigError("robustness needs finite gamma values")
    kwargs = {} if cfg["n"] is None else {"n_train": cfg["n"]}
    try:
        rc = harness.RobustnessConfig(spec, gammas=tuple(gammas), strengths=tuple(cfg["strengths"]),
                                      replicates=cfg["replicates"], seed=cfg["seed"], threads=cfg["threads"],
                                      **kwargs)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc
    return _report(cfg, "robustness", harness.robustness_curve(rc))


HANDLERS = {
    "transform": cmd_transform, "deconfound": cmd_deconfound, "ddlasso": cmd_ddlasso, "anchor": cmd_anchor,
    "simulate": cmd_simulate, "replicate": cmd_replicate, "coverage": cmd_coverage, "robustness": cmd_robustness,
}


def run(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cmd, cfg = build_config(argv)
        body = HANDLERS[cmd](cfg)
        if cmd in ("replicate", "coverage", "robustness") and cfg["format"] == "json":
            text = body
        else:
            text = _header(cmd, cfg) + body
        if cfg["output"]:
            with open(cfg["output"], "w", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except DegenerateProblemError as exc:
        print(f"numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except InvalidInputError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
