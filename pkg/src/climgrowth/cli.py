"""Command-line entry point: one subcommand per pipeline stage.

Every stage takes a JSON config::

    climgrowth estimate --config estimate.json [--output-dir out/] [--threads N]

with ``inputs`` (name -> path), ``output_dir``, and stage options. Input
paths may be overridden with ``CLIMGROWTH_INPUT_<NAME>`` environment variables
and the output directory with ``CLIMGROWTH_OUTPUT_DIR``. Outputs are computed
in memory and written only once the stage has succeeded, each through a
temporary file and a rename; a ``manifest.json`` records input and output
hashes, the seed, library versions and wall time.

Exit codes: 0 success, 1 runtime failure, 2 invalid config.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import os
import platform
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd
import scipy

from . import __version__
from .diagnostics import harris_tzavalis, lm_serial, rejection_rate
from .estimator import FitResult, RegressionSpec, fit, standard_spec
from .inference import marginal_effect, optimal_level
from .ingest import assign_cells, read_cells, read_regions, region_climate_table
from .panel import bin_indicators, classify_rich_poor, growth_rates, long_difference, period_average, weather_terms
from .project import (
    ClimateScenario,
    DamageFunction,
    baseline_climate,
    interpolate_weights,
    read_scenarios,
    run_projection,
)
from .resample import BootstrapRun, adaptation_ratio, block_bootstrap

logger = logging.getLogger("climgrowth")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

STAGES = ("aggregate", "build-panel", "estimate", "margins", "diagnose", "bootstrap", "adaptation", "project",
          "plot-data")


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------
# schemas

_PATHS = {"type": "object", "additionalProperties": {"type": "string"}}
_GRID = {
    "type": "object",
    "properties": {"start": {"type": "number"}, "stop": {"type": "number"}, "step": {"type": "number", "exclusiveMinimum": 0}},
    "required": ["start", "stop", "step"],
    "additionalProperties": False,
}
_SPEC = {
    "type": "object",
    "properties": {
        "response": {"type": "string"},
        "regressors": {"type": "array", "items": {"type": "string"}},
        "fe": {"type": "array", "items": {"type": ["string", "object"]}},
        "weights": {"type": ["string", "null"]},
        "weight_scheme": {"enum": ["region", "population", None]},
        "vcov": {"type": "object"},
        "entity": {"type": "string"},
        "country": {"type": "string"},
        "time": {"type": "string"},
        "population": {"type": "string"},
        "interaction": {"type": ["string", "null"]},
        "interaction_terms": {"type": "array", "items": {"type": "string"}},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "maxiter": {"type": "integer", "minimum": 1},
    },
    "required": ["response", "regressors"],
    "additionalProperties": False,
}


def _schema(required_inputs, options: dict, required: tuple = (), seed: bool = False) -> dict:
    props = {
        "stage": {"type": "string"},
        "inputs": {**_PATHS, "required": list(required_inputs)},
        "output_dir": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        **options,
    }
    req = ["inputs", "output_dir", *required]
    if seed:
        req.append("seed")
    return {"type": "object", "properties": props, "required": req, "additionalProperties": False}


SCHEMAS = {
    "aggregate": _schema(["temperature", "regions"], {}),
    "build-panel": _schema(["region_year"], {
        "lag_form": {"enum": ["contemporaneous", "lagged", "summed"]},
        "period_years": {"type": "array", "items": {"enum": [5, 10]}},
        "partial_last": {"type": "boolean"},
        "bins": {"type": "boolean"},
        "rich_poor": {"type": "boolean"},
    }),
    "estimate": _schema(["panel"], {"spec": _SPEC, "model": {"enum": ["annual", "long_difference"]}}),
    "margins": _schema(["fit"], {
        "grid": _GRID,
        "kind": {"enum": ["growth", "level"]},
        "variable": {"type": "string"},
        "lag_form": {"enum": ["contemporaneous", "lagged", "summed"]},
        "conf": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    }, required=("grid",)),
    "diagnose": _schema([], {
        "tests": {"type": "array", "items": {"type": "object", "required": ["test"]}},
        "simulate": {"type": "array", "items": {"type": "object", "required": ["test", "dgp"]}},
    }),
    "bootstrap": _schema(["panel"], {
        "spec": _SPEC,
        "B": {"type": "integer", "minimum": 1},
        "levels": {"type": "array", "items": {"type": "number"}},
        "rich_poor": {"type": "boolean"},
    }, required=("spec", "B"), seed=True),
    "adaptation": _schema(["fe_replicates", "ld_replicates"], {
        "grid": _GRID,
        "floor": {"type": "number", "minimum": 0},
        "convention": {"enum": ["magnitude", "signed"]},
        "B": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
    }, required=("grid",)),
    "project": _schema(["replicates", "scenarios", "history", "socioeconomic"], {
        "source": {"enum": ["annual_panel", "long_difference"]},
        "n": {"type": "integer", "minimum": 1},
        "weight": {"enum": ["population", "gdppc"]},
        "start": {"type": "integer"},
        "end": {"type": "integer"},
        "terms": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
    }, seed=True),
    "plot-data": _schema([], {
        "histogram": {"type": "object"},
    }),
}


def load_config(stage: str, path: str | None, output_dir: str | None = None, threads: int | None = None) -> dict:
    """Read, override and validate a stage config; raise ConfigError on any problem."""
    if path is None:
        raise ConfigError("--config is required")
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if cfg.get("stage", stage) != stage:
        raise ConfigError(f"config is for stage {cfg['stage']!r}, not {stage!r}")
    cfg.setdefault("inputs", {})
    for key, value in os.environ.items():
        if key.startswith("CLIMGROWTH_INPUT_"):
            name = key[len("CLIMGROWTH_INPUT_"):].lower()
            if name in cfg["inputs"] or name in SCHEMAS[stage]["properties"]["inputs"].get("required", []):
                cfg["inputs"][name] = value
    if os.environ.get("CLIMGROWTH_OUTPUT_DIR"):
        cfg["output_dir"] = os.environ["CLIMGROWTH_OUTPUT_DIR"]
    if output_dir:
        cfg["output_dir"] = output_dir
    if threads:
        cfg["threads"] = threads
    validator = jsonschema.Draft7Validator(SCHEMAS[stage])
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        lines = [f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))
    base = Path(path).resolve().parent
    for name, p in cfg["inputs"].items():
        full = Path(p) if Path(p).is_absolute() else base / p
        if not full.exists():
            raise ConfigError(f"inputs/{name}: file not found: {p}")
        cfg["inputs"][name] = str(full)
    out = Path(cfg["output_dir"])
    cfg["output_dir"] = str(out if out.is_absolute() else base / out)
    return cfg


# --------------------------------------------------------------------------
# output handling


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _csv_bytes(frame: pd.DataFrame, index: bool = False) -> bytes:
    buf = io.StringIO()
    frame.to_csv(buf, index=index, float_format="%.17g", lineterminator="\n")
    return buf.getvalue().encode()


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n").encode()


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_outputs(out_dir: Path, outputs: dict[str, bytes]) -> dict[str, str]:
    """Write every output atomically; on failure remove those already written."""
    written = []
    try:
        for name, data in outputs.items():
            write_atomic(out_dir / name, data)
            written.append(out_dir / name)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return {name: hashlib.sha256(data).hexdigest() for name, data in outputs.items()}


# --------------------------------------------------------------------------
# stages


def _grid(g: dict) -> np.ndarray:
    grid = np.arange(g["start"], g["stop"] + g["step"] / 2, g["step"])
    if grid.size == 0:
        raise ConfigError("grid: empty evaluation grid")
    return grid


def _spec(cfg: dict, model: str | None = None) -> RegressionSpec:
    if "spec" in cfg:
        return RegressionSpec.from_dict(cfg["spec"])
    return standard_spec(model or cfg.get("model", "annual"))


def stage_aggregate(cfg: dict) -> dict[str, bytes]:
    inp = cfg["inputs"]
    regions = read_regions(inp["regions"])
    temperature = read_cells(inp["temperature"])
    assignment = assign_cells(temperature.drop_duplicates("cell_id"), regions)
    precipitation = read_cells(inp["precipitation"]) if "precipitation" in inp else None
    urban = read_cells(inp["urban"]) if "urban" in inp else None
    rural = read_cells(inp["rural"]) if "rural" in inp else None
    table = region_climate_table(regions, temperature, precipitation, urban, rural)
    return {"region_year.csv": _csv_bytes(table),
            "cell_assignment.csv": _csv_bytes(assignment.rename("region_id").reset_index())}


def stage_build_panel(cfg: dict) -> dict[str, bytes]:
    df = pd.read_csv(cfg["inputs"]["region_year"])
    lag_form = cfg.get("lag_form", "contemporaneous")
    panel = weather_terms(growth_rates(df), lag_form=lag_form)
    if cfg.get("bins", True):
        panel = bin_indicators(panel)
    if cfg.get("rich_poor", False):
        panel = classify_rich_poor(panel)
    out = {"panel_annual.csv": _csv_bytes(panel)}
    meta = {"lag_form": lag_form, "rows": len(panel), "periods": {}}
    for m in cfg.get("period_years", []):
        pp = period_average(df, m=m, partial_last=cfg.get("partial_last", m == 10))
        ld = long_difference(pp, lag_form=lag_form)
        out[f"panel_ld{m}.csv"] = _csv_bytes(ld)
        meta["periods"][str(m)] = {"blocks": pp.attrs["blocks"], "rows": len(ld)}
    out["panel_meta.json"] = _json_bytes(meta)
    return out


def stage_estimate(cfg: dict) -> dict[str, bytes]:
    panel = pd.read_csv(cfg["inputs"]["panel"])
    res = fit(panel, _spec(cfg))
    cov = res.cov.copy()
    cov.index.name = "term"
    return {
        "coefficients.csv": _csv_bytes(res.coef_table(), index=True),
        "vcov.csv": _csv_bytes(cov, index=True),
        "fit.json": _json_bytes(res.to_dict()),
    }


def stage_margins(cfg: dict) -> dict[str, bytes]:
    res = FitResult.from_dict(json.loads(Path(cfg["inputs"]["fit"]).read_text()))
    grid = _grid(cfg["grid"])
    kind = cfg.get("kind", "growth")
    variable = cfg.get("variable", "T")
    curve = marginal_effect(res, kind=kind, at=grid, variable=variable,
                            lag_form=cfg.get("lag_form", "contemporaneous"), conf=cfg.get("conf", 0.90))
    out = {"margins.csv": _csv_bytes(curve.to_frame()), "margins_meta.json": _json_bytes(curve.meta)}
    if kind == "growth":
        try:
            opt = optimal_level(res, variable)
            out["optimum.json"] = _json_bytes({"variable": variable, "value": opt.value, "se": opt.se,
                                               "concave": opt.concave})
        except ValueError as exc:
            out["optimum.json"] = _json_bytes({"variable": variable, "error": str(exc)})
    return out


def _simulate_dgp(dgp: str, N: int, T: int, rho: float):
    def draw(rng):
        e = rng.normal(size=(N, T))
        if dgp == "random_walk":
            return e.cumsum(axis=1)
        if dgp == "iid":
            return e
        if dgp == "ar1":
            for t in range(1, T):
                e[:, t] += rho * e[:, t - 1]
            return e
        raise ConfigError(f"simulate: unknown dgp {dgp!r}")
    return draw


def _residual_frame(E: np.ndarray, degree: int) -> pd.DataFrame:
    N, T = E.shape
    t = np.arange(T, dtype=float)
    B = np.column_stack([t**k for k in range(degree + 1)])
    R = E - (B @ np.linalg.lstsq(B, E.T, rcond=None)[0]).T
    return pd.DataFrame({"region_id": np.repeat(np.arange(N), T), "year": np.tile(np.arange(T), N), "resid": R.ravel()})


def stage_diagnose(cfg: dict) -> dict[str, bytes]:
    results = []
    panel = pd.read_csv(cfg["inputs"]["panel"]) if "panel" in cfg["inputs"] else None
    for t in cfg.get("tests", []):
        opts = {k: v for k, v in t.items() if k != "test"}
        if t["test"] == "harris_tzavalis":
            if panel is None:
                raise ConfigError("tests: harris_tzavalis needs inputs/panel")
            results.append(harris_tzavalis(panel, **opts).to_dict())
        elif t["test"] == "lm_serial":
            if panel is None:
                raise ConfigError("tests: lm_serial needs inputs/panel")
            spec = RegressionSpec.from_dict(opts.pop("spec")) if "spec" in opts else standard_spec()
            results.append(lm_serial(fit(panel, spec, vcov=False), **opts).to_dict())
        else:
            raise ConfigError(f"tests: unknown test {t['test']!r}")
    sims = []
    for s in cfg.get("simulate", []):
        if "seed" not in cfg:
            raise ConfigError("seed is required for simulations")
        N, T, n_sims = int(s.get("N", 1000)), int(s.get("T", 26)), int(s.get("n_sims", 500))
        draw = _simulate_dgp(s["dgp"], N, T, float(s.get("rho", 0.3)))
        if s["test"] == "harris_tzavalis":
            opts = {k: s[k] for k in ("trend", "cross_demean", "demean") if k in s}
            rate = rejection_rate(draw, lambda Y: harris_tzavalis(Y, **opts), n_sims, cfg["seed"])
        elif s["test"] == "lm_serial":
            degree, order = int(s.get("degree", 0)), int(s.get("order", 1))
            rate = rejection_rate(lambda rng: _residual_frame(draw(rng), degree),
                                  lambda f: lm_serial(f, order, degree=degree), n_sims, cfg["seed"])
        else:
            raise ConfigError(f"simulate: unknown test {s['test']!r}")
        sims.append({**s, **rate})
    return {"diagnostics.json": _json_bytes({"tests": results, "simulations": sims})}


def stage_bootstrap(cfg: dict) -> dict[str, bytes]:
    panel = pd.read_csv(cfg["inputs"]["panel"])
    spec = _spec(cfg)
    prepare = classify_rich_poor if cfg.get("rich_poor", False) else None
    run = block_bootstrap(panel, spec, cfg["B"], cfg["seed"], prepare=prepare, n_jobs=cfg.get("threads", 1))
    levels = cfg.get("levels", [0.90])
    return {
        "replicates.csv": _csv_bytes(run.to_frame(), index=True),
        "bootstrap.json": _json_bytes(run.summary(levels)),
    }


def _read_run(path: str, B: int | None, seed: int | None) -> BootstrapRun:
    draws = pd.read_csv(path, index_col="replicate")
    meta_path = Path(path).with_name("bootstrap.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    B = B or meta.get("B") or int(draws.index.max()) + 1
    seed = seed if seed is not None else meta.get("seed", -1)
    failures = tuple(sorted(set(range(B)) - set(draws.index)))
    return BootstrapRun(B=B, seed=seed, point=draws.median(), draws=draws, failures=failures)


def stage_adaptation(cfg: dict) -> dict[str, bytes]:
    fe = _read_run(cfg["inputs"]["fe_replicates"], cfg.get("B"), cfg.get("seed"))
    ld = _read_run(cfg["inputs"]["ld_replicates"], cfg.get("B"), cfg.get("seed"))
    res = adaptation_ratio(fe, ld, _grid(cfg["grid"]), floor=cfg.get("floor", 1e-4),
                           convention=cfg.get("convention", "magnitude"))
    return {
        "adaptation.csv": _csv_bytes(res.summary()),
        "adaptation_replicates.csv": _csv_bytes(res.ratios, index=True),
        "adaptation.json": _json_bytes({"n_invalid": res.n_invalid, "B": fe.B, "seed": fe.seed}),
    }


def stage_project(cfg: dict) -> dict[str, bytes]:
    inp = cfg["inputs"]
    draws = pd.read_csv(inp["replicates"], index_col="replicate")
    terms = tuple(cfg.get("terms", ["T", "d_T2"]))
    damage = DamageFunction.from_draws(draws, terms, source=cfg.get("source", "annual_panel"))
    scenarios: list[ClimateScenario] = read_scenarios(inp["scenarios"])
    baseline = baseline_climate(pd.read_csv(inp["history"]))
    start, end = cfg.get("start", 2020), cfg.get("end", 2100)
    socio = pd.read_csv(inp["socioeconomic"])
    weight_col = {"population": "population", "gdppc": "gdppc"}[cfg.get("weight", "population")]
    weights = interpolate_weights(socio, range(start - 1, end + 1), weight_col)
    groups = None
    if "groups" in inp:
        g = pd.read_csv(inp["groups"])
        groups = g.set_index("region_id")["group"]
    out = run_projection(damage, scenarios, baseline, weights, groups, n=cfg.get("n", 1000), seed=cfg["seed"],
                         start=start, end=end)
    pairs = pd.DataFrame(out.pairs, columns=["b", "c"])
    return {
        "region_end.csv": _csv_bytes(out.region_end),
        "group_paths.csv": _csv_bytes(out.group_paths),
        "pairs.csv": _csv_bytes(pairs),
        "projection.json": _json_bytes(out.summary),
    }


def stage_plot_data(cfg: dict) -> dict[str, bytes]:
    inp = cfg["inputs"]
    if not inp:
        raise ConfigError("inputs: plot-data needs at least one upstream output (margins, group_paths, panel)")
    out = {}
    if "margins" in inp:
        m = pd.read_csv(inp["margins"])
        if m.empty:
            raise ValueError("margins input has an empty grid")
        if np.any(np.diff(m["level"].to_numpy()) <= 0):
            raise ValueError("margins grid is not strictly increasing")
        out["fig_margins.csv"] = _csv_bytes(m[["level", "effect", "lo", "hi"]])
    if "panel" in inp:
        h = cfg.get("histogram", {})
        panel = pd.read_csv(inp["panel"])
        for var in h.get("variables", ["T", "P"]):
            if var not in panel.columns:
                continue
            vals = panel[var].dropna().to_numpy(float)
            counts, edges = np.histogram(vals, bins=int(h.get("bins", 40)))
            out[f"fig_hist_{var}.csv"] = _csv_bytes(pd.DataFrame({"lo": edges[:-1], "hi": edges[1:], "count": counts}))
    if "group_paths" in inp:
        gp = pd.read_csv(inp["group_paths"])
        for name, g in gp.groupby("group", sort=True):
            out[f"fig_path_{name}.csv"] = _csv_bytes(g[["year", "mean", "sd", "p10", "p90"]])
    if "region_end" in inp:
        out["fig_map.csv"] = _csv_bytes(pd.read_csv(inp["region_end"]))
    if not out:
        raise ValueError("no recognised upstream outputs among inputs")
    return out


RUNNERS = {
    "aggregate": stage_aggregate,
    "build-panel": stage_build_panel,
    "estimate": stage_estimate,
    "margins": stage_margins,
    "diagnose": stage_diagnose,
    "bootstrap": stage_bootstrap,
    "adaptation": stage_adaptation,
    "project": stage_project,
    "plot-data": stage_plot_data,
}


def run_stage(stage: str, cfg: dict) -> dict:
    """Run a validated stage, write its outputs and manifest; return the manifest."""
    t0 = time.perf_counter()
    outputs = RUNNERS[stage](cfg)
    wall = time.perf_counter() - t0
    out_dir = Path(cfg["output_dir"])
    hashes = write_outputs(out_dir, outputs)
    manifest = {
        "stage": stage,
        "config": cfg,
        "inputs": {name: {"path": p, "sha256": sha256_file(p)} for name, p in sorted(cfg["inputs"].items())},
        "outputs": {name: {"sha256": h} for name, h in sorted(hashes.items())},
        "seed": cfg.get("seed"),
        "versions": {"climgrowth": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "pandas": pd.__version__},
        "wall_time_s": wall,
        "finished_utc": datetime.now(timezone.utc).isoformat(),
    }
    write_atomic(out_dir / "manifest.json", _json_bytes(manifest))
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="climgrowth", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", "-c", help="JSON config file")
        p.add_argument("--output-dir", "-o", help="override output_dir")
        p.add_argument("--threads", "-j", type=int, help="worker processes for parallel stages")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.stage, args.config, args.output_dir, args.threads)
        run_stage(args.stage, cfg)
    except ConfigError as exc:
        print(f"climgrowth {args.stage}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        logger.debug("stage failed", exc_info=True)
        print(f"climgrowth {args.stage}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
