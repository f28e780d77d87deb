"""Command-line experiment runner.

Every subcommand reads a JSON config and writes deterministic artifacts into
an output directory. Exit status 0 means success, 2 a config/schema problem
and 3 a numerical failure; on failure an ``error.json`` record is written and
echoed to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, experiments
from .closed_loop import ClosedLoopConfig, SimulationDiverged, lyapunov_monitor, noise_study, simulate, step_response_metrics, stepped_sine_frf
from .describing_fn import DfParams, df_table, df_table_csv, harmonic_balance
from .multi_higs import MultiHigs, controller_from_dict
from .ni_analysis import (
    check_stability_conditions,
    make_zoh_ni_fixture,
    ni_frequency_check,
    synthesize_storage_matrix,
    verify_zoh_ni_certificate,
)
from .plant import ContinuousStateSpace, PlantError, load_plant, mems_plant, plant_from_dict, zoh_discretize

OUT_ENV = "NIHIGS_OUT"
DEFAULT_TS = 20e-6

SUBCOMMANDS = {
    "simulate": "step",
    "frf": "frf",
    "ni-check": "ni-check",
    "certify": "certify",
    "df": "df",
    "noise-study": "noise-study",
    "lyapunov": "lyapunov",
    "reproduce-paper": "reproduce-paper",
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_posint = {"type": "integer", "minimum": 1}
_vec = {"type": "array", "items": _num}
_vec_or_num = {"oneOf": [_num, _vec]}
_matrix = {"type": "array", "items": _vec}
_range = {
    "type": "object",
    "required": ["start", "stop"],
    "properties": {"start": _pos, "stop": _pos, "step": _pos, "num": _posint},
    "additionalProperties": False,
}
_fixture = {
    "type": "object",
    "required": ["n", "p", "seed"],
    "properties": {"n": _posint, "p": _posint, "seed": {"type": "integer", "minimum": 0}},
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "experiment": {"enum": sorted(set(SUBCOMMANDS.values()))},
        "plant": {
            "oneOf": [
                {"const": "mems"},
                {"type": "object", "required": ["path"], "properties": {"path": {"type": "string"}}, "additionalProperties": False},
                {"type": "object", "required": ["domain", "A", "B", "C"]},
            ]
        },
        "ts_seconds": _pos,
        "controller": {"type": "object", "required": ["channels"]},
        "flavor": {"enum": ["bimodal", "trimodal"]},
        "params": {"type": "object"},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
    "additionalProperties": False,
}

PARAM_SCHEMAS = {
    "step": {
        "properties": {
            "steps": _posint,
            "disturbance": _vec_or_num,
            "reference": _vec_or_num,
            "noise_std": {"oneOf": [_nonneg, {"type": "array", "items": _nonneg}]},
            "open_loop": {"type": "boolean"},
            "x0": _vec,
        },
    },
    "frf": {
        "properties": {
            "inject": {"enum": ["disturbance", "reference"]},
            "channels": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            "freqs_hz": {"oneOf": [{"type": "array", "items": _pos, "minItems": 1}, _range]},
            "amplitude": _pos,
            "settle_periods": _posint,
            "measure_periods": _posint,
            "open_loop": {"type": "boolean"},
        },
    },
    "ni-check": {
        "properties": {
            "f_start_hz": _pos, "f_stop_hz": _pos, "f_step_hz": _pos, "phase_tol_deg": _nonneg, "refine_hz": _pos,
        },
    },
    "certify": {"properties": {"tol": _pos, "max_iter": _posint, "P": _matrix, "fixture": _fixture}},
    "df": {
        "properties": {
            "k_h": _pos, "omega": _pos,
            "ratios": {"oneOf": [{"type": "array", "items": _pos, "minItems": 1}, _range]},
            "harmonic_balance": {"type": "boolean"},
        },
    },
    "noise-study": {
        "properties": {
            "noise_std": _nonneg, "steps": _posint, "discard_fraction": {"type": "number", "minimum": 0, "maximum": 0.99},
            "seeds": {"oneOf": [_posint, {"type": "array", "items": {"type": "integer", "minimum": 0}}]},
        },
    },
    "lyapunov": {
        "properties": {
            "fixture": _fixture, "steps": _posint, "tol": _pos,
            "kappa_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}, "rate": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        },
    },
    "reproduce-paper": {"properties": {}},
}
for _s in PARAM_SCHEMAS.values():
    _s["type"] = "object"
    _s["additionalProperties"] = False


class ConfigError(Exception):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(message)


class NumericalFailure(Exception):
    def __init__(self, module: str, message: str):
        self.module = module
        super().__init__(message)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()


class Artifacts:
    """Writes JSON and CSV files stamped with the tool version and config hash."""

    def __init__(self, out_dir: Path, cfg_hash: str):
        self.out_dir = out_dir
        self.meta = {"tool": "nihigs", "version": __version__, "config_sha256": cfg_hash}
        self.written: list[str] = []

    def json(self, name: str, payload: dict) -> None:
        doc = {"meta": self.meta, **payload}
        text = json.dumps(doc, sort_keys=True, indent=2, default=_json_default) + "\n"
        self._write(name, text)

    def csv(self, name: str, body: str) -> None:
        head = f"# nihigs {self.meta['version']} config_sha256={self.meta['config_sha256']}\n"
        self._write(name, head + body)

    def _write(self, name: str, text: str) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.out_dir / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.written.append(name)


def _validate(cfg, kind: str) -> None:
    for schema, prefix, doc in ((CONFIG_SCHEMA, "", cfg), (PARAM_SCHEMAS[kind], "params", cfg.get("params", {}) if isinstance(cfg, dict) else {})):
        errors = sorted(jsonschema.Draft7Validator(schema).iter_errors(doc), key=lambda e: list(e.absolute_path))
        if errors:
            err = errors[0]
            parts = [prefix] if prefix else []
            parts += [str(p) for p in err.absolute_path]
            raise ConfigError(".".join(parts) or "<root>", err.message)


def _plant(cfg: dict, base: Path):
    src = cfg.get("plant", "mems")
    if src == "mems":
        return mems_plant()
    try:
        if "path" in src:
            path = Path(src["path"])
            if not path.is_absolute():
                path = base / path
            if not path.exists():
                raise ConfigError("plant.path", f"file not found: {path}")
            return load_plant(path)
        return plant_from_dict(src)
    except PlantError as exc:
        raise ConfigError("plant", str(exc)) from None


def _discrete(cfg: dict, plant):
    if isinstance(plant, ContinuousStateSpace):
        return zoh_discretize(plant, cfg.get("ts_seconds", DEFAULT_TS))
    return plant


def _controller(cfg: dict, p: int) -> MultiHigs:
    if "controller" in cfg:
        try:
            ctrl = controller_from_dict(cfg["controller"])
        except ValueError as exc:
            raise ConfigError("controller", str(exc)) from None
    else:
        ctrl = experiments.reference_controller()
    if "flavor" in cfg:
        ctrl = ctrl.with_flavor(cfg["flavor"])
    if ctrl.p != p:
        raise ConfigError("controller.channels", f"{ctrl.p} channels for a plant with {p} outputs")
    return ctrl


def _grid(spec, default_num: int, log: bool = False) -> np.ndarray:
    if isinstance(spec, list):
        return np.array(spec, dtype=float)
    if "step" in spec:
        return np.arange(spec["start"], spec["stop"] + 0.5 * spec["step"], spec["step"])
    num = spec.get("num", default_num)
    return np.logspace(np.log10(spec["start"]), np.log10(spec["stop"]), num) if log else np.linspace(spec["start"], spec["stop"], num)


# --------------------------------------------------------------------------
# experiment handlers


def run_step(cfg, prm, art: Artifacts, base: Path, workers: int) -> dict:
    ds = _discrete(cfg, _plant(cfg, base))
    p = ds.n_outputs
    ctrl = None if prm.get("open_loop", False) else _controller(cfg, p)
    try:
        lc = ClosedLoopConfig(
            ds, ctrl, prm.get("steps", 50_000), x0=prm.get("x0"), r=prm.get("reference"),
            w=prm.get("disturbance", experiments.STEP_AMPLITUDE), measurement_noise_std=prm.get("noise_std", 0.0),
            seed=cfg.get("seed", 0),
        )
    except ValueError as exc:
        raise ConfigError("params", str(exc)) from None
    trace = simulate(lc)
    art.csv("trace.csv", trace.to_csv())
    metrics = [step_response_metrics(trace, i) for i in range(p)]
    art.json("metrics.json", {"experiment": "step", "channels": metrics, "final_output": trace.y[-1]})
    return {"channels": metrics}


def run_frf(cfg, prm, art: Artifacts, base: Path, workers: int) -> dict:
    ds = _discrete(cfg, _plant(cfg, base))
    p = ds.n_outputs
    ctrl = None if prm.get("open_loop", False) else _controller(cfg, p)
    freqs = _grid(prm.get("freqs_hz", {"start": 100.0, "stop": 3000.0, "step": 10.0}), 100)
    channels = prm.get("channels", list(range(p)))
    for j in channels:
        if j >= p:
            raise ConfigError("params.channels", f"channel {j} out of range for {p} inputs")
    base_cfg = ClosedLoopConfig(ds, ctrl, 1)
    lines = ["freq_hz,input,output,re,im,mag_db,phase_deg,flagged"]
    fmt = "{:.17g}".format
    n_flagged = 0
    try:
        for j in channels:
            samples = stepped_sine_frf(base_cfg, prm.get("inject", "disturbance"), j, freqs, prm.get("amplitude", experiments.STEP_AMPLITUDE),
                                       prm.get("settle_periods", 60), prm.get("measure_periods", 20), workers=workers)
            for s in samples:
                n_flagged += s.flagged
                for i in range(p):
                    g = complex(s.G[i, 0])
                    mag = 20 * math.log10(abs(g)) if abs(g) > 0 else float("-inf")
                    lines.append(",".join([fmt(s.omega / (2 * math.pi)), str(j), str(i), fmt(g.real), fmt(g.imag), fmt(mag),
                                           fmt(math.degrees(math.atan2(g.imag, g.real))), str(int(s.flagged))]))
    except ValueError as exc:
        raise ConfigError("params.freqs_hz", str(exc)) from None
    art.csv("frf.csv", "\n".join(lines) + "\n")
    return {"frequencies": int(freqs.size), "flagged": n_flagged}


def run_ni_check(cfg, prm, art: Artifacts, base: Path, workers: int) -> dict:
    plant = _plant(cfg, base)
    f0, f1, df = prm.get("f_start_hz", 1.0), prm.get("f_stop_hz", 5000.0), prm.get("f_step_hz", 1.0)
    if f1 <= f0:
        raise ConfigError("params.f_stop_hz", "must exceed f_start_hz")
    grid = 2 * math.pi * np.arange(f0, f1 + 0.5 * df, df)
    rep = ni_frequency_check(plant, grid, phase_tol_deg=prm.get("phase_tol_deg", 1.0), refine_hz=prm.get("refine_hz", 0.1))
    art.json("ni_report.json", {"experiment": "ni-check", **rep.to_dict()})
    art.csv("ni_report.csv", rep.to_csv())
    return {"ni_band_edge_hz": rep.band_edge_hz}


def run_certify(cfg, prm, art: Artifacts, base: Path, workers: int) -> dict:
    tol = prm.get("tol", 1e-9)
    if "fixture" in prm:
        fx = prm["fixture"]
        if fx["p"] > fx["n"]:
            raise ConfigError("params.fixture.p", "must not exceed n")
        ds, _ = make_zoh_ni_fixture(fx["n"], fx["p"], fx["seed"])
    else:
        ds = _discrete(cfg, _plant(cfg, base))
    try:
        if "P" in prm:
            rep = verify_zoh_ni_certificate(ds, prm["P"], tol)
            payload = {"mode": "verify", "certificate": rep.to_dict()}
            result = {"passed": rep.passed}
        else:
            syn = synthesize_storage_matrix(ds, tol, prm.get("max_iter", 10_000))
            payload = {"mode": "synthesize", **syn.to_dict()}
            result = {"found": syn.found}
    except ValueError as exc:
        raise ConfigError("params.P", str(exc)) from None
    art.json("certificate.json", {"experiment": "certify", **payload})
    return result


def run_df(cfg, prm, art: Artifacts, base: Path, workers: int) -> dict:
    ratios = _grid(prm.get("ratios", {"start": 1e-2, "stop": 1e2, "num": 20}), 20, log=True)
    k_h, omega = prm.get("k_h", 1.0), prm.get("omega", 1.0)
    table = df_table(ratios, k_h, omega)
    art.csv("frf.csv", df_table_csv(table))
    if prm.get("harmonic_balance", False):
        rows = []
        for r, d in table:
            h = harmonic_balance(omega, DfParams(k_h, k_h * omega / r))
            rows.append({"ratio": r, "df": [d.real, d.imag], "harmonic_balance": [h.real, h.imag]})
        art.json("metrics.json", {"experiment": "df", "rows": rows})
    return {"rows": len(table)}


def run_noise(cfg, prm, art: Artifacts, base: Path, workers: int) -> dict:
    ds = _discrete(cfg, _plant(cfg, base))
    ctrl = _controller(cfg, ds.n_outputs)
    seeds = prm.get("seeds", [cfg.get("seed", 0)])
    if isinstance(seeds, int):
        seeds = list(range(seeds))
    rows = []
    for seed in seeds:
        lc = ClosedLoopConfig(ds, ctrl, prm.get("steps", 10_000), measurement_noise_std=prm.get("noise_std", 1e-3), seed=seed)
        res = noise_study(lc, prm.get("discard_fraction", 0.1))
        rows.append({"seed": seed, **res})
    ordered = all(bool(np.all(r["sigma_u_trimodal"] <= r["sigma_u_bimodal"])) for r in rows)
    art.json("metrics.json", {"experiment": "noise-study", "runs": rows, "trimodal_le_bimodal": ordered})
    return {"trimodal_le_bimodal": ordered}


def run_lyapunov(cfg, prm, art: Artifacts, base: Path, workers: int) -> dict:
    fx = prm.get("fixture", {"n": 4, "p": 2, "seed": cfg.get("seed", 0)})
    if fx["p"] > fx["n"]:
        raise ConfigError("params.fixture.p", "must not exceed n")
    ds, _ = make_zoh_ni_fixture(fx["n"], fx["p"], fx["seed"])
    syn = synthesize_storage_matrix(ds, prm.get("tol", 1e-9))
    if not syn.found:
        raise NumericalFailure("ni_analysis", syn.reason)
    kappa, omega = experiments.admissible_gains(ds, prm.get("kappa_fraction", 0.8), prm.get("rate", 0.5))
    stab = check_stability_conditions(ds, np.diag(kappa), np.diag(omega))
    rng = np.random.default_rng(cfg.get("seed", 0))
    ctrl = MultiHigs.homogeneous(kappa, omega, cfg.get("flavor", "bimodal"), state=rng.standard_normal(fx["p"]))
    trace = simulate(ClosedLoopConfig(ds, ctrl, prm.get("steps", 10_000), x0=rng.standard_normal(fx["n"])))
    W, max_inc = lyapunov_monitor(trace, syn.P, ds.C, kappa)
    art.csv("trace.csv", trace.to_csv())
    art.json("certificate.json", {"experiment": "lyapunov", **syn.to_dict()})
    art.json("metrics.json", {
        "experiment": "lyapunov", "max_increase": max_inc, "max_abs_W": float(np.max(np.abs(W))),
        "stability": stab.to_dict(),
    })
    return {"max_increase": max_inc}


def run_reproduce(cfg, prm, art: Artifacts, base: Path, workers: int) -> dict:
    summary = experiments.reproduce_paper(workers=workers)
    summary.pop("seconds", None)
    for res in summary["results"].values():
        if isinstance(res, dict):
            _strip_timings(res)
    art.json("summary.json", {"experiment": "reproduce-paper", **summary})
    return {"checks": summary["checks"]}


def _strip_timings(d: dict) -> None:
    d.pop("seconds", None)
    for v in d.values():
        if isinstance(v, dict):
            _strip_timings(v)


HANDLERS = {
    "step": run_step,
    "frf": run_frf,
    "ni-check": run_ni_check,
    "certify": run_certify,
    "df": run_df,
    "noise-study": run_noise,
    "lyapunov": run_lyapunov,
    "reproduce-paper": run_reproduce,
}


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nihigs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"nihigs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ["run", *SUBCOMMANDS]:
        sp = sub.add_parser(name, help="run the experiment named in the config" if name == "run" else f"{name} experiment")
        sp.add_argument("--config", type=Path, required=(name not in ("reproduce-paper",)), help="JSON config path")
        sp.add_argument("--out", type=Path, help=f"output directory (default: config output_dir, ${OUT_ENV}, or ./out)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for independent simulations")
    return parser


def _emit_error(out_dir: Path | None, record: dict) -> None:
    text = json.dumps(record, sort_keys=True)
    print(text, file=sys.stderr)
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "error.json").write_text(text + "\n", encoding="utf-8")
        except OSError:
            pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = args.out
    try:
        if args.config is not None:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    cfg = json.load(fh)
            except FileNotFoundError:
                raise ConfigError("--config", f"file not found: {args.config}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError("<root>", f"invalid JSON: {exc}") from None
            base = args.config.resolve().parent
        else:
            cfg, base = {}, Path.cwd()
        if not isinstance(cfg, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        if args.command == "run":
            if "experiment" not in cfg:
                raise ConfigError("experiment", "required for the 'run' command")
            kind = cfg["experiment"]
        else:
            kind = SUBCOMMANDS[args.command]
            if cfg.get("experiment", kind) != kind:
                raise ConfigError("experiment", f"config is for {cfg['experiment']!r}, not {kind!r}")
        _validate(cfg, kind if kind in PARAM_SCHEMAS else "step")
        if kind not in HANDLERS:
            raise ConfigError("experiment", f"unknown experiment {kind!r}")
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed", "must be nonnegative")
            cfg["seed"] = args.seed
        if out_dir is None:
            out_dir = Path(cfg.get("output_dir") or os.environ.get(OUT_ENV) or "out")
            if not out_dir.is_absolute() and cfg.get("output_dir"):
                out_dir = base / out_dir
        art = Artifacts(out_dir, config_hash({k: v for k, v in cfg.items() if k != "output_dir"}))
        try:
            result = HANDLERS[kind](cfg, cfg.get("params", {}), art, base, max(1, args.threads))
        except SimulationDiverged as exc:
            raise NumericalFailure("closed_loop", str(exc)) from None
        except (ArithmeticError, np.linalg.LinAlgError, PlantError) as exc:
            raise NumericalFailure(type(exc).__module__.rsplit(".", 1)[-1], str(exc)) from None
    except ConfigError as exc:
        _emit_error(out_dir, {"error": "schema", "path": exc.path, "message": str(exc)})
        return 2
    except NumericalFailure as exc:
        _emit_error(out_dir, {"error": "numerical", "module": exc.module, "message": str(exc)})
        return 3
    print(json.dumps({"experiment": kind, "out": str(out_dir), "artifacts": art.written, **result},
                     sort_keys=True, default=_json_default))
    return 0
