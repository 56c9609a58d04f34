"""Command-line front end: configuration, runs, sweeps, validation and export.

Configuration is an INI file with sections ``mode``, ``chain``, ``protocol``,
``noise``, ``limits``, ``sweep`` and ``output``.  Any key can be overridden
on the command line as ``--section.key value``.  The master seed comes from
``--seed`` or the ``POLYFRACTAL_SEED`` environment variable and replaces
``noise.seed``.

Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
3 invariant violation (bounds, unitarity, oracle or table mismatch).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import itertools
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .analysis import (
    FitError,
    collapse_distance,
    collapse_transform,
    crossover_time,
    fit_report,
    log_slope,
    plateau_height,
    ramp_rate,
)
from .drive import NoiseKind, NoiseModel, ProtocolSpec, realize_schedule, waveform
from .evolve import ExperimentConfig, RelaxationCurve, read_curve, run_experiment, write_curve
from .fibrec import compare_with_reference, derive_plan, fibonacci, oracle_unitary, recursive_evolve, seed_unitaries
from .spectra import default_omega_grid, fibonacci_spectrum, spectrum_scan, write_spectrum

__all__ = ["ConfigError", "RunConfig", "load_config", "config_hash", "point_seed", "run", "sweep", "main"]

log = logging.getLogger("polyfractal")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2, 3
SEED_ENV = "POLYFRACTAL_SEED"
MODES = ("relax", "spectrum", "analyze", "validate", "sweep")


class ConfigError(ValueError):
    pass


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v) -> list[float]:
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    return [float(x) for x in str(v).replace(";", ",").split(",") if x.strip()]


def _ints(v) -> list[int]:
    if isinstance(v, (list, tuple)):
        return [int(x) for x in v]
    return [int(x) for x in str(v).replace(";", ",").split(",") if x.strip()]


def _strs(v) -> list[str]:
    if isinstance(v, (list, tuple)):
        return [str(x) for x in v]
    return [x.strip() for x in str(v).split(",") if x.strip()]


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable, Any]]] = {
    "mode": {"name": (str, "relax"), "engine": (str, "auto")},
    "chain": {"L": (int, 8), "V": (float, 1.0), "single_spin": (_bool, False), "parity": (int, 1)},
    "protocol": {"n_s": (int, 1), "n_f": (int, 1), "T0": (float, 0.04), "epsilon_vector": (_ints, [1])},
    "noise": {"kind": (str, "fibonacci"), "epsilon": (float, 0.016), "seed": (int, 0)},
    "limits": {
        "max_depth": (int, 40),
        "max_boundaries": (int, 100_000),
        "points_per_decade": (int, 40),
        "stroboscopic": (_bool, True),
        "observables": (_ints, [1]),
        "duration": (float, 1000.0),
        "omega_min": (float, 1e-3),
        "omega_max": (float, 20.0),
        "omega_points": (int, 40_000),
        "plateau_window": (_floats, [10.0, 100.0]),
        "floor_factor": (float, 2.0),
        "ramp_upper": (float, 0.3),
        "smooth": (int, 3),
        "oracle_depth": (int, 18),
    },
    "sweep": {"epsilon": (_floats, []), "T0": (_floats, []), "L": (_ints, []), "workers": (int, 1), "baseline": (_bool, True)},
    "output": {"dir": (str, "."), "name": (str, "run"), "inputs": (_strs, []), "baseline": (str, ""), "force": (_bool, False)},
}

# keys whose value does not change the numerical result
_HASH_EXCLUDE = {("output", "dir"), ("output", "name"), ("output", "force"), ("sweep", "workers")}


@dataclass
class RunConfig:
    """Resolved configuration; ``values[section][key]`` holds typed values."""

    values: dict[str, dict[str, Any]]

    def __getitem__(self, dotted: str) -> Any:
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    @property
    def mode(self) -> str:
        return self.values["mode"]["name"]

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return json.loads(json.dumps(self.values))

    def with_updates(self, updates: dict[str, Any]) -> "RunConfig":
        vals = self.to_dict()
        for dotted, v in updates.items():
            section, key = dotted.split(".", 1)
            vals[section][key] = v
        cfg = RunConfig(vals)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        v = self.values
        if v["mode"]["name"] not in MODES:
            raise ConfigError(f"mode.name must be one of {MODES}")
        if v["mode"]["engine"] not in ("auto", "fibonacci", "sequential", "floquet"):
            raise ConfigError("mode.engine must be auto, fibonacci, sequential or floquet")
        L = v["chain"]["L"]
        if v["chain"]["single_spin"]:
            v["chain"]["L"] = L = 1
        if not (L == 1 or (2 <= L <= 12 and L % 2 == 0)):
            raise ConfigError("chain.L must be 1 (single spin) or an even number up to 12")
        if not 0 < v["protocol"]["T0"] <= 10:
            raise ConfigError("protocol.T0 must lie in (0, 10]")
        if not 0 <= v["noise"]["epsilon"] < 1:
            raise ConfigError("noise.epsilon must lie in [0, 1)")
        lim = v["limits"]
        if not 2 <= lim["max_depth"] <= 90:
            raise ConfigError("limits.max_depth must lie in 2..90")
        if not 1 <= lim["max_boundaries"] <= 10**7:
            raise ConfigError("limits.max_boundaries must lie in 1..1e7")
        if lim["points_per_decade"] < 1 or lim["omega_points"] < 2:
            raise ConfigError("sampling densities must be positive")
        if not 0 < lim["omega_min"] < lim["omega_max"]:
            raise ConfigError("need 0 < limits.omega_min < limits.omega_max")
        if len(lim["plateau_window"]) != 2 or not 0 <= lim["plateau_window"][0] < lim["plateau_window"][1]:
            raise ConfigError("limits.plateau_window needs two increasing times")
        if lim["duration"] <= 0:
            raise ConfigError("limits.duration must be positive")
        if v["mode"]["name"] == "sweep":
            axes = {k: v["sweep"][k] for k in ("epsilon", "T0", "L")}
            if not any(axes.values()):
                raise ConfigError("sweep mode needs at least one nonempty axis (epsilon, T0, L)")
        if v["sweep"]["workers"] < 1:
            raise ConfigError("sweep.workers must be positive")
        try:
            self.experiment_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def protocol(self) -> ProtocolSpec:
        p = self.values["protocol"]
        return ProtocolSpec(p["n_s"], p["n_f"], p["T0"])

    def noise(self) -> NoiseModel:
        n = self.values["noise"]
        return NoiseModel(n["kind"], n["epsilon"], n["seed"])

    def experiment_config(self) -> ExperimentConfig:
        lim = self.values["limits"]
        return ExperimentConfig(
            L=self.values["chain"]["L"],
            V=self.values["chain"]["V"],
            proto=self.protocol(),
            noise=self.noise(),
            max_depth=lim["max_depth"],
            max_boundaries=lim["max_boundaries"],
            points_per_decade=lim["points_per_decade"],
            stroboscopic=lim["stroboscopic"],
            observables=tuple(lim["observables"]),
            parity=self.values["chain"]["parity"],
        )


def _parse_value(section: str, key: str, raw: Any) -> Any:
    try:
        parser, _ = SCHEMA[section][key]
    except KeyError:
        raise ConfigError(f"unknown configuration key {section}.{key}") from None
    try:
        return parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from None


def load_config(
    path: str | Path | None = None,
    overrides: dict[str, str] | None = None,
    master_seed: int | None = None,
) -> RunConfig:
    """Defaults, then the INI file, then dotted overrides, then the master seed."""
    values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser[section].items():
                values[section][key] = _parse_value(section, key, raw)
    for dotted, raw in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} is not a dotted section.key name")
        section, key = dotted.split(".", 1)
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section {section!r}")
        values[section][key] = _parse_value(section, key, raw)
    if master_seed is not None:
        values["noise"]["seed"] = int(master_seed)
    cfg = RunConfig(values)
    cfg.validate()
    return cfg


def config_hash(cfg: RunConfig) -> str:
    """Short SHA-256 of the result-relevant configuration."""
    d = cfg.to_dict()
    for section, key in _HASH_EXCLUDE:
        d[section].pop(key, None)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def point_seed(master_seed: int, index: int) -> int:
    """Seed of sweep point ``index``; independent of execution order."""
    digest = hashlib.sha256(f"{master_seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _stem(cfg: RunConfig, suffix: str = "") -> Path:
    out = cfg.values["output"]
    return Path(out["dir"]) / (out["name"] + suffix)


def _relax(cfg: RunConfig, stem: Path | None = None) -> tuple[RelaxationCurve, Path]:
    curve = run_experiment(cfg.experiment_config(), engine=cfg.values["mode"]["engine"])
    curve.metadata["config_hash"] = config_hash(cfg)
    curve.metadata["run_config"] = cfg.to_dict()
    curve.metadata["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    stem = stem or _stem(cfg)
    write_curve(curve, stem, comment=f"config_hash={curve.metadata['config_hash']}")
    return curve, stem


def _spectrum(cfg: RunConfig) -> Path:
    proto, noise = cfg.protocol(), cfg.noise()
    lim = cfg.values["limits"]
    ev = cfg.values["protocol"]["epsilon_vector"]
    if len(ev) != proto.n_s:
        raise ConfigError("protocol.epsilon_vector needs one entry per drive")
    if lim["omega_points"] == 40_000 and lim["omega_min"] == 1e-3 and lim["omega_max"] == 20.0:
        grid = default_omega_grid(proto.T0)
    else:
        grid = np.geomspace(lim["omega_min"] / proto.T0, lim["omega_max"] / proto.T0, lim["omega_points"])
    n_target = max(2, int(round(lim["duration"] / proto.T0)))
    if noise.kind is NoiseKind.FIBONACCI:
        depth = min(range(2, 90), key=lambda n: abs(fibonacci(n) - n_target))
        series = fibonacci_spectrum(proto.T0, noise.epsilon, depth, grid, proto.n_s, proto.n_f, ev)
    else:
        wf = waveform(realize_schedule(proto, noise, n_target), ev)
        series = spectrum_scan(wf, grid, {"noise": {"kind": noise.kind.value, "epsilon": noise.epsilon, "seed": noise.seed}})
    meta = dict(series.metadata)
    meta.update(config_hash=config_hash(cfg), run_config=cfg.to_dict(), code_version=__version__)
    series = type(series)(series.omega, series.S, series.duration, meta)
    csv_path, _ = write_spectrum(series, _stem(cfg), comment=f"config_hash={meta['config_hash']}")
    return csv_path


def _fit_curve(curve, plateau_fit, cfg: RunConfig, observable: str | None = None) -> dict[str, Any]:
    lim = cfg.values["limits"]
    kw = dict(floor_factor=lim["floor_factor"], upper=lim["ramp_upper"], smooth=lim["smooth"])
    results: dict[str, Any] = {}
    if plateau_fit is None:
        try:
            plateau_fit = plateau_height(curve, tuple(lim["plateau_window"]), observable)
        except FitError as exc:
            plateau_fit = exc
    results["plateau"] = plateau_fit
    if isinstance(plateau_fit, Exception):
        return {"plateau": plateau_fit, **{k: FitError(f"no plateau: {plateau_fit}") for k in ("gamma", "tau", "log_slope")}}
    p = plateau_fit
    for name, fn in (("gamma", ramp_rate), ("tau", crossover_time), ("log_slope", log_slope)):
        try:
            results[name] = fn(curve, plateau=p, observable=observable, **kw)
        except FitError as exc:
            results[name] = exc
    return results


def _summary_value(res) -> float:
    return float("nan") if isinstance(res, Exception) else float(res.value)


def _curve_protocol(meta: dict) -> tuple:
    c = meta.get("config", {})
    return (c.get("L"), c.get("V"), c.get("proto", {}).get("n_s"), c.get("proto", {}).get("n_f"))


def _analyze(cfg: RunConfig) -> Path:
    inputs = cfg.values["output"]["inputs"]
    if not inputs:
        raise ConfigError("analyze mode needs output.inputs (comma-separated curve files)")
    try:
        curves = [read_curve(p) for p in inputs]
    except OSError as exc:
        raise ConfigError(f"cannot read input curve: {exc}") from None
    baseline = cfg.values["output"]["baseline"]
    plateau = None
    if baseline:
        try:
            base = read_curve(baseline)
        except OSError as exc:
            raise ConfigError(f"cannot read baseline curve: {exc}") from None
        curves_for_check = curves + [base]
        try:
            plateau = plateau_height(base, tuple(cfg["limits.plateau_window"]))
        except FitError as exc:
            plateau = exc
    else:
        curves_for_check = curves
    protocols = {_curve_protocol(c.metadata) for c in curves_for_check}
    if len(protocols) > 1 and not cfg.values["output"]["force"]:
        raise ConfigError(f"input curves come from different chains/protocols {sorted(map(str, protocols))}; set output.force")
    report = {}
    for path, curve in zip(inputs, curves):
        fits = _fit_curve(curve, plateau, cfg)
        report[path] = json.loads(fit_report(fits, config_hash=curve.metadata.get("config_hash")))
    out = _stem(cfg, ".fits.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"config_hash": config_hash(cfg), "curves": report}, indent=2, sort_keys=True))
    return out


def _validate(cfg: RunConfig, stream=None) -> bool:
    """Re-derive plans, compare with the reference tables and check oracle equivalence."""
    stream = stream or sys.stdout
    ok = True
    depth = cfg.values["limits"]["oracle_depth"]
    rng = np.random.default_rng(cfg.values["noise"]["seed"])
    for n_s, n_f in itertools.product((1, 2), repeat=2):
        plan = derive_plan(n_s, n_f)
        print(f"(n_s, n_f) = ({n_s}, {n_f}): K = {plan.K}, ell = {plan.ell}, categories = {','.join(plan.categories)}", file=stream)
        for cmp in compare_with_reference(plan):
            ok &= cmp.matches
            print(f"  table {cmp.key}: {'MATCH' if cmp.matches else 'MISMATCH'}", file=stream)
            for name, expected, derived in cmp.rows:
                if expected != derived:
                    print(f"    {name}: expected {expected}, derived {derived}", file=stream)
            for note in cmp.notes:
                print(f"    note: {note}", file=stream)
        # random 16-dim Hermitian H and random involutions as drives
        dim = 16
        A = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        H = (A + A.conj().T) / 2
        drives = []
        for _ in range(n_s):
            Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
            D = np.diag(rng.choice([-1.0, 1.0], size=dim))
            drives.append(Q @ D @ Q.conj().T)
        proto = ProtocolSpec(n_s, n_f, 0.1)
        noise = NoiseModel("fibonacci", 0.2)
        w, V = np.linalg.eigh(H)
        tp, tm = noise.fibonacci_intervals(proto.T0)
        up = (V * np.exp(-1j * w * tp)) @ V.conj().T
        um = (V * np.exp(-1j * w * tm)) @ V.conj().T
        seeds = seed_unitaries(plan, up, um, drives)
        worst = 0.0
        for n, _, U in recursive_evolve(plan, seeds, depth, record_depths=range(3, depth + 1)):
            orc = oracle_unitary(proto, noise, n, up, um, drives)
            worst = max(worst, float(np.abs(U - orc).max()))
        good = worst < 1e-9
        ok &= good
        print(f"  oracle equivalence depths 3..{depth}: max |U_rec - U_oracle| = {worst:.2e}  {'OK' if good else 'MISMATCH'}", file=stream)
    return ok


def run(cfg: RunConfig, stream=None) -> int:
    """Execute ``cfg.mode``; returns the process exit code."""
    stream = stream or sys.stdout
    mode = cfg.mode
    try:
        if mode == "relax":
            curve, stem = _relax(cfg)
            print(f"wrote {stem}.csv ({len(curve.times)} rows)", file=stream)
        elif mode == "spectrum":
            print(f"wrote {_spectrum(cfg)}", file=stream)
        elif mode == "analyze":
            print(f"wrote {_analyze(cfg)}", file=stream)
        elif mode == "validate":
            if not _validate(cfg, stream):
                print("validation FAILED", file=stream)
                return EXIT_INVARIANT
            print("validation passed", file=stream)
        elif mode == "sweep":
            rows = sweep(cfg)
            bad = sum(1 for r in rows if r["status"] != "ok")
            print(f"wrote {_stem(cfg, '.summary.csv')} ({len(rows)} points, {bad} failed)", file=stream)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _sweep_points(cfg: RunConfig) -> list[dict[str, Any]]:
    s = cfg.values["sweep"]
    axes = [
        ("noise.epsilon", s["epsilon"] or [cfg["noise.epsilon"]]),
        ("protocol.T0", s["T0"] or [cfg["protocol.T0"]]),
        ("chain.L", s["L"] or [cfg["chain.L"]]),
    ]
    names = [a for a, _ in axes]
    return [dict(zip(names, combo)) for combo in itertools.product(*(vals for _, vals in axes))]


def _sweep_point(args) -> dict[str, Any]:
    cfg_dict, index, updates, master = args
    cfg = RunConfig(cfg_dict)
    row: dict[str, Any] = {"index": index, **updates, "seed": point_seed(master, index)}
    try:
        pcfg = cfg.with_updates({**updates, "noise.seed": row["seed"], "mode.name": "relax"})
        stem = _stem(pcfg, f".point{index:03d}")
        curve, _ = _relax(pcfg, stem)
        plateau = None
        if cfg.values["sweep"]["baseline"] and pcfg["noise.epsilon"] > 0:
            base_cfg = pcfg.with_updates({"noise.kind": "ideal", "noise.epsilon": 0.0})
            base = run_experiment(base_cfg.experiment_config(), engine="fibonacci")
            try:
                plateau = plateau_height(base, tuple(pcfg["limits.plateau_window"]))
            except FitError as exc:
                plateau = exc
        fits = _fit_curve(curve, plateau, pcfg)
        row.update({k: _summary_value(v) for k, v in fits.items()})
        row["errors"] = "; ".join(f"{k}: {v}" for k, v in fits.items() if isinstance(v, Exception))
        row["curve"] = str(stem) + ".csv"
        row["config_hash"] = config_hash(pcfg)
        row["status"] = "ok"
        row["_ramp"] = None if isinstance(fits["gamma"], Exception) else list(fits["gamma"].window)
        row["_plateau"] = None if isinstance(fits["plateau"], Exception) else fits["plateau"].value
    except (ValueError, FloatingPointError, ArithmeticError) as exc:
        row["status"] = f"failed: {type(exc).__name__}: {exc}"
    return row


def sweep(cfg: RunConfig) -> list[dict[str, Any]]:
    """Run the Cartesian product of sweep axes and write a summary table.

    Each point gets seed ``point_seed(noise.seed, index)``; results are
    collected in index order whatever the worker count.
    """
    points = _sweep_points(cfg)
    master = cfg["noise.seed"]
    jobs = [(cfg.to_dict(), i, upd, master) for i, upd in enumerate(points)]
    workers = cfg.values["sweep"]["workers"]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    rows.sort(key=lambda r: r["index"])

    # collapse quality over the detected ramp windows (Fibonacci points only)
    collapse = None
    usable = [r for r in rows if r["status"] == "ok" and r.get("_ramp") and r["noise.epsilon"] > 0]
    if len(usable) >= 2:
        curves = [read_curve(r["curve"]) for r in usable]
        params = [(r["noise.epsilon"], r["protocol.T0"]) for r in usable]
        plats = [r["_plateau"] or 0.0 for r in usable]
        col = collapse_transform(curves, "ramp", params=params, plateaus=plats)
        wins = [(r["_ramp"][0] * e * T, r["_ramp"][1] * e * T) for r, (e, T) in zip(usable, params)]
        D = collapse_distance(col, wins)
        collapse = float(np.nanmax(D)) if np.isfinite(D).any() else None

    fields = ["index", "noise.epsilon", "protocol.T0", "chain.L", "seed", "plateau", "gamma", "tau", "log_slope", "status", "errors", "curve", "config_hash"]
    out = _stem(cfg, ".summary.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash(cfg)}\n")
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r.get(k, "") for k in fields})
    meta = {
        "config_hash": config_hash(cfg),
        "run_config": cfg.to_dict(),
        "code_version": __version__,
        "collapse_sup_distance": collapse,
        "n_points": len(rows),
        "n_failed": sum(1 for r in rows if r["status"] != "ok"),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    _stem(cfg, ".summary.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return rows


def _split_overrides(argv: Sequence[str]) -> tuple[list[str], dict[str, str]]:
    """Pull ``--section.key value`` / ``--section.key=value`` out of ``argv``."""
    rest: list[str] = []
    out: dict[str, str] = {}
    it = iter(argv)
    for tok in it:
        name = tok[2:].split("=", 1)[0] if tok.startswith("--") else ""
        if "." not in name:
            rest.append(tok)
            continue
        if "=" in tok:
            val = tok.split("=", 1)[1]
        else:
            try:
                val = next(it)
            except StopIteration:
                raise ConfigError(f"flag --{name} needs a value") from None
        out[name] = val
    return rest, out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="polyfractal",
        description="Polyfractal dynamical decoupling under timing noise: runs, spectra, fits and sweeps.",
        epilog="Any configuration key can be overridden with --section.key VALUE, e.g. --noise.epsilon 0.016.",
    )
    p.add_argument("mode", nargs="?", choices=MODES, help="overrides mode.name from the config file")
    p.add_argument("-c", "--config", help="INI configuration file")
    p.add_argument("--seed", type=int, help=f"master seed (default: ${SEED_ENV} or noise.seed)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rest, overrides = _split_overrides(argv)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    args = build_parser().parse_args(rest)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.mode:
            overrides["mode.name"] = args.mode
        seed = args.seed
        if seed is None and os.environ.get(SEED_ENV):
            try:
                seed = int(os.environ[SEED_ENV])
            except ValueError:
                raise ConfigError(f"${SEED_ENV} must be an integer") from None
        cfg = load_config(args.config, overrides, seed)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(cfg)
    except Exception as exc:  # pragma: no cover - last-resort reporting
        log.exception("run failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
