"""Propagators, the relaxation observable and the two experiment drivers."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import scipy.linalg as sla

from . import __version__
from .drive import NoiseKind, NoiseModel, ProtocolSpec, boundary_ops_sequence, realize_schedule
from .fibrec import derive_plan, iter_recursive, seed_unitaries
from .spinchain import (
    ChainSpec,
    build_drive_unitaries,
    build_hamiltonian,
    max_abs,
    sector_basis,
    single_spin_hamiltonian,
    SIGMA_X,
)

__all__ = [
    "EigenPropagator",
    "propagator",
    "relaxation_value",
    "unitarity_drift",
    "UnitarityMonitor",
    "maintain_unitarity",
    "ExperimentConfig",
    "RelaxationCurve",
    "build_system",
    "run_fibonacci_experiment",
    "run_random_experiment",
    "run_floquet_experiment",
    "floquet_unitary",
    "run_experiment",
    "write_curve",
    "read_curve",
    "log_checkpoints",
    "DRIFT_THRESHOLD",
]

log = logging.getLogger(__name__)

DRIFT_THRESHOLD = 1e-9
HERMITIAN_ATOL = 1e-10


class EigenPropagator:
    """``exp(-i H T)`` from a single eigendecomposition of ``H``."""

    def __init__(self, H: np.ndarray):
        H = np.asarray(H)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError("H must be a square matrix")
        dev = max_abs(H - H.conj().T)
        if dev > HERMITIAN_ATOL * max(1.0, max_abs(H)):
            raise ValueError(f"H is not Hermitian (max deviation {dev:.3e})")
        self.energies, self.vectors = np.linalg.eigh(H)

    @property
    def dim(self) -> int:
        return len(self.energies)

    def phases(self, T: float) -> np.ndarray:
        return np.exp(-1j * self.energies * T)

    def __call__(self, T: float) -> np.ndarray:
        V = self.vectors
        return (V * self.phases(T)) @ V.conj().T


def propagator(H: np.ndarray, T: float) -> np.ndarray:
    return EigenPropagator(H)(T)


def relaxation_value(U: np.ndarray, X: np.ndarray, dim: int | None = None) -> float:
    """``1 - |Tr(U^dag X U X)| / dim``, clamped to ``[0, 1]``."""
    U = np.asarray(U)
    X = np.asarray(X)
    if U.shape != X.shape:
        raise ValueError(f"dimension mismatch: U {U.shape} vs X {X.shape}")
    dim = U.shape[0] if dim is None else dim
    # Tr(U^dag X U X) = sum_ij conj(U)_ij (X U X)_ij
    overlap = np.vdot(U, X @ U @ X)
    return float(min(1.0, max(0.0, 1.0 - abs(overlap) / dim)))


def unitarity_drift(U: np.ndarray) -> float:
    return max_abs(U.conj().T @ U - np.eye(U.shape[0]))


def polar_unitary(U: np.ndarray) -> np.ndarray:
    """Closest unitary in Frobenius norm (the polar factor)."""
    W, _, Vh = np.linalg.svd(U)
    return W @ Vh


@dataclass
class UnitarityMonitor:
    """Re-unitarizes operators whose drift exceeds ``threshold``.

    ``events`` keeps ``(step, drift_before)`` for every correction, ``checks``
    counts inspections; ``check_every`` thins inspections for big matrices.
    """

    threshold: float = DRIFT_THRESHOLD
    check_every: int = 1
    events: list[tuple[int, float]] = field(default_factory=list)
    checks: int = 0
    max_drift: float = 0.0
    _calls: int = 0

    def __call__(self, U: np.ndarray) -> np.ndarray:
        self._calls += 1
        if self._calls % self.check_every:
            return U
        self.checks += 1
        drift = unitarity_drift(U)
        self.max_drift = max(self.max_drift, drift)
        if drift > self.threshold:
            self.events.append((self._calls, drift))
            log.debug("re-unitarizing at call %d (drift %.3e)", self._calls, drift)
            return polar_unitary(U)
        return U

    def summary(self) -> dict[str, Any]:
        return {
            "threshold": self.threshold,
            "checks": self.checks,
            "max_drift_seen": self.max_drift,
            "reunitarizations": len(self.events),
            "events": [[int(s), float(d)] for s, d in self.events[:100]],
        }


def maintain_unitarity(U: np.ndarray, threshold: float = DRIFT_THRESHOLD) -> np.ndarray:
    return UnitarityMonitor(threshold=threshold)(U)


@dataclass(frozen=True)
class ExperimentConfig:
    """One relaxation run.

    ``L = 1`` selects the single spin in a static field (driven by sigma^x
    only).  ``max_depth`` bounds Fibonacci runs; ``max_boundaries`` and
    ``points_per_decade`` bound random-noise runs.
    """

    L: int = 8
    V: float = 1.0
    proto: ProtocolSpec = field(default_factory=ProtocolSpec)
    noise: NoiseModel = field(default_factory=NoiseModel)
    max_depth: int = 40
    max_boundaries: int = 10**5
    points_per_decade: int = 40
    stroboscopic: bool = True
    observables: tuple[int, ...] = (1,)
    parity: int = 1
    check_every: int = 1

    def __post_init__(self):
        if any(o not in range(1, self.proto.n_s + 1) for o in self.observables):
            raise ValueError(f"observables {self.observables} inconsistent with n_s={self.proto.n_s}")
        if self.L == 1 and self.proto.n_s != 1:
            raise ValueError("the single spin is driven by X_1 = sigma^x only")
        if self.proto.n_s == 2 and self.L % 2:
            raise ValueError("X_2 requires an even chain length")
        if self.L > 1 and self.L % 2:
            raise ValueError("X_1 preserves parity only for even L")
        if self.max_depth < 2:
            raise ValueError("max_depth must be at least 2")
        if not 1 <= self.max_boundaries <= 10**7:
            raise ValueError("max_boundaries must lie in 1..1e7")

    def as_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["noise"]["kind"] = self.noise.kind.value
        d["observables"] = list(self.observables)
        return d


@dataclass
class RelaxationCurve:
    times: np.ndarray
    values: dict[str, np.ndarray]
    metadata: dict[str, Any] = field(default_factory=dict)
    labels: np.ndarray | None = None

    def __getitem__(self, key: str) -> np.ndarray:
        return self.values[key]

    @property
    def observables(self) -> list[str]:
        return list(self.values)

    def check_bounds(self, atol: float = 1e-9) -> None:
        for name, vals in self.values.items():
            if np.any(vals < 0) or np.any(vals > 1 + atol):
                raise FloatingPointError(f"{name} left [0, 1]")
            if len(self.times) and self.times[0] == 0 and vals[0] != 0:
                raise FloatingPointError(f"{name}(0) = {vals[0]} != 0")


@dataclass
class System:
    H: np.ndarray
    drives: list[np.ndarray]
    dim: int
    sector: str


def build_system(L: int, V: float = 1.0, n_s: int = 1, parity: int = 1) -> System:
    """Hamiltonian and drives, restricted to one parity sector for chains."""
    if L == 1:
        return System(H=single_spin_hamiltonian(), drives=[SIGMA_X.copy()], dim=2, sector="full (single spin)")
    spec = ChainSpec(L=L, V=V)
    basis = sector_basis(spec, parity)
    H = build_hamiltonian(spec, basis)
    drives = build_drive_unitaries(spec, n_drives=n_s, sector=basis)
    return System(H=H, drives=drives, dim=basis.dim, sector=f"P_Z={parity:+d}")


def _metadata(config: ExperimentConfig, system: System, **extra) -> dict[str, Any]:
    return {
        "code_version": __version__,
        "config": config.as_dict(),
        "seed": config.noise.seed,
        "trace_sector": system.sector,
        "dimension": system.dim,
        **extra,
    }


def run_fibonacci_experiment(config: ExperimentConfig) -> RelaxationCurve:
    """Relaxation at Fibonacci depths ``2..max_depth`` via the category recursion.

    Ideal runs use the same engine with ``T_+ = T_- = T0``.  The curve starts
    with ``R(0) = 0``; depth ``n`` sits at the elapsed time of its ``F_n``
    intervals.
    """
    kind = config.noise.kind
    if kind not in (NoiseKind.FIBONACCI, NoiseKind.IDEAL):
        raise ValueError(f"Fibonacci engine cannot run {kind.value} noise")
    proto = config.proto
    system = build_system(config.L, config.V, proto.n_s, config.parity)
    if kind is NoiseKind.FIBONACCI:
        t_plus, t_minus = config.noise.fibonacci_intervals(proto.T0)
    else:
        t_plus = t_minus = proto.T0
    prop = EigenPropagator(system.H)
    plan = derive_plan(proto.n_s, proto.n_f)
    seeds = seed_unitaries(plan, prop(t_plus), prop(t_minus), system.drives)
    monitor = UnitarityMonitor(check_every=config.check_every)

    names = [f"R_X{o}" for o in config.observables]
    times, depths = [0.0], [0]
    values = {name: [0.0] for name in names}
    for depth, elapsed, U in iter_recursive(plan, seeds, config.max_depth, (t_plus, t_minus), monitor):
        times.append(elapsed)
        depths.append(depth)
        for o, name in zip(config.observables, names):
            values[name].append(relaxation_value(U, system.drives[o - 1], system.dim))
    curve = RelaxationCurve(
        times=np.array(times),
        values={k: np.array(v) for k, v in values.items()},
        labels=np.array(depths),
        metadata=_metadata(
            config,
            system,
            engine="fibonacci-recursion",
            label="depth",
            plan={"K": plan.K, "ell": plan.ell, "categories": plan.categories},
            intervals={"T_plus": t_plus, "T_minus": t_minus},
            unitarity=monitor.summary(),
        ),
    )
    curve.check_bounds()
    return curve


def log_checkpoints(max_boundaries: int, points_per_decade: int = 40, stride: int = 1) -> np.ndarray:
    """Log-spaced boundary counts up to ``max_boundaries``, snapped to multiples of ``stride``."""
    if max_boundaries < stride:
        raise ValueError("max_boundaries smaller than one cycle")
    n_dec = math.log10(max_boundaries / stride)
    raw = np.logspace(0, n_dec, int(np.ceil(n_dec * points_per_decade)) + 1)
    counts = np.unique(np.round(raw).astype(np.int64)) * stride
    return counts[counts <= max_boundaries]


def run_random_experiment(config: ExperimentConfig) -> RelaxationCurve:
    """Boundary-by-boundary evolution for synchronous/asynchronous (or ideal) timing.

    The state is kept in the eigenbasis of ``H`` so each interval is a diagonal
    phase; drives are pre-rotated into that basis.  Checkpoints are
    log-spaced and, with ``stroboscopic``, land on whole Floquet cycles.
    """
    kind = config.noise.kind
    if kind is NoiseKind.FIBONACCI:
        raise ValueError("use run_fibonacci_experiment for Fibonacci noise")
    proto = config.proto
    system = build_system(config.L, config.V, proto.n_s, config.parity)
    prop = EigenPropagator(system.H)
    V = prop.vectors
    Vh = V.conj().T
    drives_eig = [Vh @ X @ V for X in system.drives]
    stride = proto.cycle_boundaries if config.stroboscopic else 1
    checkpoints = log_checkpoints(config.max_boundaries, config.points_per_decade, stride)
    n_total = int(checkpoints[-1])
    schedule = realize_schedule(proto, config.noise, n_total)

    # reduced drive product for every residue of the boundary pattern
    pattern = boundary_ops_sequence(proto, 2 ** (proto.n_s * proto.n_f - 1))
    period = len(pattern)
    boundary_mats = []
    for ops in pattern:
        M = None
        for i in sorted(ops):
            M = drives_eig[i - 1] if M is None else drives_eig[i - 1] @ M
        boundary_mats.append(M)

    monitor = UnitarityMonitor(check_every=max(1, config.check_every) * 1000)
    names = [f"R_X{o}" for o in config.observables]
    obs = [drives_eig[o - 1] for o in config.observables]
    times, counts = [0.0], [0]
    values = {name: [0.0] for name in names}
    W = np.eye(system.dim, dtype=complex)
    elapsed = 0.0
    next_cp = 0
    energies = prop.energies
    durations = schedule.durations
    for m in range(1, n_total + 1):
        d = durations[m - 1]
        W = np.exp(-1j * energies * d)[:, None] * W
        M = boundary_mats[(m - 1) % period]
        if M is not None:
            W = M @ W
        W = monitor(W)
        elapsed += d
        if m == checkpoints[next_cp]:
            times.append(elapsed)
            counts.append(m)
            for name, X in zip(names, obs):
                values[name].append(relaxation_value(W, X, system.dim))
            next_cp += 1
    curve = RelaxationCurve(
        times=np.array(times),
        values={k: np.array(v) for k, v in values.items()},
        labels=np.array(counts),
        metadata=_metadata(
            config,
            system,
            engine="sequential",
            label="boundaries",
            stroboscopic=config.stroboscopic,
            unitarity=monitor.summary(),
        ),
    )
    curve.check_bounds()
    return curve


def floquet_unitary(system: System, proto: ProtocolSpec) -> np.ndarray:
    """One ideal Floquet cycle: ``2^(n_s n_f)`` intervals of ``T0`` with their boundary drives."""
    U_T = EigenPropagator(system.H)(proto.T0)
    U = np.eye(system.dim, dtype=complex)
    for ops in boundary_ops_sequence(proto, proto.cycle_boundaries):
        U = U_T @ U
        for i in sorted(ops):
            U = system.drives[i - 1] @ U
    return U


def run_floquet_experiment(config: ExperimentConfig) -> RelaxationCurve:
    """Ideal protocol at log-spaced whole cycles via powers of the Floquet unitary.

    ``U_F`` is diagonalised once with a complex Schur form (diagonal up to
    rounding for a unitary), so any cycle count costs one diagonal power and
    two products.  Checkpoints follow :func:`log_checkpoints` with the cycle
    length as stride, up to ``max_boundaries``.
    """
    if config.noise.kind is not NoiseKind.IDEAL and config.noise.epsilon != 0:
        raise ValueError("the Floquet engine only runs the noiseless protocol")
    proto = config.proto
    system = build_system(config.L, config.V, proto.n_s, config.parity)
    UF = floquet_unitary(system, proto)
    T, Z = sla.schur(UF, output="complex")
    lam = np.diag(T)
    lam = lam / np.abs(lam)
    Zh = Z.conj().T
    obs = [Zh @ system.drives[o - 1] @ Z for o in config.observables]
    names = [f"R_X{o}" for o in config.observables]
    cycle = proto.cycle_boundaries
    counts = log_checkpoints(config.max_boundaries, config.points_per_decade, cycle)
    times, labels = [0.0], [0]
    values = {name: [0.0] for name in names}
    for m in counts:
        D = lam ** (m // cycle)
        times.append(m * proto.T0)
        labels.append(int(m))
        for name, X in zip(names, obs):
            # in the Schur basis U^m is diagonal
            values[name].append(relaxation_value(np.diag(D), X, system.dim))
    curve = RelaxationCurve(
        times=np.array(times),
        values={k: np.array(v) for k, v in values.items()},
        labels=np.array(labels),
        metadata=_metadata(
            config,
            system,
            engine="floquet-power",
            label="boundaries",
            schur_offdiag=float(max_abs(np.triu(T, 1))),
        ),
    )
    curve.check_bounds()
    return curve


def run_experiment(config: ExperimentConfig, engine: str = "auto") -> RelaxationCurve:
    """Dispatch on noise kind.

    ``engine`` may force ``"fibonacci"``, ``"sequential"`` or ``"floquet"``;
    ``"auto"`` sends Fibonacci and ideal runs to the recursion and random
    noise to the sequential driver.
    """
    if engine == "fibonacci":
        return run_fibonacci_experiment(config)
    if engine == "sequential":
        return run_random_experiment(config)
    if engine == "floquet":
        return run_floquet_experiment(config)
    if engine != "auto":
        raise ValueError(f"unknown engine {engine!r}")
    if config.noise.kind in (NoiseKind.FIBONACCI, NoiseKind.IDEAL):
        return run_fibonacci_experiment(config)
    return run_random_experiment(config)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "value") and not isinstance(obj, (int, float, str)):
        return obj.value
    return obj


def write_curve(curve: RelaxationCurve, stem: str | Path, comment: str | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (time, R_X...) and ``<stem>.meta.json``.

    ``comment`` becomes a leading ``#`` line of the CSV.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path = stem.with_name(stem.name + ".csv")
    meta_path = stem.with_name(stem.name + ".meta.json")
    cols = [curve.times] + [curve.values[k] for k in curve.observables]
    header = ",".join(["time"] + curve.observables)
    if comment:
        header = f"# {comment}\n{header}"
    np.savetxt(csv_path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.17g")
    meta = dict(curve.metadata)
    if curve.labels is not None:
        meta["labels"] = curve.labels
    meta_path.write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True))
    return csv_path, meta_path


def read_curve(stem: str | Path) -> RelaxationCurve:
    stem = Path(stem)
    if stem.suffix == ".csv":
        stem = stem.with_suffix("")
    csv_path = stem.with_name(stem.name + ".csv")
    meta_path = stem.with_name(stem.name + ".meta.json")
    with open(csv_path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    header = lines[0].strip().split(",")
    data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    labels = meta.pop("labels", None)
    return RelaxationCurve(
        times=data[:, 0],
        values={name: data[:, i + 1] for i, name in enumerate(header[1:])},
        metadata=meta,
        labels=None if labels is None else np.asarray(labels),
    )
