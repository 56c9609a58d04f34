"""Polyfractal drive schedules, timing noise and the sign waveforms f_eps(t)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "GOLDEN_RATIO",
    "NoiseKind",
    "ProtocolSpec",
    "NoiseModel",
    "ScheduleRealization",
    "Waveform",
    "drive_periods",
    "ideal_boundary_ops",
    "boundary_ops_sequence",
    "fibonacci_durations",
    "fibonacci_letters",
    "realize_schedule",
    "waveform",
    "write_waveform",
    "optimal_fractal_layers",
    "SYNC_TRUNCATION",
    "ASYNC_FLOOR",
]

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0

# Synchronous offsets are confined to +/- SYNC_TRUNCATION * T0 so boundaries never reorder.
SYNC_TRUNCATION = 0.45
# Asynchronous intervals never drop below ASYNC_FLOOR * T0.
ASYNC_FLOOR = 0.05


class NoiseKind(str, Enum):
    IDEAL = "ideal"
    SYNCHRONOUS = "synchronous"
    ASYNCHRONOUS = "asynchronous"
    FIBONACCI = "fibonacci"

    @classmethod
    def parse(cls, value) -> "NoiseKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown noise kind {value!r}") from None


@dataclass(frozen=True)
class ProtocolSpec:
    """``n_s`` drives repeated over ``n_f`` fractal layers with base period ``T0``."""

    n_s: int = 1
    n_f: int = 1
    T0: float = 0.04

    def __post_init__(self):
        if self.n_s not in (1, 2) or self.n_f not in (1, 2):
            raise ValueError(f"only n_s, n_f in {{1, 2}} are supported, got ({self.n_s}, {self.n_f})")
        if not self.T0 > 0:
            raise ValueError("T0 must be positive")

    @property
    def cycle_boundaries(self) -> int:
        """Boundaries per Floquet period, ``2^(n_s n_f)``."""
        return 2 ** (self.n_s * self.n_f)

    @property
    def floquet_period(self) -> float:
        return self.cycle_boundaries * self.T0


@dataclass(frozen=True)
class NoiseModel:
    kind: NoiseKind = NoiseKind.IDEAL
    epsilon: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind.parse(self.kind))
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.kind in (NoiseKind.SYNCHRONOUS, NoiseKind.ASYNCHRONOUS) and self.epsilon >= 0.5:
            raise ValueError(f"epsilon={self.epsilon} too large for the truncation window (need < 0.5)")
        if self.kind is NoiseKind.FIBONACCI and self.epsilon >= 1:
            raise ValueError("Fibonacci noise needs epsilon < 1 so the short interval stays positive")

    @property
    def is_random(self) -> bool:
        return self.kind in (NoiseKind.SYNCHRONOUS, NoiseKind.ASYNCHRONOUS)

    def fibonacci_intervals(self, T0: float) -> tuple[float, float]:
        """``(T_+, T_-)`` for this amplitude."""
        return T0 * (1.0 + self.epsilon / GOLDEN_RATIO), T0 * (1.0 - self.epsilon)


@dataclass(frozen=True)
class ScheduleRealization:
    durations: np.ndarray
    boundary_ops: tuple[frozenset, ...]
    noise: NoiseModel = field(default_factory=NoiseModel)

    @property
    def total_time(self) -> float:
        return float(np.sum(self.durations))

    @property
    def boundary_times(self) -> np.ndarray:
        return np.cumsum(self.durations)

    def __len__(self) -> int:
        return len(self.durations)


@dataclass(frozen=True)
class Waveform:
    breakpoints: np.ndarray
    signs: np.ndarray
    epsilon_vector: tuple[int, ...]

    @property
    def duration(self) -> float:
        return float(self.breakpoints[-1] - self.breakpoints[0])

    @property
    def n_segments(self) -> int:
        return len(self.signs)


def drive_periods(proto: ProtocolSpec) -> list[tuple[int, int, int]]:
    """``(i, j, period)`` for drive ``X_i`` in layer ``j``; period in boundaries."""
    return [
        (i, j, 2 ** ((j - 1) * proto.n_s + i - 1))
        for j in range(1, proto.n_f + 1)
        for i in range(1, proto.n_s + 1)
    ]


def ideal_boundary_ops(proto: ProtocolSpec, m: int) -> frozenset:
    """Drives applied at boundary ``m`` after cancelling pairs (``X_i^2 = 1``)."""
    if m < 1:
        raise ValueError("boundary index starts at 1")
    applied: set[int] = set()
    for i, _, period in drive_periods(proto):
        if m % period == 0:
            applied ^= {i}
    return frozenset(applied)


def boundary_ops_sequence(proto: ProtocolSpec, n_boundaries: int, start: int = 0) -> tuple[frozenset, ...]:
    """Reduced drive sets for boundaries ``start + 1 .. start + n_boundaries``.

    The pattern repeats with the longest drive period, so only one period is
    evaluated explicitly.
    """
    period = max(p for _, _, p in drive_periods(proto))
    table = [ideal_boundary_ops(proto, r if r else period) for r in range(period)]
    return tuple(table[(start + m) % period] for m in range(1, n_boundaries + 1))


def fibonacci_letters(n_letters: int) -> np.ndarray:
    """First ``n_letters`` of the infinite Fibonacci word (+1 long, -1 short).

    Every depth-``n`` word with ``n >= 2`` is a prefix of the infinite word,
    so any boundary count can be served.
    """
    if n_letters < 0:
        raise ValueError("n_letters must be non-negative")
    prev, cur = [-1], [1]
    while len(cur) < n_letters:
        prev, cur = cur, cur + prev
    return np.array(cur[:n_letters], dtype=np.int8)


def fibonacci_durations(proto: ProtocolSpec, noise: NoiseModel, n_boundaries: int) -> np.ndarray:
    t_plus, t_minus = noise.fibonacci_intervals(proto.T0)
    letters = fibonacci_letters(n_boundaries)
    return np.where(letters > 0, t_plus, t_minus)


def _truncated_normal(rng: np.random.Generator, scale: float, bound: float, size: int) -> np.ndarray:
    out = rng.normal(0.0, scale, size) if scale > 0 else np.zeros(size)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.normal(0.0, scale, int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def realize_schedule(proto: ProtocolSpec, noise: NoiseModel, n_boundaries: int) -> ScheduleRealization:
    """Interval durations and boundary drive sets for one noise realization.

    Noise only moves the boundary times; the operator at boundary ``m`` is
    always ``ideal_boundary_ops(proto, m)``.
    """
    if n_boundaries < 1:
        raise ValueError("n_boundaries must be at least 1")
    T0, eps = proto.T0, noise.epsilon
    kind = noise.kind
    if kind is NoiseKind.IDEAL or (kind is not NoiseKind.FIBONACCI and eps == 0):
        durations = np.full(n_boundaries, T0)
    elif kind is NoiseKind.FIBONACCI:
        durations = fibonacci_durations(proto, noise, n_boundaries)
    else:
        rng = np.random.default_rng(noise.seed)
        if kind is NoiseKind.SYNCHRONOUS:
            offsets = _truncated_normal(rng, eps * T0, SYNC_TRUNCATION * T0, n_boundaries)
            times = T0 * np.arange(1, n_boundaries + 1) + offsets
            durations = np.diff(times, prepend=0.0)
        else:
            durations = np.maximum(T0 + rng.normal(0.0, eps * T0, n_boundaries), ASYNC_FLOOR * T0)
    return ScheduleRealization(
        durations=np.asarray(durations, dtype=float),
        boundary_ops=boundary_ops_sequence(proto, n_boundaries),
        noise=noise,
    )


def waveform(schedule: ScheduleRealization, epsilon_vector: Sequence[int]) -> Waveform:
    """Piecewise +/-1 modulation of the Hamiltonian piece labelled ``epsilon_vector``.

    The sign starts at +1 and flips at a boundary whenever an odd number of
    the drives with ``eps_i = 1`` act there.
    """
    eps = tuple(int(e) for e in epsilon_vector)
    odd = {i + 1 for i, e in enumerate(eps) if e}
    flips = np.array([len(odd & ops) % 2 for ops in schedule.boundary_ops], dtype=np.int64)
    # segment m (0-based) follows boundaries 1..m
    n_flips = np.concatenate(([0], np.cumsum(flips[:-1])))
    signs = np.where(n_flips % 2 == 0, 1, -1).astype(np.int8)
    breakpoints = np.concatenate(([0.0], np.cumsum(schedule.durations)))
    return Waveform(breakpoints=breakpoints, signs=signs, epsilon_vector=eps)


def write_waveform(wf: Waveform, path: str | Path) -> None:
    """Two-column text export; the last row marks the end time with the final sign."""
    signs = np.concatenate((wf.signs, wf.signs[-1:]))
    data = np.column_stack((wf.breakpoints, signs))
    header = f"breakpoint_time sign  # epsilon_vector={''.join(map(str, wf.epsilon_vector))}"
    np.savetxt(path, data, fmt=["%.17g", "%d"], header=header)


def optimal_fractal_layers(T0: float, h_norm: float, n_s: int) -> int:
    """Layer count ``round(ln(log2(1 / (T0 h)) / n_s))``, never below 1."""
    x = T0 * h_norm
    if not 0 < x < 1:
        raise ValueError(f"need 0 < T0*h_norm < 1, got {x}")
    if n_s < 1:
        raise ValueError("n_s must be positive")
    inner = math.log2(1.0 / x) / n_s
    return max(1, round(math.log(inner)))
