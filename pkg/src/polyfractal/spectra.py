"""Exact spectra of piecewise +/-1 drive waveforms and their floor/peak structure.

The waveform ``f(t)`` records the sign with which a Hamiltonian piece odd
under the chosen drives appears in the toggling frame.  Its spectral density
at duration ``t`` is ``S(omega, t) = |f~(omega)|^2 / t`` with
``f~(omega) = int_0^t f(s) e^{i omega s} ds``; with ``|f| = 1`` this makes the
total weight ``(1/2 pi) int S d omega`` equal to one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .drive import (
    GOLDEN_RATIO,
    NoiseModel,
    ProtocolSpec,
    Waveform,
    boundary_ops_sequence,
)
from .fibrec import fibonacci

__all__ = [
    "SpectrumSeries",
    "Peak",
    "SpectrumFeatures",
    "exact_fourier",
    "fibonacci_fourier",
    "spectrum_scan",
    "fibonacci_spectrum",
    "default_omega_grid",
    "predicted_peaks",
    "feature_extract",
    "plancherel_total",
    "write_spectrum",
]

# Bounds the work array of the direct transform (segments x frequencies).
_CHUNK_ELEMENTS = 2**22


@dataclass(frozen=True)
class SpectrumSeries:
    omega: np.ndarray
    S: np.ndarray
    duration: float
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.omega.shape != self.S.shape:
            raise ValueError("omega and S must have the same shape")
        if len(self.omega) > 1 and np.any(np.diff(self.omega) <= 0):
            raise ValueError("omega grid must be strictly increasing")
        if np.any(self.S < 0):
            raise ValueError("spectral density must be non-negative")


def _check_omega(omega) -> np.ndarray:
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if np.any(omega < 0):
        raise ValueError("frequencies must be non-negative")
    return omega


def exact_fourier(wf: Waveform, omega):
    """Closed-form ``f~(omega)`` of a piecewise-constant waveform.

    Each segment contributes ``s_m (e^{i w t_{m+1}} - e^{i w t_m}) / (i w)``,
    or ``s_m (t_{m+1} - t_m)`` at ``w = 0``.  Accepts a scalar or an array of
    frequencies and returns the same shape.
    """
    if wf.n_segments == 0:
        raise ValueError("empty waveform")
    scalar = np.ndim(omega) == 0
    w = _check_omega(omega)
    t = np.asarray(wf.breakpoints, dtype=float)
    s = np.asarray(wf.signs, dtype=float)
    # f~ = [s_last e^{i w t_N} - s_0 e^{i w t_0} - sum_m (s_m - s_{m-1}) e^{i w t_m}] / (i w)
    jumps = np.diff(s)
    jt = t[1:-1][jumps != 0]
    jv = jumps[jumps != 0]
    out = np.empty(len(w), dtype=complex)
    step = max(1, _CHUNK_ELEMENTS // max(len(jt), 1))
    for lo in range(0, len(w), step):
        wc = w[lo : lo + step]
        acc = s[-1] * np.exp(1j * wc * t[-1]) - s[0] * np.exp(1j * wc * t[0])
        if len(jt):
            acc = acc - np.exp(1j * np.outer(wc, jt)) @ jv
        nz = wc != 0
        res = np.empty(len(wc), dtype=complex)
        res[nz] = acc[nz] / (1j * wc[nz])
        res[~nz] = np.dot(s, np.diff(t))
        out[lo : lo + step] = res
    return out[0] if scalar else out


def _flip_pattern(proto: ProtocolSpec, epsilon_vector: Sequence[int]) -> np.ndarray:
    """``flip[r]`` is 1 when boundary ``m`` with ``m % P == r`` flips the sign."""
    period = 2 ** (proto.n_s * proto.n_f - 1)
    odd = {i + 1 for i, e in enumerate(epsilon_vector) if e}
    ops = boundary_ops_sequence(proto, period)  # boundaries 1..P
    flip = np.zeros(period, dtype=np.int64)
    for m, o in enumerate(ops, start=1):
        flip[m % period] = len(odd & o) % 2
    return flip


def fibonacci_fourier(
    proto: ProtocolSpec,
    noise: NoiseModel,
    depth: int,
    omega,
    epsilon_vector: Sequence[int] = (1,),
) -> np.ndarray:
    """``f~(omega)`` of the depth-``depth`` Fibonacci waveform by recursion.

    With ``G_n^(s)`` the transform of word ``n`` started after boundary
    ``s`` with sign +1, ``D_n`` its duration and ``c_n^(s)`` its flip parity
    (trailing boundary included),

        G_n^(s) = G_{n-1}^(s) + (-1)^{c_{n-1}^(s)} e^{i w D_{n-1}} G_{n-2}^(s + F_{n-1}),

    so the cost is ``O(depth * P * len(omega))`` instead of
    ``O(F_depth * len(omega))``; ``P`` is the period of the boundary pattern.
    """
    if depth < 2:
        raise ValueError("depth must be at least 2")
    w = _check_omega(omega)
    flip = _flip_pattern(proto, epsilon_vector)
    P = len(flip)
    t_plus, t_minus = noise.fibonacci_intervals(proto.T0)

    def letter(T):
        g = np.empty(len(w), dtype=complex)
        nz = w != 0
        g[nz] = (np.exp(1j * w[nz] * T) - 1.0) / (1j * w[nz])
        g[~nz] = T
        return g

    # word 1 = [-], word 2 = [+]; a single letter is identical for every offset
    g1, g2 = letter(t_minus), letter(t_plus)
    G_prev = [g1] * P
    G_cur = [g2] * P
    c_prev = [int(flip[(s + 1) % P]) for s in range(P)]
    c_cur = list(c_prev)
    D_prev, D_cur = t_minus, t_plus
    for n in range(3, depth + 1):
        F = fibonacci(n - 1) % P
        phase = np.exp(1j * w * D_cur)
        G_new = []
        c_new = []
        for s in range(P):
            sign = -1.0 if c_cur[s] else 1.0
            G_new.append(G_cur[s] + sign * phase * G_prev[(s + F) % P])
            c_new.append((c_cur[s] + c_prev[(s + F) % P]) % 2)
        G_prev, G_cur = G_cur, G_new
        c_prev, c_cur = c_cur, c_new
        D_prev, D_cur = D_cur, D_cur + D_prev
    out = G_cur[0]
    return out[0] if np.ndim(omega) == 0 else out


def spectrum_scan(wf: Waveform, omega_grid, metadata: dict | None = None) -> SpectrumSeries:
    """``S = |f~|^2 / t`` on ``omega_grid``."""
    w = _check_omega(omega_grid)
    amp = exact_fourier(wf, w)
    return SpectrumSeries(omega=w, S=np.abs(amp) ** 2 / wf.duration, duration=wf.duration, metadata=dict(metadata or {}))


def fibonacci_spectrum(
    T0: float,
    epsilon: float,
    depth: int,
    omega_grid,
    n_s: int = 1,
    n_f: int = 1,
    epsilon_vector: Sequence[int] = (1,),
) -> SpectrumSeries:
    """Spectrum of the depth-``depth`` Fibonacci waveform via :func:`fibonacci_fourier`."""
    proto = ProtocolSpec(n_s, n_f, T0)
    noise = NoiseModel("fibonacci", epsilon)
    w = _check_omega(omega_grid)
    t_plus, t_minus = noise.fibonacci_intervals(T0)
    duration = fibonacci(depth - 1) * t_plus + fibonacci(depth - 2) * t_minus
    amp = fibonacci_fourier(proto, noise, depth, w, epsilon_vector)
    return SpectrumSeries(
        omega=w,
        S=np.abs(amp) ** 2 / duration,
        duration=duration,
        metadata={
            "noise": {"kind": "fibonacci", "epsilon": epsilon},
            "T0": T0,
            "depth": depth,
            "n_s": n_s,
            "n_f": n_f,
            "epsilon_vector": list(epsilon_vector),
        },
    )


def predicted_peaks(T0: float, n_max: int = 2) -> np.ndarray:
    """Quasiperiodic peak positions ``pi / (T0 phi^n)`` for ``n = 0..n_max``."""
    return np.array([math.pi / (T0 * GOLDEN_RATIO**n) for n in range(n_max + 1)])


def default_omega_grid(
    T0: float,
    n_points: int = 40_000,
    lo: float = 1e-3,
    hi: float = 20.0,
    n_peaks: int = 6,
    densify: int = 10,
    rel_halfwidth: float = 0.02,
) -> np.ndarray:
    """Log-spaced grid on ``(lo, hi) / T0``, ``densify`` times finer near predicted peaks."""
    base = np.geomspace(lo / T0, hi / T0, n_points)
    ratio = (hi / lo) ** (1.0 / (n_points - 1))
    extra = []
    for wp in predicted_peaks(T0, n_peaks):
        a, b = wp * (1 - rel_halfwidth), wp * (1 + rel_halfwidth)
        if b < base[0] or a > base[-1]:
            continue
        n = int(math.ceil(math.log(b / a) / math.log(ratio) * densify)) + 1
        extra.append(np.geomspace(a, b, n))
    return np.unique(np.concatenate([base, *extra]))


@dataclass(frozen=True)
class Peak:
    position: float
    height: float
    width: float
    resolved: bool = True


@dataclass(frozen=True)
class SpectrumFeatures:
    duration: float
    floor: float
    peaks: tuple[Peak, ...]
    flags: tuple[str, ...] = ()

    def nearest_peak(self, omega: float) -> Peak | None:
        if not self.peaks:
            return None
        return min(self.peaks, key=lambda p: abs(p.position - omega))

    @property
    def dominant(self) -> Peak | None:
        return max(self.peaks, key=lambda p: p.height) if self.peaks else None


def _half_max_crossing(w: np.ndarray, S: np.ndarray, i: int, half: float, step: int) -> float | None:
    j = i
    while 0 <= j + step < len(S):
        if S[j + step] <= half:
            # linear interpolation between j and j + step
            k = j + step
            return float(w[j] + (half - S[j]) * (w[k] - w[j]) / (S[k] - S[j]))
        j += step
    return None


def _features(series: SpectrumSeries, band, exclude, peak_factor: float, min_resolve: int) -> SpectrumFeatures:
    w, S = series.omega, series.S
    in_band = (w >= band[0]) & (w <= band[1])
    mask = in_band.copy()
    for wp, hw in exclude:
        mask &= np.abs(w - wp) > hw
    if not mask.any():
        raise ValueError("no off-peak samples in the floor band")
    floor = float(np.median(S[mask]))
    threshold = peak_factor * floor
    interior = np.arange(1, len(S) - 1)
    is_max = (S[interior] > S[interior - 1]) & (S[interior] >= S[interior + 1]) & (S[interior] > threshold)
    peaks = []
    flags = []
    for i in interior[is_max]:
        if not in_band[i]:
            continue
        half = S[i] / 2
        left = _half_max_crossing(w, S, i, half, -1)
        right = _half_max_crossing(w, S, i, half, +1)
        n_above = 1
        j = i - 1
        while j >= 0 and S[j] > half:
            n_above += 1
            j -= 1
        j = i + 1
        while j < len(S) and S[j] > half:
            n_above += 1
            j += 1
        resolved = left is not None and right is not None and n_above >= min_resolve
        width = (right - left) if left is not None and right is not None else float("nan")
        if not resolved:
            flags.append(f"peak at {w[i]:.6g} not resolved by the grid")
        peaks.append(Peak(float(w[i]), float(S[i]), float(width), resolved))
    return SpectrumFeatures(series.duration, floor, tuple(peaks), tuple(flags))


def feature_extract(
    series: Sequence[SpectrumSeries],
    band: tuple[float, float] = (0.5, 2.0),
    exclude: Sequence[tuple[float, float]] | None = None,
    peak_factor: float = 5.0,
    min_resolve: int = 3,
    T0: float = 1.0,
    require_span: bool = True,
) -> list[SpectrumFeatures]:
    """Floor and peaks of each spectrum, in order of duration.

    The floor is the median of ``S`` over ``band`` with ``exclude``
    neighbourhoods ``(centre, half-width)`` removed; by default these are
    the predicted peaks ``pi / (T0 phi^n)``, ``n = 0..6``, each with a
    half-width of 3 %.  Peaks are local maxima inside ``band`` above
    ``peak_factor`` times the floor; widths are full widths at half maximum,
    and peaks covered by fewer than ``min_resolve`` samples are flagged
    rather than dropped.
    """
    series = sorted(series, key=lambda s: s.duration)
    if require_span:
        if len(series) < 3:
            raise ValueError("need at least three durations")
        if series[-1].duration < 100 * series[0].duration:
            raise ValueError("durations must span at least two decades")
    if exclude is None:
        exclude = [(wp, 0.03 * wp) for wp in predicted_peaks(T0, 6)]
    return [_features(s, band, exclude, peak_factor, min_resolve) for s in series]


def plancherel_total(series: SpectrumSeries) -> float:
    """``(1 / 2 pi) int_{-W}^{W} S d omega`` using ``S(-w) = S(w)`` and the trapezoid rule.

    The grid should start at (or near) zero; the integral covers
    ``[0, omega_max]`` only.
    """
    return float(np.trapezoid(series.S, series.omega) / math.pi)


def write_spectrum(series: SpectrumSeries, stem: str | Path, comment: str | None = None) -> tuple[Path, Path]:
    """``<stem>.csv`` with columns ``omega, S`` and ``<stem>.meta.json``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path = stem.with_name(stem.name + ".csv")
    meta_path = stem.with_name(stem.name + ".meta.json")
    np.savetxt(csv_path, np.column_stack((series.omega, series.S)), delimiter=",", header=(f"# {comment}\n" if comment else "") + "omega,S", comments="", fmt="%.17g")
    meta = {"duration": series.duration, **series.metadata}
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=float))
    return csv_path, meta_path
