"""Fits and scaling collapses for relaxation curves.

All fitters take either a :class:`~polyfractal.evolve.RelaxationCurve` or a
``(times, values)`` pair and are deterministic.  Ramp and log-regime fits work
on the plateau excess ``E(t) = (R(t) - p) / (1 - p)`` for plateau height ``p``:
the fraction of the correlator surviving the prethermal stage that the noise
has since destroyed.  For small ``p`` this is just ``R - p``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from .evolve import RelaxationCurve

__all__ = [
    "FitError",
    "NoPlateauError",
    "NoLinearWindowError",
    "MissingSegmentError",
    "WindowTooShortError",
    "FitResult",
    "Segmentation",
    "plateau_height",
    "segment_relaxation",
    "ramp_rate",
    "crossover_time",
    "log_slope",
    "power_law_fit",
    "CollapsedCurve",
    "collapse_transform",
    "collapse_distance",
    "fit_report",
    "DEFAULT_PLATEAU_WINDOW",
]

DEFAULT_PLATEAU_WINDOW = (10.0, 100.0)


class FitError(ValueError):
    """Base class for fits that cannot be performed on the given curve."""


class NoPlateauError(FitError):
    pass


class NoLinearWindowError(FitError):
    pass


class MissingSegmentError(FitError):
    pass


class WindowTooShortError(FitError):
    pass


@dataclass(frozen=True)
class FitResult:
    value: float
    stderr: float
    window: tuple[float, float]
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.stderr >= 0:
            raise ValueError("stderr must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def _series(curve, observable: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(curve, RelaxationCurve):
        name = observable or curve.observables[0]
        t, r = curve.times, curve.values[name]
    else:
        t, r = curve
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    if t.shape != r.shape or t.ndim != 1:
        raise ValueError("times and values must be 1-d arrays of equal length")
    return t, r


def _median_stderr(values: np.ndarray) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    return float(math.sqrt(math.pi / 2) * np.std(values, ddof=1) / math.sqrt(n))


def plateau_height(
    curve,
    window: tuple[float, float] = DEFAULT_PLATEAU_WINDOW,
    observable: str | None = None,
    max_slope: float = 0.1,
) -> FitResult:
    """Median of ``R`` over ``window`` (physical time).

    The window is rejected when ``R`` changes by more than ``max_slope``
    (relative) per decade of time, judged from a log-log fit.  The
    diagnostics carry the spread of the samples, which downstream fits use
    as the fluctuation scale of the curve.
    """
    t, r = _series(curve, observable)
    lo, hi = window
    sel = (t >= lo) & (t <= hi)
    if sel.sum() < 2:
        raise NoPlateauError(f"fewer than two samples in window {window}")
    tw, rw = t[sel], r[sel]
    if np.any(rw <= 0):
        raise NoPlateauError("non-positive values inside the plateau window")
    slope = np.polyfit(np.log10(tw), np.log(rw), 1)[0]
    per_decade = math.expm1(slope * 1.0)
    if abs(per_decade) > max_slope:
        raise NoPlateauError(f"curve still changing by {per_decade:+.1%} per decade in window {window}")
    value = float(np.median(rw))
    return FitResult(
        value=value,
        stderr=_median_stderr(rw),
        window=(float(tw[0]), float(tw[-1])),
        diagnostics={
            "residual_norm": float(np.linalg.norm(rw - value)),
            "spread": float(np.std(rw)),
            "change_per_decade": per_decade,
            "n_points": int(sel.sum()),
        },
    )


@dataclass(frozen=True)
class Segmentation:
    """Split of the plateau excess into a linear ramp and an optional log tail.

    ``tau_index`` is the last sample of the ramp; ``None`` when the best
    description is a single linear segment.
    """

    times: np.ndarray
    excess: np.ndarray
    plateau: float
    floor: float
    ramp: slice
    tail: slice
    tau_index: int | None
    model_rate: float
    residual: float

    @property
    def tau_estimate(self) -> float:
        return math.inf if self.tau_index is None else float(self.times[self.tau_index])


def _plateau_args(curve, plateau, observable) -> tuple[float, float, float]:
    """Plateau value, fluctuation scale and the time the plateau is established."""
    if plateau is None:
        try:
            plateau = plateau_height(curve, observable=observable)
        except NoPlateauError:
            return 0.0, 0.0, 0.0
    if isinstance(plateau, FitResult):
        return plateau.value, float(plateau.diagnostics.get("spread", 0.0)), plateau.window[0]
    return float(plateau), 0.0, 0.0


def _moving_average(a: np.ndarray, width: int) -> np.ndarray:
    """Centred moving average; the ends use the samples available."""
    kernel = np.ones(width)
    num = np.convolve(a, kernel, mode="same")
    den = np.convolve(np.ones_like(a), kernel, mode="same")
    return num / den


def _log_model(t: np.ndarray, tau: float) -> np.ndarray:
    """``log`` of ``t`` below ``tau`` and of ``tau (1 + ln(t/tau))`` above, up to ``log Gamma``."""
    if not math.isfinite(tau):
        return np.log(t)
    ratio = np.maximum(t / tau, 1.0)
    return np.where(t <= tau, np.log(t), math.log(tau) + np.log1p(np.log(ratio)))


def segment_relaxation(
    curve,
    plateau: FitResult | float | None = None,
    observable: str | None = None,
    floor_factor: float = 2.0,
    upper: float = 0.3,
    min_points: int = 3,
    t_min: float | None = None,
    smooth: int = 3,
) -> Segmentation:
    """Locate the linear ramp and the log tail of the plateau excess.

    The analysis window starts where the plateau excess ``E`` first stays above
    ``floor_factor`` times the plateau spread for three consecutive samples,
    and ends before ``E`` first reaches ``upper``.  Samples before ``t_min``
    (default: the start of the plateau window, i.e. the end of the initial
    transient) are ignored.  ``smooth > 1`` replaces ``t`` and ``R`` by
    centred moving averages over that many samples first, which removes the
    depth-periodic micromotion of non-stroboscopic Fibonacci records.  Inside it, every sample
    time is tried as the break ``tau`` of the continuous model
    ``E = G t`` (``t <= tau``), ``G tau (1 + ln(t / tau))`` (``t > tau``),
    fitted in log space where ``G`` has a closed form; a single linear
    segment is kept unless a break strictly lowers the residual.
    """
    t, r = _series(curve, observable)
    p, spread, t_settled = _plateau_args(curve, plateau, observable)
    if smooth > 1:
        t, r = _moving_average(t, smooth), _moving_average(r, smooth)
    t_min = t_settled if t_min is None else t_min
    floor = floor_factor * spread / (1 - p)
    E = (r - p) / (1 - p)
    above = (E > floor) & (t >= t_min) & (t > 0)
    n = len(t)
    start = None
    for i in range(n - 2):
        if above[i : i + 3].all():
            start = i
            break
    if start is None:
        raise NoLinearWindowError("excess never rises above the fluctuation floor")
    stop = n
    hits = np.flatnonzero(E[start:] >= upper)
    if len(hits):
        stop = start + int(hits[0])
    idx = np.arange(start, stop)
    idx = idx[E[idx] > 0]
    if len(idx) < min_points:
        raise NoLinearWindowError(f"only {len(idx)} usable samples between the floor and an excess of {upper}")
    tt, logE = t[idx], np.log(E[idx])

    def fit(tau):
        g = _log_model(tt, tau)
        lg = float(np.mean(logE - g))
        return float(np.sum((logE - g - lg) ** 2)), math.exp(lg)

    best_res, best_rate = fit(math.inf)
    best_k = None
    for k in range(min_points - 1, len(tt) - 1):
        res, rate = fit(tt[k])
        if res < best_res * (1 - 1e-12):
            best_res, best_rate, best_k = res, rate, k
    if best_k is None:
        ramp, tail, tau_index = slice(idx[0], idx[-1] + 1), slice(idx[-1] + 1, idx[-1] + 1), None
    else:
        tau_index = int(idx[best_k])
        ramp = slice(int(idx[0]), tau_index + 1)
        tail = slice(tau_index + 1, int(idx[-1]) + 1)
    return Segmentation(
        times=t,
        excess=E,
        plateau=p,
        floor=floor,
        ramp=ramp,
        tail=tail,
        tau_index=tau_index,
        model_rate=best_rate,
        residual=best_res,
    )


def _origin_slope(t: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares ``y = g t``: slope, its standard error and the residual norm."""
    sxx = float(np.dot(t, t))
    g = float(np.dot(t, y)) / sxx
    resid = y - g * t
    dof = max(len(t) - 1, 1)
    se = math.sqrt(float(np.dot(resid, resid)) / dof / sxx)
    return g, se, float(np.linalg.norm(resid))


def ramp_rate(curve, plateau: FitResult | float | None = None, observable: str | None = None, **seg_kw) -> FitResult:
    """Relaxation rate ``Gamma`` of the linear ramp.

    Least-squares slope of the plateau excess against time, through the
    origin, over the ramp part of :func:`segment_relaxation`.
    """
    seg = segment_relaxation(curve, plateau, observable, **seg_kw)
    t, E = seg.times[seg.ramp], seg.excess[seg.ramp]
    if len(t) < 2:
        raise NoLinearWindowError("ramp holds fewer than two samples")
    g, se, rn = _origin_slope(t, E)
    return FitResult(
        value=g,
        stderr=se,
        window=(float(t[0]), float(t[-1])),
        diagnostics={
            "residual_norm": rn,
            "plateau": seg.plateau,
            "floor": seg.floor,
            "n_points": len(t),
            "has_log_tail": seg.tau_index is not None,
        },
    )


def _log_fit(t: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float, float]:
    """``y = a + b ln t``: returns ``a, b, se_a, se_b, residual_norm``."""
    A = np.column_stack((np.ones_like(t), np.log(t)))
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(len(t) - 2, 1)
    s2 = float(np.dot(resid, resid)) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    return float(coef[0]), float(coef[1]), math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1]), float(np.linalg.norm(resid))


def log_slope(
    curve,
    window: tuple[float, float] | None = None,
    plateau: FitResult | float | None = None,
    observable: str | None = None,
    min_points: int = 4,
    min_decades: float = 1.0,
    **seg_kw,
) -> FitResult:
    """Slope ``b`` of ``R`` against ``ln t`` in the late-time window.

    Without an explicit ``window`` the tail found by
    :func:`segment_relaxation` is used.  The window must hold
    ``min_points`` samples spanning at least ``min_decades``.
    """
    if window is None:
        seg = segment_relaxation(curve, plateau, observable, **seg_kw)
        t, y = seg.times[seg.tail], seg.excess[seg.tail]
    else:
        t_all, r = _series(curve, observable)
        sel = (t_all >= window[0]) & (t_all <= window[1]) & (t_all > 0)
        t, y = t_all[sel], r[sel]
    if len(t) < min_points or math.log10(t[-1] / t[0]) < min_decades:
        span = math.log10(t[-1] / t[0]) if len(t) > 1 else 0.0
        raise WindowTooShortError(f"log window has {len(t)} samples over {span:.2f} decades")
    a, b, se_a, se_b, rn = _log_fit(t, y)
    return FitResult(
        value=b,
        stderr=se_b,
        window=(float(t[0]), float(t[-1])),
        diagnostics={"residual_norm": rn, "intercept": a, "intercept_stderr": se_a, "n_points": len(t)},
    )


def _intersection(gamma: float, a: float, b: float, guess: float) -> tuple[float, bool]:
    """Root of ``gamma t = a + b ln t`` nearest ``guess`` in log distance.

    When the line and the log curve do not cross, the point of closest
    approach ``b / gamma`` is returned with ``False``.
    """
    h = lambda t: gamma * t - a - b * math.log(t)
    if gamma <= 0 or b <= 0:
        raise MissingSegmentError("ramp and log fits need positive slopes to intersect")
    t_min = b / gamma
    if h(t_min) >= 0:
        return t_min, False
    roots = []
    lo = t_min
    while h(lo) < 0:
        lo /= 10
    roots.append(brentq(h, lo, t_min))
    hi = t_min
    while h(hi) < 0:
        hi *= 10
    roots.append(brentq(h, t_min, hi))
    return min(roots, key=lambda x: abs(math.log(x / guess))), True


def crossover_time(
    curve,
    plateau: FitResult | float | None = None,
    observable: str | None = None,
    min_points: int = 4,
    min_decades: float = 1.0,
    **seg_kw,
) -> FitResult:
    """Crossover ``tau`` where the fitted ramp meets the fitted log segment.

    Raises :class:`MissingSegmentError` when the curve has no log tail
    spanning ``min_decades`` with ``min_points`` samples, or when the tail
    does not grow.
    """
    seg = segment_relaxation(curve, plateau, observable, **seg_kw)
    if seg.tau_index is None:
        raise MissingSegmentError("missing log segment: a single linear ramp describes the data")
    tr, Er = seg.times[seg.ramp], seg.excess[seg.ramp]
    tl, El = seg.times[seg.tail], seg.excess[seg.tail]
    if len(tl) < min_points or math.log10(tl[-1] / tl[0]) < min_decades:
        raise MissingSegmentError(f"missing log segment: tail has {len(tl)} samples")
    gamma, se_g, _ = _origin_slope(tr, Er)
    a, b, se_a, se_b, rn = _log_fit(tl, El)
    if b <= 0:
        raise MissingSegmentError("missing log segment: tail does not grow")
    tau, crossed = _intersection(gamma, a, b, seg.tau_estimate)
    # first-order error propagation by finite differences
    var = 0.0
    for dg, da, db, s in ((1, 0, 0, se_g), (0, 1, 0, se_a), (0, 0, 1, se_b)):
        if s == 0:
            continue
        h = 1e-3 * s
        try:
            t2, _ = _intersection(gamma + dg * h, a + da * h, b + db * h, tau)
        except MissingSegmentError:
            continue
        var += ((t2 - tau) / h * s) ** 2
    return FitResult(
        value=float(tau),
        stderr=math.sqrt(var),
        window=(float(tr[0]), float(tl[-1])),
        diagnostics={
            "residual_norm": rn,
            "gamma": gamma,
            "log_intercept": a,
            "log_slope": b,
            "segment_break": seg.tau_estimate,
            "fits_cross": crossed,
        },
    )


def power_law_fit(x: Sequence[float], y: Sequence[float]) -> FitResult:
    """Exponent of ``y ~ x^k`` from a least-squares line in log-log space."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.any(x <= 0) or np.any(y <= 0):
        raise FitError("power-law fit needs at least two positive samples")
    A = np.column_stack((np.ones_like(x), np.log(x)))
    coef, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    resid = np.log(y) - A @ coef
    se = 0.0
    if len(x) > 2:
        cov = float(np.dot(resid, resid)) / (len(x) - 2) * np.linalg.inv(A.T @ A)
        se = math.sqrt(cov[1, 1])
    return FitResult(
        value=float(coef[1]),
        stderr=se,
        window=(float(x.min()), float(x.max())),
        diagnostics={"residual_norm": float(np.linalg.norm(resid)), "prefactor": float(math.exp(coef[0]))},
    )


@dataclass(frozen=True)
class CollapsedCurve:
    x: np.ndarray
    y: np.ndarray
    label: str = ""


def _curve_params(curve) -> tuple[float, float]:
    cfg = curve.metadata.get("config", {}) if isinstance(curve, RelaxationCurve) else {}
    try:
        return float(cfg["noise"]["epsilon"]), float(cfg["proto"]["T0"])
    except (KeyError, TypeError):
        raise ValueError("curve carries no (epsilon, T0) metadata; pass params explicitly") from None


def collapse_transform(
    curves: Iterable,
    mode: str = "ramp",
    exponent: float = 2.0,
    params: Sequence[tuple[float, float]] | None = None,
    plateaus: Sequence[float] | None = None,
    observable: str | None = None,
) -> list[CollapsedCurve]:
    """Rescale curves for a scaling collapse.

    ``mode="plateau"`` maps ``R -> R / T0^exponent`` with time untouched.
    ``mode="ramp"`` maps ``(t, R) -> (t eps T0, E / (eps T0))`` with the
    plateau excess ``E = (R - p) / (1 - p)``; plateaus ``p`` default to
    zero.  ``params`` lists ``(eps, T0)`` per curve and falls back to curve
    metadata.
    """
    if mode not in ("plateau", "ramp"):
        raise ValueError(f"unknown collapse mode {mode!r}")
    curves = list(curves)
    if params is None:
        params = [_curve_params(c) for c in curves]
    if len(params) != len(curves):
        raise ValueError("one (eps, T0) pair per curve is required")
    if plateaus is None:
        plateaus = [0.0] * len(curves)
    out = []
    for c, (eps, T0), p in zip(curves, params, plateaus):
        t, r = _series(c, observable)
        if mode == "plateau":
            out.append(CollapsedCurve(t.copy(), r / T0**exponent, f"T0={T0:g}"))
        else:
            s = eps * T0
            out.append(CollapsedCurve(t * s, (r - p) / (1 - p) / s, f"eps={eps:g},T0={T0:g}"))
    return out


def collapse_distance(
    collapsed: Sequence[CollapsedCurve],
    windows: Sequence[tuple[float, float]] | None = None,
) -> np.ndarray:
    """Pairwise sup-distance of collapsed curves, relative to their joint range.

    For each pair the curves are compared on the overlap of their windows
    (default: full extent), interpolating linearly in ``log x`` onto the
    union of both sample sets.  The distance is ``max |y1 - y2|`` divided by
    the spread of both curves on the overlap.  Pairs without overlap get
    ``nan``.
    """
    n = len(collapsed)
    if windows is None:
        windows = [(float(c.x[c.x > 0].min()), float(c.x.max())) for c in collapsed]
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            lo = max(windows[i][0], windows[j][0])
            hi = min(windows[i][1], windows[j][1])
            if not lo < hi:
                D[i, j] = D[j, i] = np.nan
                continue
            grid = []
            for c in (collapsed[i], collapsed[j]):
                m = (c.x >= lo) & (c.x <= hi)
                grid.append(c.x[m])
            xs = np.unique(np.concatenate(grid + [np.array([lo, hi])]))
            ys = []
            for c in (collapsed[i], collapsed[j]):
                m = c.x > 0
                ys.append(np.interp(np.log(xs), np.log(c.x[m]), c.y[m]))
            spread = max(ys[0].max(), ys[1].max()) - min(ys[0].min(), ys[1].min())
            d = float(np.max(np.abs(ys[0] - ys[1])))
            D[i, j] = D[j, i] = d / spread if spread > 0 else 0.0
    return D


def fit_report(results: dict[str, FitResult | Exception], **extra) -> str:
    """JSON report of named fits; failed fits appear as error strings."""
    body: dict[str, Any] = {}
    for name, res in results.items():
        if isinstance(res, Exception):
            body[name] = {"error": f"{type(res).__name__}: {res}"}
        else:
            body[name] = res.to_dict()
    body.update(extra)
    return json.dumps(body, indent=2, sort_keys=True, default=float)
