"""Batch matching of magnetometer windows against a route map.

A batch of ``n`` field magnitudes is compared with the map sampled at ``n``
uniformly spaced arc lengths ending at a hypothesised ``s_end``. Matching runs
in four stages: scan the whole map for low-error sections, take the predicted
position, keep sections whose map position lies near it, and pick the lowest
error among those.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .glomap import RouteMaps, ScalarArcMap, eval_map

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
DEFAULT_STRIDE = 0.5
TIE_TOLERANCE = 1e-9
GOLDEN_TOL = 1e-7  # refinement tolerance as a fraction of the stride


@dataclass(frozen=True)
class MagBatch:
    values: np.ndarray
    ds: float
    t_end: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size < 2:
            raise ValueError("a batch needs at least two samples")
        if not self.ds > 0:
            raise ValueError("batch spacing ds must be positive")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def length(self) -> float:
        return (self.n - 1) * self.ds


@dataclass(frozen=True)
class MatchCandidate:
    s_end: float
    error: float
    xy: tuple[float, float]

    def distance_to(self, point) -> float:
        return math.hypot(self.xy[0] - point[0], self.xy[1] - point[1])


def default_threshold(n, sigma=0.1) -> float:
    """1.5 times the expected residual norm of ``n`` samples with noise ``sigma``."""
    return 1.5 * sigma * math.sqrt(n)


def _magnitude_map(maps) -> ScalarArcMap:
    return maps.magnitude if isinstance(maps, RouteMaps) else maps


def _errors(batch: MagBatch, m: ScalarArcMap, s_end: np.ndarray) -> np.ndarray:
    offsets = batch.ds * np.arange(batch.n - 1, -1, -1, dtype=float)
    s = s_end[:, None] - offsets[None, :]
    resid = batch.values[None, :] - eval_map(m, s)
    return np.sqrt(np.einsum("ij,ij->i", resid, resid))


def match_error(batch: MagBatch, maps, s_end) -> float:
    """Euclidean norm of the batch-minus-map residual for a batch ending at ``s_end``."""
    return float(_errors(batch, _magnitude_map(maps), np.array([float(s_end)]))[0])


def golden_section(fun, lo, hi, tol=1e-4, max_iter=200):
    """Minimize a unimodal scalar function on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = float(lo), float(hi)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = fun(d)
    x = 0.5 * (a + b)
    fx = fun(x)
    # keep the best point seen at the final bracket
    for xx, ff in ((c, fc), (d, fd)):
        if ff < fx:
            x, fx = xx, ff
    return x, fx


def _golden_section_many(fun, lo, hi, tol):
    """:func:`golden_section` run on many brackets at once.

    ``fun`` maps an array of abscissae to an array of values. All brackets
    take the same number of steps, enough for the widest one.
    """
    a, b = np.array(lo, dtype=float), np.array(hi, dtype=float)
    width = float(np.max(b - a)) if a.size else 0.0
    steps = 0 if width <= tol else int(math.ceil(math.log(tol / width) / math.log(_INV_PHI)))
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(steps):
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        keep = np.where(left, c, d)
        fkeep = np.where(left, fc, fd)
        new = np.where(left, b - _INV_PHI * (b - a), a + _INV_PHI * (b - a))
        fnew = fun(new)
        c, fc = np.where(left, new, keep), np.where(left, fnew, fkeep)
        d, fd = np.where(left, keep, new), np.where(left, fkeep, fnew)
    x = 0.5 * (a + b)
    fx = fun(x)
    for xx, ff in ((c, fc), (d, fd)):
        better = ff < fx
        x, fx = np.where(better, xx, x), np.where(better, ff, fx)
    return x, fx


def _candidate(maps, s_end, error) -> MatchCandidate:
    if isinstance(maps, RouteMaps):
        xy = (float(eval_map(maps.x, s_end)), float(eval_map(maps.y, s_end)))
    else:
        xy = (math.nan, math.nan)
    return MatchCandidate(float(s_end), float(error), xy)


def scan_grid(batch: MagBatch, maps, stride=DEFAULT_STRIDE, s_window=None):
    """Grid of feasible ``s_end`` values and their matching errors.

    ``s_window`` optionally restricts the scan to ``[lo, hi]``.
    """
    m = _magnitude_map(maps)
    lo = m.s_min + batch.length
    hi = m.s_max
    if s_window is not None:
        lo, hi = max(lo, float(s_window[0])), min(hi, float(s_window[1]))
    if lo > hi:
        return np.empty(0), np.empty(0)
    n = int(math.floor((hi - lo) / stride + 1e-9)) + 1
    grid = lo + stride * np.arange(n, dtype=float)
    if hi - grid[-1] > 1e-9:
        grid = np.append(grid, hi)
    return grid, _errors(batch, m, grid)


def scan_candidates(batch: MagBatch, maps, stride=DEFAULT_STRIDE, threshold=None,
                    s_window=None) -> list[MatchCandidate]:
    """All refined local minima of the matching error below ``threshold``.

    ``maps`` is a :class:`RouteMaps` (candidates carry map positions) or a bare
    magnitude map (positions are NaN).
    """
    if not stride > 0:
        raise ValueError("stride must be positive")
    if threshold is None:
        threshold = default_threshold(batch.n)
    m = _magnitude_map(maps)
    grid, err = scan_grid(batch, m, stride, s_window)
    if grid.size == 0:
        return []
    left = np.concatenate([[np.inf], err[:-1]])
    right = np.concatenate([err[1:], [np.inf]])
    minima = np.flatnonzero((err < left) & (err <= right))
    lo_bound, hi_bound = grid[0], grid[-1]
    # refinement can only lower the error by the local curvature over one stride
    minima = minima[err[minima] < 2.0 * threshold + 1.0]
    a = np.maximum(lo_bound, grid[minima] - stride)
    b = np.minimum(hi_bound, grid[minima] + stride)
    s_ref, e_ref = _golden_section_many(lambda x: _errors(batch, m, x), a, b, GOLDEN_TOL * stride)
    grid_better = err[minima] < e_ref
    s_ref = np.where(grid_better, grid[minima], s_ref)
    e_ref = np.where(grid_better, err[minima], e_ref)
    found = [(float(x), float(e)) for x, e in zip(s_ref, e_ref) if e < threshold]
    found.sort()
    merged = []
    for s_best, e_best in found:
        if merged and s_best - merged[-1][0] < stride:
            if e_best < merged[-1][1]:
                merged[-1] = (s_best, e_best)
            continue
        merged.append((s_best, e_best))
    return [_candidate(maps, s, e) for s, e in merged]


def gate_candidates(candidates, predicted_xy, gate_radius) -> list[MatchCandidate]:
    """Keep candidates whose map position lies within ``gate_radius`` of the prediction."""
    if not gate_radius > 0:
        raise ValueError("gate_radius must be positive")
    return [c for c in candidates if c.distance_to(predicted_xy) <= gate_radius]


def select_best(gated, predicted_xy=None) -> MatchCandidate | None:
    """Lowest-error candidate; near-ties go to the one closest to ``predicted_xy``."""
    if not gated:
        return None
    best_error = min(c.error for c in gated)
    tied = [c for c in gated if c.error - best_error < TIE_TOLERANCE]
    if len(tied) == 1 or predicted_xy is None:
        return min(tied, key=lambda c: c.error)
    return min(tied, key=lambda c: (c.distance_to(predicted_xy), c.error))


def _slope(m: ScalarArcMap, s, step=0.05):
    lo = np.clip(s - step, m.s_min, m.s_max)
    hi = np.clip(s + step, m.s_min, m.s_max)
    return (eval_map(m, hi) - eval_map(m, lo)) / (hi - lo)


def along_track_sigma(batch: MagBatch, maps, s_end, sigma=0.1) -> float:
    """Gauss-Newton standard deviation of ``s_end`` for one batch.

    The per-sample noise is taken as the larger of ``sigma`` and the RMS
    residual at ``s_end``, so a poor fit widens the estimate. A flat field
    window gives a large value.
    """
    m = _magnitude_map(maps)
    s = s_end - batch.ds * np.arange(batch.n - 1, -1, -1, dtype=float)
    s = np.clip(s, m.s_min, m.s_max)
    noise = max(sigma, match_error(batch, m, s_end) / math.sqrt(batch.n))
    info = float(np.sum(_slope(m, s) ** 2))
    return math.inf if info <= 0 else noise / math.sqrt(info)


def track_tangent(maps: RouteMaps, s) -> np.ndarray:
    """Unit direction of travel on the mapped route at ``s``."""
    t = np.array([_slope(maps.x, np.array([s]))[0], _slope(maps.y, np.array([s]))[0]])
    n = np.hypot(*t)
    return t / n if n > 0 else np.array([1.0, 0.0])


@dataclass(frozen=True)
class MatchResult:
    best: MatchCandidate | None
    candidates: list[MatchCandidate]
    gated: list[MatchCandidate]
    ds_scale: float = 1.0  # spacing multiplier of the best candidate


def _gated_window(maps: RouteMaps, predicted_xy, gate_radius, stride):
    """Arc-length range whose map positions fall inside the gate, or None."""
    grid = np.arange(maps.s_min, maps.s_max + 0.5 * stride, stride)
    grid = grid[grid <= maps.s_max]
    d = np.hypot(*(maps.position(grid) - np.asarray(predicted_xy)[None, :]).T)
    inside = np.flatnonzero(d <= gate_radius)
    if inside.size == 0:
        return None
    return grid[inside[0]] - stride, grid[inside[-1]] + stride


def match_batch(batch, maps: RouteMaps, predicted_xy, gate_radius, stride=DEFAULT_STRIDE,
                threshold=None, ds_scales=(1.0,)) -> MatchResult:
    """Scan, gate and select for one batch.

    The nominal spacing ``batch.ds`` is scanned over the whole map. Any other
    entries of ``ds_scales`` rescale the spacing to hedge against speed
    error; those hypotheses are scanned only over the gated part of the map,
    since candidates outside the gate would be discarded anyway.
    """
    candidates = scan_candidates(batch, maps, stride, threshold)
    scale_of = {id(c): 1.0 for c in candidates}
    extra = [f for f in ds_scales if f != 1.0]
    if extra:
        window = _gated_window(maps, predicted_xy, gate_radius, stride)
        for f in extra if window is not None else ():
            alt = MagBatch(batch.values, batch.ds * f, batch.t_end)
            lo = window[0] + min(0.0, alt.length - batch.length)
            for c in scan_candidates(alt, maps, stride, threshold, (lo, window[1])):
                scale_of[id(c)] = f
                candidates.append(c)
    gated = gate_candidates(candidates, predicted_xy, gate_radius)
    best = select_best(gated, predicted_xy)
    return MatchResult(best, candidates, gated, scale_of[id(best)] if best is not None else 1.0)
