"""Global function maps of a scalar signal versus arc length.

A map is a chain of degree-3 Legendre fits, each over a window of two
segments of length ``h``. Consecutive windows overlap by one segment and are
blended there with a cubic partition-of-unity weight, giving one continuous
function over the whole route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import legendre

from .errors import DomainError, MapFormatError, OutOfMapRange, RankDeficient, TrackTooShort

DEGREE = 3
MAGIC = "MAGARC-MAP"
VERSION = "v1"
_RANGE_SLACK = 1e-9


def weight(s):
    """Blending weight, 1 at the window center and 0 at ``|s| == 1``.

    Accepts scalars or arrays in [-1, 1].
    """
    s = np.asarray(s, dtype=float)
    if np.any(np.abs(s) > 1.0) or np.any(np.isnan(s)):
        raise DomainError("weight argument must lie in [-1, 1]")
    w = np.where(s <= 0.0, 1.0 - s * s * (3.0 + 2.0 * s), 1.0 - s * s * (3.0 - 2.0 * s))
    return float(w) if w.ndim == 0 else w


@dataclass(frozen=True)
class LocalFit:
    s_start: float
    s_span: float
    coeffs: tuple[float, float, float, float]

    def __post_init__(self):
        if not self.s_span > 0:
            raise ValueError("s_span must be positive")
        if len(self.coeffs) != DEGREE + 1:
            raise ValueError(f"expected {DEGREE + 1} Legendre coefficients")

    def __call__(self, s):
        x = 2.0 * (np.asarray(s, dtype=float) - self.s_start) / self.s_span - 1.0
        return legendre.legval(x, self.coeffs)


def fit_local(s, values, s0, span) -> LocalFit:
    """Least-squares degree-3 Legendre fit of ``values(s)`` on ``[s0, s0 + span]``."""
    s = np.asarray(s, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.unique(s).size < DEGREE + 1:
        raise RankDeficient(
            f"window [{s0}, {s0 + span}] has fewer than {DEGREE + 1} distinct abscissae"
        )
    x = 2.0 * (s - s0) / span - 1.0
    vander = legendre.legvander(x, DEGREE)
    coeffs, *_ = np.linalg.lstsq(vander, values, rcond=None)
    return LocalFit(float(s0), float(span), tuple(float(c) for c in coeffs))


@dataclass(frozen=True)
class ScalarArcMap:
    """Blended chain of local fits; fit ``k`` covers ``[s_min + k h, s_min + (k + 2) h]``."""

    h: float
    s_min: float
    s_max: float
    fits: tuple[LocalFit, ...]
    value_label: str = "value"
    value_units: str = "-"
    _starts: np.ndarray = field(init=False, repr=False, compare=False)
    _coeffs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.fits:
            raise ValueError("a map needs at least one local fit")
        for a, b in zip(self.fits, self.fits[1:]):
            if not math.isclose(b.s_start - a.s_start, self.h, rel_tol=1e-9, abs_tol=1e-9):
                raise ValueError("consecutive fits must start exactly h apart")
        for label in (self.value_label, self.value_units):
            if not label or any(c.isspace() for c in label):
                raise ValueError("label and units must be non-empty and contain no whitespace")
        object.__setattr__(self, "_starts", np.array([f.s_start for f in self.fits]))
        object.__setattr__(self, "_coeffs", np.array([f.coeffs for f in self.fits]))

    def __eq__(self, other):
        if not isinstance(other, ScalarArcMap):
            return NotImplemented
        return (
            (self.h, self.s_min, self.s_max, self.value_label, self.value_units, self.fits)
            == (other.h, other.s_min, other.s_max, other.value_label, other.value_units, other.fits)
        )

    def __hash__(self):
        return hash((self.h, self.s_min, self.s_max, self.fits))

    @property
    def n_fits(self) -> int:
        return len(self.fits)

    def __call__(self, s):
        return eval_map(self, s)

    def _eval_fit(self, k, s):
        x = 2.0 * (s - self._starts[k]) / (2.0 * self.h) - 1.0
        c = self._coeffs[k]
        p2 = 1.5 * x * x - 0.5
        p3 = (2.5 * x * x - 1.5) * x
        return c[:, 0] + c[:, 1] * x + c[:, 2] * p2 + c[:, 3] * p3


def build_map(s, values, h=10.0, value_label="value", value_units="-") -> ScalarArcMap:
    """Fit overlapping local windows to ``(s, values)`` and chain them into a map."""
    s = np.asarray(s, dtype=float)
    values = np.asarray(values, dtype=float)
    if not h > 0:
        raise ValueError("segment length h must be positive")
    if s.shape != values.shape or s.ndim != 1 or s.size == 0:
        raise ValueError("s and values must be equal-length 1-D sequences")
    order = np.argsort(s, kind="stable")
    s, values = s[order], values[order]
    s_min, s_max = float(s[0]), float(s[-1])
    span = s_max - s_min
    if span < 2.0 * h * (1.0 - _RANGE_SLACK):
        raise TrackTooShort(f"track covers {span:.3f} m, need at least 2h = {2 * h:.3f} m")
    n_fits = max(1, math.ceil(span / h - _RANGE_SLACK) - 1)
    fits = []
    for k in range(n_fits):
        lo = s_min + k * h
        hi = lo + 2.0 * h
        i0 = np.searchsorted(s, lo, side="left")
        i1 = np.searchsorted(s, hi, side="right")
        fits.append(fit_local(s[i0:i1], values[i0:i1], lo, 2.0 * h))
    return ScalarArcMap(float(h), s_min, s_max, tuple(fits), value_label, value_units)


def _check_range(m: ScalarArcMap, s: np.ndarray):
    if s.size == 0:
        return
    tol = _RANGE_SLACK * max(1.0, abs(m.s_max))
    lo, hi = s.min(), s.max()
    # comparisons with NaN are false, so a NaN anywhere fails this test too
    if not (lo >= m.s_min - tol and hi <= m.s_max + tol):
        bad = s[~((s >= m.s_min - tol) & (s <= m.s_max + tol))]
        raise OutOfMapRange(
            f"s = {bad.flat[0]!r} outside map range [{m.s_min}, {m.s_max}]"
        )


def eval_map(m: ScalarArcMap, s):
    """Evaluate the blended map at scalar or array ``s``."""
    s_arr = np.asarray(s, dtype=float)
    flat = s_arr.reshape(-1)
    _check_range(m, flat)
    last = m.n_fits  # index of the final segment
    u = (flat - m.s_min) / m.h
    seg = np.minimum(np.maximum(np.floor(u), 0.0), float(last))
    t = np.minimum(np.maximum(u - seg, 0.0), 1.0)
    seg = seg.astype(np.int64)
    older = np.maximum(seg - 1, 0)
    newer = np.minimum(seg, m.n_fits - 1)
    f_old = m._eval_fit(older, flat)
    f_new = m._eval_fit(newer, flat)
    # weight(t) for the older fit, weight(t - 1) for the newer one
    w_old = 1.0 - t * t * (3.0 - 2.0 * t)
    blended = w_old * f_old + (1.0 - w_old) * f_new
    out = np.where(seg == 0, f_new, np.where(seg == last, f_old, blended))
    return float(out[0]) if s_arr.ndim == 0 else out.reshape(s_arr.shape)


def eval_map_batch(m: ScalarArcMap, s_start, spacing, n):
    """Evaluate at ``s_start + i * spacing`` for ``i = 0 .. n - 1``."""
    return eval_map(m, s_start + spacing * np.arange(int(n), dtype=float))


def save_map(m: ScalarArcMap, destination) -> None:
    lines = [
        f"{MAGIC} {VERSION} {m.value_label} {m.value_units} h={m.h!r} "
        f"s_min={m.s_min!r} s_max={m.s_max!r} fits={m.n_fits}"
    ]
    for f in m.fits:
        lines.append(" ".join(repr(v) for v in (f.s_start, *f.coeffs)))
    Path(destination).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_float(token, line, name):
    try:
        value = float(token)
    except ValueError:
        raise MapFormatError(f"not a number: {token!r}", line=line, field=name) from None
    if not math.isfinite(value):
        raise MapFormatError("value is not finite", line=line, field=name)
    return value


def load_map(source) -> ScalarArcMap:
    text = Path(source).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise MapFormatError("empty map file", line=1)
    head = lines[0].split()
    if len(head) < 2 or head[0] != MAGIC:
        raise MapFormatError(f"missing {MAGIC} magic header", line=1, field="magic")
    if head[1] != VERSION:
        raise MapFormatError(f"unsupported version {head[1]!r}", line=1, field="version")
    if len(head) != 8:
        raise MapFormatError("header must have 8 fields", line=1)
    label, units = head[2], head[3]
    meta = {}
    for token, key in zip(head[4:], ("h", "s_min", "s_max", "fits")):
        name, sep, value = token.partition("=")
        if name != key or not sep:
            raise MapFormatError(f"expected {key}=<value>", line=1, field=key)
        meta[key] = value
    h = _parse_float(meta["h"], 1, "h")
    s_min = _parse_float(meta["s_min"], 1, "s_min")
    s_max = _parse_float(meta["s_max"], 1, "s_max")
    try:
        n_fits = int(meta["fits"])
    except ValueError:
        raise MapFormatError("fit count is not an integer", line=1, field="fits") from None
    if h <= 0:
        raise MapFormatError("h must be positive", line=1, field="h")
    body = [(i, ln) for i, ln in enumerate(lines[1:], start=2) if ln.strip()]
    if len(body) != n_fits:
        raise MapFormatError(f"header declares {n_fits} fits, found {len(body)}", line=1, field="fits")
    fits = []
    for lineno, ln in body:
        tokens = ln.split()
        if len(tokens) != DEGREE + 2:
            raise MapFormatError(f"expected {DEGREE + 2} numbers per fit line", line=lineno)
        start = _parse_float(tokens[0], lineno, "s_start")
        coeffs = tuple(_parse_float(t, lineno, f"c{i}") for i, t in enumerate(tokens[1:]))
        fits.append(LocalFit(start, 2.0 * h, coeffs))
    try:
        return ScalarArcMap(h, s_min, s_max, tuple(fits), label, units)
    except ValueError as exc:
        raise MapFormatError(str(exc)) from exc


class RouteMaps:
    """The three maps of one survey: field magnitude, x and y versus arc length."""

    def __init__(self, magnitude: ScalarArcMap, x: ScalarArcMap, y: ScalarArcMap):
        self.magnitude = magnitude
        self.x = x
        self.y = y

    def __iter__(self):
        return iter((self.magnitude, self.x, self.y))

    @property
    def s_min(self):
        return max(m.s_min for m in self)

    @property
    def s_max(self):
        return min(m.s_max for m in self)

    def position(self, s) -> np.ndarray:
        return np.stack([eval_map(self.x, s), eval_map(self.y, s)], axis=-1)

    @classmethod
    def from_track(cls, s, magnitude, xy, h=10.0) -> "RouteMaps":
        xy = np.asarray(xy, dtype=float)
        return cls(
            build_map(s, magnitude, h, "magnitude", "uT"),
            build_map(s, xy[:, 0], h, "x", "m"),
            build_map(s, xy[:, 1], h, "y", "m"),
        )

    def save(self, directory, stem="map") -> list[Path]:
        directory = Path(directory)
        paths = [directory / f"{stem}_{m.value_label}.map" for m in self]
        for m, p in zip(self, paths):
            save_map(m, p)
        return paths

    @classmethod
    def load(cls, magnitude_path, x_path, y_path) -> "RouteMaps":
        return cls(load_map(magnitude_path), load_map(x_path), load_map(y_path))
