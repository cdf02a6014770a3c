"""
Race-line profiles: curvature and slope against arc length.

A profile stores one contiguous node sequence from s = 0 to its race length, closing
node included. `tile_laps` repeats it without duplicating the lap junction, so a lap
of L/ds intervals tiled n times has n·L/ds + 1 nodes.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .exceptions import ConfigurationError, TrackFormatError, TrackValidationError
from .yamlio import line_for, load_yaml

logger = logging.getLogger(__name__)

CSV_HEADER = ["s_m", "curvature_1pm", "slope_rad"]

MAX_ABS_CURVATURE = 1.0
MAX_ABS_SLOPE = np.pi / 4
MIN_ARC_RADIUS = 5.0


@dataclass(frozen=True)
class TrackNode:
    s: float
    rho: float
    theta: float


@dataclass(frozen=True, eq=False)
class TrackProfile:
    s: np.ndarray
    rho: np.ndarray
    theta: np.ndarray
    lap_length: float
    n_laps: int = 1
    name: str = ""

    def __post_init__(self):
        s = np.array(self.s, dtype=float)
        rho = np.array(self.rho, dtype=float)
        theta = np.array(self.theta, dtype=float)
        if not (s.ndim == rho.ndim == theta.ndim == 1) or not (len(s) == len(rho) == len(theta)):
            raise TrackValidationError("s, curvature and slope must be 1-D series of equal length")
        if len(s) < 2:
            raise TrackValidationError("a profile needs at least two nodes")
        if s[0] != 0.0:
            raise TrackValidationError(f"first node must be at s = 0, got {s[0]}")
        if np.any(np.diff(s) <= 0):
            bad = int(np.argmax(np.diff(s) <= 0)) + 1
            raise TrackValidationError(f"non-monotone arc length at node {bad} (s = {s[bad]})")
        if np.any(np.abs(rho) >= MAX_ABS_CURVATURE):
            raise TrackValidationError("curvature magnitude must stay below 1 1/m")
        if np.any(np.abs(theta) >= MAX_ABS_SLOPE):
            raise TrackValidationError("slope magnitude must stay below pi/4 rad")
        if self.lap_length <= 0:
            raise TrackValidationError("lap length must be positive")
        if int(self.n_laps) < 1:
            raise TrackValidationError("n_laps must be a positive integer")

        for arr in (s, rho, theta):
            arr.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "lap_length", float(self.lap_length))
        object.__setattr__(self, "n_laps", int(self.n_laps))

    @property
    def race_length(self) -> float:
        return self.lap_length * self.n_laps

    @property
    def n_nodes(self) -> int:
        return len(self.s)

    @property
    def nodes(self) -> tuple[TrackNode, ...]:
        return tuple(TrackNode(float(a), float(b), float(c)) for a, b, c in zip(self.s, self.rho, self.theta))

    @property
    def spacing(self) -> float:
        return float(self.s[1] - self.s[0])

    def is_uniform(self, rtol: float = 1e-9) -> bool:
        steps = np.diff(self.s)
        return bool(np.max(np.abs(steps - steps[0])) < rtol * steps[0])

    def lap_index(self) -> np.ndarray:
        """Lap number of every node; the closing node belongs to the last lap."""
        idx = np.floor(self.s / self.lap_length + 1e-9).astype(int)
        return np.clip(idx, 0, self.n_laps - 1)


def load_track(path: str | Path) -> TrackProfile:
    path = Path(path)
    try:
        handle = path.open("r", encoding="utf-8", newline="")
    except OSError as exc:
        raise ConfigurationError(f"cannot open track file: {exc.strerror or exc}", path=path) from exc

    rows: list[tuple[float, float, float]] = []
    header_seen = False
    with handle:
        for lineno, record in enumerate(csv.reader(handle), start=1):
            if not record or not "".join(record).strip():
                continue
            if record[0].lstrip().startswith("#"):
                continue
            cells = [c.strip() for c in record]
            if not header_seen:
                if cells != CSV_HEADER:
                    raise TrackFormatError(
                        f"expected header {','.join(CSV_HEADER)}, got {','.join(cells)}", path=path, line=lineno
                    )
                header_seen = True
                continue
            if len(cells) != 3:
                raise TrackFormatError(f"expected 3 columns, got {len(cells)}", path=path, line=lineno)
            try:
                rows.append(tuple(float(c) for c in cells))
            except ValueError:
                raise TrackFormatError(f"not a number in row: {','.join(cells)}", path=path, line=lineno) from None

    if not header_seen:
        raise TrackFormatError("missing header line", path=path)
    if len(rows) < 2:
        raise TrackFormatError("a track file needs at least two rows", path=path)

    data = np.array(rows)
    # Validation errors are re-raised as-is so the caller sees "non-monotone arc length"
    return TrackProfile(s=data[:, 0], rho=data[:, 1], theta=data[:, 2], lap_length=float(data[-1, 0]), name=path.stem)


def save_track(profile: TrackProfile, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for s, rho, theta in zip(profile.s, profile.rho, profile.theta):
            writer.writerow([repr(float(s)), repr(float(rho)), repr(float(theta))])


def resample(profile: TrackProfile, ds: float) -> TrackProfile:
    """Uniform grid of step ds over all laps, curvature and slope interpolated linearly.

    ds must divide the lap length (to 1e-9 relative); the last interval is never
    shortened, so every lap junction lands on a node. Raises ConfigurationError otherwise.
    """
    if ds <= 0:
        raise ConfigurationError(f"ds must be positive, got {ds}")
    if ds > profile.lap_length / 10:
        raise ConfigurationError(
            f"ds = {ds} m exceeds lap_length/10 = {profile.lap_length / 10:g} m"
        )
    intervals = profile.lap_length / ds
    if abs(intervals - round(intervals)) > 1e-9 * intervals:
        raise ConfigurationError(f"ds = {ds} m does not divide the lap length {profile.lap_length} m")

    n = int(round(intervals)) * profile.n_laps
    grid = np.arange(n + 1) * ds
    return TrackProfile(
        s=grid,
        rho=np.interp(grid, profile.s, profile.rho),
        theta=np.interp(grid, profile.s, profile.theta),
        lap_length=profile.lap_length,
        n_laps=profile.n_laps,
        name=profile.name,
    )


def tile_laps(profile: TrackProfile, n_laps: int) -> TrackProfile:
    if n_laps < 1:
        raise ConfigurationError(f"n_laps must be >= 1, got {n_laps}")
    if n_laps == 1:
        return profile

    period = profile.race_length
    closed = abs(profile.s[-1] - period) <= 1e-9 * period
    body = slice(0, -1) if closed else slice(None)

    def repeat(values: np.ndarray, offset: float) -> np.ndarray:
        parts = [values[body] + k * offset for k in range(n_laps)]
        if closed:
            parts.append(values[-1:] + (n_laps - 1) * offset)
        return np.concatenate(parts)

    return TrackProfile(
        s=repeat(profile.s, period),
        rho=repeat(profile.rho, 0.0),
        theta=repeat(profile.theta, 0.0),
        lap_length=profile.lap_length,
        n_laps=profile.n_laps * n_laps,
        name=profile.name,
    )


@dataclass(frozen=True)
class Segment:
    kind: str
    length: float
    radius: float | None = None
    direction: str = "left"
    slope: float = 0.0

    @property
    def curvature(self) -> float:
        if self.kind == "straight":
            return 0.0
        sign = 1.0 if self.direction == "left" else -1.0
        return sign / self.radius


def _check_segment(seg: Segment, index: int) -> None:
    if seg.kind not in ("straight", "arc"):
        raise ConfigurationError(f"segment {index}: kind must be 'straight' or 'arc', got {seg.kind!r}")
    if not seg.length > 0:
        raise ConfigurationError(f"segment {index}: zero-length segment")
    if seg.kind == "arc":
        if seg.radius is None or not seg.radius > MIN_ARC_RADIUS:
            raise ConfigurationError(f"segment {index}: arc radius must exceed {MIN_ARC_RADIUS} m")
        if seg.direction not in ("left", "right"):
            raise ConfigurationError(f"segment {index}: direction must be 'left' or 'right'")


def synth_track(segments: Iterable[Segment | dict], step: float = 1.0, name: str = "synthetic") -> TrackProfile:
    segs = [s if isinstance(s, Segment) else Segment(**s) for s in segments]
    if not segs:
        raise ConfigurationError("a synthetic track needs at least one segment")
    for i, seg in enumerate(segs):
        _check_segment(seg, i)
    if step <= 0:
        raise ConfigurationError("synthetic sampling step must be positive")

    bounds = np.concatenate([[0.0], np.cumsum([seg.length for seg in segs])])
    total = float(bounds[-1])
    n = int(np.floor(total / step + 1e-9))
    s = np.arange(n + 1) * step
    if total - s[-1] > 1e-9 * total:
        s = np.append(s, total)
    else:
        s[-1] = total

    # A node on a segment boundary takes the values of the segment that starts there
    idx = np.clip(np.searchsorted(bounds, s, side="right") - 1, 0, len(segs) - 1)
    curvature = np.array([seg.curvature for seg in segs])
    slope = np.array([seg.slope for seg in segs])
    logger.debug("synthesized track %s: %d segments, %.1f m", name, len(segs), total)
    return TrackProfile(s=s, rho=curvature[idx], theta=slope[idx], lap_length=total, name=name)


_SEGMENT_KEYS = {"kind", "length_m", "radius_m", "direction", "slope_rad"}


def load_synth_spec(path: str | Path) -> TrackProfile:
    """Build a synthetic track from a YAML segment table (`segments: [{kind, length_m, ...}]`)."""
    data, lines = load_yaml(path)
    if not isinstance(data, dict) or not isinstance(data.get("segments"), list):
        raise ConfigurationError("synthetic track spec needs a 'segments' list", path=path, line=line_for(lines, ()))

    segments = []
    for i, raw in enumerate(data["segments"]):
        where = line_for(lines, ("segments", i))
        if not isinstance(raw, dict):
            raise ConfigurationError(f"segment {i} must be a mapping", path=path, line=where)
        unknown = set(raw) - _SEGMENT_KEYS
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigurationError(
                f"unknown key {key!r} in segment {i}", path=path, line=line_for(lines, ("segments", i, key))
            )
        try:
            seg = Segment(
                kind=str(raw.get("kind", "")),
                length=float(raw.get("length_m", 0.0)),
                radius=float(raw["radius_m"]) if raw.get("radius_m") is not None else None,
                direction=str(raw.get("direction", "left")),
                slope=float(raw.get("slope_rad", 0.0)),
            )
            _check_segment(seg, i)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"segment {i}: {exc}", path=path, line=where) from exc
        except ConfigurationError as exc:
            raise ConfigurationError(exc.message, path=path, line=where) from exc
        segments.append(seg)

    step = float(data.get("step_m", 1.0))
    return synth_track(segments, step=step, name=str(data.get("name", Path(path).stem)))
