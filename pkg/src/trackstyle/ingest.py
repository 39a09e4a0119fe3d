"""Raw tracking ingestion: projection, rotation, velocities, phase segmentation.

Tracking rows arrive either as geo coordinates (lat/lon) plus a pitch-corner
calibration, or pre-projected pitch coordinates. Each team's samples are
normalized so the team always attacks toward +x, velocities come from
differentiating the (smoothed) positions, and matches are cut into phases at
half-time, substitution, and dismissal boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .config import IngestConfig, PitchConfig
from .errors import DataError, MalformedFileError

TRACKING_XY_COLUMNS = ["match_id", "player_id", "t", "x", "y", "speed"]
TRACKING_GEO_COLUMNS = ["match_id", "player_id", "t", "lat", "lon", "speed"]
EVENT_TYPES = {"half_start", "half_end", "substitution", "dismissal"}


# ---------------------------------------------------------------------------
# Pitch calibration (planar homography from the four corners)


@dataclass
class PitchCalibration:
    """Maps raw (lon, lat) coordinates onto the pitch frame.

    `corners` are the geo coordinates of the pitch corners ordered as
    (0, 0), (L, 0), (L, W), (0, W); they must form a convex quadrilateral.
    """

    corners: np.ndarray
    length: float
    width: float
    _h: np.ndarray = field(init=False, repr=False)
    _h_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=float).reshape(4, 2)
        if not (self.length > self.width > 0):
            raise ValueError("pitch length must exceed width, both positive")
        edges = np.roll(self.corners, -1, axis=0) - self.corners
        nxt = np.roll(edges, -1, axis=0)
        crosses = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
        if (crosses == 0).any() or len(set(np.sign(crosses))) != 1:
            raise ValueError("calibration corners must form a convex quadrilateral")
        targets = np.array([
            [0.0, 0.0], [self.length, 0.0], [self.length, self.width], [0.0, self.width],
        ])
        self._h = _homography(self.corners, targets)
        self._h_inv = np.linalg.inv(self._h)


def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 projective map taking the 4 source points onto the 4 targets.

    Source points are shifted and scaled to a unit box before solving; geo
    coordinates (large offset, tiny extent) would otherwise make the linear
    system badly conditioned.
    """
    center = src.mean(axis=0)
    scale = np.abs(src - center).max(axis=0)
    norm = np.array([
        [1.0 / scale[0], 0.0, -center[0] / scale[0]],
        [0.0, 1.0 / scale[1], -center[1] / scale[1]],
        [0.0, 0.0, 1.0],
    ])
    src_n = (src - center) / scale
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((u, v), (x, y)) in enumerate(zip(src_n, dst)):
        a[2 * i] = [u, v, 1, 0, 0, 0, -x * u, -x * v]
        b[2 * i] = x
        a[2 * i + 1] = [0, 0, 0, u, v, 1, -y * u, -y * v]
        b[2 * i + 1] = y
    h = np.append(np.linalg.solve(a, b), 1.0).reshape(3, 3)
    return h @ norm


def _apply_homography(h: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    ones = np.ones((len(pts), 1))
    mapped = np.hstack([pts, ones]) @ h.T
    return mapped[:, :2] / mapped[:, 2:3]


def project(points: np.ndarray, cal: PitchCalibration) -> np.ndarray:
    """Geo coordinates (lon, lat) -> pitch coordinates in meters."""
    return _apply_homography(cal._h, points)


def unproject(points: np.ndarray, cal: PitchCalibration) -> np.ndarray:
    """Pitch coordinates -> geo coordinates; inverse of :func:`project`."""
    return _apply_homography(cal._h_inv, points)


def within_margin(xy: np.ndarray, length: float, width: float, margin: float = 5.0) -> np.ndarray:
    """Boolean mask of positions within the pitch plus a jitter margin."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    return ((xy[:, 0] >= -margin) & (xy[:, 0] <= length + margin)
            & (xy[:, 1] >= -margin) & (xy[:, 1] <= width + margin))


def rotate_half(xy: np.ndarray, length: float, width: float) -> np.ndarray:
    """180-degree pitch rotation (x, y) -> (L - x, W - y); its own inverse."""
    xy = np.asarray(xy, dtype=float)
    return np.stack([length - xy[..., 0], width - xy[..., 1]], axis=-1)


# ---------------------------------------------------------------------------
# Velocities


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average with symmetric shrink at the ends.

    Shrinking the window symmetrically keeps linear signals exactly linear,
    so smoothing never biases velocities of straight-line motion.
    """
    values = np.asarray(values, dtype=float)
    n = len(values)
    if window <= 1 or n < 3:
        return values.copy()
    half = window // 2
    idx = np.arange(n)
    reach = np.minimum(half, np.minimum(idx, n - 1 - idx))
    csum = np.concatenate([[0.0], np.cumsum(values)])
    return (csum[idx + reach + 1] - csum[idx - reach]) / (2 * reach + 1)


def differentiate(
    t: np.ndarray,
    positions: np.ndarray,
    smooth_window: int = 5,
    max_gap: float = 0.5,
) -> np.ndarray:
    """Velocities from central differences of (optionally smoothed) positions.

    Interior samples use central differences over their actual timestamps;
    run endpoints use one-sided differences. Sampling gaps larger than
    `max_gap` seconds split the series into runs, and isolated samples get
    NaN velocities (undefined across the gap).
    """
    t = np.asarray(t, dtype=float)
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(t)
    if n != len(positions):
        raise ValueError("t and positions must have equal length")
    if n and (np.diff(t) <= 0).any():
        raise ValueError("timestamps must be strictly increasing")

    velocities = np.full((n, 2), np.nan)
    run_starts = np.concatenate([[0], np.flatnonzero(np.diff(t) > max_gap) + 1, [n]])
    for a, b in zip(run_starts[:-1], run_starts[1:]):
        m = b - a
        if m < 2:
            continue
        ts = t[a:b]
        smoothed = np.column_stack([
            moving_average(positions[a:b, 0], smooth_window),
            moving_average(positions[a:b, 1], smooth_window),
        ])
        v = np.empty((m, 2))
        if m > 2:
            v[1:-1] = (smoothed[2:] - smoothed[:-2]) / (ts[2:] - ts[:-2])[:, None]
        v[0] = (smoothed[1] - smoothed[0]) / (ts[1] - ts[0])
        v[-1] = (smoothed[-1] - smoothed[-2]) / (ts[-1] - ts[-2])
        velocities[a:b] = v
    return velocities


# ---------------------------------------------------------------------------
# Phase segmentation


@dataclass
class MatchEvents:
    """Half boundaries, phase-cutting events, and attacking directions."""

    match_id: str
    halves: list[tuple[float, float]]          # [(start, end)] per half, ordered
    cuts: list[float]                          # substitution/dismissal times
    plus_x_team: dict[int, str]                # half index -> team attacking +x

    def validate(self) -> None:
        if len(self.halves) != 2:
            raise MalformedFileError(f"match {self.match_id}: expected 2 halves, got {len(self.halves)}")
        (s1, e1), (s2, e2) = self.halves
        if not (s1 < e1 <= s2 < e2):
            raise MalformedFileError(f"match {self.match_id}: halves must be ordered and non-overlapping")
        for c in self.cuts:
            if not any(s < c < e for s, e in self.halves):
                raise MalformedFileError(
                    f"match {self.match_id}: event at t={c} is not strictly inside a half")

    def half_of(self, t: float) -> int:
        for i, (s, e) in enumerate(self.halves):
            if s <= t < e:
                return i
        return -1


def segment_phases(events: MatchEvents, min_phase: float = 600.0) -> list[tuple[float, float]]:
    """Cut playing time into phases, absorbing short ones within each half.

    Candidate intervals between consecutive boundaries that last
    `min_phase` seconds or less merge into their earlier same-half
    neighbor (the later one if they are first); a half shorter than
    `min_phase` stays a single phase because absorption never crosses
    the half-time boundary.
    """
    events.validate()
    phases: list[tuple[float, float]] = []
    for start, end in events.halves:
        cuts = sorted({c for c in events.cuts if start < c < end})
        bounds = [start, *cuts, end]
        intervals = list(zip(bounds[:-1], bounds[1:]))
        while len(intervals) > 1:
            short = next((i for i, (a, b) in enumerate(intervals) if b - a <= min_phase), None)
            if short is None:
                break
            if short > 0:
                a, _ = intervals[short - 1]
                _, b = intervals[short]
                intervals[short - 1:short + 1] = [(a, b)]
            else:
                a, _ = intervals[0]
                _, b = intervals[1]
                intervals[0:2] = [(a, b)]
        phases.extend(intervals)
    return phases


# ---------------------------------------------------------------------------
# File input


def read_tracking(path: str | Path) -> tuple[pd.DataFrame, str]:
    """Load a tracking file; returns the frame and its mode ('xy' or 'geo').

    The header names select the mode: x/y columns mean pre-projected pitch
    coordinates, lat/lon columns mean geo coordinates needing calibration.
    """
    try:
        df = pd.read_csv(path, dtype={"match_id": str, "player_id": str})
    except (pd.errors.ParserError, UnicodeDecodeError, ValueError) as exc:
        raise MalformedFileError(f"tracking file {path}: {exc}") from exc
    cols = list(df.columns)
    if cols == TRACKING_XY_COLUMNS:
        mode = "xy"
    elif cols == TRACKING_GEO_COLUMNS:
        mode = "geo"
    else:
        raise MalformedFileError(
            f"tracking file {path}: columns {cols} match neither {TRACKING_XY_COLUMNS} "
            f"nor {TRACKING_GEO_COLUMNS}")
    if df.isna().any().any():
        raise MalformedFileError(f"tracking file {path}: contains missing values")
    return df, mode


def read_events(path: str | Path) -> dict[str, MatchEvents]:
    try:
        df = pd.read_csv(path, dtype={"match_id": str, "team": str})
    except (pd.errors.ParserError, UnicodeDecodeError, ValueError) as exc:
        raise MalformedFileError(f"events file {path}: {exc}") from exc
    if list(df.columns) != ["match_id", "event_type", "t", "team"]:
        raise MalformedFileError(f"events file {path}: unexpected columns {list(df.columns)}")
    bad = set(df["event_type"]) - EVENT_TYPES
    if bad:
        raise MalformedFileError(f"events file {path}: unknown event types {sorted(bad)}")

    out: dict[str, MatchEvents] = {}
    for match_id, g in df.groupby("match_id", sort=True):
        starts = g[g.event_type == "half_start"].sort_values("t")
        ends = g[g.event_type == "half_end"].sort_values("t")
        if len(starts) != 2 or len(ends) != 2:
            raise MalformedFileError(
                f"events file {path}: match {match_id} needs exactly 2 half_start and 2 half_end rows")
        halves = list(zip(starts["t"].tolist(), ends["t"].tolist()))
        cuts = g[g.event_type.isin(["substitution", "dismissal"])]["t"].tolist()
        # The team column of each half_start row names the side attacking +x.
        plus_x = {i: str(team) for i, team in enumerate(starts["team"].tolist())}
        ev = MatchEvents(str(match_id), halves, cuts, plus_x)
        ev.validate()
        out[str(match_id)] = ev
    return out


def read_roster(path: str | Path) -> dict[str, dict[str, str]]:
    """match_id -> {player_id: team} for the measured outfield players."""
    try:
        df = pd.read_csv(path, dtype=str)
    except (pd.errors.ParserError, UnicodeDecodeError, ValueError) as exc:
        raise MalformedFileError(f"roster file {path}: {exc}") from exc
    if list(df.columns) != ["match_id", "team", "player_id"]:
        raise MalformedFileError(f"roster file {path}: unexpected columns {list(df.columns)}")
    out: dict[str, dict[str, str]] = {}
    for row in df.itertuples(index=False):
        out.setdefault(row.match_id, {})[row.player_id] = row.team
    return out


# ---------------------------------------------------------------------------
# Match -> phases


@dataclass
class PlayerTrack:
    """One player's series within a phase, attack-normalized."""

    player_id: str
    team: str
    t: np.ndarray
    positions: np.ndarray   # (n, 2) meters
    velocities: np.ndarray  # (n, 2) m/s, NaN where undefined


@dataclass
class TrackedPhase:
    phase_id: str
    match_id: str
    t0: float
    t1: float
    players: dict[str, PlayerTrack]


def split_match_into_phases(
    tracking: pd.DataFrame,
    events: MatchEvents,
    roster: dict[str, str],
    pitch: PitchConfig,
    cfg: IngestConfig,
    cal: PitchCalibration | None = None,
    mode: str = "xy",
) -> tuple[list[TrackedPhase], dict]:
    """Turn one match's tracking rows into attack-normalized phases.

    Returns the phases plus a tally of exclusions (out-of-margin samples,
    unrostered players). Samples beyond the pitch margin are treated as GPS
    glitches: they are dropped from the phase series (and tallied) so the
    downstream role models never see them.
    """
    if mode == "geo":
        if cal is None:
            raise DataError("geo-mode tracking requires a pitch calibration")
        xy = project(tracking[["lon", "lat"]].to_numpy(), cal)
    elif mode == "xy":
        xy = tracking[["x", "y"]].to_numpy(dtype=float)
    else:
        raise ValueError(f"unknown tracking mode {mode!r}")

    tally = {"out_of_margin": 0, "unrostered_players": 0, "gap_undefined_velocities": 0}
    ok = within_margin(xy, pitch.length, pitch.width, cfg.bounds_margin)
    tally["out_of_margin"] = int((~ok).sum())

    t_all = tracking["t"].to_numpy(dtype=float)
    players_all = tracking["player_id"].to_numpy()
    intervals = segment_phases(events, cfg.min_phase)

    phases = []
    for k, (t0, t1) in enumerate(intervals):
        half = events.half_of(t0)
        phase = TrackedPhase(f"{events.match_id}-p{k:02d}", events.match_id, t0, t1, {})
        in_phase = (t_all >= t0) & (t_all < t1) & ok
        for player_id in sorted(set(players_all[in_phase])):
            team = roster.get(player_id)
            if team is None:
                tally["unrostered_players"] += 1
                continue
            sel = in_phase & (players_all == player_id)
            t = t_all[sel]
            order = np.argsort(t, kind="stable")
            t = t[order]
            pos = xy[sel][order]
            if not (np.diff(t) > 0).all():
                raise MalformedFileError(
                    f"match {events.match_id}: duplicate timestamps for player {player_id}")
            if events.plus_x_team.get(half) != team:
                pos = rotate_half(pos, pitch.length, pitch.width)
            vel = differentiate(t, pos, cfg.smooth_window, cfg.max_gap)
            tally["gap_undefined_velocities"] += int(np.isnan(vel[:, 0]).sum())
            phase.players[player_id] = PlayerTrack(player_id, team, t, pos, vel)
        phases.append(phase)
    return phases, tally


# ---------------------------------------------------------------------------
# Phase file output


def write_phase_file(path: str | Path, phase: TrackedPhase) -> None:
    frames = []
    for player_id in sorted(phase.players):
        tr = phase.players[player_id]
        frames.append(pd.DataFrame({
            "phase_id": phase.phase_id, "player_id": player_id, "t": tr.t,
            "s_x": tr.positions[:, 0], "s_y": tr.positions[:, 1],
            "v_x": tr.velocities[:, 0], "v_y": tr.velocities[:, 1],
        }))
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["phase_id", "player_id", "t", "s_x", "s_y", "v_x", "v_y"])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    df.to_csv(tmp, index=False, float_format="%.4f")
    tmp.replace(path)


def read_phase_file(path: str | Path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype={"phase_id": str, "player_id": str})
    except (pd.errors.ParserError, UnicodeDecodeError, ValueError) as exc:
        raise MalformedFileError(f"phase file {path}: {exc}") from exc
    expected = ["phase_id", "player_id", "t", "s_x", "s_y", "v_x", "v_y"]
    if list(df.columns) != expected:
        raise MalformedFileError(f"phase file {path}: unexpected columns {list(df.columns)}")
    return df
