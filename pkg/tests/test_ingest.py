import numpy as np
import pandas as pd
import pytest

from trackstyle.config import IngestConfig, PitchConfig
from trackstyle.errors import MalformedFileError
from trackstyle.ingest import (
    MatchEvents,
    PitchCalibration,
    differentiate,
    moving_average,
    project,
    read_events,
    read_phase_file,
    read_roster,
    read_tracking,
    rotate_half,
    segment_phases,
    split_match_into_phases,
    unproject,
    within_margin,
    write_phase_file,
)

L, W = 105.0, 68.0


def skew_calibration():
    # A convex but non-rectangular quadrilateral in fake geo coordinates.
    corners = np.array([
        [127.100, 36.500],
        [127.1012, 36.5003],
        [127.1010, 36.5010],
        [127.0999, 36.5008],
    ])
    return PitchCalibration(corners, L, W)


class TestProjection:
    def test_corners_map_to_pitch_corners(self):
        cal = skew_calibration()
        targets = np.array([[0, 0], [L, 0], [L, W], [0, W]], dtype=float)
        out = project(cal.corners, cal)
        assert np.abs(out - targets).max() < 1e-6

    def test_geo_center_maps_to_pitch_center(self):
        cal = skew_calibration()
        # The projective image of the quad's diagonal intersection is the center.
        geo_center = unproject(np.array([[L / 2, W / 2]]), cal)
        out = project(geo_center, cal)
        assert np.abs(out - [L / 2, W / 2]).max() < 1e-9

    def test_quarter_point_round_trips(self):
        cal = skew_calibration()
        target = np.array([[0.25 * L, 0.25 * W]])
        geo = unproject(target, cal)
        assert np.abs(project(geo, cal) - target).max() < 1e-9

    def test_round_trip_error_below_a_millimeter_inside_pitch(self):
        cal = skew_calibration()
        rng = np.random.default_rng(0)
        xy = rng.uniform([0, 0], [L, W], size=(500, 2))
        back = project(unproject(xy, cal), cal)
        assert np.abs(back - xy).max() < 1e-3

    def test_rejects_non_convex_corners(self):
        corners = np.array([[0, 0], [1, 0], [0.2, 0.2], [0, 1.0]])
        with pytest.raises(ValueError):
            PitchCalibration(corners, L, W)

    def test_margin_mask(self):
        mask = within_margin(np.array([[-4, 10], [-6, 10], [50, 70], [50, 75.0]]), L, W, 5.0)
        assert mask.tolist() == [True, False, True, False]


class TestRotateHalf:
    def test_simple_rotation(self):
        assert rotate_half(np.array([10.0, 5.0]), L, W).tolist() == [95.0, 63.0]

    def test_center_is_fixed_point(self):
        assert rotate_half(np.array([L / 2, W / 2]), L, W).tolist() == [L / 2, W / 2]

    def test_involution(self):
        rng = np.random.default_rng(1)
        xy = rng.uniform(0, 60, size=(40, 2))
        assert np.abs(rotate_half(rotate_half(xy, L, W), L, W) - xy).max() < 1e-12

    def test_rotation_preserves_speed_multiset(self):
        rng = np.random.default_rng(2)
        t = np.arange(100) * 0.1
        pos = np.cumsum(rng.normal(0, 0.1, size=(100, 2)), axis=0) + [50, 30]
        v_raw = differentiate(t, pos, smooth_window=1)
        v_rot = differentiate(t, rotate_half(pos, L, W), smooth_window=1)
        assert np.allclose(np.sort(np.hypot(*v_raw.T)), np.sort(np.hypot(*v_rot.T)))


class TestDifferentiate:
    def test_central_difference_on_ramp(self):
        t = np.array([0.0, 0.1, 0.2])
        pos = np.array([[0.0, 0], [0.5, 0], [1.0, 0]])
        v = differentiate(t, pos, smooth_window=1)
        assert v[1, 0] == pytest.approx(5.0)

    def test_constant_position_gives_zero_velocity(self):
        t = np.arange(50) * 0.1
        pos = np.tile([30.0, 20.0], (50, 1))
        v = differentiate(t, pos)
        assert np.abs(v).max() == 0.0

    def test_linear_motion_is_exact_regardless_of_smoothing(self):
        t = np.arange(60) * 0.1
        pos = np.column_stack([2 * t, -t])
        for window in (1, 5, 9):
            v = differentiate(t, pos, smooth_window=window)
            assert np.abs(v - [2.0, -1.0]).max() < 1e-9

    def test_quadratic_truncation_bound(self):
        # central differences of a*t^2 err by at most 2*|a|*dt at interior points
        a, dt = 3.0, 0.1
        t = np.arange(80) * dt
        pos = np.column_stack([a * t**2, np.zeros_like(t)])
        v = differentiate(t, pos, smooth_window=1)
        err = np.abs(v[1:-1, 0] - 2 * a * t[1:-1])
        assert err.max() <= 2 * abs(a) * dt + 1e-9

    def test_gap_splits_into_runs_with_one_sided_edges(self):
        t = np.array([0.0, 0.1, 0.2, 1.0, 1.1, 1.2])
        pos = np.column_stack([np.array([0, 1, 2, 10, 11, 12.0]), np.zeros(6)])
        v = differentiate(t, pos, smooth_window=1, max_gap=0.5)
        assert np.isfinite(v).all()
        # one-sided at indices 2 and 3 (the gap edges): uses only same-run neighbors
        assert v[2, 0] == pytest.approx((2 - 1) / 0.1)
        assert v[3, 0] == pytest.approx((11 - 10) / 0.1)

    def test_isolated_sample_velocity_undefined(self):
        t = np.array([0.0, 2.0, 2.1, 2.2])
        pos = np.column_stack([np.arange(4.0), np.zeros(4)])
        v = differentiate(t, pos, smooth_window=1, max_gap=0.5)
        assert np.isnan(v[0]).all()
        assert np.isfinite(v[1:]).all()

    def test_moving_average_preserves_linear(self):
        x = np.linspace(0, 10, 21)
        assert np.abs(moving_average(x, 5) - x).max() < 1e-12


def make_events(match="m1", halves=((0.0, 2700.0), (2700.0, 5400.0)), cuts=(),
                plus_x=("A", "B")):
    return MatchEvents(match, list(halves), list(cuts), dict(enumerate(plus_x)))


class TestSegmentPhases:
    def test_substitution_cuts_second_half(self):
        phases = segment_phases(make_events(cuts=[3600.0]))
        assert phases == [(0.0, 2700.0), (2700.0, 3600.0), (3600.0, 5400.0)]

    def test_short_tail_absorbed_into_earlier_neighbor(self):
        phases = segment_phases(make_events(cuts=[5220.0]))  # 87:00, 3-min tail
        assert phases == [(0.0, 2700.0), (2700.0, 5400.0)]

    def test_no_events_yields_one_phase_per_half(self):
        assert segment_phases(make_events()) == [(0.0, 2700.0), (2700.0, 5400.0)]

    def test_short_leading_interval_absorbed_forward(self):
        phases = segment_phases(make_events(cuts=[120.0]))
        assert phases == [(0.0, 2700.0), (2700.0, 5400.0)]

    def test_half_shorter_than_minimum_stays_single_phase(self):
        ev = make_events(halves=((0.0, 480.0), (480.0, 3180.0)), cuts=[240.0])
        phases = segment_phases(ev)
        assert phases[0] == (0.0, 480.0)

    def test_output_covers_playing_time_disjointly(self):
        ev = make_events(cuts=[700.0, 1500.0, 2000.0, 3100.0, 4700.0])
        phases = segment_phases(ev)
        assert phases == sorted(phases)
        for (a1, b1), (a2, b2) in zip(phases[:-1], phases[1:]):
            assert b1 <= a2
        assert sum(b - a for a, b in phases) == pytest.approx(5400.0)
        assert all(b - a > 600.0 for a, b in phases)

    def test_event_outside_halves_rejected(self):
        with pytest.raises(MalformedFileError):
            segment_phases(make_events(cuts=[2700.0]))


def synthetic_match(tmp_path, second_half_team_b_near_origin=True):
    """Two players (one per team), constant small drift, full 90 minutes."""
    rows = []
    t = np.round(np.arange(0, 5400.0, 0.1), 1)
    for player, team, base in (("p1", "A", (20.0, 30.0)), ("p2", "B", (80.0, 40.0))):
        x = base[0] + 0.0001 * t
        y = np.full_like(t, base[1])
        rows.append(pd.DataFrame({
            "match_id": "m1", "player_id": player, "t": t, "x": x, "y": y,
            "speed": np.zeros_like(t),
        }))
    df = pd.concat(rows, ignore_index=True)
    events = pd.DataFrame({
        "match_id": ["m1"] * 4,
        "event_type": ["half_start", "half_end", "half_start", "half_end"],
        "t": [0.0, 2700.0, 2700.0, 5400.0],
        "team": ["A", "A", "B", "B"],  # B attacks +x after the break
    })
    roster = pd.DataFrame({
        "match_id": ["m1", "m1"], "team": ["A", "B"], "player_id": ["p1", "p2"],
    })
    tracking_path = tmp_path / "tracking.csv"
    df.to_csv(tracking_path, index=False)
    events_path = tmp_path / "events.csv"
    events.to_csv(events_path, index=False)
    roster_path = tmp_path / "roster.csv"
    roster.to_csv(roster_path, index=False)
    return tracking_path, events_path, roster_path


class TestMatchSplitting:
    def test_rotation_normalizes_attacking_direction(self, tmp_path):
        tracking_path, events_path, roster_path = synthetic_match(tmp_path)
        tracking, mode = read_tracking(tracking_path)
        events = read_events(events_path)["m1"]
        roster = read_roster(roster_path)["m1"]
        phases, tally = split_match_into_phases(
            tracking, events, roster, PitchConfig(), IngestConfig(), mode=mode)
        assert [p.phase_id for p in phases] == ["m1-p00", "m1-p01"]
        assert tally["out_of_margin"] == 0
        first, second = phases
        # team A attacked +x in H1: p1 unrotated in H1, rotated in H2
        assert first.players["p1"].positions[0, 0] == pytest.approx(20.0, abs=0.1)
        assert second.players["p1"].positions[0, 0] == pytest.approx(L - 20.27, abs=0.1)
        # team B attacks +x in H2: p2 rotated in H1 only
        assert first.players["p2"].positions[0, 0] == pytest.approx(L - 80.0, abs=0.1)
        assert second.players["p2"].positions[0, 0] == pytest.approx(80.27, abs=0.1)

    def test_phase_files_round_trip(self, tmp_path):
        tracking_path, events_path, roster_path = synthetic_match(tmp_path)
        tracking, mode = read_tracking(tracking_path)
        events = read_events(events_path)["m1"]
        roster = read_roster(roster_path)["m1"]
        phases, _ = split_match_into_phases(
            tracking, events, roster, PitchConfig(), IngestConfig(), mode=mode)
        path = tmp_path / "m1-p00.csv"
        write_phase_file(path, phases[0])
        df = read_phase_file(path)
        assert sorted(df["player_id"].unique()) == ["p1", "p2"]
        assert len(df) == 2 * len(phases[0].players["p1"].t)
        assert df["v_x"].abs().max() < 0.01

    def test_out_of_margin_samples_dropped_and_tallied(self, tmp_path):
        tracking_path, events_path, roster_path = synthetic_match(tmp_path)
        tracking, mode = read_tracking(tracking_path)
        tracking.loc[3, "x"] = -50.0  # a GPS glitch
        events = read_events(events_path)["m1"]
        roster = read_roster(roster_path)["m1"]
        phases, tally = split_match_into_phases(
            tracking, events, roster, PitchConfig(), IngestConfig(), mode=mode)
        assert tally["out_of_margin"] == 1
        n = len(phases[0].players["p1"].t)
        assert n == 27000 - 1

    def test_geo_mode_matches_xy_mode(self, tmp_path):
        tracking_path, events_path, roster_path = synthetic_match(tmp_path)
        tracking, _ = read_tracking(tracking_path)
        cal = skew_calibration()
        geo = tracking.copy()
        lonlat = unproject(tracking[["x", "y"]].to_numpy(), cal)
        geo = geo.rename(columns={"x": "lat", "y": "lon"})
        geo["lon"], geo["lat"] = lonlat[:, 0], lonlat[:, 1]
        events = read_events(events_path)["m1"]
        roster = read_roster(roster_path)["m1"]
        a, _ = split_match_into_phases(
            tracking, events, roster, PitchConfig(), IngestConfig(), mode="xy")
        b, _ = split_match_into_phases(
            geo, events, roster, PitchConfig(), IngestConfig(), cal=cal, mode="geo")
        for pa, pb in zip(a, b):
            assert np.abs(pa.players["p1"].positions - pb.players["p1"].positions).max() < 1e-6

    def test_malformed_tracking_rejected(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("match_id,player_id,t,x\nm1,p1,0.0,1.0\n")
        with pytest.raises(MalformedFileError):
            read_tracking(bad)

    def test_malformed_events_rejected(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("match_id,event_type,t,team\nm1,kickoff,0.0,A\n")
        with pytest.raises(MalformedFileError):
            read_events(bad)
