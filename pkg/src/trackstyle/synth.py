"""Deterministic synthetic league with known identities, roles, and styles.

Players hover around formation-slot homes with personal offsets,
mean-reverting jitter, and stylistic sprints (preferred heading, speed,
rate). Teams drift as a block, halves alternate attacking direction, and a
configurable set of players swaps formation slots between phases, planting
true multi-role identities. Output is exactly the tracking/events/roster
text the ingestion stage reads, plus a ground-truth label table.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .config import LeagueConfig, PitchConfig, substream
from .errors import ConfigError
from .ingest import rotate_half

SAMPLE_DT = 0.1

# Ten-slot reference formation on a 105 x 68 pitch, attack toward +x.
TEN_SLOTS = np.array([
    [24.0, 12.0], [21.0, 27.0], [21.0, 41.0], [24.0, 56.0],   # back line
    [47.0, 10.0], [44.0, 25.0], [44.0, 43.0], [47.0, 58.0],   # midfield
    [67.0, 26.0], [67.0, 42.0],                                # forwards
])

# Demo geo calibration used when emitting lat/lon tracking.
DEMO_CORNERS = [
    [127.1000, 36.5000],
    [127.1011, 36.5002],
    [127.1009, 36.5011],
    [127.0998, 36.5009],
]


def formation_slots(n: int, pitch: PitchConfig) -> np.ndarray:
    """Slot home positions for n outfield players, attack toward +x."""
    if n == 10:
        return TEN_SLOTS * [pitch.length / 105.0, pitch.width / 68.0]
    cols = int(np.ceil(n / 4))
    xs = np.linspace(0.2 * pitch.length, 0.65 * pitch.length, cols)
    out = []
    for i in range(n):
        row, col = i % 4, i // 4
        y = pitch.width * (0.15 + 0.7 * row / 3)
        out.append([xs[col], y])
    return np.array(out)


@dataclass
class PlayerStyle:
    player_id: str
    team: str
    slot: int                    # primary formation slot
    partner_slot: int | None     # second slot of a multi-role player
    home_offset: np.ndarray      # personal anchor offset, attack frame (m)
    jitter_sigma: np.ndarray     # anisotropic wander std (m)
    sprint_rate: float           # sprints per second
    sprint_speed: float          # mean peak speed (m/s)
    sprint_speed_std: float
    sprint_duration: tuple[float, float]
    heading_mu: float            # preferred sprint heading, attack frame
    heading_kappa: float


@dataclass
class LeaguePlan:
    """Everything deterministic about the league except the motion noise."""

    config: LeagueConfig
    pitch: PitchConfig
    seed: int
    teams: list[str]
    players: dict[str, PlayerStyle]
    rosters: dict[str, list[str]]
    matches: list[tuple[str, str, str]]          # (match_id, home, away)
    phase_bounds: list[tuple[float, float, int]]  # (t0, t1, half) per phase of any match
    # (match_id, phase_index, player_id) -> slot actually occupied
    slot_schedule: dict[tuple[str, int, str], int]


@dataclass
class League:
    plan: LeaguePlan
    tracking: pd.DataFrame
    events: pd.DataFrame
    roster: pd.DataFrame
    truth: pd.DataFrame


def _phase_bounds(cfg: LeagueConfig) -> list[tuple[float, float, int]]:
    half = cfg.half_minutes * 60.0
    cuts = cfg.subs_per_half + 1
    bounds = []
    for h in range(2):
        edges = np.linspace(h * half, (h + 1) * half, cuts + 1)
        bounds.extend((float(a), float(b), h) for a, b in zip(edges[:-1], edges[1:]))
    return bounds


def _schedule(teams: list[str], matches_per_team: int) -> list[tuple[str, str]]:
    """Repeat circle-method round-robin rounds until everyone has played enough."""
    names = list(teams)
    if len(names) % 2:
        names.append("")  # bye marker
    n = len(names)
    counts = {t: 0 for t in teams}
    fixtures: list[tuple[str, str]] = []
    rotation = names[1:]
    while min(counts.values()) < matches_per_team:
        for _ in range(n - 1):
            order = [names[0], *rotation]
            for i in range(n // 2):
                a, b = order[i], order[n - 1 - i]
                if a and b:
                    fixtures.append((a, b))
                    counts[a] += 1
                    counts[b] += 1
            rotation = rotation[-1:] + rotation[:-1]
            if min(counts.values()) >= matches_per_team:
                break
    return fixtures


def plan_league(cfg: LeagueConfig, pitch: PitchConfig, seed: int) -> LeaguePlan:
    """Lay out teams, styles, fixtures, and the slot-swap schedule."""
    cfg.validate()
    pitch.validate()
    slots = formation_slots(cfg.players_per_team, pitch)
    teams = [f"T{i:02d}" for i in range(cfg.n_teams)]
    rosters = {t: [f"{t}-P{j:02d}" for j in range(cfg.players_per_team)] for t in teams}

    # Multi-role players come in same-team pairs that exchange two slots
    # far enough apart to count as genuinely different roles.
    pair_count = cfg.multi_role_players // 2
    swap_pairs: list[tuple[str, str]] = []
    pair_rng = substream(seed, "league", "swap-pairs")
    team_cycle = 0
    for _ in range(pair_count):
        team = teams[team_cycle % len(teams)]
        team_cycle += 1
        far = [(i, j) for i in range(len(slots)) for j in range(i + 1, len(slots))
               if np.linalg.norm(slots[i] - slots[j]) >= cfg.swap_slot_min_distance]
        if not far:
            raise ConfigError("no slot pair is far enough apart for multi-role players")
        i, j = far[int(pair_rng.integers(len(far)))]
        swap_pairs.append((rosters[team][i], rosters[team][j]))

    swap_partners: dict[str, tuple[str, int, int]] = {}
    for a, b in swap_pairs:
        slot_a = int(a.split("P")[1])
        slot_b = int(b.split("P")[1])
        swap_partners[a] = (b, slot_a, slot_b)
        swap_partners[b] = (a, slot_b, slot_a)

    players: dict[str, PlayerStyle] = {}
    for team in teams:
        for j, player_id in enumerate(rosters[team]):
            rng = substream(seed, "league", "style", player_id)
            partner_slot = swap_partners[player_id][2] if player_id in swap_partners else None
            players[player_id] = PlayerStyle(
                player_id=player_id,
                team=team,
                slot=j,
                partner_slot=partner_slot,
                home_offset=rng.normal(0.0, cfg.home_offset_std, 2),
                jitter_sigma=rng.uniform(0.7, 1.3, 2) * cfg.jitter_sigma,
                sprint_rate=rng.uniform(*cfg.sprint_rate_range),
                sprint_speed=rng.uniform(*cfg.sprint_speed_range),
                sprint_speed_std=cfg.sprint_speed_std,
                sprint_duration=cfg.sprint_duration_range,
                heading_mu=rng.uniform(-np.pi, np.pi),
                heading_kappa=rng.uniform(*cfg.heading_kappa_range),
            )

    fixtures = _schedule(teams, cfg.matches_per_team)
    matches = [(f"M{k:03d}", home, away) for k, (home, away) in enumerate(fixtures)]
    bounds = _phase_bounds(cfg)

    slot_schedule: dict[tuple[str, int, str], int] = {}
    for match_id, home, away in matches:
        for team in (home, away):
            swapped_players = [p for p in rosters[team] if p in swap_partners]
            for k in range(len(bounds)):
                swap_now: dict[str, int] = {}
                for p in swapped_players:
                    partner, own_slot, partner_slot = swap_partners[p]
                    flip_rng = substream(seed, "league", "swap", match_id, k,
                                         min(p, partner))
                    flipped = bool(flip_rng.random() < 0.5)
                    swap_now[p] = partner_slot if flipped else own_slot
                for p in rosters[team]:
                    slot_schedule[(match_id, k, p)] = swap_now.get(p, players[p].slot)
    return LeaguePlan(cfg, pitch, seed, teams, players, rosters, matches,
                      bounds, slot_schedule)


def ground_truth(plan: LeaguePlan) -> pd.DataFrame:
    """Oracle labels: one row per (phase, player) with slot and role cluster.

    A player's cluster is 0 in its primary slot and 1 in its partner slot,
    so single-role players form one cluster and planted multi-role players
    two.
    """
    rows = []
    for match_id, home, away in plan.matches:
        for k in range(len(plan.phase_bounds)):
            phase_id = f"{match_id}-p{k:02d}"
            for team in (home, away):
                for player_id in plan.rosters[team]:
                    slot = plan.slot_schedule[(match_id, k, player_id)]
                    style = plan.players[player_id]
                    cluster = 0 if slot == style.slot else 1
                    rows.append((match_id, phase_id, player_id, slot, cluster))
    return pd.DataFrame(rows, columns=["match_id", "phase_id", "player_id",
                                       "slot", "cluster"])


VELOCITY_THETA = 0.8       # 1/s; wander-velocity mean reversion
RETURN_SPEED = 2.8         # m/s; sub-threshold jog back after a sprint


def _smooth_wander(n_steps: int, pos_std: float | np.ndarray, reversion: float,
                   shape: tuple[int, ...], rng: np.random.Generator,
                   drive: np.ndarray | None = None) -> np.ndarray:
    """Bounded wander with continuous velocity.

    The velocity is an OU process (so paths are smooth at 10 Hz) and the
    position integrates it with a spring back to the anchor; `pos_std` is
    the stationary positional spread. `drive` adds velocity bursts.
    """
    pos_std = np.asarray(pos_std, dtype=float)
    vel_std = pos_std * np.sqrt(reversion * (reversion + VELOCITY_THETA))
    kick = vel_std * np.sqrt(2.0 * VELOCITY_THETA * SAMPLE_DT)
    xi = rng.standard_normal((n_steps, *shape))
    path = np.empty((n_steps, *shape))
    vel = np.zeros(shape)
    pos = np.zeros(shape)
    for t in range(n_steps):
        vel = vel + VELOCITY_THETA * (-vel) * SAMPLE_DT + kick * xi[t]
        total = vel if drive is None else vel + drive[t]
        pos = pos + (total - reversion * pos) * SAMPLE_DT
        path[t] = pos
    return path


def _sprint_drive(style: PlayerStyle, n_steps: int, attack_sign: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Out-and-back velocity bursts at Poisson times along a preferred heading.

    The outbound leg runs at the player's sprint speed; the return leg jogs
    back below the direction-map speed threshold, so the heatmap signal
    carries the preferred heading rather than its mirror.
    """
    drive = np.zeros((n_steps, 2))
    t = 0.0
    horizon = n_steps * SAMPLE_DT
    while True:
        t += rng.exponential(1.0 / style.sprint_rate)
        duration = rng.uniform(*style.sprint_duration)
        speed = max(0.0, min(12.0, rng.normal(style.sprint_speed, style.sprint_speed_std)))
        back = speed * duration / RETURN_SPEED
        if t + duration + back >= horizon:
            break
        heading = rng.vonmises(style.heading_mu, style.heading_kappa)
        vec = np.array([np.cos(heading), np.sin(heading)]) * attack_sign
        a = int(t / SAMPLE_DT)
        b = int((t + duration) / SAMPLE_DT)
        c = min(n_steps, int((t + duration + back) / SAMPLE_DT))
        drive[a:b] += speed * vec
        drive[b:c] += -RETURN_SPEED * vec
        t += duration + back
    return drive


def simulate(plan: LeaguePlan) -> League:
    """Run the motion model and assemble the output tables."""
    cfg, pitch, seed = plan.config, plan.pitch, plan.seed
    slots = formation_slots(cfg.players_per_team, pitch)
    margin = 4.0  # keep samples inside the ingest bounds margin

    tracking_frames = []
    event_rows = []
    roster_rows = []
    for match_id, home, away in plan.matches:
        # home attacks +x in the first half, away in the second
        plus_x = {0: home, 1: away}
        half = cfg.half_minutes * 60.0
        event_rows.append((match_id, "half_start", 0.0, home))
        event_rows.append((match_id, "half_end", half, home))
        event_rows.append((match_id, "half_start", half, away))
        event_rows.append((match_id, "half_end", 2 * half, away))
        for t0, _, _ in plan.phase_bounds:
            if min(abs(t0 - 0.0), abs(t0 - half)) > 1e-9:  # interior phase cut
                event_rows.append((match_id, "substitution", t0, home))
        for team in (home, away):
            for player_id in plan.rosters[team]:
                roster_rows.append((match_id, team, player_id))

        for team in (home, away):
            roster = plan.rosters[team]
            for k, (t0, t1, h) in enumerate(plan.phase_bounds):
                attacks_plus_x = plus_x[h] == team
                n_steps = int(round((t1 - t0) / SAMPLE_DT))
                times = np.round(t0 + np.arange(n_steps) * SAMPLE_DT, 1)

                crng = substream(seed, "sim", match_id, k, team, "centroid")
                centroid = _ou_path(n_steps, cfg.centroid_theta,
                                    np.full(2, cfg.centroid_sigma), (2,), crng)

                homes = np.empty((len(roster), 2))
                jitter = np.empty((n_steps, len(roster), 2))
                for i, player_id in enumerate(roster):
                    style = plan.players[player_id]
                    slot = plan.slot_schedule[(match_id, k, player_id)]
                    anchor = slots[slot] + style.home_offset
                    if not attacks_plus_x:
                        anchor = rotate_half(anchor, pitch.length, pitch.width)
                    homes[i] = anchor
                    prng = substream(seed, "sim", match_id, k, player_id)
                    attack_sign = 1.0 if attacks_plus_x else -1.0
                    drive = _sprint_drive(style, n_steps, attack_sign, prng)
                    jitter[:, i, :] = _ou_path(n_steps, cfg.jitter_theta,
                                               style.jitter_sigma, (2,), prng,
                                               drive=drive)

                pos = homes[None, :, :] + centroid[:, None, :] + jitter
                pos[..., 0] = np.clip(pos[..., 0], -margin, pitch.length + margin)
                pos[..., 1] = np.clip(pos[..., 1], -margin, pitch.width + margin)

                vel = np.empty_like(pos)
                vel[1:-1] = (pos[2:] - pos[:-2]) / (2 * SAMPLE_DT)
                vel[0] = (pos[1] - pos[0]) / SAMPLE_DT
                vel[-1] = (pos[-1] - pos[-2]) / SAMPLE_DT
                speed = np.hypot(vel[..., 0], vel[..., 1])

                for i, player_id in enumerate(roster):
                    tracking_frames.append(pd.DataFrame({
                        "match_id": match_id, "player_id": player_id, "t": times,
                        "x": pos[:, i, 0], "y": pos[:, i, 1], "speed": speed[:, i],
                    }))

    tracking = pd.concat(tracking_frames, ignore_index=True)
    tracking = tracking.sort_values(["match_id", "player_id", "t"],
                                    kind="stable").reset_index(drop=True)
    events = pd.DataFrame(sorted(set(event_rows)),
                          columns=["match_id", "event_type", "t", "team"])
    events = events.sort_values(["match_id", "t", "event_type"],
                                kind="stable").reset_index(drop=True)
    roster = pd.DataFrame(roster_rows, columns=["match_id", "team", "player_id"])
    return League(plan, tracking, events, roster, ground_truth(plan))


def generate_league(cfg: LeagueConfig, pitch: PitchConfig, seed: int) -> League:
    return simulate(plan_league(cfg, pitch, seed))


def write_league(league: League, outdir: str | Path) -> dict[str, Path]:
    """Emit the ingest-compatible text files plus the ground-truth table."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "tracking": outdir / "tracking.csv",
        "events": outdir / "events.csv",
        "roster": outdir / "roster.csv",
        "truth": outdir / "truth.csv",
    }
    tracking = league.tracking
    if league.plan.config.emit_geo:
        from .ingest import PitchCalibration, unproject

        cal = PitchCalibration(np.array(DEMO_CORNERS), league.plan.pitch.length,
                               league.plan.pitch.width)
        lonlat = unproject(tracking[["x", "y"]].to_numpy(), cal)
        tracking = tracking.assign(lat=lonlat[:, 1], lon=lonlat[:, 0])
        tracking = tracking[["match_id", "player_id", "t", "lat", "lon", "speed"]]
        _atomic_csv(tracking, paths["tracking"], float_format="%.9f")
    else:
        _atomic_csv(tracking, paths["tracking"], float_format="%.3f")
    _atomic_csv(league.events, paths["events"], float_format="%.1f")
    _atomic_csv(league.roster, paths["roster"])
    _atomic_csv(league.truth, paths["truth"])
    return paths


def _atomic_csv(df: pd.DataFrame, path: Path, float_format: str | None = None) -> None:
    tmp = path.with_name(path.name + ".tmp")
    df.to_csv(tmp, index=False, float_format=float_format)
    tmp.replace(path)
