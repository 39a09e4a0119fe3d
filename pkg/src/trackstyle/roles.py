"""Role discovery and identity labeling.

Each (phase, team) gets a set of role distributions, one per measured player:
2-D Gaussians fitted by an EM-style loop whose E-step optimally matches
players to roles frame by frame. A player's phase is then summarized by its
most frequent role, and the per-player role means are clustered to decide
which phases count as the same identity.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .config import substream
from .errors import DataError

LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# Optimal assignment


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost bijection rows -> columns for a square cost matrix.

    Returns the column assigned to each row. Among cost-optimal assignments,
    the lexicographically smallest permutation is returned, so exact ties
    resolve deterministically.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix entries must be finite")

    n = cost.shape[0]
    rows, cols = linear_sum_assignment(cost)
    best_total = float(cost[rows, cols].sum())
    tol = 1e-9 * max(1.0, abs(best_total))

    # Fix rows in order, always choosing the smallest column that still
    # permits an optimal completion of the remaining subproblem.
    perm = np.empty(n, dtype=np.int64)
    free_cols = list(range(n))
    remaining = best_total
    for i in range(n):
        for j in free_cols:
            others = [c for c in free_cols if c != j]
            if others:
                sub = cost[np.ix_(range(i + 1, n), others)]
                r, c = linear_sum_assignment(sub)
                completion = float(sub[r, c].sum())
            else:
                completion = 0.0
            if cost[i, j] + completion <= remaining + tol:
                perm[i] = j
                free_cols.remove(j)
                remaining -= cost[i, j]
                break
        else:  # pragma: no cover - optimal completion always exists
            raise RuntimeError("assignment refinement failed to place a row")
    return perm


# ---------------------------------------------------------------------------
# Frame-wise role fitting


def _gauss2_logpdf(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log-density of a 2-D Gaussian at `points` (..., 2), closed form."""
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    det = a * c - b * b
    d = points - mean
    # inv(cov) = [[c, -b], [-b, a]] / det
    quad = (c * d[..., 0] ** 2 - 2.0 * b * d[..., 0] * d[..., 1] + a * d[..., 1] ** 2) / det
    return -0.5 * (quad + np.log(det)) - LOG_2PI


def _floor_covariance(cov: np.ndarray, floor: float) -> np.ndarray:
    """Raise the eigenvalues of a symmetric 2x2 matrix to at least `floor`."""
    cov = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(cov)
    return (v * np.maximum(w, floor)) @ v.T


@dataclass
class RoleFit:
    """Fitted role model for one (phase, team) plus per-frame assignments."""

    player_ids: list[str]
    role_means: np.ndarray      # (K, 2)
    role_covs: np.ndarray       # (K, 2, 2)
    assignments: np.ndarray     # (T, K) role index of each player per frame
    modal_roles: np.ndarray     # (K,) most frequent role per player
    cost_trace: list[float]     # summed assignment cost per iteration
    converged: bool


def modal_role(frame_roles: np.ndarray) -> int:
    """Most frequent role index; ties break toward the smallest index."""
    frame_roles = np.asarray(frame_roles, dtype=np.int64)
    if frame_roles.size == 0:
        raise ValueError("cannot take the modal role of an empty sequence")
    return int(np.bincount(frame_roles).argmax())


def fit_roles(
    positions: np.ndarray,
    player_ids: list[str],
    min_players: int = 8,
    max_iterations: int = 50,
    change_tolerance: float = 0.005,
    covariance_floor: float = 1.0,
    centroid_relative: bool = False,
) -> RoleFit:
    """Fit per-player role Gaussians to a phase by alternating assignment and refit.

    `positions` is (frames, players, 2) with every player measured at every
    frame. Roles initialize from each player's own position distribution;
    the E-step assigns players to roles per frame by minimum summed negative
    log-density, the M-step refits each role from its assigned points, and
    the loop stops once fewer than `change_tolerance` of frame-assignments
    change (or after `max_iterations`).
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 3 or positions.shape[2] != 2:
        raise ValueError(f"positions must be (frames, players, 2), got {positions.shape}")
    n_frames, n_players, _ = positions.shape
    if n_players < min_players:
        raise DataError(f"need at least {min_players} measured players, got {n_players}")
    if len(player_ids) != n_players:
        raise ValueError("player_ids length must match the positions array")
    if n_frames < 1:
        raise ValueError("need at least one frame")

    if centroid_relative:
        positions = positions - positions.mean(axis=1, keepdims=True)

    means = positions.mean(axis=0)                                    # (K, 2)
    covs = np.stack([
        _floor_covariance(np.cov(positions[:, k, :].T) if n_frames > 1
                          else np.zeros((2, 2)), covariance_floor)
        for k in range(n_players)
    ])

    assignments = np.tile(np.arange(n_players), (n_frames, 1))
    cost_trace: list[float] = []
    converged = False
    for _ in range(max_iterations):
        # E-step: cost[t, i, k] = -log p(position of player i at t | role k)
        cost = np.empty((n_frames, n_players, n_players))
        for k in range(n_players):
            cost[:, :, k] = -_gauss2_logpdf(positions, means[k], covs[k])
        new_assignments = np.empty_like(assignments)
        total_cost = 0.0
        for t in range(n_frames):
            rows, cols = linear_sum_assignment(cost[t])
            new_assignments[t] = cols
            total_cost += cost[t, rows, cols].sum()
        cost_trace.append(float(total_cost))

        changed = float((new_assignments != assignments).mean())
        assignments = new_assignments
        # M-step: refit each role from its assigned points.
        for k in range(n_players):
            pts = positions[assignments == k]
            means[k] = pts.mean(axis=0)
            centered = pts - means[k]
            covs[k] = _floor_covariance(centered.T @ centered / len(pts), covariance_floor)
        if changed < change_tolerance:
            converged = True
            break

    modal = np.array([modal_role(assignments[:, i]) for i in range(n_players)])
    return RoleFit(list(player_ids), means, covs, assignments, modal, cost_trace, converged)


# ---------------------------------------------------------------------------
# Player-wise clustering of role means


def silhouette(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette coefficient over all points (Euclidean distances).

    Points in singleton clusters contribute 0, as does the degenerate case
    where intra- and inter-cluster distances are both zero.
    """
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    unique = np.unique(labels)
    if len(unique) < 2:
        raise ValueError("silhouette requires at least two clusters")

    dists = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    scores = np.zeros(len(points))
    members = {c: np.flatnonzero(labels == c) for c in unique}
    for i in range(len(points)):
        own = members[labels[i]]
        if len(own) == 1:
            continue  # singleton contributes 0
        a = dists[i, own[own != i]].mean()
        b = min(dists[i, members[c]].mean() for c in unique if c != labels[i])
        denom = max(a, b)
        if denom > 0:
            scores[i] = (b - a) / denom
    return float(scores.mean())


def _kmeans_once(points: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """One k-means++ initialized Lloyd run; returns (labels, inertia)."""
    n = len(points)
    centers = np.empty((k, 2))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(-1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = points[rng.integers(n)]
        else:
            centers[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(-1))

    labels = np.full(n, -1)
    for _ in range(100):
        sq = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        new_labels = sq.argmin(axis=1)
        for j in range(k):  # revive empty clusters with the worst-fit point
            if not (new_labels == j).any():
                new_labels[sq[np.arange(n), new_labels].argmax()] = j
        if (new_labels == labels).all():
            break
        labels = new_labels
        for j in range(k):
            centers[j] = points[labels == j].mean(axis=0)
    inertia = float(((points - centers[labels]) ** 2).sum())
    return labels, inertia


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator, restarts: int = 10) -> np.ndarray:
    """Seeded k-means++ with restarts, keeping the lowest-inertia labeling."""
    points = np.asarray(points, dtype=float)
    best_labels, best_inertia = None, np.inf
    for _ in range(restarts):
        labels, inertia = _kmeans_once(points, k, rng)
        if inertia < best_inertia - 1e-12:
            best_labels, best_inertia = labels, inertia
    assert best_labels is not None
    return best_labels


def cluster_player(
    role_means: np.ndarray,
    rng: np.random.Generator,
    silhouette_threshold: float = 0.6,
    k_min: int = 2,
    k_max: int = 4,
    kmeans_restarts: int = 10,
) -> np.ndarray:
    """Cluster one player's per-phase role means into identity groups.

    Tries each cluster count in [k_min, k_max] (capped below the number of
    points) and keeps the count with the best silhouette; if no score reaches
    the threshold, or there are fewer than 3 points, everything is one
    cluster. Output labels are canonical: clusters are numbered by ascending
    mean location, and the result does not depend on input order.
    """
    role_means = np.asarray(role_means, dtype=float).reshape(-1, 2)
    n = len(role_means)
    if n < 3:
        return np.zeros(n, dtype=np.int64)

    # Canonical point order makes the seeded clustering order-invariant.
    order = np.lexsort((role_means[:, 1], role_means[:, 0]))
    pts = role_means[order]

    best_labels, best_score = None, -np.inf
    for k in range(k_min, k_max + 1):
        if k >= n:
            break
        labels = kmeans(pts, k, rng, restarts=kmeans_restarts)
        score = silhouette(pts, labels)
        if score > best_score + 1e-12:
            best_labels, best_score = labels, score

    if best_labels is None or best_score < silhouette_threshold:
        return np.zeros(n, dtype=np.int64)

    # Renumber clusters by ascending (mean x, mean y).
    centers = [(pts[best_labels == c].mean(axis=0), c) for c in np.unique(best_labels)]
    centers.sort(key=lambda mc: (mc[0][0], mc[0][1]))
    remap = {old: new for new, (_, old) in enumerate(centers)}
    canonical = np.array([remap[c] for c in best_labels], dtype=np.int64)

    out = np.empty(n, dtype=np.int64)
    out[order] = canonical
    return out


# ---------------------------------------------------------------------------
# Identity labeling


@dataclass
class PhaseRole:
    """One player's summary within one phase: its modal role and where it sat."""

    player_id: str
    phase_id: str
    role_index: int
    role_mean: tuple[float, float]
    duration: float


@dataclass
class RoleEntity:
    """Identity label: one player-and-role-cluster pair with its member phases."""

    entity_id: str
    player_id: str
    cluster: int
    phase_ids: list[str]


def label_entities(
    phase_roles: list[PhaseRole],
    seed: int,
    silhouette_threshold: float = 0.6,
    k_min: int = 2,
    k_max: int = 4,
    kmeans_restarts: int = 10,
) -> tuple[list[RoleEntity], dict[tuple[str, str], str]]:
    """Partition player-phase summaries into identities via per-player clustering.

    Returns the entities plus a (player_id, phase_id) -> entity_id map. Two
    phases of one player share an identity exactly when their role means fall
    in the same cluster.
    """
    by_player: dict[str, list[PhaseRole]] = defaultdict(list)
    for pr in phase_roles:
        by_player[pr.player_id].append(pr)

    entities: list[RoleEntity] = []
    assignment: dict[tuple[str, str], str] = {}
    for player_id in sorted(by_player):
        entries = sorted(by_player[player_id], key=lambda pr: pr.phase_id)
        means = np.array([pr.role_mean for pr in entries])
        rng = substream(seed, "cluster-player", player_id)
        labels = cluster_player(
            means, rng,
            silhouette_threshold=silhouette_threshold,
            k_min=k_min, k_max=k_max, kmeans_restarts=kmeans_restarts,
        )
        for cluster in np.unique(labels):
            entity_id = f"{player_id}.{cluster}"
            phase_ids = [entries[i].phase_id for i in np.flatnonzero(labels == cluster)]
            entities.append(RoleEntity(entity_id, player_id, int(cluster), phase_ids))
            for pid in phase_ids:
                assignment[(player_id, pid)] = entity_id
    return entities, assignment
