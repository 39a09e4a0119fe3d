import itertools

import numpy as np
import pytest

from trackstyle.config import substream
from trackstyle.errors import DataError
from trackstyle.roles import (
    PhaseRole,
    cluster_player,
    fit_roles,
    hungarian,
    kmeans,
    label_entities,
    modal_role,
    silhouette,
)


def brute_force_assignment(cost):
    """Exhaustive minimum over all permutations; the independent oracle."""
    n = len(cost)
    best_cost, best_perm = np.inf, None
    for perm in itertools.permutations(range(n)):
        total = sum(cost[i, p] for i, p in enumerate(perm))
        if total < best_cost - 1e-12:
            best_cost, best_perm = total, perm
    return best_cost, best_perm


class TestHungarian:
    def test_two_by_two(self):
        perm = hungarian(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert perm.tolist() == [0, 1]

    def test_diagonal_dominant_matrix_returns_planted_permutation(self):
        rng = np.random.default_rng(0)
        planted = rng.permutation(5)
        cost = rng.uniform(5, 10, size=(5, 5))
        cost[np.arange(5), planted] = rng.uniform(0, 1, size=5)
        assert (hungarian(cost) == planted).all()

    def test_matches_brute_force_on_random_matrices(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = rng.integers(2, 7)
            cost = rng.uniform(0, 10, size=(n, n))
            perm = hungarian(cost)
            assert sorted(perm.tolist()) == list(range(n))
            best_cost, _ = brute_force_assignment(cost)
            assert cost[np.arange(n), perm].sum() == pytest.approx(best_cost, abs=1e-9)

    def test_ties_resolve_to_lexicographically_smallest_optimum(self):
        # every assignment costs 2: identity is the smallest permutation
        cost = np.ones((3, 3)) * 2 / 3
        assert hungarian(cost).tolist() == [0, 1, 2]
        # two optimal solutions: [0,1] and [1,0] both cost 4 -> pick [0,1]
        cost = np.array([[2.0, 2.0], [2.0, 2.0]])
        assert hungarian(cost).tolist() == [0, 1]

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            hungarian(np.ones((2, 3)))
        with pytest.raises(ValueError):
            hungarian(np.array([[1.0, np.inf], [1.0, 1.0]]))


class TestModalRole:
    def test_mode(self):
        assert modal_role([2, 2, 1, 2]) == 2

    def test_tie_breaks_to_smallest_index(self):
        assert modal_role([1, 1, 2, 2]) == 1

    def test_single_frame(self):
        assert modal_role([7]) == 7

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            modal_role([])


def planted_phase(means, sigma, n_frames, rng):
    """Players wander independently around their own planted mean."""
    k = len(means)
    return np.asarray(means)[None, :, :] + rng.normal(0, sigma, size=(n_frames, k, 2))


def grid_means(k, spacing=15.0):
    cols = int(np.ceil(np.sqrt(k)))
    return np.array([(10 + spacing * (i % cols), 10 + spacing * (i // cols))
                     for i in range(k)], dtype=float)


class TestFitRoles:
    def test_planted_model_recovery(self):
        rng = np.random.default_rng(0)
        means = grid_means(8)
        pos = planted_phase(means, sigma=1.5, n_frames=400, rng=rng)
        fit = fit_roles(pos, [f"p{i}" for i in range(8)])
        assert fit.converged
        # assignments constant across frames and roles recover planted means
        assert (fit.assignments == fit.assignments[0]).all()
        recovered = fit.role_means[fit.modal_roles]
        assert np.abs(recovered - means).max() < 0.5

    def test_swapping_players_follow_location_not_identity(self):
        rng = np.random.default_rng(1)
        means = grid_means(8)
        first = planted_phase(means, 1.0, 300, rng)
        swapped = means.copy()
        swapped[[0, 1]] = swapped[[1, 0]]
        second = planted_phase(swapped, 1.0, 300, rng)
        fit = fit_roles(np.concatenate([first, second]), [f"p{i}" for i in range(8)])
        a, b = fit.assignments[:300], fit.assignments[300:]
        # players 0 and 1 exchange their modal roles between the two blocks
        assert modal_role(a[:, 0]) == modal_role(b[:, 1])
        assert modal_role(a[:, 1]) == modal_role(b[:, 0])
        assert modal_role(a[:, 0]) != modal_role(b[:, 0])

    def test_single_frame_at_initial_means_is_identity(self):
        means = grid_means(8)
        fit = fit_roles(means[None, :, :], [f"p{i}" for i in range(8)])
        assert fit.assignments.tolist() == [list(range(8))]

    def test_rejects_too_few_players(self):
        rng = np.random.default_rng(2)
        pos = planted_phase(grid_means(5), 1.0, 50, rng)
        with pytest.raises(DataError):
            fit_roles(pos, [f"p{i}" for i in range(5)])

    def test_assignment_is_bijection_every_frame(self):
        rng = np.random.default_rng(3)
        pos = planted_phase(grid_means(9), 3.0, 200, rng)
        fit = fit_roles(pos, [f"p{i}" for i in range(9)])
        for frame in fit.assignments:
            assert sorted(frame.tolist()) == list(range(9))

    def test_em_cost_is_monotone_nonincreasing(self):
        rng = np.random.default_rng(4)
        pos = planted_phase(grid_means(8), 4.0, 250, rng)  # sigma above the floor
        fit = fit_roles(pos, [f"p{i}" for i in range(8)])
        trace = np.array(fit.cost_trace)
        assert (np.diff(trace) <= 1e-6 * np.abs(trace[:-1])).all()

    def test_centroid_relative_variant_runs(self):
        rng = np.random.default_rng(5)
        pos = planted_phase(grid_means(8), 1.0, 100, rng)
        drift = rng.normal(0, 5, size=(100, 1, 2))
        fit = fit_roles(pos + drift, [f"p{i}" for i in range(8)], centroid_relative=True)
        assert (fit.assignments == fit.assignments[0]).all()


class TestSilhouette:
    def test_two_tight_far_pairs_score_high(self):
        pts = np.array([[0, 0], [0, 1], [100, 0], [100, 1.0]])
        labels = np.array([0, 0, 1, 1])
        # direct formula: a = 1, b = mean distance to the far pair
        d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        expected = np.mean([(d[i, 2:].mean() - 1) / max(1, d[i, 2:].mean()) for i in (0, 1)]
                           + [(d[i, :2].mean() - 1) / max(1, d[i, :2].mean()) for i in (2, 3)])
        score = silhouette(pts, labels)
        assert score == pytest.approx(expected, abs=1e-12)
        assert score > 0.9

    def test_identical_points_score_zero(self):
        pts = np.zeros((6, 2))
        assert silhouette(pts, np.array([0, 0, 0, 1, 1, 1])) == 0.0

    def test_planted_labels_beat_random_labels(self):
        rng = np.random.default_rng(0)
        pts = np.concatenate([rng.normal(0, 1, (20, 2)), rng.normal(20, 1, (20, 2))])
        planted = np.repeat([0, 1], 20)
        shuffled = rng.permutation(planted)
        assert silhouette(pts, planted) > silhouette(pts, shuffled)

    def test_singleton_cluster_contributes_zero(self):
        pts = np.array([[0, 0], [0, 1], [50, 0.0]])
        labels = np.array([0, 0, 1])
        d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        expected = np.mean([
            (d[0, 2] - d[0, 1]) / max(d[0, 2], d[0, 1]),
            (d[1, 2] - d[1, 0]) / max(d[1, 2], d[1, 0]),
            0.0,
        ])
        assert silhouette(pts, labels) == pytest.approx(expected)

    def test_requires_two_clusters(self):
        with pytest.raises(ValueError):
            silhouette(np.zeros((3, 2)), np.zeros(3, dtype=int))


class TestClusterPlayer:
    def test_two_planted_clusters_recovered(self):
        rng = np.random.default_rng(0)
        means = np.concatenate([
            np.array([20.0, 34.0]) + rng.normal(0, 1, (8, 2)),
            np.array([80.0, 34.0]) + rng.normal(0, 1, (7, 2)),
        ])
        labels = cluster_player(means, substream(0, "t"))
        assert len(np.unique(labels)) == 2
        assert len(set(labels[:8])) == 1 and len(set(labels[8:])) == 1
        assert labels[0] != labels[8]

    def test_unseparated_points_collapse_to_single_cluster(self):
        rng = np.random.default_rng(1)
        means = np.array([50.0, 30.0]) + rng.uniform(-2, 2, (15, 2))
        labels = cluster_player(means, substream(0, "t"))
        assert (labels == 0).all()

    def test_two_points_always_single_cluster(self):
        labels = cluster_player(np.array([[0.0, 0.0], [90.0, 60.0]]), substream(0, "t"))
        assert (labels == 0).all()

    def test_invariant_to_input_order(self):
        rng = np.random.default_rng(2)
        means = np.concatenate([
            np.array([25.0, 20.0]) + rng.normal(0, 1, (6, 2)),
            np.array([75.0, 50.0]) + rng.normal(0, 1, (6, 2)),
        ])
        perm = rng.permutation(len(means))
        base = cluster_player(means, substream(0, "t"))
        shuffled = cluster_player(means[perm], substream(0, "t"))
        assert (shuffled == base[perm]).all()

    def test_kmeans_finds_obvious_split(self):
        pts = np.array([[0, 0], [0.5, 0], [10, 10], [10.5, 10.0]])
        labels = kmeans(pts, 2, np.random.default_rng(0))
        assert labels[0] == labels[1] and labels[2] == labels[3] and labels[0] != labels[2]


class TestLabelEntities:
    def phase_roles(self, player, means):
        return [PhaseRole(player, f"ph{i:02d}", 0, tuple(m), 720.0)
                for i, m in enumerate(means)]

    def test_single_cluster_player_gets_one_entity(self):
        rng = np.random.default_rng(0)
        means = np.array([30.0, 30.0]) + rng.normal(0, 1, (12, 2))
        entities, assignment = label_entities(self.phase_roles("p1", means), seed=0)
        assert len(entities) == 1
        assert len(entities[0].phase_ids) == 12
        assert all(v == entities[0].entity_id for v in assignment.values())

    def test_two_cluster_player_partitions_phases(self):
        rng = np.random.default_rng(1)
        means = np.concatenate([
            np.array([20.0, 20.0]) + rng.normal(0, 1, (6, 2)),
            np.array([80.0, 50.0]) + rng.normal(0, 1, (6, 2)),
        ])
        entities, assignment = label_entities(self.phase_roles("p1", means), seed=0)
        assert len(entities) == 2
        covered = sorted(p for e in entities for p in e.phase_ids)
        assert covered == [f"ph{i:02d}" for i in range(12)]
        assert len(assignment) == 12

    def test_partition_property_across_players(self):
        rng = np.random.default_rng(2)
        roles = []
        for p in range(5):
            means = np.array([20.0 + 10 * p, 30.0]) + rng.normal(0, 1, (8, 2))
            roles.extend(self.phase_roles(f"p{p}", means))
        entities, assignment = label_entities(roles, seed=0)
        # every (player, phase) appears exactly once over all entities
        seen = [(e.player_id, ph) for e in entities for ph in e.phase_ids]
        assert len(seen) == len(set(seen)) == len(roles)
        assert len(entities) >= 5
