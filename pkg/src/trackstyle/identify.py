"""Player identification: Gaussian galleries scored by top-m log-likelihood.

Each anonymized entity's training embeddings get a (ridged) Gaussian fit;
a probe entity is scored against a gallery entity by the average of its m
highest log-likelihoods, by the plain average (m = M), the maximum (m = 1),
or by negative L1/L2 distance to the gallery centroid as baselines. Probes
are ranked per gallery entity and summarized as top-k accuracy and mean
reciprocal rank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .config import parse_condition, substream
from .errors import DataError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianModel:
    mean: np.ndarray
    covariance: np.ndarray
    chol: np.ndarray
    log_norm: float

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = solve_triangular(self.chol, (x - self.mean).T, lower=True)
        return self.log_norm - 0.5 * (z * z).sum(axis=0)


def fit_gaussian(embeddings: np.ndarray, ridge: float = 1e-3,
                 diagonal: bool = False) -> GaussianModel:
    """Sample mean and ridged sample covariance of one entity's embeddings.

    The ridge keeps the covariance positive definite even though unit-norm
    embeddings live on a sphere (their raw sample covariance is singular).
    Fewer than two vectors cannot define a covariance and are rejected.
    """
    x = np.asarray(embeddings, dtype=float)
    if x.ndim != 2 or len(x) < 2:
        raise DataError(f"need at least 2 embeddings to fit a Gaussian, got {x.shape}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (len(x) - 1)
    if diagonal:
        cov = np.diag(np.diag(cov))
    cov = cov + ridge * np.eye(x.shape[1])
    chol = np.linalg.cholesky(cov)
    log_norm = -0.5 * x.shape[1] * LOG_2PI - np.log(np.diag(chol)).sum()
    return GaussianModel(mean, cov, chol, float(log_norm))


def atl_sim(model: GaussianModel, test_embeddings: np.ndarray, m: int) -> float:
    """Average of the m largest log-likelihoods of the test vectors."""
    lls = model.log_density(test_embeddings)
    big_m = len(lls)
    if not (1 <= m <= big_m):
        raise ValueError(f"m must be in [1, {big_m}], got {m}")
    return float(np.partition(lls, big_m - m)[big_m - m:].mean())


def lp_similarity(train_embeddings: np.ndarray, test_embeddings: np.ndarray,
                  p: int, pairwise: bool = False) -> float:
    """Negative mean L^p distance between test vectors and the training set.

    Default aggregation measures each test vector against the training
    centroid; `pairwise` switches to the mean over all train/test pairs.
    """
    train = np.asarray(train_embeddings, dtype=float)
    test = np.asarray(test_embeddings, dtype=float)
    if train.size == 0 or test.size == 0:
        raise DataError("L^p similarity requires non-empty embedding sets")
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    if pairwise:
        diff = test[:, None, :] - train[None, :, :]
        dists = np.abs(diff).sum(-1) if p == 1 else np.sqrt((diff ** 2).sum(-1))
    else:
        diff = test - train.mean(axis=0)
        dists = np.abs(diff).sum(-1) if p == 1 else np.sqrt((diff ** 2).sum(-1))
    return float(-dists.mean())


# ---------------------------------------------------------------------------
# The identification task


@dataclass
class GalleryEntry:
    """One anonymized entity: its training embeddings and their Gaussian."""

    entity_id: str
    train_embeddings: np.ndarray
    gaussian: GaussianModel


@dataclass
class ProbeSet:
    """One test entity's augmented embeddings, tagged by source-phase triple."""

    entity_id: str
    vectors: np.ndarray                    # (M, 2d)
    phase_triples: list[tuple[str, ...]]

    def phases(self) -> list[str]:
        return sorted({ph for triple in self.phase_triples for ph in triple})


@dataclass
class ConditionResult:
    condition: str
    top_k: dict[int, float]
    mrr: float
    rankings: list[tuple[str, list[tuple[str, float]]]]  # probe -> ranked (candidate, score)


def build_gallery(train_embeddings: dict[str, np.ndarray], ridge: float = 1e-3,
                  diagonal: bool = False) -> tuple[list[GalleryEntry], list[str]]:
    """Fit one Gaussian per entity; entities with < 2 vectors are excluded."""
    gallery, excluded = [], []
    for entity_id in sorted(train_embeddings):
        vecs = np.asarray(train_embeddings[entity_id])
        if len(vecs) < 2:
            excluded.append(entity_id)
            continue
        gallery.append(GalleryEntry(entity_id, vecs, fit_gaussian(vecs, ridge, diagonal)))
    return gallery, excluded


def _probe_vectors(probe: ProbeSet, n_phases: int, condition: str, seed: int) -> np.ndarray:
    """Restrict a probe to the augmentations of a seeded phase subsample."""
    phases = probe.phases()
    if n_phases >= len(phases):
        return probe.vectors
    rng = substream(seed, "probe-phases", condition, probe.entity_id)
    chosen = set(rng.choice(phases, size=n_phases, replace=False).tolist())
    keep = [i for i, triple in enumerate(probe.phase_triples)
            if set(triple) <= chosen]
    if not keep:
        raise DataError(f"probe {probe.entity_id}: phase subsample leaves no augmentations")
    return probe.vectors[keep]


def _round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def identify(
    gallery: list[GalleryEntry],
    probes: list[ProbeSet],
    condition: str,
    seed: int = 0,
) -> ConditionResult:
    """Rank gallery entities for every probe under one condition.

    Conditions follow the `p<n>-<sim>` naming: the probe is restricted to a
    seeded subsample of n phases, and sim is L1, L2, AL, ATL<percent>, or ML.
    Score ties rank by ascending entity id; top-k accuracy counts probes
    whose true entity appears in the first k, and MRR averages 1/rank.
    """
    gallery_ids = [g.entity_id for g in gallery]
    if sorted(gallery_ids) != sorted(p.entity_id for p in probes):
        raise DataError("gallery and probe entity sets must coincide")
    n_phases, kind, fraction = parse_condition(condition)

    rankings = []
    ranks_of_truth = []
    for probe in sorted(probes, key=lambda p: p.entity_id):
        vectors = _probe_vectors(probe, n_phases, condition, seed)
        scores = []
        for entry in gallery:
            if kind == "L1":
                score = lp_similarity(entry.train_embeddings, vectors, p=1)
            elif kind == "L2":
                score = lp_similarity(entry.train_embeddings, vectors, p=2)
            elif kind == "ML":
                score = atl_sim(entry.gaussian, vectors, m=1)
            else:  # ATL with its fraction (AL is fraction 1.0)
                m = max(1, _round_half_up(fraction * len(vectors)))
                score = atl_sim(entry.gaussian, vectors, m=m)
            scores.append((entry.entity_id, score))
        scores.sort(key=lambda es: (-es[1], es[0]))
        rankings.append((probe.entity_id, scores))
        rank = 1 + next(i for i, (eid, _) in enumerate(scores) if eid == probe.entity_id)
        ranks_of_truth.append(rank)

    ranks = np.array(ranks_of_truth, dtype=float)
    top_k = {k: float((ranks <= k).mean()) for k in (1, 3, 5, 10)}
    return ConditionResult(condition, top_k, float((1.0 / ranks).mean()), rankings)


# ---------------------------------------------------------------------------
# Report rendering


def render_report(results: list[ConditionResult], n_entities: int) -> str:
    """Fixed-width summary table, one row per condition."""
    lines = [
        f"Player identification over {n_entities} entities",
        "",
        f"{'Condition':<12} {'Top-1':>8} {'Top-3':>8} {'Top-5':>8} {'Top-10':>8} {'MRR':>8}",
    ]
    for r in results:
        lines.append(
            f"{r.condition:<12} "
            f"{100 * r.top_k[1]:>7.1f}% {100 * r.top_k[3]:>7.1f}% "
            f"{100 * r.top_k[5]:>7.1f}% {100 * r.top_k[10]:>7.1f}% "
            f"{r.mrr:>8.3f}")
    return "\n".join(lines) + "\n"


def rankings_csv(results: list[ConditionResult]) -> str:
    lines = ["condition,probe_entity,rank,candidate_entity,score"]
    for r in results:
        for probe_id, ranked in r.rankings:
            for rank, (candidate, score) in enumerate(ranked, start=1):
                lines.append(f"{r.condition},{probe_id},{rank},{candidate},{score:.9e}")
    return "\n".join(lines) + "\n"
