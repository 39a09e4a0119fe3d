"""Triplet selection with hard-negative mining and the outer training loop.

Every few epochs the triplet plan is rebuilt from the current embeddings:
a small candidate set is sampled per identity, every training pair anchors
up to five positive pairs, and each positive pair gets one margin-violating
negative (or a random one of the nearest few when nothing violates). The
loop trains on a fixed plan until the validation loss stalls, re-selects,
and stops once a whole selection passes without improving the validation
accuracy, returning the best-accuracy checkpoint.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig, substream
from .errors import DataError
from .heatmap import HeatmapPair
from .model import PairEmbedder, pairs_to_inputs, triplet_batch_backward, triplet_loss
from .optim import Adam

log = logging.getLogger(__name__)

MAX_SELECTIONS = 100  # hard stop; the accuracy plateau rule fires far earlier


@dataclass
class TripletPlan:
    """Record-index triplets plus the candidate set they were mined from."""

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    candidate_idx: np.ndarray
    skipped_anchors: int

    def __len__(self) -> int:
        return len(self.anchors)


def _sample_candidates(labels: np.ndarray, rng: np.random.Generator, per_identity: int) -> np.ndarray:
    """Seeded sample of up to `per_identity` record indices per identity."""
    chosen = []
    for label in sorted(set(labels.tolist())):
        members = np.flatnonzero(labels == label)
        if len(members) > per_identity:
            members = rng.choice(members, size=per_identity, replace=False)
        chosen.extend(sorted(members.tolist()))
    return np.array(chosen, dtype=np.int64)


def _squared_distances(anchor: np.ndarray, others: np.ndarray) -> np.ndarray:
    diff = others - anchor
    return (diff * diff).sum(axis=1)


def select_triplets(
    embeddings: np.ndarray,
    labels: np.ndarray,
    margin: float,
    rng: np.random.Generator,
    candidates_per_identity: int = 5,
    nearest_negatives: int = 10,
) -> TripletPlan:
    """Build the training triplet plan from current (infer-mode) embeddings.

    Anchors whose identity offers no positive candidate besides themselves
    are skipped and tallied.
    """
    labels = np.asarray(labels)
    if len(set(labels.tolist())) < 2:
        raise DataError("triplet selection needs at least two identities")
    cand_idx = _sample_candidates(labels, rng, candidates_per_identity)
    cand_emb = embeddings[cand_idx]
    cand_labels = labels[cand_idx]

    anchors, positives, negatives = [], [], []
    skipped = 0
    for a in range(len(embeddings)):
        same = cand_labels == labels[a]
        pos_pool = cand_idx[same]
        pos_pool = pos_pool[pos_pool != a]
        if len(pos_pool) == 0:
            skipped += 1
            continue
        neg_pool = cand_idx[~same]
        d_neg = _squared_distances(embeddings[a], cand_emb[~same])
        order = np.argsort(d_neg, kind="stable")
        d_neg_sorted = d_neg[order]
        neg_sorted = neg_pool[order]
        near = min(nearest_negatives, len(neg_sorted))
        for p in pos_pool:
            d_pos = float(((embeddings[a] - embeddings[p]) ** 2).sum())
            violators = int(np.searchsorted(d_neg_sorted, d_pos + margin, side="left"))
            if violators > 0:
                n = neg_sorted[rng.integers(violators)]
            else:
                n = neg_sorted[rng.integers(near)]
            anchors.append(a)
            positives.append(int(p))
            negatives.append(int(n))
    if skipped:
        log.warning("triplet selection skipped %d anchors with no positive candidate", skipped)
    return TripletPlan(np.array(anchors, dtype=np.int64), np.array(positives, dtype=np.int64),
                       np.array(negatives, dtype=np.int64), cand_idx, skipped)


def _accuracy_on_candidates(embeddings: np.ndarray, labels: np.ndarray,
                            cand_idx: np.ndarray, margin: float) -> float | None:
    """Fraction of positive pairs whose margin holds against every negative."""
    labels = np.asarray(labels)
    cand_labels = labels[cand_idx]
    total = 0
    good = 0
    for a in range(len(embeddings)):
        same = cand_labels == labels[a]
        pos_pool = cand_idx[same]
        pos_pool = pos_pool[pos_pool != a]
        if len(pos_pool) == 0:
            continue
        d_neg = _squared_distances(embeddings[a], embeddings[cand_idx[~same]])
        if len(d_neg) == 0:
            continue
        min_neg = float(d_neg.min())
        for p in pos_pool:
            d_pos = float(((embeddings[a] - embeddings[p]) ** 2).sum())
            total += 1
            if d_pos + margin <= min_neg:
                good += 1
    if total == 0:
        return None
    return good / total


def validation_accuracy(
    embeddings: np.ndarray,
    labels: np.ndarray,
    margin: float,
    rng: np.random.Generator,
    candidates_per_identity: int = 5,
) -> float | None:
    """Rate of positive pairs with no margin-violating negative in the
    candidate set; None when the data yields no positive pairs."""
    cand_idx = _sample_candidates(np.asarray(labels), rng, candidates_per_identity)
    return _accuracy_on_candidates(embeddings, labels, cand_idx, margin)


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class EpochRecord:
    selection: int
    epoch: int
    loss: float
    val_loss: float
    val_accuracy: float
    lr: float
    wall_time: float  # runtime only; excluded from the emitted log file


@dataclass
class TrainLog:
    rows: list[EpochRecord] = field(default_factory=list)
    events: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,selection,loss,val_loss,val_accuracy,lr"]
        for r in self.rows:
            lines.append(f"{r.epoch},{r.selection},{r.loss:.6e},{r.val_loss:.6e},"
                         f"{r.val_accuracy:.6f},{r.lr:.6e}")
        return "\n".join(lines) + "\n"


def _embed_all(model: PairEmbedder, loc: np.ndarray, dirn: np.ndarray,
               batch_size: int) -> np.ndarray:
    out = np.empty((len(loc), model.embed_dim), dtype=model.dtype)
    for s in range(0, len(loc), batch_size):
        out[s:s + batch_size] = model.forward(loc[s:s + batch_size],
                                              dirn[s:s + batch_size], train=False)
    return out


def train(
    model: PairEmbedder,
    train_pairs: list[HeatmapPair],
    train_labels: list[str],
    val_pairs: list[HeatmapPair],
    val_labels: list[str],
    cfg: TrainConfig,
    seed: int,
) -> TrainLog:
    """Run the full selection/training loop, leaving `model` at the
    best-validation-accuracy checkpoint."""
    if not train_pairs or not val_pairs:
        raise DataError("training requires non-empty train and validation sets")
    t_labels = np.array(train_labels)
    v_labels = np.array(val_labels)
    t_loc, t_dir = pairs_to_inputs(train_pairs)
    v_loc, v_dir = pairs_to_inputs(val_pairs)
    t_loc = t_loc.astype(model.dtype)
    t_dir = t_dir.astype(model.dtype)
    v_loc = v_loc.astype(model.dtype)
    v_dir = v_dir.astype(model.dtype)

    adam = Adam(model.param_items())
    grads = [g for _, g in model.grad_items()]
    lr = cfg.learning_rate
    logbook = TrainLog()
    best_accuracy = -np.inf
    best_snapshot = model.snapshot()
    stale_selections = 0
    start = time.monotonic()

    for selection in range(MAX_SELECTIONS):
        if selection > 0:
            lr *= cfg.lr_decay
        train_emb = _embed_all(model, t_loc, t_dir, cfg.batch_size)
        plan = select_triplets(train_emb, t_labels, cfg.margin,
                               substream(seed, "select", selection),
                               cfg.candidates_per_identity, cfg.nearest_negatives)
        if len(plan) == 0:
            logbook.events.append(f"selection {selection}: empty plan, stopping")
            break
        val_emb = _embed_all(model, v_loc, v_dir, cfg.batch_size)
        val_plan = select_triplets(val_emb, v_labels, cfg.margin,
                                   substream(seed, "val-select", selection),
                                   cfg.candidates_per_identity, cfg.nearest_negatives)
        val_cands = val_plan.candidate_idx
        logbook.events.append(
            f"selection {selection}: {len(plan)} triplets, lr {lr:.5f}")

        accuracy_at_selection_start = best_accuracy
        best_val_loss = np.inf
        stall = 0
        diverged = False
        for epoch in range(cfg.max_epochs_per_selection):
            order = substream(seed, "shuffle", selection, epoch).permutation(len(plan))
            epoch_loss = 0.0
            for s in range(0, len(order), cfg.batch_size):
                batch = order[s:s + cfg.batch_size]
                ids = np.concatenate([plan.anchors[batch], plan.positives[batch],
                                      plan.negatives[batch]])
                uniq, inverse = np.unique(ids, return_inverse=True)
                k = len(batch)
                loss = triplet_batch_backward(
                    model, t_loc[uniq], t_dir[uniq],
                    inverse[:k], inverse[k:2 * k], inverse[2 * k:],
                    cfg.margin, train=True)
                if not np.isfinite(loss):
                    logbook.events.append(
                        f"selection {selection} epoch {epoch}: non-finite loss, aborting")
                    diverged = True
                    break
                epoch_loss += loss
                adam.step(grads, lr)
            if diverged:
                break

            val_emb = _embed_all(model, v_loc, v_dir, cfg.batch_size)
            val_loss = triplet_loss(val_emb[val_plan.anchors], val_emb[val_plan.positives],
                                    val_emb[val_plan.negatives], cfg.margin)
            accuracy = _accuracy_on_candidates(val_emb, v_labels, val_cands, cfg.margin)
            if accuracy is None:
                raise DataError("validation set yields no positive pairs; accuracy undefined")
            logbook.rows.append(EpochRecord(selection=selection, epoch=epoch,
                                            loss=epoch_loss, val_loss=val_loss,
                                            val_accuracy=accuracy, lr=lr,
                                            wall_time=time.monotonic() - start))
            if accuracy > best_accuracy + cfg.min_improvement:
                best_accuracy = accuracy
                best_snapshot = model.snapshot()
                logbook.events.append(
                    f"selection {selection} epoch {epoch}: best accuracy {accuracy:.4f}")
            if val_loss < best_val_loss - cfg.min_improvement:
                best_val_loss = val_loss
                stall = 0
            else:
                stall += 1
                if stall >= cfg.loss_patience:
                    break

        if diverged:
            break
        if best_accuracy <= accuracy_at_selection_start + cfg.min_improvement:
            stale_selections += 1
            if stale_selections >= cfg.accuracy_patience:
                logbook.events.append(
                    f"selection {selection}: no accuracy improvement, stopping")
                break
        else:
            stale_selections = 0

    model.set_arrays(best_snapshot)
    logbook.events.append(f"returned checkpoint with accuracy {best_accuracy:.4f}")
    return logbook
