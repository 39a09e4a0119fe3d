"""The style-embedding network and its triplet loss.

One embedder holds two branch CNNs (one for location heatmaps, one for
direction heatmaps, identical structure, separate weights). A heatmap pair
is embedded by concatenating the two branch outputs and scaling to unit
length; the triplet loss then pulls same-identity pairs together and pushes
different identities apart by a squared-distance margin. The three triplet
roles share one parameter set: a batch runs as a single forward pass over
its distinct heatmap pairs, and the loss gathers rows by triplet index.
"""

from __future__ import annotations

import warnings

import numpy as np

from .config import substream
from .heatmap import HeatmapPair
from .layers import BatchNorm, Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2x2, ReLU

NORM_FLOOR = 1e-12


class BranchNet:
    """One branch CNN: four conv blocks with pooling, then two dense layers.

    Batch norm follows every conv layer and the first dense layer; dropout
    follows every pooling layer and the last conv block. The first conv and
    the third use a 2x3 kernel (with 1x0 and 1x1 padding respectively), all
    others 3x3 with 1x1 padding; widths are configurable so tests can run a
    reduced model, and the defaults give the 36x48x4 ... 1920 -> 128 -> 10
    shape progression the full network requires.
    """

    def __init__(self, name: str, seed: int, in_shape: tuple[int, int] = (35, 50),
                 channels: tuple[int, int, int, int] = (4, 16, 32, 64),
                 fc_dim: int = 128, out_dim: int = 10, dropout: float = 0.25,
                 bn_momentum: float = 0.1, dtype=np.float32):
        self.name = name
        self.out_dim = out_dim
        init = substream(seed, "init", name)
        c1, c2, c3, c4 = channels

        def drop(tag: str) -> Dropout:
            return Dropout(f"{name}.{tag}", dropout, substream(seed, "dropout", name, tag))

        h, w = in_shape
        self.layers: list[Layer] = []
        self.trace: list[tuple[str, tuple[int, ...]]] = []

        def conv(tag, cin, cout, kernel, pad):
            nonlocal h, w
            self.layers.append(Conv2D(f"{name}.{tag}", cin, cout, kernel, pad, init, dtype))
            h = h + 2 * pad[0] - kernel[0] + 1
            w = w + 2 * pad[1] - kernel[1] + 1
            self.trace.append((tag, (h, w, cout)))
            self.layers.append(BatchNorm(f"{name}.bn_{tag}", cout, momentum=bn_momentum, dtype=dtype))
            self.layers.append(ReLU(f"{name}.relu_{tag}"))

        def pool(tag, cout):
            nonlocal h, w
            if h % 2 or w % 2:
                raise ValueError(f"{name}.{tag}: cannot pool odd spatial dims {h}x{w}")
            self.layers.append(MaxPool2x2(f"{name}.{tag}"))
            h, w = h // 2, w // 2
            self.trace.append((tag, (h, w, cout)))
            self.layers.append(drop(f"drop_{tag}"))

        conv("conv1a", 1, c1, (2, 3), (1, 0))
        conv("conv1b", c1, c1, (3, 3), (1, 1))
        pool("maxpool1", c1)
        conv("conv2a", c1, c2, (3, 3), (1, 1))
        conv("conv2b", c2, c2, (3, 3), (1, 1))
        pool("maxpool2", c2)
        conv("conv3a", c2, c3, (2, 3), (1, 1))
        conv("conv3b", c3, c3, (3, 3), (1, 1))
        pool("maxpool3", c3)
        conv("conv4a", c3, c4, (3, 3), (1, 1))
        conv("conv4b", c4, c4, (3, 3), (1, 1))
        self.layers.append(drop("drop_conv4b"))
        self.layers.append(Flatten(f"{name}.flatten"))
        flat = h * w * c4
        self.layers.append(Dense(f"{name}.fc1", flat, fc_dim, init, dtype))
        self.trace.append(("fc1", (fc_dim,)))
        self.layers.append(BatchNorm(f"{name}.bn_fc1", fc_dim, momentum=bn_momentum, dtype=dtype))
        self.layers.append(ReLU(f"{name}.relu_fc1"))
        self.layers.append(Dense(f"{name}.fc2", fc_dim, out_dim, init, dtype))
        self.trace.append(("fc2", (out_dim,)))

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        out = x[..., None] if x.ndim == 3 else x
        for layer in self.layers:
            out = layer.forward(out, train)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


class PairEmbedder:
    """Embeds (location, direction) heatmap pairs into unit-norm vectors."""

    def __init__(self, seed: int, grid_shape: tuple[int, int] = (35, 50),
                 channels: tuple[int, int, int, int] = (4, 16, 32, 64),
                 fc_dim: int = 128, branch_dim: int = 10, dropout: float = 0.25,
                 bn_momentum: float = 0.1, dtype=np.float32):
        self.seed = seed
        self.grid_shape = grid_shape
        self.channels = tuple(channels)
        self.fc_dim = fc_dim
        self.branch_dim = branch_dim
        self.dropout = dropout
        self.bn_momentum = bn_momentum
        self.dtype = dtype
        self.loc = BranchNet("loc", seed, grid_shape, self.channels, fc_dim,
                             branch_dim, dropout, bn_momentum, dtype)
        self.dir = BranchNet("dir", seed, grid_shape, self.channels, fc_dim,
                             branch_dim, dropout, bn_momentum, dtype)
        self._cache: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def embed_dim(self) -> int:
        return 2 * self.branch_dim

    def shape_trace(self) -> list[tuple[str, tuple[int, ...]]]:
        return list(self.loc.trace)

    def forward(self, loc_grids: np.ndarray, dir_grids: np.ndarray, train: bool) -> np.ndarray:
        """Normalized-grid batches (n, rows, cols) -> unit-norm embeddings (n, 2d)."""
        loc_grids = np.asarray(loc_grids, dtype=self.dtype)
        dir_grids = np.asarray(dir_grids, dtype=self.dtype)
        if loc_grids.shape != dir_grids.shape or loc_grids.shape[1:] != self.grid_shape:
            raise ValueError(
                f"expected matching (n, {self.grid_shape[0]}, {self.grid_shape[1]}) inputs, "
                f"got {loc_grids.shape} and {dir_grids.shape}")
        u = np.concatenate([self.loc.forward(loc_grids, train),
                            self.dir.forward(dir_grids, train)], axis=1)
        norms = np.sqrt((u.astype(np.float64) ** 2).sum(axis=1))
        dead = norms < NORM_FLOOR
        if dead.any():
            warnings.warn(f"{int(dead.sum())} zero-length embeddings mapped to a fixed basis vector")
        safe = np.maximum(norms, NORM_FLOOR).astype(self.dtype)
        f = u / safe[:, None]
        if dead.any():
            f[dead] = 0.0
            f[dead, 0] = 1.0
        if train:
            self._cache = (f.copy(), safe)
        return f

    def backward(self, d_emb: np.ndarray) -> None:
        """Propagate embedding-space gradients through both branches."""
        assert self._cache is not None, "backward before forward"
        f, norms = self._cache
        self._cache = None
        inner = (d_emb * f).sum(axis=1, keepdims=True)
        du = ((d_emb - f * inner) / norms[:, None]).astype(self.dtype)
        d = self.branch_dim
        self.loc.backward(du[:, :d])
        self.dir.backward(du[:, d:])

    # -- parameter plumbing ------------------------------------------------

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        items = []
        for branch in (self.loc, self.dir):
            for layer in branch.layers:
                items.extend(sorted(layer.params().items()))
        return items

    def grad_items(self) -> list[tuple[str, np.ndarray]]:
        items = []
        for branch in (self.loc, self.dir):
            for layer in branch.layers:
                items.extend(sorted(layer.grads().items()))
        return items

    def state_items(self) -> list[tuple[str, np.ndarray]]:
        items = []
        for branch in (self.loc, self.dir):
            for layer in branch.layers:
                items.extend(sorted(layer.state().items()))
        return items

    def set_arrays(self, named: dict[str, np.ndarray]) -> None:
        """Overwrite parameters and state from checkpoint arrays, in place."""
        targets = dict(self.param_items()) | dict(self.state_items())
        missing = set(targets) - set(named)
        if missing:
            raise ValueError(f"checkpoint is missing arrays: {sorted(missing)[:4]} ...")
        for name, value in named.items():
            if name not in targets:
                raise ValueError(f"checkpoint has unknown array {name!r}")
            if targets[name].shape != value.shape:
                raise ValueError(f"{name}: shape {value.shape} != expected {targets[name].shape}")
            targets[name][...] = value

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.param_items() + self.state_items()}


# ---------------------------------------------------------------------------
# Heatmap-pair input preparation


def normalize_grid(counts: np.ndarray) -> np.ndarray:
    """Scale integer counts to relative frequencies (duration invariance)."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    return counts / max(total, 1.0)


def pairs_to_inputs(pairs: list[HeatmapPair]) -> tuple[np.ndarray, np.ndarray]:
    loc = np.stack([normalize_grid(p.location.counts) for p in pairs])
    dirn = np.stack([normalize_grid(p.direction.counts) for p in pairs])
    return loc, dirn


def embed_pairs(model: PairEmbedder, pairs: list[HeatmapPair],
                batch_size: int = 1000) -> np.ndarray:
    """Infer-mode embeddings for a list of heatmap pairs, in order."""
    out = np.empty((len(pairs), model.embed_dim), dtype=model.dtype)
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        loc, dirn = pairs_to_inputs(chunk)
        out[start:start + len(chunk)] = model.forward(loc, dirn, train=False)
    return out


# ---------------------------------------------------------------------------
# Triplet loss


def triplet_loss(f_a: np.ndarray, f_p: np.ndarray, f_n: np.ndarray, margin: float) -> float:
    """Summed hinge on squared distances: [d(a,p)^2 - d(a,n)^2 + margin]_+ ."""
    d_pos = ((f_a - f_p) ** 2).sum(axis=-1)
    d_neg = ((f_a - f_n) ** 2).sum(axis=-1)
    return float(np.maximum(d_pos - d_neg + margin, 0.0).sum())


def triplet_loss_grads(
    f_a: np.ndarray, f_p: np.ndarray, f_n: np.ndarray, margin: float,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Loss plus its gradients w.r.t. the three embedding batches.

    Triplets already satisfying the margin sit on the hinge's flat side and
    contribute exactly zero gradient.
    """
    d_pos = ((f_a - f_p) ** 2).sum(axis=-1)
    d_neg = ((f_a - f_n) ** 2).sum(axis=-1)
    values = d_pos - d_neg + margin
    active = (values > 0).astype(f_a.dtype)[:, None]
    loss = float(np.maximum(values, 0.0).sum())
    dfa = 2.0 * (f_n - f_p) * active
    dfp = -2.0 * (f_a - f_p) * active
    dfn = 2.0 * (f_a - f_n) * active
    return loss, dfa, dfp, dfn


def triplet_batch_backward(
    model: PairEmbedder,
    loc_grids: np.ndarray,
    dir_grids: np.ndarray,
    anchor_idx: np.ndarray,
    positive_idx: np.ndarray,
    negative_idx: np.ndarray,
    margin: float,
    train: bool = True,
) -> float:
    """Forward the batch's distinct heatmap pairs once, then backpropagate
    the summed triplet loss; returns the loss. Gradients accumulate across
    the anchor/positive/negative roles because the subnetworks share weights.
    """
    emb = model.forward(loc_grids, dir_grids, train=train)
    loss, dfa, dfp, dfn = triplet_loss_grads(
        emb[anchor_idx], emb[positive_idx], emb[negative_idx], margin)
    if not train:
        return loss
    d_emb = np.zeros_like(emb)
    np.add.at(d_emb, anchor_idx, dfa)
    np.add.at(d_emb, positive_idx, dfp)
    np.add.at(d_emb, negative_idx, dfn)
    model.backward(d_emb)
    return loss
