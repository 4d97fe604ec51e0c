"""Histogram-based gradient-boosted regression trees, least-squares loss.

Features are quantile-binned once up front; trees grow leaf-wise (best
first) on the binned representation, splitting greedily by variance
reduction. Missing values occupy a dedicated bin and always route to the
right child. Training is plain residual boosting with an optional
validation split for early stopping.

Everything is single-threaded numpy and bit-deterministic for a fixed
(X, y, config, seed).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, UnfittedModel

_GAIN_EPS = 1e-12


@dataclass(frozen=True)
class GBDTConfig:
    max_iter: int = 500
    learning_rate: float = 0.1
    min_samples_leaf: int = 20
    early_stopping: bool = True
    validation_fraction: float = 0.1
    n_iter_no_change: int = 10
    tol: float = 1e-7
    max_bins: int = 256
    max_leaf_nodes: int = 31
    l2_regularization: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must be in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not (2 <= self.max_bins <= 256):
            raise ValueError("max_bins must be in [2, 256]")
        if self.max_leaf_nodes < 2:
            raise ValueError("max_leaf_nodes must be >= 2")


@dataclass
class BinMapper:
    """Per-feature ascending thresholds; NaN maps to the dedicated missing bin."""

    thresholds: list[np.ndarray]
    max_bins: int

    @property
    def missing_bin(self) -> int:
        return self.max_bins

    @property
    def n_features(self) -> int:
        return len(self.thresholds)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        binned = np.empty(X.shape, dtype=np.uint16)
        for f, th in enumerate(self.thresholds):
            col = X[:, f]
            binned[:, f] = np.searchsorted(th, col, side="left")
            binned[np.isnan(col), f] = self.missing_bin
        return binned

    def threshold_value(self, feature: int, bin_index: int) -> float:
        """Numeric split point equivalent to 'bin <= bin_index' on raw values."""
        th = self.thresholds[feature]
        if bin_index < len(th):
            return float(th[bin_index])
        return np.inf


def build_bins(X: np.ndarray, max_bins: int = 256) -> BinMapper:
    """Quantile binning: near-equal bin populations for continuous features.

    Features with at most max_bins distinct values get one bin per value
    (thresholds at midpoints); otherwise thresholds sit at the empirical
    i/max_bins quantiles.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise EmptyDataset("build_bins needs at least one sample")
    thresholds = []
    for f in range(X.shape[1]):
        col = X[:, f]
        col = col[~np.isnan(col)]
        if col.size == 0:
            thresholds.append(np.empty(0))
            continue
        distinct = np.unique(col)
        if distinct.size <= max_bins:
            th = (distinct[:-1] + distinct[1:]) / 2.0
        else:
            qs = np.arange(1, max_bins) / max_bins
            th = np.unique(np.quantile(col, qs))
        thresholds.append(th)
    return BinMapper(thresholds=thresholds, max_bins=max_bins)


@dataclass
class RegressionTree:
    """Flat node arrays; feature[i] == -1 marks a leaf.

    Internal nodes route 'bin <= bin_threshold' to the left child; raw-value
    routing uses the equivalent numeric threshold (NaN compares False, so
    missing values fall right, matching the missing bin's position past all
    real bins).
    """

    feature: np.ndarray
    bin_threshold: np.ndarray
    threshold_value: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def leaf_counts(self) -> np.ndarray:
        return self.count[self.feature < 0]

    def apply_binned(self, binned: np.ndarray) -> np.ndarray:
        """Leaf values for each row of a binned matrix."""
        node = np.zeros(binned.shape[0], dtype=np.int64)
        while True:
            feats = self.feature[node]
            active = np.nonzero(feats >= 0)[0]
            if active.size == 0:
                break
            cur = node[active]
            go_left = binned[active, feats[active]] <= self.bin_threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
        return self.value[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "bin_threshold": self.bin_threshold.tolist(),
            "threshold_value": [
                None if not np.isfinite(v) else float(v) for v in self.threshold_value
            ],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "count": self.count.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        tv = np.array([np.inf if v is None else v for v in d["threshold_value"]])
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            bin_threshold=np.asarray(d["bin_threshold"], dtype=np.int64),
            threshold_value=tv,
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
            count=np.asarray(d["count"], dtype=np.int64),
        )


@dataclass
class GBDTModel:
    baseline: float
    trees: list[RegressionTree]
    bin_mapper: BinMapper
    config: GBDTConfig
    train_history: list[tuple[float, float | None]] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return self.bin_mapper.n_features

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline,
            "trees": [t.to_dict() for t in self.trees],
            "bin_thresholds": [t.tolist() for t in self.bin_mapper.thresholds],
            "max_bins": self.bin_mapper.max_bins,
            "learning_rate": self.config.learning_rate,
            "train_history": [[tr, va] for tr, va in self.train_history],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GBDTModel":
        mapper = BinMapper(
            thresholds=[np.asarray(t, dtype=float) for t in d["bin_thresholds"]],
            max_bins=int(d["max_bins"]),
        )
        config = GBDTConfig(learning_rate=float(d["learning_rate"]))
        return cls(
            baseline=float(d["baseline"]),
            trees=[RegressionTree.from_dict(t) for t in d["trees"]],
            bin_mapper=mapper,
            config=config,
            train_history=[(tr, va) for tr, va in d.get("train_history", [])],
        )


class _NodeCandidate:
    """A grown leaf with its histogram and best available split."""

    __slots__ = ("node_id", "train_idx", "val_idx", "hist_g", "hist_n",
                 "gain", "split_feature", "split_bin")

    def __init__(self, node_id, train_idx, val_idx, hist_g, hist_n):
        self.node_id = node_id
        self.train_idx = train_idx
        self.val_idx = val_idx
        self.hist_g = hist_g
        self.hist_n = hist_n
        self.gain = -np.inf
        self.split_feature = -1
        self.split_bin = -1


def _histograms(binned, idx, residuals, offsets, n_slots):
    flat = binned[idx].astype(np.int64)
    flat += offsets
    flat = flat.ravel()
    n_feat = offsets.shape[1]
    counts = np.bincount(flat, minlength=n_slots * n_feat)
    gsum = np.bincount(flat, weights=np.repeat(residuals[idx], n_feat),
                       minlength=n_slots * n_feat)
    return gsum.reshape(n_feat, n_slots), counts.reshape(n_feat, n_slots)


def _best_split(cand: _NodeCandidate, config: GBDTConfig) -> None:
    """Fill cand with the max-gain (feature, bin) split, if any is valid."""
    lam = config.l2_regularization
    total_g = cand.hist_g[0].sum()
    total_n = cand.train_idx.size
    if total_n < 2 * config.min_samples_leaf:
        return
    cum_g = np.cumsum(cand.hist_g, axis=1)[:, :-1]
    cum_n = np.cumsum(cand.hist_n, axis=1)[:, :-1]
    right_g = total_g - cum_g
    right_n = total_n - cum_n
    valid = (cum_n >= config.min_samples_leaf) & (right_n >= config.min_samples_leaf)
    if not valid.any():
        return
    parent_score = total_g * total_g / (total_n + lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        gains = (cum_g * cum_g / (cum_n + lam)
                 + right_g * right_g / (right_n + lam) - parent_score)
    gains[~valid] = -np.inf
    flat_best = int(np.argmax(gains))
    f, b = divmod(flat_best, gains.shape[1])
    if gains[f, b] > _GAIN_EPS:
        cand.gain = float(gains[f, b])
        cand.split_feature = f
        cand.split_bin = b


def _grow_tree(binned, residuals, train_idx, val_idx, mapper, config):
    """One leaf-wise regression tree on the binned matrix; None if no split."""
    n_slots = mapper.max_bins + 1
    offsets = (np.arange(mapper.n_features, dtype=np.int64) * n_slots)[None, :]
    lam = config.l2_regularization

    feature, bin_thr, thr_val, left, right, value, count = [], [], [], [], [], [], []

    def new_node(idx):
        node_id = len(feature)
        feature.append(-1)
        bin_thr.append(0)
        thr_val.append(np.inf)
        left.append(-1)
        right.append(-1)
        value.append(float(residuals[idx].sum() / (idx.size + lam)) if idx.size else 0.0)
        count.append(int(idx.size))
        return node_id

    hg, hn = _histograms(binned, train_idx, residuals, offsets, n_slots)
    root = _NodeCandidate(new_node(train_idx), train_idx, val_idx, hg, hn)
    _best_split(root, config)
    if root.split_feature < 0:
        return None

    heap = [(-root.gain, root.node_id, root)]
    n_leaves = 1
    while heap and n_leaves < config.max_leaf_nodes:
        _, _, cand = heapq.heappop(heap)
        if cand.split_feature < 0:
            continue
        f, b = cand.split_feature, cand.split_bin
        go_left = binned[cand.train_idx, f] <= b
        left_idx = cand.train_idx[go_left]
        right_idx = cand.train_idx[~go_left]
        val_left = cand.val_idx[binned[cand.val_idx, f] <= b]
        val_right = cand.val_idx[binned[cand.val_idx, f] > b]

        # Histogram subtraction: build the smaller child, derive the sibling.
        if left_idx.size <= right_idx.size:
            hg_l, hn_l = _histograms(binned, left_idx, residuals, offsets, n_slots)
            hg_r, hn_r = cand.hist_g - hg_l, cand.hist_n - hn_l
        else:
            hg_r, hn_r = _histograms(binned, right_idx, residuals, offsets, n_slots)
            hg_l, hn_l = cand.hist_g - hg_r, cand.hist_n - hn_r

        node = cand.node_id
        feature[node] = f
        bin_thr[node] = b
        thr_val[node] = mapper.threshold_value(f, b)
        lchild = _NodeCandidate(new_node(left_idx), left_idx, val_left, hg_l, hn_l)
        rchild = _NodeCandidate(new_node(right_idx), right_idx, val_right, hg_r, hn_r)
        left[node] = lchild.node_id
        right[node] = rchild.node_id
        n_leaves += 1

        if n_leaves < config.max_leaf_nodes:
            for child in (lchild, rchild):
                _best_split(child, config)
                if child.split_feature >= 0:
                    # node_id tiebreaks equal gains deterministically
                    heapq.heappush(heap, (-child.gain, child.node_id, child))

    tree = RegressionTree(
        feature=np.asarray(feature, dtype=np.int64),
        bin_threshold=np.asarray(bin_thr, dtype=np.int64),
        threshold_value=np.asarray(thr_val, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=float),
        count=np.asarray(count, dtype=np.int64),
    )
    return tree


def fit(X: np.ndarray, y: np.ndarray, config: GBDTConfig | None = None,
        rng: np.random.Generator | None = None) -> GBDTModel:
    """Boost regression trees on least-squares residuals.

    With early stopping enabled, a validation_fraction split (seeded shuffle)
    is held out and boosting stops once validation loss has failed to improve
    on its best value by more than tol for n_iter_no_change consecutive
    iterations.
    """
    config = config or GBDTConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be (n, d) and y (n,)")
    n = X.shape[0]
    if n < max(2 * config.min_samples_leaf, 10):
        raise EmptyDataset(
            f"need at least {max(2 * config.min_samples_leaf, 10)} samples, got {n}")

    if rng is None:
        rng = np.random.default_rng(config.seed)

    if config.early_stopping:
        perm = rng.permutation(n)
        n_val = max(1, int(np.floor(config.validation_fraction * n)))
        val_rows, train_rows = perm[:n_val], perm[n_val:]
    else:
        train_rows = np.arange(n)
        val_rows = np.empty(0, dtype=np.int64)

    mapper = build_bins(X[train_rows], config.max_bins)
    binned = mapper.transform(X)

    baseline = float(y[train_rows].mean())
    pred = np.full(n, baseline)
    residuals = np.empty(n)

    model = GBDTModel(baseline=baseline, trees=[], bin_mapper=mapper, config=config)

    def losses():
        train_loss = float(np.mean((y[train_rows] - pred[train_rows]) ** 2))
        val_loss = (float(np.mean((y[val_rows] - pred[val_rows]) ** 2))
                    if val_rows.size else None)
        return train_loss, val_loss

    model.train_history.append(losses())
    val_losses = [model.train_history[0][1]]

    def should_stop() -> bool:
        # Windowed plateau test (the quoted estimator's convention): stop
        # when none of the last n_iter_no_change losses improved on the loss
        # from n_iter_no_change+1 iterations ago by more than tol.
        window = config.n_iter_no_change
        if len(val_losses) < window + 1:
            return False
        reference = val_losses[-(window + 1)] - config.tol
        return all(loss >= reference for loss in val_losses[-window:])

    for _ in range(config.max_iter):
        residuals[:] = y - pred
        tree = _grow_tree(binned, residuals, train_rows, val_rows, mapper, config)
        if tree is None:
            break
        model.trees.append(tree)
        lr = config.learning_rate
        pred[train_rows] += lr * tree.apply_binned(binned[train_rows])
        if val_rows.size:
            pred[val_rows] += lr * tree.apply_binned(binned[val_rows])
        train_loss, val_loss = losses()
        model.train_history.append((train_loss, val_loss))

        if config.early_stopping and val_loss is not None:
            val_losses.append(val_loss)
            if should_stop():
                break

    return model


def predict(model: GBDTModel, x: np.ndarray) -> float | np.ndarray:
    """baseline + learning_rate * sum of routed leaf values.

    Accepts a single feature vector (returns a float) or an (n, d) batch
    (returns an array). NaN entries route through the missing bin.
    """
    if not isinstance(model, GBDTModel):
        raise UnfittedModel("predict requires a fitted GBDTModel")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != model.n_features:
        raise DimensionMismatch(
            f"expected {model.n_features} features, got {X.shape[1]}")
    binned = model.bin_mapper.transform(X)
    out = np.full(X.shape[0], model.baseline)
    for tree in model.trees:
        out += model.config.learning_rate * tree.apply_binned(binned)
    return float(out[0]) if single else out
