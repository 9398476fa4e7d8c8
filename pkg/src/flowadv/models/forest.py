"""Random forest of Gini decision trees with deterministic tie-breaking.

Each tree grows on a bootstrap sample (when enabled), choosing at every node
the split minimizing weighted Gini impurity over a random feature subset.
Exact impurity ties are broken by the lowest feature index, then the lowest
threshold, so training is reproducible bit-for-bit given a seed.  The forest
probability is the fraction of trees voting for each class.
"""

from __future__ import annotations

import math

import numpy as np

from ..data import BENIGN, MALICIOUS
from ..errors import TrainingError
from .base import RFParams, check_arity, labels_from_proba, _as2d

__all__ = ["DecisionTree", "RandomForest"]

_LEAF = -1


class DecisionTree:
    """One CART-style tree stored as flat arrays for vectorized descent."""

    def __init__(self, params: RFParams):
        self.params = params
        self.feature: np.ndarray | None = None
        self.threshold: np.ndarray | None = None
        self.left: np.ndarray | None = None
        self.right: np.ndarray | None = None
        self.vote: np.ndarray | None = None
        self.counts: np.ndarray | None = None

    def _n_candidates(self, n_features: int) -> int:
        mf = self.params.max_features
        if mf is None:
            return n_features
        if mf == "sqrt":
            return max(1, int(round(math.sqrt(n_features))))
        return min(n_features, int(mf))

    @staticmethod
    def _best_split(
        x: np.ndarray, y: np.ndarray, idx: np.ndarray, feats: np.ndarray
    ) -> tuple[float, int, float]:
        """Lowest weighted Gini over candidate features; ties favor the
        lowest feature index (features scanned ascending, strict improvement)
        and, within a feature, the lowest threshold (first argmin)."""
        n = idx.size
        best_gini, best_feat, best_thr = np.inf, _LEAF, np.nan
        for f in feats:
            v = x[idx, f]
            order = np.argsort(v, kind="stable")
            vs = v[order]
            ys = y[idx][order]
            cut = np.flatnonzero(vs[1:] > vs[:-1])
            if cut.size == 0:
                continue
            mal = np.cumsum(ys == MALICIOUS)
            n_left = cut + 1.0
            n_right = n - n_left
            mal_left = mal[cut]
            mal_right = mal[-1] - mal_left
            g_left = 1.0 - (mal_left / n_left) ** 2 - ((n_left - mal_left) / n_left) ** 2
            g_right = (
                1.0 - (mal_right / n_right) ** 2 - ((n_right - mal_right) / n_right) ** 2
            )
            weighted = (n_left * g_left + n_right * g_right) / n
            j = int(np.argmin(weighted))
            if weighted[j] < best_gini:
                best_gini = float(weighted[j])
                best_feat = int(f)
                best_thr = float((vs[cut[j]] + vs[cut[j] + 1]) / 2.0)
        return best_gini, best_feat, best_thr

    def fit(self, x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> "DecisionTree":
        n_features = x.shape[1]
        k = self._n_candidates(n_features)
        p = self.params

        feature: list[int] = []
        threshold: list[float] = []
        left: list[int] = []
        right: list[int] = []
        counts: list[tuple[int, int]] = []

        def new_node(idx: np.ndarray) -> int:
            node = len(feature)
            feature.append(_LEAF)
            threshold.append(np.nan)
            left.append(_LEAF)
            right.append(_LEAF)
            n_mal = int((y[idx] == MALICIOUS).sum())
            counts.append((idx.size - n_mal, n_mal))
            return node

        root_idx = np.arange(x.shape[0])
        stack: list[tuple[int, np.ndarray, int]] = [(new_node(root_idx), root_idx, 0)]
        while stack:
            node, idx, depth = stack.pop()
            n_mal = counts[node][1]
            pure = n_mal == 0 or n_mal == idx.size
            depth_capped = p.max_depth is not None and depth >= p.max_depth
            if pure or depth_capped or idx.size < p.min_samples_split:
                continue
            feats = np.sort(rng.choice(n_features, size=k, replace=False))
            _, f, thr = self._best_split(x, y, idx, feats)
            if f == _LEAF and k < n_features:
                # sampled features were constant on this node; retry with all
                _, f, thr = self._best_split(x, y, idx, np.arange(n_features))
            if f == _LEAF:
                continue
            go_left = x[idx, f] <= thr
            feature[node] = f
            threshold[node] = thr
            left_idx = idx[go_left]
            right_idx = idx[~go_left]
            left[node] = new_node(left_idx)
            stack.append((left[node], left_idx, depth + 1))
            right[node] = new_node(right_idx)
            stack.append((right[node], right_idx, depth + 1))

        self.feature = np.array(feature, dtype=np.int64)
        self.threshold = np.array(threshold, dtype=float)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.counts = np.array(counts, dtype=np.int64)
        # leaf majority vote; exact count ties go to malicious
        self.vote = np.where(
            self.counts[:, MALICIOUS] >= self.counts[:, BENIGN], MALICIOUS, BENIGN
        ).astype(np.int64)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        active = self.feature[node] != _LEAF
        rows = np.arange(x.shape[0])
        while active.any():
            cur = node[active]
            go_left = x[rows[active], self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] != _LEAF
        return self.vote[node]


class RandomForest:
    kind = "rf"

    _CHUNK = 2048

    def __init__(self, params: RFParams, seed: int = 0):
        self.params = params
        self.side = ""
        self.scaler = None
        self._seed = seed
        self.trees: list[DecisionTree] = []
        self.n_features: int | None = None
        self._packed: tuple[np.ndarray, ...] | None = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "RandomForest":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        if np.unique(y).size < 2:
            raise TrainingError("forest training needs both classes")
        self.n_features = x.shape[1]
        n = x.shape[0]
        self.trees = []
        for child in np.random.SeedSequence(self._seed).spawn(self.params.n_estimators):
            rng = np.random.default_rng(child)
            if self.params.bootstrap:
                sample = rng.integers(0, n, size=n)
                self.trees.append(DecisionTree(self.params).fit(x[sample], y[sample], rng))
            else:
                self.trees.append(DecisionTree(self.params).fit(x, y, rng))
        self._packed = None
        return self

    def _pack(self) -> tuple[np.ndarray, ...]:
        """Pad all trees into (n_trees, max_nodes) matrices so a whole batch
        descends every tree simultaneously; crafting queries the surrogate
        thousands of times, so per-tree Python loops are too slow."""
        if self._packed is None:
            n_nodes = max(t.feature.size for t in self.trees)
            T = len(self.trees)
            feat = np.full((T, n_nodes), _LEAF, dtype=np.int64)
            thr = np.zeros((T, n_nodes))
            left = np.zeros((T, n_nodes), dtype=np.int64)
            right = np.zeros((T, n_nodes), dtype=np.int64)
            vote = np.zeros((T, n_nodes), dtype=np.int64)
            for i, t in enumerate(self.trees):
                k = t.feature.size
                feat[i, :k] = t.feature
                thr[i, :k] = t.threshold
                left[i, :k] = t.left
                right[i, :k] = t.right
                vote[i, :k] = t.vote
            self._packed = (feat, np.nan_to_num(thr), left, right, vote)
        return self._packed

    def _vote_fraction(self, x2: np.ndarray) -> np.ndarray:
        feat, thr, left, right, vote = self._pack()
        T = feat.shape[0]
        tree_ix = np.arange(T)[:, None]
        node = np.zeros((T, x2.shape[0]), dtype=np.int64)
        f = feat[tree_ix, node]
        internal = f != _LEAF
        while internal.any():
            vals = x2[np.arange(x2.shape[0])[None, :], np.where(internal, f, 0)]
            go_left = vals <= thr[tree_ix, node]
            nxt = np.where(go_left, left[tree_ix, node], right[tree_ix, node])
            node = np.where(internal, nxt, node)
            f = feat[tree_ix, node]
            internal = f != _LEAF
        return (vote[tree_ix, node] == MALICIOUS).mean(axis=0)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x2, single = _as2d(x)
        check_arity(x2, self.n_features)
        p_mal = np.empty(x2.shape[0])
        for start in range(0, x2.shape[0], self._CHUNK):
            block = x2[start : start + self._CHUNK]
            p_mal[start : start + self._CHUNK] = self._vote_fraction(block)
        proba = np.column_stack([1.0 - p_mal, p_mal])
        return proba[0] if single else proba

    def predict(self, x: np.ndarray) -> np.ndarray | int:
        x2, single = _as2d(x)
        labels = labels_from_proba(np.atleast_2d(self.predict_proba(x2)))
        return int(labels[0]) if single else labels

    # -- persistence -----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {
            "n_features": np.array([self.n_features]),
            "n_trees": np.array([len(self.trees)]),
        }
        for i, t in enumerate(self.trees):
            out[f"t{i}_feature"] = t.feature
            out[f"t{i}_threshold"] = t.threshold
            out[f"t{i}_left"] = t.left
            out[f"t{i}_right"] = t.right
            out[f"t{i}_counts"] = t.counts
        return out

    @classmethod
    def from_state(cls, params: RFParams, arrays: dict[str, np.ndarray]) -> "RandomForest":
        model = cls(params)
        model.n_features = int(arrays["n_features"][0])
        for i in range(int(arrays["n_trees"][0])):
            tree = DecisionTree(params)
            tree.feature = arrays[f"t{i}_feature"]
            tree.threshold = arrays[f"t{i}_threshold"]
            tree.left = arrays[f"t{i}_left"]
            tree.right = arrays[f"t{i}_right"]
            tree.counts = arrays[f"t{i}_counts"]
            tree.vote = np.where(
                tree.counts[:, MALICIOUS] >= tree.counts[:, BENIGN], MALICIOUS, BENIGN
            ).astype(np.int64)
            model.trees.append(tree)
        return model
