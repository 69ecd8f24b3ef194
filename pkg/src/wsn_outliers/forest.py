"""Random forest for binary outlier labels.

Bootstrap rows per tree, Gini-best axis splits over ``mtry`` random features
per node, majority vote, out-of-bag error, and the two usual importance
measures (permutation MDA and mean Gini decrease).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateLabels, InvalidArgument, NoOOBRows
from .features import FeatureMatrix

FORMAT_VERSION = 1
DEFAULT_TREES = 36
DEFAULT_MAX_DEPTH = 12
DEFAULT_MIN_LEAF = 5
_MIN_GAIN = 1e-12
LEAF = -1


def gini_impurity(class_proportions) -> float:
    p = np.asarray(class_proportions, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or np.any(p > 1) or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
        raise InvalidArgument("proportions must lie in [0, 1] and sum to 1")
    return float(1.0 - np.sum(p * p))


def _gini(pos, n):
    p = pos / n
    return 2.0 * p * (1.0 - p)


@dataclass
class Tree:
    """Flat pre-order tree. ``feature == LEAF`` marks leaves.

    ``prob`` is P(class 1) at every node; ``gain`` is the Gini decrease of
    internal nodes weighted by the share of bootstrap rows reaching them.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    prob: np.ndarray
    gain: np.ndarray

    def __len__(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] != LEAF
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active[idx] = self.feature[node[idx]] != LEAF
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        # leaf class = argmax of leaf probabilities, 50/50 goes to the outlier class
        return (self.prob[self.apply(X)] >= 0.5).astype(np.int8)

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self), dtype=np.int64)
        for i in range(len(self)):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())


def _best_split(X, y, idx, features, min_leaf):
    n = len(idx)
    pos = y[idx].sum()
    parent = _gini(pos, n)
    best = (_MIN_GAIN, None, None)
    sizes = np.arange(1, n)
    for f in features:
        v = X[idx, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        cum = np.cumsum(y[idx][order])[:-1]
        ok = (vs[1:] > vs[:-1]) & (sizes >= min_leaf) & (n - sizes >= min_leaf)
        if not ok.any():
            continue
        child = (sizes * _gini(cum, sizes)
                 + (n - sizes) * _gini(pos - cum, n - sizes)) / n
        gain = np.where(ok, parent - child, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best[0]:
            thr = 0.5 * (vs[i] + vs[i + 1])
            if thr >= vs[i + 1]:
                thr = vs[i]
            best = (float(gain[i]), int(f), float(thr))
    return best


def build_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator,
               mtry: int, max_depth: int | None = DEFAULT_MAX_DEPTH,
               min_leaf: int = DEFAULT_MIN_LEAF) -> Tree:
    """Grow one tree on all rows of ``(X, y)``."""
    n_rows, n_features = X.shape
    max_depth = math.inf if max_depth is None else max_depth
    feature, threshold, left, right, prob, gain = [], [], [], [], [], []
    # (row indices, depth, parent node, is_left)
    stack = [(np.arange(n_rows), 0, -1, False)]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = node
        p1 = float(y[idx].mean())
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        prob.append(p1)
        gain.append(0.0)
        if depth >= max_depth or len(idx) < 2 * min_leaf or p1 in (0.0, 1.0):
            continue
        feats = np.sort(rng.choice(n_features, size=mtry, replace=False))
        g, f, thr = _best_split(X, y, idx, feats, min_leaf)
        if f is None:
            continue
        feature[node], threshold[node] = f, thr
        gain[node] = g * len(idx) / n_rows
        go_left = X[idx, f] <= thr
        stack.append((idx[~go_left], depth + 1, node, False))
        stack.append((idx[go_left], depth + 1, node, True))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(prob), np.array(gain))


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    """Per-tree generator; independent of how many trees are grown."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tree_index,)))


def bootstrap_indices(rng: np.random.Generator, n_rows: int) -> np.ndarray:
    return rng.integers(0, n_rows, size=n_rows)


@dataclass
class Forest:
    trees: list[Tree]
    oob: list[np.ndarray]  # per tree: sorted row indices left out of its bootstrap
    feature_names: tuple[str, ...]
    seed: int
    n_rows: int
    params: dict = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def votes(self, X: np.ndarray, n_trees: int | None = None) -> np.ndarray:
        trees = self.trees[:n_trees]
        return np.sum([t.predict(X) for t in trees], axis=0)

    def predict_proba(self, X, n_trees: int | None = None) -> np.ndarray:
        """Fraction of trees voting for class 1."""
        X = _as_array(X)
        k = len(self.trees[:n_trees])
        return self.votes(X, n_trees) / k

    def predict(self, X, n_trees: int | None = None) -> np.ndarray:
        # an even split flags the outlier
        return (self.predict_proba(X, n_trees) >= 0.5).astype(np.int8)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(dumps(self), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Forest":
        return loads(Path(path).read_text(encoding="utf-8"))


def _as_array(X) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        return X.X
    return np.atleast_2d(np.asarray(X, dtype=np.float64))


def _fit_one(args):
    X, y, seed, t, mtry, max_depth, min_leaf = args
    rng = tree_rng(seed, t)
    boot = bootstrap_indices(rng, len(y))
    tree = build_tree(X[boot], y[boot], rng, mtry, max_depth, min_leaf)
    in_bag = np.zeros(len(y), dtype=bool)
    in_bag[boot] = True
    return tree, np.flatnonzero(~in_bag)


def fit_forest(matrix: FeatureMatrix, n_trees: int = DEFAULT_TREES,
               max_depth: int | None = DEFAULT_MAX_DEPTH,
               min_leaf: int = DEFAULT_MIN_LEAF, mtry: int | None = None,
               seed: int = 0, n_jobs: int = 1,
               allow_constant: bool = False) -> Forest:
    X = np.asarray(matrix.X, dtype=np.float64)
    y = np.asarray(matrix.y, dtype=np.int64)
    n_features = X.shape[1]
    if mtry is None:
        mtry = math.ceil(math.sqrt(n_features))
    if n_trees < 1 or min_leaf < 1 or not 1 <= mtry <= n_features:
        raise InvalidArgument("need n_trees >= 1, min_leaf >= 1, 1 <= mtry <= n_features")
    if len(y) < 2:
        raise InvalidArgument("need at least two rows")
    if len(np.unique(y)) < 2 and not allow_constant:
        raise DegenerateLabels("training data holds a single class")
    jobs = [(X, y, seed, t, mtry, max_depth, min_leaf) for t in range(n_trees)]
    if n_jobs > 1 and n_trees > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            fitted = list(pool.map(_fit_one, jobs))
    else:
        fitted = [_fit_one(j) for j in jobs]
    return Forest([t for t, _ in fitted], [o for _, o in fitted],
                  tuple(matrix.feature_names), seed, len(y),
                  {"max_depth": max_depth, "min_leaf": min_leaf, "mtry": mtry})


def predict(forest: Forest, row) -> tuple[int, float]:
    """Class of one row and the vote share behind it."""
    x = np.asarray([getattr(row, n) for n in forest.feature_names]
                   if hasattr(row, "fn") else row, dtype=np.float64)
    p1 = float(forest.predict_proba(x.reshape(1, -1))[0])
    return (1, p1) if p1 >= 0.5 else (0, 1.0 - p1)


def _oob_votes(forest: Forest, X: np.ndarray, n_trees: int | None):
    ones = np.zeros(len(X))
    count = np.zeros(len(X))
    for tree, oob in zip(forest.trees[:n_trees], forest.oob[:n_trees]):
        if len(oob):
            ones[oob] += tree.predict(X[oob])
            count[oob] += 1
    return ones, count


def oob_error(forest: Forest, matrix: FeatureMatrix, n_trees: int | None = None) -> float:
    """Misclassified share among rows with at least one out-of-bag tree.

    ``n_trees`` restricts the vote to the first trees, which equals the OOB
    error of a smaller forest grown with the same seed.
    """
    X = _as_array(matrix)
    if len(X) != forest.n_rows:
        raise InvalidArgument("matrix does not match the training data")
    ones, count = _oob_votes(forest, X, n_trees)
    has = count > 0
    if not has.any():
        raise NoOOBRows("every row is in every bootstrap sample")
    pred = (ones[has] / count[has] >= 0.5).astype(np.int8)
    return float(np.mean(pred != np.asarray(matrix.y)[has]))


@dataclass(frozen=True)
class FeatureImportance:
    feature: str
    mda: float
    mdg: float


@dataclass
class ImportanceReport:
    features: list[FeatureImportance]

    def __getitem__(self, name: str) -> FeatureImportance:
        for f in self.features:
            if f.feature == name:
                return f
        raise KeyError(name)

    def ranked(self, by: str = "mda") -> list[FeatureImportance]:
        return sorted(self.features, key=lambda f: -getattr(f, by))


def importance(forest: Forest, matrix: FeatureMatrix, seed: int = 0) -> ImportanceReport:
    """Permutation MDA on each tree's OOB rows, and mean Gini decrease."""
    X = _as_array(matrix)
    y = np.asarray(matrix.y)
    if len(X) != forest.n_rows:
        raise InvalidArgument("matrix does not match the training data")
    n_features = X.shape[1]
    drops = np.zeros(n_features)
    used = 0
    for t, (tree, oob) in enumerate(zip(forest.trees, forest.oob)):
        if not len(oob):
            continue
        used += 1
        Xo, yo = X[oob], y[oob]
        base = np.mean(tree.predict(Xo) == yo)
        for j in range(n_features):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(t, j)))
            Xp = Xo.copy()
            Xp[:, j] = Xp[rng.permutation(len(oob)), j]
            drops[j] += base - np.mean(tree.predict(Xp) == yo)
    if not used:
        raise NoOOBRows("no tree has out-of-bag rows")
    mda = drops / used
    mdg = np.zeros(n_features)
    for tree in forest.trees:
        internal = tree.feature != LEAF
        np.add.at(mdg, tree.feature[internal], tree.gain[internal])
    mdg /= forest.n_trees
    return ImportanceReport([FeatureImportance(name, float(mda[j]), float(mdg[j]))
                             for j, name in enumerate(forest.feature_names)])


def dumps(forest: Forest) -> str:
    """Versioned text form: header, then per tree its OOB rows and pre-order nodes."""
    p = forest.params
    lines = [
        f"wsn-forest {FORMAT_VERSION}",
        "features " + " ".join(forest.feature_names),
        f"seed {forest.seed}",
        f"rows {forest.n_rows}",
        f"params max_depth={p.get('max_depth')} min_leaf={p.get('min_leaf')} mtry={p.get('mtry')}",
        f"trees {forest.n_trees}",
    ]
    for i, (tree, oob) in enumerate(zip(forest.trees, forest.oob)):
        lines.append(f"tree {i} {len(tree)}")
        lines.append("oob " + " ".join(map(str, oob.tolist())))
        for k in range(len(tree)):
            if tree.feature[k] == LEAF:
                lines.append(f"L {float(tree.prob[k])!r}")
            else:
                lines.append(f"S {tree.feature[k]} {float(tree.threshold[k])!r} "
                             f"{float(tree.prob[k])!r} {float(tree.gain[k])!r}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> Forest:
    lines = iter(text.splitlines())
    magic, version = next(lines).split()
    if magic != "wsn-forest" or int(version) != FORMAT_VERSION:
        raise InvalidArgument(f"unsupported forest format {magic} {version}")
    names = tuple(next(lines).split()[1:])
    seed = int(next(lines).split()[1])
    n_rows = int(next(lines).split()[1])
    params = {}
    for kv in next(lines).split()[1:]:
        key, val = kv.split("=")
        params[key] = None if val == "None" else int(val)
    n_trees = int(next(lines).split()[1])
    trees, oobs = [], []
    for _ in range(n_trees):
        n_nodes = int(next(lines).split()[2])
        oobs.append(np.array([int(v) for v in next(lines).split()[1:]], dtype=np.int64))
        nodes = [next(lines).split() for _ in range(n_nodes)]
        trees.append(_tree_from_preorder(nodes))
    return Forest(trees, oobs, names, seed, n_rows, params)


def _tree_from_preorder(nodes: list[list[str]]) -> Tree:
    n = len(nodes)
    feature = np.full(n, LEAF, dtype=np.int64)
    threshold = np.zeros(n)
    left = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)
    prob = np.zeros(n)
    gain = np.zeros(n)
    pending: list[int] = []  # internal nodes still waiting for a right child
    for i, tok in enumerate(nodes):
        if pending:
            parent = pending[-1]
            if left[parent] < 0:
                left[parent] = i
            else:
                right[parent] = i
                pending.pop()
        if tok[0] == "S":
            feature[i], threshold[i] = int(tok[1]), float(tok[2])
            prob[i], gain[i] = float(tok[3]), float(tok[4])
            pending.append(i)
        else:
            prob[i] = float(tok[1])
    return Tree(feature, threshold, left, right, prob, gain)
