"""Interpretable anomaly detector: a CART decision tree written from scratch.

Splits minimise weighted Gini impurity over midpoints between consecutive
distinct feature values. Rows are weighted by balanced class weights
``w_k = N / (K * N_k)``. Growth continues until a node is pure or no feature
varies inside it; minimal cost-complexity (weakest-link) pruning then trims
the tree. Rows go left iff ``x[feature] <= threshold``.

Exact ties in split quality are broken by the lowest feature index, then the
lowest threshold. Quality values closer than ``TIE_RTOL * node_mass`` count as
ties so that mathematically equal splits compare equal despite rounding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .monitor import feature_name

LABELS = ("none", "noise", "blur", "contrast", "memory")
FAULT_LABELS = LABELS[1:]
CATEGORY = {"none": "none", "noise": "input", "blur": "input", "contrast": "input", "memory": "memory"}
TIE_RTOL = 1e-10
DEFAULT_CCP_ALPHA = 1.5e-5


def gini_impurity(masses) -> float:
    """``1 - sum_k (m_k / M)^2`` for nonnegative class masses."""
    m = np.asarray(masses, dtype=np.float64)
    total = m.sum()
    if total <= 0 or np.any(m < 0):
        raise ConfigurationError("Gini impurity needs nonnegative masses with a positive total")
    return float(1.0 - np.sum((m / total) ** 2))


def _encode(labels: Sequence[str]) -> tuple[np.ndarray, tuple[str, ...]]:
    labels = np.asarray(labels)
    unknown = set(labels.tolist()) - set(LABELS)
    if unknown:
        raise ConfigurationError(f"unknown labels {sorted(unknown)}")
    classes = tuple(c for c in LABELS if c in set(labels.tolist()))
    lookup = {c: i for i, c in enumerate(classes)}
    return np.array([lookup[v] for v in labels.tolist()], dtype=np.int64), classes


@dataclass
class LabeledDataset:
    """Anomaly feature rows with their fault labels."""

    X: np.ndarray
    y: np.ndarray
    image_ids: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y).astype(str)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ConfigurationError(f"X {self.X.shape} and y {self.y.shape} do not match")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def class_weights(self) -> dict[str, float]:
        """Balanced weights ``N_total / (K * N_k)`` over the classes present."""
        labels, counts = np.unique(self.y, return_counts=True)
        k = len(labels)
        return {str(c): len(self.y) / (k * n) for c, n in zip(labels, counts)}

    def subset(self, mask) -> LabeledDataset:
        ids = None if self.image_ids is None else self.image_ids[mask]
        return LabeledDataset(self.X[mask], self.y[mask], ids)


@dataclass
class DecisionTree:
    """Fitted tree stored as parallel node arrays in pre-order.

    Leaves have ``feature == -1``. ``value`` holds weighted class masses per
    node over ``classes``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    classes: tuple[str, ...]
    n_features: int
    ccp_alpha: float = 0.0
    seed: int = 0
    features: tuple[int, ...] = ()
    impurity: np.ndarray = field(init=False)

    def __post_init__(self):
        mass = self.value.sum(axis=1)
        self.impurity = 1.0 - np.sum((self.value / mass[:, None]) ** 2, axis=1)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def mass(self) -> np.ndarray:
        return self.value.sum(axis=1)

    def depth(self) -> int:
        depth = np.zeros(self.node_count, dtype=np.int64)
        for t in range(self.node_count):
            if self.feature[t] >= 0:
                depth[self.left[t]] = depth[self.right[t]] = depth[t] + 1
        return int(depth.max())

    def leaf_class(self, node: int) -> str:
        return self.classes[int(np.argmax(self.value[node]))]

    def used_features(self) -> tuple[int, ...]:
        return tuple(sorted(set(int(f) for f in self.feature if f >= 0)))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        used = self.used_features()
        if used and X.shape[1] <= used[-1]:
            raise ConfigurationError(
                f"feature vector of length {X.shape[1]} lacks feature index {used[-1]}"
            )
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            t = node[active]
            go_left = X[active, self.feature[t]] <= self.threshold[t]
            node[active] = np.where(go_left, self.left[t], self.right[t])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X: np.ndarray):
        """Predicted label for one feature vector, or an array of labels for a matrix."""
        X = np.asarray(X)
        leaves = self.apply(X)
        labels = np.array(self.classes)[np.argmax(self.value[leaves], axis=1)]
        return str(labels[0]) if X.ndim == 1 else labels


def predict(tree: DecisionTree, x: np.ndarray):
    return tree.predict(x)


# ----------------------------------------------------------------------------
# Growth
# ----------------------------------------------------------------------------


def _best_split(vals: np.ndarray, cls: np.ndarray, w: np.ndarray, n_classes: int,
                parent: np.ndarray):
    """Best (row, position) over presorted (F, m) feature values, or None."""
    F, m = vals.shape
    onehot = np.zeros((F, m, n_classes))
    np.put_along_axis(onehot, cls[..., None], w[..., None], axis=2)
    left = np.cumsum(onehot, axis=1)[:, :-1]  # masses left of each cut
    right = parent - left
    ml = left.sum(axis=2)
    mr = right.sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (left ** 2).sum(axis=2) / ml + (right ** 2).sum(axis=2) / mr
    score[~(vals[:, :-1] < vals[:, 1:])] = -np.inf
    best = score.max()
    if not np.isfinite(best):
        return None
    tol = TIE_RTOL * parent.sum()
    f, i = np.argwhere(score >= best - tol)[0]
    return int(f), int(i), float(best)


def grow_tree(data: LabeledDataset, seed: int = 0, features: Sequence[int] | None = None,
              sample_weight: np.ndarray | None = None) -> DecisionTree:
    """Grow an unpruned CART tree (see module docstring for the rules)."""
    if len(data) == 0:
        raise ConfigurationError("cannot fit a tree on an empty dataset")
    y, classes = _encode(data.y)
    K = len(classes)
    weights = data.class_weights()
    w = np.array([weights[c] for c in classes])[y]
    if sample_weight is not None:
        w = w * np.asarray(sample_weight, dtype=np.float64)
    feats = np.array(sorted(set(range(data.n_features) if features is None else features)), dtype=np.int64)
    if feats.size and (feats[0] < 0 or feats[-1] >= data.n_features):
        raise ConfigurationError("feature subset outside the dataset width")
    XT = np.ascontiguousarray(data.X[:, feats].T)  # (F, n)
    n = len(y)
    mark = np.zeros(n, dtype=bool)

    feature, threshold, left, right, value, n_samples = [], [], [], [], [], []

    def new_node(rows):
        masses = np.bincount(y[rows], weights=w[rows], minlength=K)
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(masses)
        n_samples.append(len(rows))
        return len(feature) - 1

    order = np.argsort(XT, axis=1, kind="stable") if feats.size else np.zeros((0, n), dtype=np.int64)
    root = new_node(np.arange(n))
    stack = [(root, order)]
    while stack:
        node, S = stack.pop()
        masses = value[node]
        m = n_samples[node]
        if m < 2 or np.count_nonzero(masses) <= 1 or S.shape[0] == 0:
            continue
        vals = np.take_along_axis(XT, S, axis=1)
        found = _best_split(vals, y[S], w[S], K, masses)
        if found is None:
            continue
        f, i, _ = found
        lo, hi = vals[f, i], vals[f, i + 1]
        thr = (lo + hi) / 2.0
        if not lo < thr < hi:
            thr = lo  # adjacent doubles: the midpoint rounds onto an endpoint
        rows_left = S[f, :i + 1]
        mark[rows_left] = True
        goes = mark[S]
        S_left = S[goes].reshape(S.shape[0], i + 1)
        S_right = S[~goes].reshape(S.shape[0], m - i - 1)
        mark[rows_left] = False
        feature[node] = int(feats[f])
        threshold[node] = float(thr)
        left[node] = new_node(S_left[0])
        right[node] = new_node(S_right[0])
        # Right pushed first so the left subtree is numbered first (pre-order).
        stack.append((right[node], S_right))
        stack.append((left[node], S_left))

    # new_node numbers children when their parent splits, so re-number to true pre-order.
    return _reindex_preorder(DecisionTree(
        np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64), np.array(value), np.array(n_samples, dtype=np.int64),
        classes, data.n_features, 0.0, seed, tuple(int(f) for f in feats),
    ))


def _reindex_preorder(tree: DecisionTree, keep_leaf: np.ndarray | None = None) -> DecisionTree:
    """Copy of ``tree`` renumbered in pre-order; nodes flagged in ``keep_leaf`` become leaves."""
    order = []
    stack = [0]
    while stack:
        t = stack.pop()
        order.append(t)
        if tree.feature[t] >= 0 and not (keep_leaf is not None and keep_leaf[t]):
            stack.append(tree.right[t])
            stack.append(tree.left[t])
    order = np.array(order, dtype=np.int64)
    new_id = np.full(tree.node_count, -1, dtype=np.int64)
    new_id[order] = np.arange(len(order))
    feature = tree.feature[order].copy()
    threshold = tree.threshold[order].copy()
    if keep_leaf is not None:
        collapsed = keep_leaf[order]
        feature[collapsed] = -1
        threshold[collapsed] = np.nan
    is_leaf = feature < 0
    left = np.where(is_leaf, -1, new_id[tree.left[order]])
    right = np.where(is_leaf, -1, new_id[tree.right[order]])
    return DecisionTree(feature, threshold, left, right, tree.value[order].copy(),
                        tree.n_samples[order].copy(), tree.classes, tree.n_features,
                        tree.ccp_alpha, tree.seed, tree.features)


# ----------------------------------------------------------------------------
# Pruning
# ----------------------------------------------------------------------------


def ccp_prune(tree: DecisionTree, alpha: float) -> DecisionTree:
    """Minimal cost-complexity pruning.

    Repeatedly collapses the internal node with the smallest effective alpha
    ``(R(t) - R(T_t)) / (|leaves(T_t)| - 1)`` while it is ``<= alpha``, where
    ``R`` is mass-fraction-weighted Gini impurity. ``alpha == 0`` returns an
    unchanged copy.
    """
    if alpha < 0:
        raise ConfigurationError(f"ccp_alpha must be >= 0, got {alpha}")
    tree = _reindex_preorder(tree)
    if alpha == 0 or tree.node_count == 1:
        out = _reindex_preorder(tree)
        out.ccp_alpha = float(alpha)
        return out
    n = tree.node_count
    mass = tree.mass
    risk = tree.impurity * mass / mass[0]
    internal = tree.feature >= 0
    parent = np.full(n, -1, dtype=np.int64)
    parent[tree.left[internal]] = np.flatnonzero(internal)
    parent[tree.right[internal]] = np.flatnonzero(internal)
    # Children carry larger ids than parents, so a descending sweep is post-order.
    sub_risk = risk.copy()
    leaves = np.ones(n, dtype=np.int64)
    size = np.ones(n, dtype=np.int64)
    for t in range(n - 1, -1, -1):
        if internal[t]:
            l, r = tree.left[t], tree.right[t]
            sub_risk[t] = sub_risk[l] + sub_risk[r]
            leaves[t] = leaves[l] + leaves[r]
            size[t] = 1 + size[l] + size[r]
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(internal, (risk - sub_risk) / (leaves - 1), np.inf)
    collapsed = np.zeros(n, dtype=bool)
    while True:
        t = int(np.argmin(g))
        if not g[t] <= alpha:
            break
        collapsed[t] = True
        g[t:t + size[t]] = np.inf  # the node and its (contiguous, pre-order) subtree
        d_risk = sub_risk[t] - risk[t]
        d_leaves = leaves[t] - 1
        sub_risk[t], leaves[t] = risk[t], 1
        a = parent[t]
        while a >= 0:
            sub_risk[a] -= d_risk
            leaves[a] -= d_leaves
            if not collapsed[a]:
                g[a] = (risk[a] - sub_risk[a]) / (leaves[a] - 1)
            a = parent[a]
        if t == 0:
            break
    out = _reindex_preorder(tree, keep_leaf=collapsed)
    out.ccp_alpha = float(alpha)
    return out


def fit_tree(data: LabeledDataset, ccp_alpha: float = DEFAULT_CCP_ALPHA, seed: int = 0,
             features: Sequence[int] | None = None) -> DecisionTree:
    """Grow a CART tree on ``data`` and prune it with ``ccp_alpha``.

    ``seed`` is recorded as metadata only: split selection is deterministic.
    """
    if ccp_alpha < 0:
        raise ConfigurationError(f"ccp_alpha must be >= 0, got {ccp_alpha}")
    return ccp_prune(grow_tree(data, seed=seed, features=features), ccp_alpha)


def gini_importances(tree: DecisionTree, normalize: bool = True) -> np.ndarray:
    """Total mass-weighted impurity decrease per feature.

    Without normalisation the entries sum to the root impurity minus the
    mass-weighted leaf impurities.
    """
    imp = np.zeros(tree.n_features)
    mass = tree.mass
    frac = mass / mass[0]
    for t in np.flatnonzero(tree.feature >= 0):
        l, r = tree.left[t], tree.right[t]
        dec = (frac[t] * tree.impurity[t] - frac[l] * tree.impurity[l] - frac[r] * tree.impurity[r])
        imp[tree.feature[t]] += dec
    if normalize:
        total = imp.sum()
        return imp / total if total > 0 else np.zeros_like(imp)
    return imp


# ----------------------------------------------------------------------------
# Export
# ----------------------------------------------------------------------------


def export_text(tree: DecisionTree, n_layers: int) -> str:
    lines = []

    def walk(t: int, depth: int):
        pad = "    " * depth
        if tree.feature[t] < 0:
            lines.append(f"{pad}predict {tree.leaf_class(t)}")
            return
        name = feature_name(int(tree.feature[t]), n_layers)
        lines.append(f"{pad}if {name} <= {float(tree.threshold[t])!r}:")
        walk(int(tree.left[t]), depth + 1)
        lines.append(f"{pad}else:")
        walk(int(tree.right[t]), depth + 1)

    stack_limit = tree.depth()
    if stack_limit > 900:
        raise ConfigurationError(f"tree depth {stack_limit} too large for text export")
    walk(0, 0)
    return "\n".join(lines) + "\n"


def export_document(tree: DecisionTree, n_layers: int | None = None) -> dict:
    """Lossless node-list description (JSON-serialisable)."""
    parent = np.full(tree.node_count, -1, dtype=np.int64)
    for t in np.flatnonzero(tree.feature >= 0):
        parent[tree.left[t]] = parent[tree.right[t]] = t
    nodes = []
    for t in range(tree.node_count):
        node = {"id": t, "parent": int(parent[t]), "n_samples": int(tree.n_samples[t]),
                "value": [float(v) for v in tree.value[t]]}
        if tree.feature[t] >= 0:
            node.update(feature=int(tree.feature[t]), threshold=float(tree.threshold[t]),
                        left=int(tree.left[t]), right=int(tree.right[t]))
            if n_layers:
                node["name"] = feature_name(int(tree.feature[t]), n_layers)
        else:
            node["class"] = tree.leaf_class(t)
        nodes.append(node)
    return {"classes": list(tree.classes), "n_features": tree.n_features,
            "ccp_alpha": tree.ccp_alpha, "seed": tree.seed, "features": list(tree.features),
            "nodes": nodes}


def export_tree(tree: DecisionTree, n_layers: int) -> tuple[str, dict]:
    """Human-readable rules plus the structured document."""
    return export_text(tree, n_layers), export_document(tree, n_layers)


def import_tree(doc: dict | str) -> DecisionTree:
    if isinstance(doc, str):
        doc = json.loads(doc)
    nodes = sorted(doc["nodes"], key=lambda d: d["id"])
    n = len(nodes)
    feature = np.full(n, -1, dtype=np.int64)
    threshold = np.full(n, np.nan)
    left = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)
    for d in nodes:
        if "feature" in d:
            t = d["id"]
            feature[t], threshold[t], left[t], right[t] = d["feature"], d["threshold"], d["left"], d["right"]
    return DecisionTree(feature, threshold, left, right, np.array([d["value"] for d in nodes]),
                        np.array([d["n_samples"] for d in nodes], dtype=np.int64),
                        tuple(doc["classes"]), int(doc["n_features"]), float(doc["ccp_alpha"]),
                        int(doc["seed"]), tuple(doc["features"]))


# ----------------------------------------------------------------------------
# Evaluation
# ----------------------------------------------------------------------------


@dataclass
class EvalReport:
    precision: dict[str, float]
    recall: dict[str, float]
    class_counts: dict[str, tuple[int, int, int]]
    category_counts: dict[str, tuple[int, int, int]]
    sdc_counts: tuple[int, int, int]
    confusion: np.ndarray  # rows: truth, cols: prediction, over LABELS

    def to_dict(self) -> dict:
        return {
            "precision": self.precision, "recall": self.recall,
            "class_counts": {k: list(v) for k, v in self.class_counts.items()},
            "category_counts": {k: list(v) for k, v in self.category_counts.items()},
            "sdc_counts": list(self.sdc_counts),
            "labels": list(LABELS), "confusion": self.confusion.tolist(),
        }


def _counts(pred: np.ndarray, truth: np.ndarray, k: str) -> tuple[int, int, int]:
    tp = int(np.sum((pred == k) & (truth == k)))
    fp = int(np.sum((pred == k) & (truth != k)))
    fn = int(np.sum((pred != k) & (truth == k)))
    return tp, fp, fn


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _macro(counts: dict[str, tuple[int, int, int]]) -> tuple[float, float]:
    if not counts:
        return 1.0, 1.0
    p = [_ratio(tp, tp + fp) for tp, fp, _ in counts.values()]
    r = [_ratio(tp, tp + fn) for tp, _, fn in counts.values()]
    return float(np.mean(p)), float(np.mean(r))


def evaluate_modes(predictions: Sequence[str], truths: Sequence[str]) -> EvalReport:
    """Precision/recall in the class, category and SDC-presence modes.

    ``none`` is the negative class everywhere. Class and category scores are
    unweighted means over the fault classes (categories) that occur in the
    truths or predictions; a 0/0 ratio for such a class counts as 0.
    """
    pred = np.asarray(predictions).astype(str)
    truth = np.asarray(truths).astype(str)
    if pred.shape != truth.shape:
        raise ConfigurationError("predictions and truths differ in length")
    unknown = (set(pred.tolist()) | set(truth.tolist())) - set(LABELS)
    if unknown:
        raise ConfigurationError(f"unknown labels {sorted(unknown)}")
    present = set(pred.tolist()) | set(truth.tolist())
    class_counts = {k: _counts(pred, truth, k) for k in FAULT_LABELS if k in present}
    cat = np.vectorize(CATEGORY.get, otypes=[object])
    pc, tc = (cat(pred), cat(truth)) if len(pred) else (pred, truth)
    cats_present = {CATEGORY[k] for k in present} - {"none"}
    category_counts = {c: _counts(pc, tc, c) for c in ("input", "memory") if c in cats_present}
    sdc_counts = _counts(pred != "none", truth != "none", True)
    p_cls, r_cls = _macro(class_counts)
    p_cat, r_cat = _macro(category_counts)
    tp, fp, fn = sdc_counts
    if tp + fp + fn == 0:
        p_sdc = r_sdc = 1.0
    else:
        p_sdc, r_sdc = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    index = {k: i for i, k in enumerate(LABELS)}
    confusion = np.zeros((len(LABELS), len(LABELS)), dtype=np.int64)
    np.add.at(confusion, ([index[t] for t in truth.tolist()], [index[p] for p in pred.tolist()]), 1)
    return EvalReport({"cls": p_cls, "cat": p_cat, "sdc": p_sdc},
                      {"cls": r_cls, "cat": r_cat, "sdc": r_sdc},
                      class_counts, category_counts, sdc_counts, confusion)
