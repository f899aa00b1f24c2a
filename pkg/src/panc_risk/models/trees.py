"""Binary decision trees shared by the boosted and bagged learners.

Split search is exact: every feature is pre-sorted once per fit and each
growth step scans the sorted order, accumulating per-node statistics, in a
single compiled pass covering all nodes being expanded.

Routing rule: a row goes left when ``x <= threshold`` or ``x`` is missing
(``missing_goes_left``); thresholds sit midway between adjacent distinct
training values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

NEWTON = 0  # second-order boosting gain on (G, H)
GINI = 1  # weighted Gini decrease on (weight, weighted positives)

MIN_GAIN = 1e-12


@njit(cache=True, nogil=True)
def _soft(g, alpha):
    if g > alpha:
        return g - alpha
    if g < -alpha:
        return g + alpha
    return 0.0


@njit(cache=True, nogil=True)
def _newton_score(g, h, lam, alpha):
    d = h + lam
    if d <= 0.0:
        return 0.0
    t = _soft(g, alpha)
    return t * t / d


@njit(cache=True, nogil=True)
def _gini_mass(w, s):
    # w * Gini(node) for a node of weight w with weighted positives s
    if w <= 0.0:
        return 0.0
    return 2.0 * s * (w - s) / w


@njit(cache=True, nogil=True)
def _parent_score(criterion, ta, tb, lam, alpha):
    if criterion == 0:
        return _newton_score(ta, tb, lam, alpha)
    return _gini_mass(ta, tb)


@njit(cache=True, nogil=True)
def _gain(criterion, la, lb, ta, tb, parent, lam, alpha, min_child):
    ra = ta - la
    rb = tb - lb
    if criterion == 0:
        if lb < min_child or rb < min_child:
            return -1.0
        return 0.5 * (_newton_score(la, lb, lam, alpha) + _newton_score(ra, rb, lam, alpha) - parent)
    if la < min_child or ra < min_child:
        return -1.0
    return parent - _gini_mass(la, lb) - _gini_mass(ra, rb)


@njit(cache=True, nogil=True)
def find_splits(order, xs, n_valid, node_of, n_nodes, a, b, feat_ok, criterion, lam, alpha, min_child):
    """Best split per node.

    ``order[j]`` lists row indices sorted by feature ``j`` (NaN last),
    ``xs[j]`` the matching sorted values and ``n_valid[j]`` the count of
    non-NaN values.  ``node_of[i]`` is the local index (0..n_nodes-1) of the
    node holding row ``i`` or -1 if the row does not take part.  Returns
    (gain, feature, threshold) arrays; feature -1 means no admissible split.
    """
    p, n = order.shape
    ta = np.zeros(n_nodes)
    tb = np.zeros(n_nodes)
    for i in range(n):
        k = node_of[i]
        if k >= 0:
            ta[k] += a[i]
            tb[k] += b[i]
    parent = np.empty(n_nodes)
    for k in range(n_nodes):
        parent[k] = _parent_score(criterion, ta[k], tb[k], lam, alpha)
    best_gain = np.full(n_nodes, MIN_GAIN)
    best_feat = np.full(n_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    la = np.zeros(n_nodes)
    lb = np.zeros(n_nodes)
    last = np.zeros(n_nodes)
    seen = np.zeros(n_nodes, dtype=np.bool_)
    for j in range(p):
        la[:] = 0.0
        lb[:] = 0.0
        seen[:] = False
        # missing values travel left
        for t in range(n_valid[j], n):
            i = order[j, t]
            k = node_of[i]
            if k >= 0:
                la[k] += a[i]
                lb[k] += b[i]
        for t in range(n_valid[j]):
            i = order[j, t]
            k = node_of[i]
            if k < 0 or not feat_ok[k, j]:
                continue
            x = xs[j, t]
            if seen[k] and x > last[k]:
                g = _gain(criterion, la[k], lb[k], ta[k], tb[k], parent[k], lam, alpha, min_child)
                if g > best_gain[k]:
                    best_gain[k] = g
                    best_feat[k] = j
                    mid = last[k] + 0.5 * (x - last[k])
                    best_thr[k] = mid if mid < x else last[k]
            la[k] += a[i]
            lb[k] += b[i]
            last[k] = x
            seen[k] = True
    for k in range(n_nodes):
        if best_feat[k] < 0:
            best_gain[k] = 0.0
    return best_gain, best_feat, best_thr


@dataclass(frozen=True, eq=False)
class Presorted:
    order: np.ndarray  # (p, n) row indices per feature, NaN last
    values: np.ndarray  # (p, n) matching sorted values
    n_valid: np.ndarray  # (p,) non-NaN counts


def presort(X):
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))
    values = np.ascontiguousarray(np.take_along_axis(X.T, order, axis=1))
    n_valid = (~np.isnan(values)).sum(axis=1).astype(np.int64)
    return Presorted(order, values, n_valid)


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat-array binary tree.  ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    gain: np.ndarray  # split gain (boosting) or weighted Gini decrease (forest)
    missing_left: np.ndarray

    @property
    def n_nodes(self):
        return self.feature.size

    def is_leaf(self, i):
        return self.feature[i] < 0

    def depth(self):
        d = np.zeros(self.n_nodes, int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return int(d.max()) if d.size else 0

    def apply(self, X):
        """Leaf index reached by each row."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            x = X[rows, self.feature[nd]]
            go_left = (x <= self.threshold[nd]) | (np.isnan(x) & self.missing_left[nd])
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active[rows] = self.feature[node[rows]] >= 0
        return node

    def predict(self, X):
        return self.value[self.apply(X)]

    def expected_value(self):
        """Cover-weighted mean leaf value."""
        ev = self.value.astype(float).copy()
        for i in range(self.n_nodes - 1, -1, -1):
            if self.feature[i] >= 0:
                l, r = self.left[i], self.right[i]
                ev[i] = (self.cover[l] * ev[l] + self.cover[r] * ev[r]) / self.cover[i]
        return float(ev[0])

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
            "gain": self.gain.tolist(),
            "missing_left": self.missing_left.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
            cover=np.asarray(d["cover"], dtype=float),
            gain=np.asarray(d["gain"], dtype=float),
            missing_left=np.asarray(d["missing_left"], dtype=bool),
        )

    @classmethod
    def leaf(cls, value, cover=1.0):
        return cls.from_dict({"feature": [-1], "threshold": [0.0], "left": [-1], "right": [-1],
                              "value": [value], "cover": [cover], "gain": [0.0], "missing_left": [1]})


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.a, self.b, self.cover, self.gain, self.depth = [], [], [], [], []

    def add(self, a, b, cover, depth):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.a.append(a)
        self.b.append(b)
        self.cover.append(cover)
        self.gain.append(0.0)
        self.depth.append(depth)
        return len(self.feature) - 1

    def finish(self, leaf_value):
        feat = np.asarray(self.feature, dtype=np.int64)
        a, b = np.asarray(self.a), np.asarray(self.b)
        value = np.where(feat < 0, leaf_value(a, b), 0.0)
        return Tree(feat, np.asarray(self.threshold, float), np.asarray(self.left, np.int64),
                    np.asarray(self.right, np.int64), value, np.asarray(self.cover, float),
                    np.asarray(self.gain, float), np.ones(feat.size, bool))


def _route(X, rows, feat, thr):
    x = X[rows, feat]
    return (x <= thr) | np.isnan(x)


def grow_tree(X, order, a, b, weight, *, criterion, leaf_value, max_depth=None, max_leaves=None,
              growth="depthwise", min_child=0.0, reg_lambda=0.0, reg_alpha=0.0, feature_mask=None,
              return_leaves=False):
    """Grow one tree on rows with positive ``weight``.

    ``a``/``b`` are the per-row split statistics already multiplied by the
    weight; ``leaf_value(A, B)`` maps node sums to leaf outputs.
    ``feature_mask(n_nodes)`` returns an ``(n_nodes, p)`` boolean array of
    features each node may split on (None = all).  With ``return_leaves``
    the leaf index of every participating row (-1 otherwise) is returned too.
    """
    n, p = X.shape
    active = weight > 0
    node_of = np.where(active, 0, -1).astype(np.int64)
    bld = _Builder()
    bld.add(float(a[active].sum()), float(b[active].sum()), float(weight[active].sum()), 0)
    max_depth = np.inf if max_depth is None else max_depth

    def masks(k):
        return np.ones((k, p), dtype=np.bool_) if feature_mask is None else feature_mask(k)

    def search(nodes):
        local = np.full(len(bld.feature), -1, dtype=np.int64)
        local[nodes] = np.arange(len(nodes))
        nl = np.where(node_of >= 0, local[np.maximum(node_of, 0)], -1)
        gains, feats, thrs = find_splits(order.order, order.values, order.n_valid, nl, len(nodes), a, b,
                                         masks(len(nodes)), criterion, float(reg_lambda), float(reg_alpha),
                                         float(min_child))
        return nl, gains, feats, thrs

    def new_children(nid, g, f, t):
        d = bld.depth[nid] + 1
        li = bld.add(0.0, 0.0, 0.0, d)
        ri = bld.add(0.0, 0.0, 0.0, d)
        bld.feature[nid], bld.threshold[nid], bld.gain[nid] = int(f), float(t), float(g)
        bld.left[nid], bld.right[nid] = li, ri
        return li, ri

    def fill_stats(rows, first):
        ids = node_of[rows] - first
        size = len(bld.feature) - first
        sa = np.bincount(ids, weights=a[rows], minlength=size)
        sb = np.bincount(ids, weights=b[rows], minlength=size)
        sw = np.bincount(ids, weights=weight[rows], minlength=size)
        for k in range(size):
            bld.a[first + k], bld.b[first + k], bld.cover[first + k] = float(sa[k]), float(sb[k]), float(sw[k])

    if growth == "depthwise":
        frontier = [0]
        while frontier and bld.depth[frontier[0]] < max_depth:
            nl, gains, feats, thrs = search(frontier)
            first = len(bld.feature)
            lefts = np.full(len(frontier), -1, dtype=np.int64)
            rights = np.full(len(frontier), -1, dtype=np.int64)
            for k, nid in enumerate(frontier):
                if feats[k] >= 0:
                    lefts[k], rights[k] = new_children(nid, gains[k], feats[k], thrs[k])
            if len(bld.feature) == first:
                break
            rows = np.flatnonzero(nl >= 0)
            rows = rows[feats[nl[rows]] >= 0]
            k_of = nl[rows]
            go_left = _route(X, rows, feats[k_of], thrs[k_of])
            node_of[rows] = np.where(go_left, lefts[k_of], rights[k_of])
            fill_stats(rows, first)
            frontier = list(range(first, len(bld.feature)))
    elif growth == "leafwise":
        max_leaves = max_leaves or 31
        cand = {}

        def evaluate(nodes):
            nodes = [i for i in nodes if bld.depth[i] < max_depth]
            if nodes:
                _, gains, feats, thrs = search(nodes)
                for k, nid in enumerate(nodes):
                    if feats[k] >= 0:
                        cand[nid] = (gains[k], feats[k], thrs[k])

        evaluate([0])
        n_leaves = 1
        while cand and n_leaves < max_leaves:
            nid = max(cand, key=lambda i: (cand[i][0], -i))
            g, f, t = cand.pop(nid)
            rows = np.flatnonzero(node_of == nid)
            first = len(bld.feature)
            li, ri = new_children(nid, g, f, t)
            node_of[rows] = np.where(_route(X, rows, f, t), li, ri)
            fill_stats(rows, first)
            evaluate([li, ri])
            n_leaves += 1
    else:
        raise ValueError(f"unknown growth policy {growth!r}")
    tree = bld.finish(leaf_value)
    if return_leaves:
        return tree, node_of
    return tree


@dataclass(frozen=True, eq=False)
class TreeEnsemble:
    """Additive tree model.

    ``margin(x) = base_margin + scale * sum(tree(x))`` where ``scale`` is the
    learning rate for boosted ensembles and ``1 / n_trees`` for bagged ones.
    Boosted probabilities are ``sigmoid(margin)``; bagged margins are already
    probabilities (mean leaf class fraction).
    """

    trees: tuple
    base_margin: float
    kind: str  # "boosted" | "bagged"
    learning_rate: float = 1.0
    n_features: int = 0

    @property
    def scale(self):
        if self.kind == "bagged":
            return 1.0 / len(self.trees) if self.trees else 1.0
        return self.learning_rate

    def margin(self, X):
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[0])
        for t in self.trees:
            out += t.predict(X)
        return self.base_margin + self.scale * out

    def predict_proba(self, X):
        m = self.margin(X)
        if self.kind == "bagged":
            return np.clip(m, 0.0, 1.0)
        return sigmoid(m)

    def expected_margin(self):
        return self.base_margin + self.scale * sum(t.expected_value() for t in self.trees)

    def to_dict(self):
        return {"kind": self.kind, "base_margin": self.base_margin, "learning_rate": self.learning_rate,
                "n_features": self.n_features, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Tree.from_dict(t) for t in d["trees"]), d["base_margin"], d["kind"],
                   d["learning_rate"], d["n_features"])


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
