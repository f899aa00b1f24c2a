"""Exact Shapley attributions for tree ensembles in margin space.

``tree_shap`` runs the polynomial path-tracking recursion; every subset
weight is carried along the root-to-leaf path, so one pass per tree gives
exact values.  ``shap_brute_force`` enumerates all coalitions and is the
reference it is checked against.

The value of a coalition S is the cover-weighted expectation of the tree
output: at a split on a feature outside S both children are visited and
weighted by their share of the node's cover.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numba
import numpy as np

from ..errors import DataError
from ..models.trees import TreeEnsemble


@dataclass(frozen=True)
class ShapAttribution:
    phi: np.ndarray  # (m, p) or (p,)
    base_value: float

    def total(self):
        return self.base_value + self.phi.sum(axis=-1)


@numba.njit(cache=True, nogil=True)
def _extend(pf, pz, po, pw, start, depth, zero, one, feat):
    b = start
    pf[b + depth] = feat
    pz[b + depth] = zero
    po[b + depth] = one
    pw[b + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[b + i + 1] += one * pw[b + i] * (i + 1) / (depth + 1)
        pw[b + i] = zero * pw[b + i] * (depth - i) / (depth + 1)


@numba.njit(cache=True, nogil=True)
def _unwind(pf, pz, po, pw, start, depth, idx):
    b = start
    one = po[b + idx]
    zero = pz[b + idx]
    nxt = pw[b + depth]
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = pw[b + i]
            pw[b + i] = nxt * (depth + 1) / ((i + 1) * one)
            nxt = tmp - pw[b + i] * zero * (depth - i) / (depth + 1)
        else:
            pw[b + i] = pw[b + i] * (depth + 1) / (zero * (depth - i))
    for i in range(idx, depth):
        pf[b + i] = pf[b + i + 1]
        pz[b + i] = pz[b + i + 1]
        po[b + i] = po[b + i + 1]


@numba.njit(cache=True, nogil=True)
def _unwound_sum(pz, po, pw, start, depth, idx):
    b = start
    one = po[b + idx]
    zero = pz[b + idx]
    nxt = pw[b + depth]
    total = 0.0
    if one != 0.0:
        for i in range(depth - 1, -1, -1):
            tmp = nxt / ((i + 1) * one)
            total += tmp
            nxt = pw[b + i] - tmp * zero * (depth - i)
    else:
        for i in range(depth - 1, -1, -1):
            total += pw[b + i] / (zero * (depth - i))
    return total * (depth + 1)


@numba.njit(cache=True, nogil=True)
def _tree_walk(x, phi, feature, threshold, left, right, value, cover, missing_left,
               root, pf, pz, po, pw, sn, sd, sp, sz, so, sf):
    # explicit DFS; a frame at depth d copies its parent's path (d entries)
    # to slot parent_start + d and extends it, so pending siblings still
    # find their parent's path intact
    top = 0
    sn[0], sd[0], sp[0], sz[0], so[0], sf[0] = root, 0, 0, 1.0, 1.0, -1
    while top >= 0:
        node, depth, parent_start = sn[top], sd[top], sp[top]
        zero, one, feat = sz[top], so[top], sf[top]
        top -= 1
        start = parent_start + depth
        for i in range(depth):
            pf[start + i] = pf[parent_start + i]
            pz[start + i] = pz[parent_start + i]
            po[start + i] = po[parent_start + i]
            pw[start + i] = pw[parent_start + i]
        _extend(pf, pz, po, pw, start, depth, zero, one, feat)

        f = feature[node]
        if f < 0:
            # index 0 is the dummy root element
            for i in range(1, depth + 1):
                w = _unwound_sum(pz, po, pw, start, depth, i)
                phi[pf[start + i]] += w * (po[start + i] - pz[start + i]) * value[node]
            continue

        xv = x[f]
        if np.isnan(xv):
            go_left = missing_left[node]
        else:
            go_left = xv <= threshold[node]
        hot = left[node] if go_left else right[node]
        cold = right[node] if go_left else left[node]
        inc_zero = 1.0
        inc_one = 1.0

        # a feature met again on the path: undo its earlier split first
        idx = -1
        for i in range(depth + 1):
            if pf[start + i] == f:
                idx = i
                break
        d = depth
        if idx >= 0:
            inc_zero = pz[start + idx]
            inc_one = po[start + idx]
            _unwind(pf, pz, po, pw, start, d, idx)
            d -= 1
        top += 1
        sn[top], sd[top], sp[top] = cold, d + 1, start
        sz[top], so[top], sf[top] = cover[cold] / cover[node] * inc_zero, 0.0, f
        top += 1
        sn[top], sd[top], sp[top] = hot, d + 1, start
        sz[top], so[top], sf[top] = cover[hot] / cover[node] * inc_zero, inc_one, f


@numba.njit(cache=True, nogil=True)
def _shap_rows(X, feature, threshold, left, right, value, cover, missing_left, roots, max_depth):
    m, p = X.shape
    out = np.zeros((m, p))
    slots = (max_depth + 2) * (max_depth + 3) // 2 + 1
    pf = np.zeros(slots, np.int64)
    pz = np.zeros(slots)
    po = np.zeros(slots)
    pw = np.zeros(slots)
    ns = 2 * (max_depth + 2)
    sn = np.zeros(ns, np.int64)
    sd = np.zeros(ns, np.int64)
    sp = np.zeros(ns, np.int64)
    sz = np.zeros(ns)
    so = np.zeros(ns)
    sf = np.zeros(ns, np.int64)
    phi = np.zeros(p)
    for r in range(m):
        for t in range(roots.size):
            # per-tree buffer: the ensemble sum is then a plain sum over trees
            phi[:] = 0.0
            _tree_walk(X[r], phi, feature, threshold, left, right, value, cover, missing_left,
                       roots[t], pf, pz, po, pw, sn, sd, sp, sz, so, sf)
            out[r] += phi
    return out


def _pack(ensemble: TreeEnsemble):
    feats, thrs, lefts, rights, vals, covers, miss, roots = [], [], [], [], [], [], [], []
    offset, max_depth = 0, 0
    for tree in ensemble.trees:
        internal = tree.feature >= 0
        if tree.cover is None or np.any(~np.isfinite(tree.cover)):
            raise DataError("tree SHAP needs cover counts at every node")
        if np.any(tree.cover[internal] <= 0):
            raise DataError("tree SHAP needs positive cover at every split")
        roots.append(offset)
        feats.append(tree.feature)
        thrs.append(tree.threshold)
        lefts.append(np.where(internal, tree.left + offset, -1))
        rights.append(np.where(internal, tree.right + offset, -1))
        vals.append(tree.value * ensemble.scale)
        covers.append(tree.cover)
        miss.append(tree.missing_left)
        offset += tree.n_nodes
        max_depth = max(max_depth, tree.depth())
    if not roots:
        return None
    cat = lambda xs, dt: np.ascontiguousarray(np.concatenate(xs), dtype=dt)
    return (cat(feats, np.int64), cat(thrs, float), cat(lefts, np.int64), cat(rights, np.int64),
            cat(vals, float), cat(covers, float), cat(miss, np.bool_), np.asarray(roots, np.int64), max_depth)


def tree_shap(ensemble: TreeEnsemble, X) -> ShapAttribution:
    """Attributions for one instance (1-D) or a batch (2-D)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = np.ascontiguousarray(X[None, :] if single else X)
    if X2.shape[1] != ensemble.n_features:
        raise DataError(f"expected {ensemble.n_features} features, got {X2.shape[1]}")
    packed = _pack(ensemble)
    if packed is None:
        phi = np.zeros(X2.shape)
    else:
        phi = _shap_rows(X2, *packed)
    return ShapAttribution(phi[0] if single else phi, ensemble.expected_margin())


def _coalition_value(tree, x, inside):
    def ev(node):
        f = tree.feature[node]
        if f < 0:
            return tree.value[node]
        if inside[f]:
            xv = x[f]
            go_left = tree.missing_left[node] if math.isnan(xv) else xv <= tree.threshold[node]
            return ev(tree.left[node] if go_left else tree.right[node])
        l, r = tree.left[node], tree.right[node]
        return (tree.cover[l] * ev(l) + tree.cover[r] * ev(r)) / tree.cover[node]

    return ev(0)


def shap_brute_force(ensemble: TreeEnsemble, x) -> ShapAttribution:
    """Direct Shapley sum over all 2^p coalitions (p <= 12)."""
    x = np.asarray(x, dtype=float)
    p = x.size
    if p > 12:
        raise DataError(f"brute-force Shapley values need p <= 12, got {p}")
    n_sets = 1 << p
    f = np.zeros(n_sets)
    for s in range(n_sets):
        inside = [(s >> j) & 1 == 1 for j in range(p)]
        f[s] = sum(_coalition_value(t, x, inside) for t in ensemble.trees) * ensemble.scale
    weight = [math.factorial(k) * math.factorial(p - k - 1) / math.factorial(p) for k in range(p)]
    phi = np.zeros(p)
    for i in range(p):
        bit = 1 << i
        for s in range(n_sets):
            if not s & bit:
                phi[i] += weight[bin(s).count("1")] * (f[s | bit] - f[s])
    return ShapAttribution(phi, float(ensemble.base_margin + f[0]))


def shap_summary_export(phi, feature_values, feature_names, instance_ids, path=None):
    """Rows (feature, instance_id, shap_value, feature_value) with features
    ordered by mean |phi|, largest first (ties keep column order).

    Returns the feature order.  Values are margin-space (log-odds for
    boosted ensembles).
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    vals = np.atleast_2d(np.asarray(feature_values, dtype=float))
    if phi.size == 0:
        raise DataError("no attributions to export")
    if phi.shape != vals.shape or phi.shape[1] != len(feature_names) or phi.shape[0] != len(instance_ids):
        raise DataError("attribution, value, name and id shapes disagree")
    importance = np.abs(phi).mean(axis=0)
    order = np.argsort(-importance, kind="stable")
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "instance_id", "shap_value", "scaled_feature_value"])
            for j in order:
                for i in range(phi.shape[0]):
                    w.writerow([feature_names[j], instance_ids[i], repr(float(phi[i, j])), repr(float(vals[i, j]))])
    return [feature_names[j] for j in order], importance[order]
