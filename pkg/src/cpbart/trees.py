"""Binary regression trees, additive ensembles, and unit-cube datasets.

Trees are stored as flat parallel arrays in preorder (root at index 0).
Routing convention: a point goes left iff ``x[split_var] <= cut``; this is
fixed here and preserved by serialization. Leaves are numbered 0..K-1 in
node-array order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "Dataset",
    "Ensemble",
    "Tree",
    "TreeStructureError",
    "check_validity",
    "evaluate_ensemble",
    "evaluate_tree",
    "leaf_assignment",
]


class TreeStructureError(ValueError):
    """Raised when tree node arrays do not describe a rooted binary tree."""


@dataclass(frozen=True, eq=False)
class Tree:
    """A binary decision tree over the unit cube.

    Attributes
    ----------
    feature : ndarray of int
        Split variable per node; -1 marks a leaf.
    threshold : ndarray of float
        Cut point per node; NaN at leaves.
    left, right : ndarray of int
        Child indices per node; -1 at leaves.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray

    @staticmethod
    def single_leaf() -> "Tree":
        return Tree(
            feature=np.array([-1], dtype=np.intp),
            threshold=np.array([np.nan]),
            left=np.array([-1], dtype=np.intp),
            right=np.array([-1], dtype=np.intp),
        )

    @property
    def num_nodes(self) -> int:
        return self.feature.size

    @cached_property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @cached_property
    def num_leaves(self) -> int:
        return int(np.count_nonzero(self.is_leaf))

    @cached_property
    def leaf_nodes(self) -> np.ndarray:
        """Node indices of the leaves; position in this array is the leaf index."""
        return np.flatnonzero(self.is_leaf)

    @cached_property
    def internal_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.is_leaf)

    @cached_property
    def leaf_index_of_node(self) -> np.ndarray:
        """Map node index -> leaf index (or -1 for internal nodes)."""
        out = np.full(self.num_nodes, -1, dtype=np.intp)
        out[self.leaf_nodes] = np.arange(self.num_leaves, dtype=np.intp)
        return out

    @cached_property
    def depth(self) -> np.ndarray:
        """Node depths with the root at depth 0."""
        d = np.full(self.num_nodes, -1, dtype=np.intp)
        d[0] = 0
        stack = [0]
        while stack:
            v = stack.pop()
            if self.feature[v] >= 0:
                for child in (self.left[v], self.right[v]):
                    d[child] = d[v] + 1
                    stack.append(int(child))
        return d

    @cached_property
    def prunable_nodes(self) -> np.ndarray:
        """Internal nodes whose children are both leaves."""
        internal = self.internal_nodes
        if internal.size == 0:
            return internal
        both = self.is_leaf[self.left[internal]] & self.is_leaf[self.right[internal]]
        return internal[both]

    def validate(self, num_covariates: int | None = None) -> None:
        """Raise TreeStructureError unless the arrays form a rooted binary tree."""
        n = self.num_nodes
        shapes = {self.threshold.shape, self.left.shape, self.right.shape}
        if shapes != {self.feature.shape} or self.feature.ndim != 1 or n == 0:
            raise TreeStructureError("invalid tree structure")
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        while stack:
            v = stack.pop()
            if v < 0 or v >= n or seen[v]:
                raise TreeStructureError("invalid tree structure")
            seen[v] = True
            if self.feature[v] >= 0:
                if not np.isfinite(self.threshold[v]):
                    raise TreeStructureError("invalid tree structure")
                if num_covariates is not None and self.feature[v] >= num_covariates:
                    raise TreeStructureError("invalid tree structure")
                stack.extend((int(self.left[v]), int(self.right[v])))
            elif self.left[v] != -1 or self.right[v] != -1:
                raise TreeStructureError("invalid tree structure")
        if not seen.all():
            raise TreeStructureError("invalid tree structure")

    # -- structural edits (return new canonical trees) ----------------------

    def grow(self, node: int, var: int, cut: float) -> "Tree":
        """Split leaf ``node`` on (var, cut); children become leaves."""
        if self.feature[node] >= 0:
            raise TreeStructureError("invalid tree structure")
        n = self.num_nodes
        feature = np.append(self.feature, [-1, -1]).astype(np.intp)
        threshold = np.append(self.threshold, [np.nan, np.nan])
        left = np.append(self.left, [-1, -1]).astype(np.intp)
        right = np.append(self.right, [-1, -1]).astype(np.intp)
        feature[node] = var
        threshold[node] = cut
        left[node] = n
        right[node] = n + 1
        return _canonical(feature, threshold, left, right)

    def prune(self, node: int) -> "Tree":
        """Collapse ``node`` (whose children must both be leaves) into a leaf."""
        lc, rc = self.left[node], self.right[node]
        if self.feature[node] < 0 or not (self.is_leaf[lc] and self.is_leaf[rc]):
            raise TreeStructureError("invalid tree structure")
        feature = self.feature.copy()
        threshold = self.threshold.copy()
        left = self.left.copy()
        right = self.right.copy()
        feature[node] = -1
        threshold[node] = np.nan
        left[node] = -1
        right[node] = -1
        return _canonical(feature, threshold, left, right)

    def change(self, node: int, var: int, cut: float) -> "Tree":
        """Replace the split rule of internal ``node``; structure unchanged."""
        if self.feature[node] < 0:
            raise TreeStructureError("invalid tree structure")
        feature = self.feature.copy()
        threshold = self.threshold.copy()
        feature[node] = var
        threshold[node] = cut
        return Tree(feature, threshold, self.left.copy(), self.right.copy())

    def leaves_under(self, node: int) -> np.ndarray:
        """Leaf indices contained in the subtree rooted at ``node``."""
        out = []
        stack = [int(node)]
        while stack:
            v = stack.pop()
            if self.feature[v] < 0:
                out.append(int(self.leaf_index_of_node[v]))
            else:
                stack.extend((int(self.left[v]), int(self.right[v])))
        return np.array(sorted(out), dtype=np.intp)


def _canonical(feature, threshold, left, right) -> Tree:
    """Renumber reachable nodes in preorder; drops detached nodes."""
    order = []
    stack = [0]
    while stack:
        v = stack.pop()
        order.append(v)
        if feature[v] >= 0:
            stack.append(int(right[v]))
            stack.append(int(left[v]))
    order = np.array(order, dtype=np.intp)
    new_id = np.full(feature.size, -1, dtype=np.intp)
    new_id[order] = np.arange(order.size, dtype=np.intp)
    new_left = np.where(left[order] >= 0, new_id[left[order]], -1).astype(np.intp)
    new_right = np.where(right[order] >= 0, new_id[right[order]], -1).astype(np.intp)
    return Tree(feature[order].astype(np.intp), threshold[order], new_left, new_right)


def leaf_assignment(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Leaf index of every row of X (the one-hot selection matrix, sparsely)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    out = np.empty(n, dtype=np.intp)
    stack = [(0, np.arange(n, dtype=np.intp))]
    leaf_ix = tree.leaf_index_of_node
    while stack:
        v, idx = stack.pop()
        if tree.feature[v] < 0:
            out[idx] = leaf_ix[v]
        else:
            go_left = X[idx, tree.feature[v]] <= tree.threshold[v]
            stack.append((int(tree.left[v]), idx[go_left]))
            stack.append((int(tree.right[v]), idx[~go_left]))
    return out


def evaluate_tree(tree: Tree, leaf_values, x) -> float | np.ndarray:
    """Step-function value of the tree at x (a point or a matrix of rows)."""
    leaf_values = np.asarray(leaf_values, dtype=float)
    if leaf_values.size != tree.num_leaves:
        raise TreeStructureError("invalid tree structure")
    if int(tree.feature.max(initial=-1)) >= np.atleast_2d(x).shape[1]:
        raise TreeStructureError("invalid tree structure")
    vals = leaf_values[leaf_assignment(tree, x)]
    return float(vals[0]) if np.ndim(x) == 1 else vals


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Additive tree ensemble: trees plus per-tree leaf-value vectors."""

    trees: tuple[Tree, ...]
    leaf_values: tuple[np.ndarray, ...]

    def __post_init__(self):
        for tree, vals in zip(self.trees, self.leaf_values):
            if np.asarray(vals).size != tree.num_leaves:
                raise TreeStructureError("invalid tree structure")

    @property
    def m(self) -> int:
        return len(self.trees)

    @property
    def total_leaves(self) -> int:
        return sum(t.num_leaves for t in self.trees)


def evaluate_ensemble(ens: Ensemble, x) -> float | np.ndarray:
    """Sum of the member trees evaluated at x."""
    single = np.ndim(x) == 1
    n = 1 if single else np.atleast_2d(x).shape[0]
    total = np.zeros(n)
    for tree, vals in zip(ens.trees, ens.leaf_values):
        v = evaluate_tree(tree, vals, x)
        total += v
    return float(total[0]) if single else total


def check_validity(tree: Tree, X: np.ndarray, min_leaf: int) -> bool:
    """True iff every leaf holds at least ``min_leaf`` training points."""
    counts = np.bincount(leaf_assignment(tree, X), minlength=tree.num_leaves)
    return bool(np.all(counts >= min_leaf))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates standardized to the unit cube plus the raw response.

    ``scaling`` holds the per-covariate (min, max) of the training data used
    for the affine map; new points are mapped with the same affine map and
    clipped to [0, 1].
    """

    X: np.ndarray
    y: np.ndarray
    scaling: np.ndarray  # (p, 2) columns: min, max
    columns: tuple[str, ...] | None = field(default=None)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @staticmethod
    def from_raw(X_raw, y, columns=None) -> "Dataset":
        """Standardize raw covariates by train min-max, dropping constants."""
        X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X_raw.shape[0] != y.size:
            raise ValueError("X and y row counts differ")
        lo = X_raw.min(axis=0)
        hi = X_raw.max(axis=0)
        keep = hi > lo
        if not keep.all():
            dropped = (
                [columns[j] for j in np.flatnonzero(~keep)]
                if columns is not None
                else list(np.flatnonzero(~keep))
            )
            warnings.warn(f"dropping constant covariate column(s): {dropped}")
        if not keep.any():
            raise ValueError("no non-constant covariates")
        lo, hi = lo[keep], hi[keep]
        X = (X_raw[:, keep] - lo) / (hi - lo)
        kept_cols = (
            tuple(columns[j] for j in np.flatnonzero(keep))
            if columns is not None
            else None
        )
        return Dataset(X=X, y=y, scaling=np.column_stack([lo, hi]), columns=kept_cols)

    @staticmethod
    def from_unit_cube(X, y, columns=None) -> "Dataset":
        """Wrap covariates already on [0, 1] (identity scaling)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.min() < 0.0 or X.max() > 1.0:
            raise ValueError("covariates not in the unit cube")
        scaling = np.column_stack([np.zeros(X.shape[1]), np.ones(X.shape[1])])
        cols = tuple(columns) if columns is not None else None
        return Dataset(X=X, y=y, scaling=scaling, columns=cols)

    def transform(self, X_raw) -> np.ndarray:
        """Map new raw covariates through the training scaling, clipped to [0, 1]."""
        X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
        lo = self.scaling[:, 0]
        hi = self.scaling[:, 1]
        return np.clip((X_raw - lo) / (hi - lo), 0.0, 1.0)
