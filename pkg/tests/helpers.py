"""Shared test oracles: brute-force tree cells, random trees, enumeration."""

from __future__ import annotations

import math

import numpy as np

from cpbart.tree_mcmc import (
    MoveUnavailable,
    log_marginal_leaf_likelihood,
    log_tree_prior,
    mh_tree_step,
    propose_grow,
)
from cpbart.trees import Ensemble, Tree, leaf_assignment


def leaf_cells(tree: Tree):
    """Per-leaf interval constraints, built by walking root-to-leaf paths.

    Left branches impose x[v] <= cut (upper bound), right branches x[v] > cut
    (lower bound). Independent of the routing code under test.
    """
    cells = {}

    def walk(node, lo, hi):
        if tree.feature[node] < 0:
            cells[int(tree.leaf_index_of_node[node])] = (dict(lo), dict(hi))
            return
        v, cut = int(tree.feature[node]), float(tree.threshold[node])
        hi_left = dict(hi)
        hi_left[v] = min(hi.get(v, np.inf), cut)
        walk(int(tree.left[node]), lo, hi_left)
        lo_right = dict(lo)
        lo_right[v] = max(lo.get(v, -np.inf), cut)
        walk(int(tree.right[node]), lo_right, hi)

    walk(0, {}, {})
    return cells


def brute_force_leaf(tree: Tree, x) -> int:
    """Leaf index containing x by direct cell-membership checks."""
    hits = []
    for leaf, (lo, hi) in leaf_cells(tree).items():
        inside = all(x[v] > b for v, b in lo.items()) and all(
            x[v] <= b for v, b in hi.items()
        )
        if inside:
            hits.append(leaf)
    assert len(hits) == 1, "partition property violated"
    return hits[0]


def random_tree(X, rng, n_grows=3, min_leaf=1) -> Tree:
    """Random valid tree built by repeated grow proposals."""
    tree = Tree.single_leaf()
    for _ in range(n_grows):
        try:
            out = propose_grow(tree, X, rng, min_leaf)
        except MoveUnavailable:
            break
        if out is not None:
            tree = out[0]
    return tree


def random_ensemble(X, rng, m=3, n_grows=3, min_leaf=1, value_scale=0.5) -> Ensemble:
    trees = [random_tree(X, rng, n_grows, min_leaf) for _ in range(m)]
    values = tuple(
        value_scale * rng.standard_normal(t.num_leaves) for t in trees
    )
    return Ensemble(trees=tuple(trees), leaf_values=values)


# -- exact posterior enumeration on a one-covariate, three-leaf state space ----


def _valid_cut_values(values, min_leaf):
    uniq, counts = np.unique(values, return_counts=True)
    below = np.cumsum(counts)
    ok = (below >= min_leaf) & (values.size - below >= min_leaf)
    return uniq[ok]


def _stump(cut):
    return Tree.single_leaf().grow(0, 0, float(cut))


def enumerate_small_posterior(X, resid, c, nu, min_leaf):
    """Exact posterior over all canonical trees with p=1 and <= 3 leaves.

    Weights multiply the leaf-marginalized likelihood, the branching-process
    topology prior, and the rule prior (uniform over each internal node's
    locally valid cut values). Requires n < 4 * min_leaf so that four-leaf
    trees are impossible.
    """
    n = X.shape[0]
    assert X.shape[1] == 1 and n < 4 * min_leaf
    x = X[:, 0]
    states = []  # (label, tree, log weight)

    def log_weight(tree, rule_counts):
        assign = leaf_assignment(tree, X)
        lw = log_marginal_leaf_likelihood(tree, resid, assign, c)
        lw += log_tree_prior(tree, nu)
        lw -= sum(math.log(k) for k in rule_counts)
        return lw

    root = Tree.single_leaf()
    states.append(("root", root, log_weight(root, [])))

    root_cuts = _valid_cut_values(x, min_leaf)
    for cut in root_cuts:
        stump = _stump(cut)
        states.append(("stump", stump, log_weight(stump, [len(root_cuts)])))
        for side, label in ((0, "left3"), (1, "right3")):
            mask = x <= cut if side == 0 else x > cut
            sub_cuts = _valid_cut_values(x[mask], min_leaf)
            for sub in sub_cuts:
                node = int(stump.left[0] if side == 0 else stump.right[0])
                tree = stump.grow(node, 0, float(sub))
                states.append(
                    (label, tree, log_weight(tree, [len(root_cuts), len(sub_cuts)]))
                )
    logs = np.array([s[2] for s in states])
    probs = np.exp(logs - logs.max())
    probs /= probs.sum()
    labels = [s[0] for s in states]
    class_probs = {}
    for lab, p in zip(labels, probs):
        class_probs[lab] = class_probs.get(lab, 0.0) + p
    return class_probs, states, probs


def run_topology_chain(
    X, resid, c, nu, min_leaf, move_probs, steps, seed, record_every=1
):
    """Long-run topology-class frequencies of the tree Metropolis chain."""
    rng = np.random.default_rng(seed)
    tree = Tree.single_leaf()
    assignment = leaf_assignment(tree, X)
    counts = {"root": 0, "stump": 0, "left3": 0, "right3": 0}
    recorded = 0
    for step in range(steps):
        out = mh_tree_step(
            tree,
            X,
            resid,
            c,
            nu=nu,
            min_leaf=min_leaf,
            move_probs=move_probs,
            rng=rng,
            assignment=assignment,
        )
        tree, assignment = out.tree, out.assignment
        if step % record_every == 0:
            counts[_classify(tree)] += 1
            recorded += 1
    return {k: v / recorded for k, v in counts.items()}


def _classify(tree: Tree) -> str:
    if tree.num_leaves == 1:
        return "root"
    if tree.num_leaves == 2:
        return "stump"
    assert tree.num_leaves == 3
    return "left3" if tree.feature[tree.left[0]] >= 0 else "right3"


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def pushforward_ks(n_samples, n_centers=300, seed=31, c=0.02, m=50, shift=0.8):
    """KS distance between transported pseudo-response draws and the
    closed-form pushforward CDF F(y) = Phi(Phi^{-1}(F_Y(y))/s - f)."""
    from cpbart.copula import CopulaState, transport_forward
    from cpbart.marginal import fit_kde, std_normal_cdf, std_normal_quantile

    rng = np.random.default_rng(seed)
    marg = fit_kde(rng.standard_normal(n_centers))
    state = CopulaState.from_c(c, m)
    z_tilde = shift + rng.standard_normal(n_samples)
    y = np.sort(transport_forward(z_tilde, state, marg))
    closed_form = std_normal_cdf(std_normal_quantile(marg.cdf(y)) / state.s - shift)
    ranks = np.arange(1, y.size + 1) / y.size
    return float(
        np.max(
            np.maximum(
                np.abs(closed_form - ranks),
                np.abs(closed_form - (ranks - 1.0 / y.size)),
            )
        )
    )
