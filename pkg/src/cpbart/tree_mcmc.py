"""Metropolis-Hastings tree moves and conjugate leaf draws.

The pseudo-response model has unit noise variance and independent N(0, c)
priors on the leaf values, so leaf values integrate out of the tree-move
acceptance ratio in closed form. Split rules are drawn uniformly over the
distinct observed covariate values inside a node, which makes every proposal
measure discrete and exactly reversible.

Acceptance bookkeeping: the split-rule selection probability of a grow move
cancels against the (uniform) rule prior of the newly created node, so the
transition ratios returned by the proposal functions contain only the
structural selection terms (which leaf / which prunable node). The tree
prior is the branching-process topology prior alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .hmc import HMCConfig
from .trees import Tree, leaf_assignment

__all__ = [
    "MoveUnavailable",
    "SamplerConfig",
    "TreeStepResult",
    "baseline_sigma_draw",
    "baseline_sigma_prior_scale",
    "log_marginal_leaf_likelihood",
    "log_tree_prior",
    "mh_tree_step",
    "propose_change",
    "propose_grow",
    "propose_prune",
    "sample_leaf_values",
]

_LOG_2PI = math.log(2.0 * math.pi)

_GROW, _PRUNE, _CHANGE = 0, 1, 2
_MOVE_NAMES = ("grow", "prune", "change")


class MoveUnavailable(Exception):
    """Signals that a move cannot be proposed from the current tree."""


@dataclass
class SamplerConfig:
    """Configuration for the ensemble sampler.

    ``b`` defaults to 9/(14*m), the inverse-gamma scale whose prior mode is
    the reference leaf variance 9/(7*m). ``iters`` counts retained draws;
    the chain runs ``iters + burnin`` sweeps in total. ``fixed_c`` freezes
    the leaf-variance scale and disables its update.
    """

    m: int = 75
    nu: float = 0.25
    min_leaf: int = 5
    move_probs: tuple[float, float, float] = (0.25, 0.25, 0.5)
    a: float = 1.0
    b: float | None = None
    iters: int = 5000
    burnin: int = 1000
    seed: int = 0
    hmc: HMCConfig = field(default_factory=HMCConfig)
    fixed_c: float | None = None
    check_invariants: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if not 0.0 < self.nu < 1.0:
            raise ValueError("nu must lie in (0, 1)")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be at least 1")
        probs = np.asarray(self.move_probs, dtype=float)
        if probs.size != 3 or np.any(probs < 0.0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("move_probs must be nonnegative and sum to 1")
        if self.a <= 0.0 or (self.b is not None and self.b <= 0.0):
            raise ValueError("a and b must be positive")
        if self.iters < 1 or self.burnin < 0:
            raise ValueError("iters must be >= 1 and burnin >= 0")

    def resolved_b(self) -> float:
        return self.b if self.b is not None else 9.0 / (14.0 * self.m)


def log_tree_prior(tree: Tree, nu: float) -> float:
    """Branching-process topology log prior.

    A node at depth d (root at 0) splits with probability nu**(d+1), so a
    root-only tree has mass 1 - nu.
    """
    depth = tree.depth + 1
    internal = ~tree.is_leaf
    split_p = nu ** depth.astype(float)
    return float(
        np.log(split_p[internal]).sum() + np.log1p(-split_p[~internal]).sum()
    )


def log_marginal_leaf_likelihood(
    tree: Tree, residuals: np.ndarray, assignment: np.ndarray, c: float
) -> float:
    """Log density of the residuals with the leaf values integrated out.

    For each leaf with n_k points, residual sum R_k and square sum S_k the
    contribution is -(n_k/2) log 2pi - log(1 + c n_k)/2
    - (S_k - c R_k^2 / (1 + c n_k))/2; empty leaves contribute zero.
    """
    if c <= 0.0:
        raise ValueError("nonpositive leaf variance")
    k = tree.num_leaves
    n_k = np.bincount(assignment, minlength=k).astype(float)
    r_k = np.bincount(assignment, weights=residuals, minlength=k)
    s_k = np.bincount(assignment, weights=residuals * residuals, minlength=k)
    denom = 1.0 + c * n_k
    return float(
        np.sum(-0.5 * n_k * _LOG_2PI - 0.5 * np.log(denom))
        - 0.5 * np.sum(s_k - c * r_k * r_k / denom)
    )


def sample_leaf_values(
    tree: Tree,
    residuals: np.ndarray,
    assignment: np.ndarray,
    c: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Conjugate draw of all leaf values given the partial residuals.

    Leaf k draws from N(c R_k / (1 + c n_k), c / (1 + c n_k)); empty leaves
    fall back to the N(0, c) prior (n_k = 0 gives exactly that).
    """
    if c <= 0.0:
        raise ValueError("nonpositive leaf variance")
    k = tree.num_leaves
    n_k = np.bincount(assignment, minlength=k).astype(float)
    r_k = np.bincount(assignment, weights=residuals, minlength=k)
    denom = 1.0 + c * n_k
    mean = c * r_k / denom
    sd = np.sqrt(c / denom)
    return mean + sd * rng.standard_normal(k)


# -- split-candidate machinery ------------------------------------------------


def _valid_cuts(values: np.ndarray, min_leaf: int) -> np.ndarray:
    """Distinct values t with at least min_leaf points on each side of t."""
    uniq, counts = np.unique(values, return_counts=True)
    below = np.cumsum(counts)
    ok = (below >= min_leaf) & (values.size - below >= min_leaf)
    return uniq[ok]

def _leaf_is_growable(sub: np.ndarray, min_leaf: int) -> bool:
    """True iff some covariate admits a cut with min_leaf points on both sides.

    A valid cut exists for a covariate exactly when its min_leaf-th smallest
    value is strictly below its min_leaf-th largest value.
    """
    n = sub.shape[0]
    if n < 2 * min_leaf:
        return False
    part = np.partition(sub, (min_leaf - 1, n - min_leaf), axis=0)
    return bool(np.any(part[min_leaf - 1] < part[n - min_leaf]))


def _growable_leaves(
    tree: Tree, X: np.ndarray, assignment: np.ndarray, min_leaf: int
) -> np.ndarray:
    counts = np.bincount(assignment, minlength=tree.num_leaves)
    out = []
    for leaf in np.flatnonzero(counts >= 2 * min_leaf):
        idx = np.flatnonzero(assignment == leaf)
        if _leaf_is_growable(X[idx], min_leaf):
            out.append(leaf)
    return np.asarray(out, dtype=np.intp)


def _region_indices(tree: Tree, node: int, assignment: np.ndarray) -> np.ndarray:
    leaves = tree.leaves_under(node)
    return np.flatnonzero(np.isin(assignment, leaves))


def _rules_achievable(tree: Tree, X: np.ndarray, assignment: np.ndarray) -> bool:
    """Every internal node's cut equals an observed value inside its region.

    Keeps the chain on the canonical state space where prune's reverse-grow
    probability is always well defined.
    """
    for node in tree.internal_nodes:
        idx = _region_indices(tree, int(node), assignment)
        if idx.size == 0 or not np.any(
            X[idx, tree.feature[node]] == tree.threshold[node]
        ):
            return False
    return True


# -- proposal moves -----------------------------------------------------------


def propose_grow(
    tree: Tree,
    X: np.ndarray,
    rng: np.random.Generator,
    min_leaf: int,
    assignment: np.ndarray | None = None,
    _growable: np.ndarray | None = None,
) -> tuple[Tree, float] | None:
    """Split a uniformly chosen growable leaf on a uniform (variable, cut).

    Returns the proposal and the structural part of the log transition
    ratio, log |growable(T)| - log |prunable(T')|; the cut-selection factor
    is cancelled against the rule prior of the new node. Returns None when
    the drawn variable admits no valid cut in the drawn leaf (a dead-end
    draw, treated as a rejected move by the caller).
    """
    if assignment is None:
        assignment = leaf_assignment(tree, X)
    growable = (
        _growable
        if _growable is not None
        else _growable_leaves(tree, X, assignment, min_leaf)
    )
    if growable.size == 0:
        raise MoveUnavailable("no growable leaf")
    leaf = int(growable[rng.integers(growable.size)])
    var = int(rng.integers(X.shape[1]))
    idx = np.flatnonzero(assignment == leaf)
    cuts = _valid_cuts(X[idx, var], min_leaf)
    if cuts.size == 0:
        return None
    cut = float(cuts[rng.integers(cuts.size)])
    proposal = tree.grow(int(tree.leaf_nodes[leaf]), var, cut)
    log_ratio = math.log(growable.size) - math.log(proposal.prunable_nodes.size)
    return proposal, log_ratio


def propose_prune(
    tree: Tree,
    X: np.ndarray,
    rng: np.random.Generator,
    min_leaf: int,
    assignment: np.ndarray | None = None,
) -> tuple[Tree, float]:
    """Collapse a uniformly chosen internal node with two leaf children.

    The log transition ratio mirrors grow:
    log |prunable(T)| - log |growable(T')|.
    """
    prunable = tree.prunable_nodes
    if prunable.size == 0:
        raise MoveUnavailable("tree has no prunable node")
    node = int(prunable[rng.integers(prunable.size)])
    proposal = tree.prune(node)
    prop_assign = leaf_assignment(proposal, X)
    growable = _growable_leaves(proposal, X, prop_assign, min_leaf)
    # The merged leaf is growable by construction, so the count is positive.
    log_ratio = math.log(prunable.size) - math.log(growable.size)
    return proposal, log_ratio


def propose_change(
    tree: Tree,
    X: np.ndarray,
    rng: np.random.Generator,
    min_leaf: int,
    assignment: np.ndarray | None = None,
) -> tuple[Tree, float] | None:
    """Redraw the rule of a uniformly chosen internal node, subject to validity.

    The candidate (variable, cut) is uniform over all distinct observed
    values inside the node's region across variables; invalid draws (a leaf
    below min_leaf after re-routing, or a descendant rule no longer matching
    an observed value) dead-end as None. Conditional on validity the draw is
    uniform over valid rules, and the candidate set depends only on the
    region and subtree, so the proposal is symmetric: log ratio 0.
    """
    internal = tree.internal_nodes
    if internal.size == 0:
        raise MoveUnavailable("tree has no internal node")
    if assignment is None:
        assignment = leaf_assignment(tree, X)
    node = int(internal[rng.integers(internal.size)])
    idx = _region_indices(tree, node, assignment)
    sub = X[idx]
    uniques = [np.unique(sub[:, v]) for v in range(X.shape[1])]
    sizes = np.array([u.size for u in uniques])
    flat = int(rng.integers(sizes.sum()))
    var = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
    cut = float(uniques[var][flat - (np.cumsum(sizes)[var] - sizes[var])])
    proposal = tree.change(node, var, cut)
    prop_assign = leaf_assignment(proposal, X)
    counts = np.bincount(prop_assign, minlength=proposal.num_leaves)
    if np.any(counts < min_leaf):
        return None
    if not _rules_achievable(proposal, X, prop_assign):
        return None
    return proposal, 0.0


# -- Metropolis-Hastings step --------------------------------------------------


@dataclass
class TreeStepResult:
    tree: Tree
    assignment: np.ndarray
    accepted: bool
    move: str


def _move_availability(
    tree: Tree, X: np.ndarray, assignment: np.ndarray, min_leaf: int
) -> tuple[np.ndarray, np.ndarray]:
    growable = _growable_leaves(tree, X, assignment, min_leaf)
    has_internal = tree.num_leaves > 1
    avail = np.array([growable.size > 0, has_internal, has_internal])
    return avail, growable


def mh_tree_step(
    tree: Tree,
    X: np.ndarray,
    residuals: np.ndarray,
    c: float,
    *,
    nu: float,
    min_leaf: int,
    move_probs,
    rng: np.random.Generator,
    assignment: np.ndarray | None = None,
) -> TreeStepResult:
    """One Metropolis-Hastings structure update for a single tree.

    The proposal type is drawn among the currently available moves with
    renormalized probabilities; acceptance combines the leaf-marginalized
    likelihood ratio, the topology prior ratio, the proposal's structural
    ratio, and the ratio of effective move-type probabilities at the two
    states. Leaf values are not drawn here; refresh them afterwards with
    sample_leaf_values.
    """
    if assignment is None:
        assignment = leaf_assignment(tree, X)
    probs = np.asarray(move_probs, dtype=float)
    avail, growable = _move_availability(tree, X, assignment, min_leaf)
    if not np.any(avail & (probs > 0.0)):
        return TreeStepResult(tree, assignment, False, "none")
    eff = np.where(avail, probs, 0.0)
    eff = eff / eff.sum()
    move = int(rng.choice(3, p=eff))

    if move == _GROW:
        out = propose_grow(tree, X, rng, min_leaf, assignment, _growable=growable)
        reverse = _PRUNE
    elif move == _PRUNE:
        out = propose_prune(tree, X, rng, min_leaf, assignment)
        reverse = _GROW
    else:
        out = propose_change(tree, X, rng, min_leaf, assignment)
        reverse = _CHANGE
    if out is None:
        return TreeStepResult(tree, assignment, False, _MOVE_NAMES[move])
    proposal, log_struct = out

    prop_assign = leaf_assignment(proposal, X)
    prop_avail, _ = _move_availability(proposal, X, prop_assign, min_leaf)
    prop_eff = np.where(prop_avail, probs, 0.0)
    total = prop_eff.sum()
    if total <= 0.0 or prop_eff[reverse] <= 0.0:
        return TreeStepResult(tree, assignment, False, _MOVE_NAMES[move])
    log_move_ratio = math.log(prop_eff[reverse] / total) - math.log(eff[move])

    log_alpha = (
        log_marginal_leaf_likelihood(proposal, residuals, prop_assign, c)
        - log_marginal_leaf_likelihood(tree, residuals, assignment, c)
        + log_tree_prior(proposal, nu)
        - log_tree_prior(tree, nu)
        + log_struct
        + log_move_ratio
    )
    if math.log(rng.uniform()) < log_alpha:
        return TreeStepResult(proposal, prop_assign, True, _MOVE_NAMES[move])
    return TreeStepResult(tree, assignment, False, _MOVE_NAMES[move])


# -- Gaussian-BART baseline variance update ------------------------------------


def baseline_sigma_prior_scale(
    sample_sd: float, prior_nu: float = 3.0, quantile: float = 0.9
) -> float:
    """Scaled-inverse-chi2 scale putting the given prior quantile at sample_sd."""
    return sample_sd**2 * chi2.ppf(1.0 - quantile, prior_nu) / prior_nu


def baseline_sigma_draw(
    residuals: np.ndarray,
    prior_nu: float,
    prior_lambda: float,
    rng: np.random.Generator,
) -> float:
    """Draw sigma^2 from its scaled-inverse-chi2 full conditional.

    With no residuals this is a draw from the prior.
    """
    residuals = np.asarray(residuals, dtype=float)
    n = residuals.size
    ssq = float(residuals @ residuals) if n else 0.0
    return (prior_nu * prior_lambda + ssq) / rng.chisquare(prior_nu + n)
