import numpy as np
import pytest

from cpbart.copula import scale_s
from cpbart.hmc import HMCConfig
from cpbart.marginal import fit_kde
from cpbart.sampler import Diagnostics, FitResult, PosteriorDraw
from cpbart.tree_mcmc import SamplerConfig

from helpers import random_ensemble


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def make_synthetic_fit(
    rng,
    n_draws=25,
    m=3,
    n_train=150,
    c_range=(0.05, 0.4),
    value_scale=0.4,
    skewed=False,
):
    """A hand-built copula FitResult with random small ensembles.

    Bypasses the sampler so prediction contracts can be tested on states
    with known structure.
    """
    if skewed:
        y = rng.gamma(3.0, 2.0, size=n_train)
    else:
        y = rng.standard_normal(n_train)
    marginal = fit_kde(y)
    X = rng.uniform(size=(n_train, 4))
    draws = []
    for _ in range(n_draws):
        ens = random_ensemble(X, rng, m=m, n_grows=3, value_scale=value_scale)
        c = float(rng.uniform(*c_range))
        draws.append(PosteriorDraw(ensemble=ens, c=c, s=scale_s(c, m)))
    config = SamplerConfig(m=m, iters=n_draws, burnin=0, seed=0, hmc=HMCConfig())
    diag = Diagnostics(
        c_trace=np.array([d.c for d in draws]),
        tree_accept_rate=0.0,
        hmc_accept_rate=0.0,
        final_step_size=0.1,
        seconds=0.0,
    )
    return FitResult(
        model="cp-bart",
        draws=draws,
        marginal=marginal,
        scaling=np.column_stack([np.zeros(4), np.ones(4)]),
        columns=("x1", "x2", "x3", "x4"),
        config=config,
        diagnostics=diag,
        train_y_lo=float(y.min()),
        train_y_hi=float(y.max()),
    ), X
