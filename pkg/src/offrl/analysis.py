"""Empirical bias and variance of policy-improvement objective estimators.

Freezes per-row advantages and data log-likelihoods once, computes the
exact full-buffer softmax-weighted objective, then measures how minibatch
estimators track it: the within-batch weighted (WIS) estimator, and
advantage-sampled estimators backed by the priority tree in a fresh or a
stale-refresh regime.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .algos import advantage, asac_tree_logit
from .logtree import LogSumExpTree

ESTIMATORS = ("awac_wis", "asac_fresh", "asac_stale")


@dataclass
class EstimatorReport:
    estimator: str
    batch_sizes: list
    bias: list
    variance: list
    trials: int
    exact_value: float
    seed: int


def advantage_snapshot(dataset, policy, critics, a_max=math.inf, k_adv=1,
                       seed=0, chunk=4096):
    """Frozen per-row (advantage, log-likelihood) arrays for a whole buffer.

    The advantage baseline samples use one fixed seed so every estimator
    and the exact objective see identical values.
    """
    rng = np.random.default_rng(seed)
    n = len(dataset)
    advantages = np.empty(n)
    logp = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        s = dataset.states[lo:hi]
        a = dataset.actions[lo:hi]
        advantages[lo:hi] = advantage(critics, policy, s, a, k_adv, a_max, rng)
        logp[lo:hi] = policy.log_prob(s, a)
    return advantages, logp


def exact_awac_objective_from_values(advantages, logp, beta):
    """Full-buffer softmax(advantage / beta)-weighted mean log-likelihood."""
    advantages = np.asarray(advantages, dtype=np.float64)
    logp = np.asarray(logp, dtype=np.float64)
    if advantages.size == 0:
        raise ValueError("empty buffer")
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    z = advantages / beta
    z = z - z.max()
    w = np.exp(z)
    w /= w.sum()
    return float(w @ logp)


def exact_awac_objective(dataset, policy, critics, beta, a_max=math.inf,
                         k_adv=1, seed=0):
    adv, logp = advantage_snapshot(dataset, policy, critics, a_max, k_adv, seed)
    return exact_awac_objective_from_values(adv, logp, beta)


def estimator_bias_variance_from_values(advantages, logp, estimator, beta,
                                        batch_size, trials, seed):
    """(mean - exact, sample variance) of one estimator over random batches.

    Advantages are taken as already clipped. asac_fresh rebuilds the tree
    from the frozen advantages (so sampling follows the exact softmax);
    asac_stale starts from uniform priorities and refreshes only the rows
    each trial actually drew, so early trials sample a lagging
    distribution.
    """
    advantages = np.asarray(advantages, dtype=np.float64)
    logp = np.asarray(logp, dtype=np.float64)
    n = advantages.size
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds buffer size {n}")
    if trials < 1000:
        raise ValueError(f"trials must be >= 1000, got {trials}")
    exact = exact_awac_objective_from_values(advantages, logp, beta)
    rng = np.random.default_rng(seed)

    if estimator == "awac_wis":
        idx = rng.integers(0, n, size=(trials, batch_size))
        z = advantages[idx] / beta
        z -= z.max(axis=1, keepdims=True)
        w = np.exp(z)
        w /= w.sum(axis=1, keepdims=True)
        estimates = (w * logp[idx]).sum(axis=1)
    elif estimator == "asac_fresh":
        tree = LogSumExpTree.from_logits(asac_tree_logit(advantages, beta))
        draws = tree.sample_many(rng.random(trials * batch_size))
        estimates = logp[draws].reshape(trials, batch_size).mean(axis=1)
    else:  # asac_stale
        tree = LogSumExpTree.from_logits(np.zeros(n))
        logits = asac_tree_logit(advantages, beta)
        estimates = np.empty(trials)
        for t in range(trials):
            idx = tree.sample_many(rng.random(batch_size))
            estimates[t] = logp[idx].mean()
            touched = np.unique(idx)
            tree.set_logits(touched, logits[touched])

    return float(estimates.mean() - exact), float(estimates.var(ddof=1))


def estimator_bias_variance(dataset, policy, critics, estimator, batch_size,
                            trials, seed, beta, a_max=math.inf, k_adv=1):
    adv, logp = advantage_snapshot(dataset, policy, critics, a_max, k_adv, seed)
    return estimator_bias_variance_from_values(adv, logp, estimator, beta,
                                               batch_size, trials, seed)


def lognormal_fixture(rows, seed):
    """Heavy-tailed advantage fixture: standard log-normal advantages with
    synthetic per-row log-likelihoods."""
    rng = np.random.default_rng(seed)
    advantages = rng.lognormal(mean=0.0, sigma=1.0, size=rows)
    logp = rng.normal(-2.0, 1.0, size=rows)
    return advantages, logp


def build_report(advantages, logp, estimator, beta, batch_sizes, trials,
                 seed) -> EstimatorReport:
    biases, variances = [], []
    for m in batch_sizes:
        b, v = estimator_bias_variance_from_values(
            advantages, logp, estimator, beta, m, trials, seed)
        biases.append(b)
        variances.append(v)
    exact = exact_awac_objective_from_values(advantages, logp, beta)
    return EstimatorReport(estimator, list(batch_sizes), biases, variances,
                           trials, exact, seed)


def write_report_csv(path, reports):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "batch_size", "bias", "variance",
                         "trials", "exact_value", "seed"])
        for rep in reports:
            for m, b, v in zip(rep.batch_sizes, rep.bias, rep.variance):
                writer.writerow([rep.estimator, m, repr(b), repr(v),
                                 rep.trials, repr(rep.exact_value), rep.seed])
