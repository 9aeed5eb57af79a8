"""Brute-force reference posteriors by total enumeration of hidden sequences.

Certifies the recursive filter: for every time t, the filtered marginals are
computed from first principles by enumerating all joint hidden-state prefixes
(x_1, ..., x_t), weighting each by prior * transitions * emissions, and
summing.  No belief recursion, no normalisation tricks, no log-space
arithmetic: weights are kept linear (rescaled by their maximum per step, which
cancels in every marginal) and sums are accumulated in extended precision.

Exponential in t by design; guarded so (2**(N+1))**T stays within 1e8.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .hmm_filter import DENSITY_FLOOR, HiddenState, ModelParams

__all__ = ["FilteredMarginals", "brute_force_marginals", "ENUMERATION_LIMIT"]

ENUMERATION_LIMIT = 10**8


@dataclass(frozen=True, eq=False)
class FilteredMarginals:
    """Per-time filtered marginals: p_change[t-1] and p_occlusion[t-1, n]."""

    p_change: np.ndarray
    p_occlusion: np.ndarray


def _dense_transition(params: ModelParams) -> np.ndarray:
    """K x K joint transition built entry by entry from the per-bit chains."""
    n = params.n_cameras
    size = 1 << (n + 1)
    states = [HiddenState.from_index(i, n) for i in range(size)]
    trans = np.empty((size, size))
    for i, prev in enumerate(states):
        for j, nxt in enumerate(states):
            p = params.transitions.s_chain[prev.s, nxt.s]
            for chain, a, b in zip(params.transitions.o_chains, prev.o, nxt.o):
                p *= chain[a, b]
            trans[i, j] = p
    return trans


def _emission_matrix(observations: np.ndarray, params: ModelParams) -> np.ndarray:
    """T x K per-state frame likelihoods via scipy's exponential density.

    Mirrors the filter's floor semantics: the anomalous branch is a constant
    max(1/M, 1e-300) for all z >= 0, the normal branch is floored at 1e-300.
    """
    n = params.n_cameras
    size = 1 << (n + 1)
    states = [HiddenState.from_index(i, n) for i in range(size)]
    anomalous = np.array([[s.s or s.o[cam] for cam in range(n)] for s in states], dtype=bool)
    normal_d = np.maximum(stats.expon.pdf(observations, scale=params.emission.mu), DENSITY_FLOOR)
    anom_d = max(1.0 / params.emission.m_max, DENSITY_FLOOR)
    per_cam = np.where(anomalous[None, :, :], anom_d, normal_d[:, None, :])
    return per_cam.prod(axis=2)


def brute_force_marginals(observations: np.ndarray, params: ModelParams) -> FilteredMarginals:
    """Exact filtered marginals P[S(t)=1 | z(1:t)] and P[O_n(t)=1 | z(1:t)].

    ``observations`` is a T x N matrix of residuals.  For each t the posterior
    over the state at t is obtained by summing unnormalised prefix weights

        w(x_1..x_t) = sum_x0 prior[x0] * prod_tau trans[x_tau-1, x_tau]
                      * prod_tau emis[tau, x_tau]

    over all (2**(N+1))**(t-1) prefixes sharing x_t.  The prior is the belief
    before the first frame, so one transition precedes the first observation,
    matching the recursive filter's convention.

    Raises ValueError when (2**(N+1))**T exceeds ENUMERATION_LIMIT (1e8);
    note the weight array holds K**T float64 entries, so calls near the guard
    need ~800 MB.
    """
    obs = np.asarray(observations, dtype=float)
    if obs.ndim != 2:
        raise ValueError("observations must be a T x N matrix")
    horizon, n = obs.shape
    if n != params.n_cameras:
        raise ValueError(f"observations have {n} cameras but params have {params.n_cameras}")
    if horizon < 1:
        raise ValueError("need at least one frame")
    size = 1 << (n + 1)
    if size**horizon > ENUMERATION_LIMIT:
        raise ValueError(
            f"enumeration size {size}**{horizon} exceeds the {ENUMERATION_LIMIT:.0e} guard"
        )

    trans = _dense_transition(params)
    emis = _emission_matrix(obs, params)
    states = [HiddenState.from_index(i, n) for i in range(size)]
    s_mask = np.array([s.s for s in states], dtype=float)
    o_mask = np.array([s.o for s in states], dtype=float)

    p_change = np.empty(horizon)
    p_occlusion = np.empty((horizon, n))

    # weights[..., j] accumulates the joint weight of prefixes ending in
    # state j; the leading axis enumerates the earlier states of the prefix.
    weights = (params.prior.probs @ trans) * emis[0]
    weights = weights[None, :]
    for t in range(horizon):
        if t > 0:
            weights = weights[:, :, None] * trans[None, :, :]
            weights = weights.reshape(-1, size) * emis[t]
        # rescaling cancels in the normalised marginals; it only keeps the
        # linear-space products representable
        weights /= weights.max()
        posterior = weights.sum(axis=0, dtype=np.longdouble)
        total = posterior.sum()
        p_change[t] = float((posterior * s_mask).sum() / total)
        p_occlusion[t] = np.asarray((posterior[:, None] * o_mask).sum(axis=0) / total, dtype=float)
    return FilteredMarginals(p_change=p_change, p_occlusion=p_occlusion)
