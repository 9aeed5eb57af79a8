"""Shared builders for randomised filter instances."""

from __future__ import annotations

import numpy as np

from occhmm import hmm_filter as hf


def random_model_params(rng: np.random.Generator, n_cameras: int) -> hf.ModelParams:
    """A random well-separated instance: sticky-ish chains, spread-out prior."""

    def chain() -> np.ndarray:
        stay_a, stay_b = rng.uniform(0.05, 0.95, size=2)
        return hf.chain_matrix(stay_a, stay_b)

    size = 1 << (n_cameras + 1)
    probs = rng.uniform(0.05, 1.0, size=size)
    probs /= probs.sum()
    transitions = hf.TransitionParams(
        s_chain=chain(),
        o_chains=tuple(chain() for _ in range(n_cameras)),
        prior=hf.BeliefState(probs=probs, t=0),
    )
    emission = hf.EmissionParams(
        mu=float(rng.uniform(0.3, 2.0)), m_max=float(rng.uniform(20.0, 50.0))
    )
    return hf.ModelParams(emission=emission, transitions=transitions)


def symmetric_benchmark_params(n_cameras: int = 4) -> hf.ModelParams:
    """mu=1, M=20, every chain with stay probability 0.95, default prior."""
    transitions = hf.TransitionParams(
        s_chain=hf.chain_matrix(0.95, 0.95),
        o_chains=tuple(hf.chain_matrix(0.95, 0.95) for _ in range(n_cameras)),
        prior=hf.default_prior(n_cameras),
    )
    return hf.ModelParams(emission=hf.EmissionParams(mu=1.0, m_max=20.0), transitions=transitions)
