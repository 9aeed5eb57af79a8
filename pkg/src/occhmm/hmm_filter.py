"""Exact Bayesian filtering over joint occlusion / appearance-change states.

The hidden state at frame t is one global appearance-change bit S together
with one occlusion bit O_n per camera.  Each bit evolves as an independent
two-state Markov chain.  The observation is a vector of per-camera
prediction errors: exponentially distributed with mean ``mu`` while a camera
sees the target normally, uniform on [0, M] while that camera is occluded or
the appearance has changed.  The filter maintains the exact posterior over
all 2**(N+1) joint states and advances it with one Bayes update per frame.

State indexing is canonical and stable: ``index = s * 2**N + sum_n o[n] * 2**n``,
so index 0 is the all-normal state and the top half of the vector carries
s = 1.

Per-step cost is O((N+1) * 2**(N+1)) time and O(2**(N+1)) memory: the
prediction applies each 2x2 chain along its own axis of the belief tensor
instead of materialising the dense joint transition matrix.  N is capped at
16 (131072 states, ~2 MB per belief, ~20 Mflop per step).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "MAX_CAMERAS",
    "BeliefState",
    "EmissionParams",
    "FilterStep",
    "HiddenState",
    "ModelParams",
    "NumericalUnderflow",
    "ObservationVector",
    "TransitionParams",
    "chain_matrix",
    "default_prior",
    "diagnostics",
    "emission_density",
    "joint_likelihood",
    "joint_log_likelihood",
    "log_emission_density",
    "marginal_appearance_change",
    "marginal_occlusion",
    "run",
    "step",
    "transition_prob",
    "uniform_prior",
]

MAX_CAMERAS = 16

# Density floor applied in log space. The uniform branch would be zero for
# residuals beyond M, which would veto the anomalous states exactly when the
# evidence for them is strongest; both branches are therefore floored at
# 1e-300 and the anomalous density keeps its 1/M height for all z >= 0.
# Residuals should be scaled at configuration time so that z <= M in practice.
DENSITY_FLOOR = 1e-300
LOG_DENSITY_FLOOR = math.log(DENSITY_FLOOR)

ROW_SUM_TOL = 1e-12

# Incremented when a step had to fall back to the predicted prior because
# every state's log posterior was -inf. Unreachable while the emission floor
# holds; kept as a process-wide diagnostic, not part of any filter state.
_diagnostics = {"underflow_fallbacks": 0}


class NumericalUnderflow(RuntimeError):
    """Raised when a belief update loses all probability mass.

    The public ``step`` path combines the predicted belief with the
    observation likelihood in log space (max-subtracted), which cannot
    underflow while the emission density floor is in place; this error
    documents the internal contract for any future linear-space path.
    """


def diagnostics() -> dict[str, int]:
    """Snapshot of module-level diagnostic counters."""
    return dict(_diagnostics)


def _as_readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class HiddenState:
    """One joint assignment of the appearance-change bit and occlusion bits.

    ``s`` is 1 while a global appearance change is active; ``o[n]`` is 1 while
    camera n is occluded.
    """

    s: int
    o: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.o) < 1:
            raise ValueError("at least one camera is required")
        if self.s not in (0, 1) or any(b not in (0, 1) for b in self.o):
            raise ValueError("state components must be exactly 0 or 1")
        object.__setattr__(self, "o", tuple(int(b) for b in self.o))
        object.__setattr__(self, "s", int(self.s))

    @property
    def n_cameras(self) -> int:
        return len(self.o)

    @property
    def index(self) -> int:
        """Canonical index: s * 2**N + sum_n o[n] * 2**n."""
        idx = self.s << self.n_cameras
        for n, bit in enumerate(self.o):
            idx |= bit << n
        return idx

    @classmethod
    def from_index(cls, index: int, n_cameras: int) -> "HiddenState":
        if not 0 <= index < 1 << (n_cameras + 1):
            raise ValueError(f"index {index} out of range for {n_cameras} cameras")
        o = tuple((index >> n) & 1 for n in range(n_cameras))
        return cls(s=(index >> n_cameras) & 1, o=o)


@dataclass(frozen=True)
class EmissionParams:
    """Residual emission parameters.

    ``mu`` is the mean of the exponential residual under normal operation,
    ``m_max`` the upper bound of the uniform residual while anomalous, both in
    the same units as the residuals.
    """

    mu: float
    m_max: float

    def __post_init__(self) -> None:
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ValueError(f"mu must be a positive real, got {self.mu}")
        if not (self.m_max > 0 and math.isfinite(self.m_max)):
            raise ValueError(f"m_max must be a positive real, got {self.m_max}")
        if self.m_max < 10.0 * self.mu:
            warnings.warn(
                f"m_max={self.m_max} is less than 10*mu={10.0 * self.mu}: the "
                "normal and anomalous residual distributions are weakly "
                "separated and detection will be uninformative",
                stacklevel=2,
            )

    @property
    def log_anomalous_density(self) -> float:
        return math.log(max(1.0 / self.m_max, DENSITY_FLOOR))


@dataclass(frozen=True, eq=False)
class BeliefState:
    """Probability distribution over the 2**(N+1) joint states at time ``t``.

    ``probs[i]`` is the probability of the state with canonical index ``i``.
    ``t`` = 0 denotes the prior before any observation.
    """

    probs: np.ndarray
    t: int

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size < 4 or probs.size & (probs.size - 1):
            raise ValueError("probs must be a flat vector of length 2**(N+1), N >= 1")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("belief entries must be finite and nonnegative")
        if abs(probs.sum() - 1.0) > ROW_SUM_TOL:
            raise ValueError(f"belief must sum to 1 within {ROW_SUM_TOL}, got {probs.sum()!r}")
        if self.t < 0:
            raise ValueError("time index must be nonnegative")
        object.__setattr__(self, "probs", _as_readonly(probs))

    @property
    def n_cameras(self) -> int:
        return int(self.probs.size).bit_length() - 2


@dataclass(frozen=True, eq=False)
class TransitionParams:
    """Row-stochastic 2x2 chains for the S bit and each O_n bit, plus prior.

    ``matrix[i][j]`` is the probability of moving from bit value i to bit
    value j. The joint transition is the product of the per-chain factors;
    the chains are mutually independent.
    """

    s_chain: np.ndarray
    o_chains: tuple[np.ndarray, ...]
    prior: BeliefState

    def __post_init__(self) -> None:
        s = _validated_chain(self.s_chain, "s_chain")
        o = tuple(_validated_chain(m, f"o_chains[{n}]") for n, m in enumerate(self.o_chains))
        if not 1 <= len(o) <= MAX_CAMERAS:
            raise ValueError(f"need 1..{MAX_CAMERAS} camera chains, got {len(o)}")
        if self.prior.n_cameras != len(o):
            raise ValueError(
                f"prior covers {self.prior.n_cameras} cameras but {len(o)} chains given"
            )
        object.__setattr__(self, "s_chain", s)
        object.__setattr__(self, "o_chains", o)

    @property
    def n_cameras(self) -> int:
        return len(self.o_chains)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Everything the filter needs: emission law, chains, and prior."""

    emission: EmissionParams
    transitions: TransitionParams

    @property
    def n_cameras(self) -> int:
        return self.transitions.n_cameras

    @property
    def prior(self) -> BeliefState:
        return self.transitions.prior


@dataclass(frozen=True, eq=False)
class ObservationVector:
    """Per-camera prediction errors for one frame."""

    z: np.ndarray

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 1 or z.size < 1:
            raise ValueError("z must be a flat vector with one entry per camera")
        if np.any(z < 0) or not np.all(np.isfinite(z)):
            raise ValueError("prediction errors must be finite and nonnegative")
        object.__setattr__(self, "z", _as_readonly(z))

    @property
    def n_cameras(self) -> int:
        return int(self.z.size)


@dataclass(frozen=True, eq=False)
class FilterStep:
    """One frame of filter output: posterior belief plus its marginals."""

    belief: BeliefState
    p_change: float
    p_occlusion: tuple[float, ...]


def _validated_chain(matrix: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.shape != (2, 2):
        raise ValueError(f"{name} must be a 2x2 matrix, got shape {m.shape}")
    if np.any(m < 0) or np.any(m > 1):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    sums = m.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
        raise ValueError(f"{name} rows must sum to 1 within {ROW_SUM_TOL}, got {sums}")
    return _as_readonly(m)


def chain_matrix(stay_normal: float, stay_anomalous: float) -> np.ndarray:
    """2x2 chain from its two diagonal (stay) probabilities."""
    return np.array(
        [[stay_normal, 1.0 - stay_normal], [1.0 - stay_anomalous, stay_anomalous]],
        dtype=float,
    )


def default_prior(n_cameras: int, normal_mass: float = 0.99) -> BeliefState:
    """All-normal state carries ``normal_mass``; the rest is spread uniformly."""
    size = 1 << (n_cameras + 1)
    probs = np.full(size, (1.0 - normal_mass) / (size - 1))
    probs[0] = normal_mass
    return BeliefState(probs=probs, t=0)


def uniform_prior(n_cameras: int) -> BeliefState:
    size = 1 << (n_cameras + 1)
    return BeliefState(probs=np.full(size, 1.0 / size), t=0)


class _StateSpace:
    """Cached per-N index machinery shared by every filter call."""

    def __init__(self, n_cameras: int):
        if not 1 <= n_cameras <= MAX_CAMERAS:
            raise ValueError(f"n_cameras must be in 1..{MAX_CAMERAS}, got {n_cameras}")
        self.n_cameras = n_cameras
        self.size = 1 << (n_cameras + 1)
        idx = np.arange(self.size)
        self.s_bits = ((idx >> n_cameras) & 1).astype(float)
        o_bits = np.stack([(idx >> n) & 1 for n in range(n_cameras)], axis=1)
        self.o_bits = o_bits.astype(float)
        # anomalous[i, n] == 1.0 iff state i makes camera n's residual uniform
        self.anomalous = np.maximum(self.o_bits, self.s_bits[:, None])
        self.normal = 1.0 - self.anomalous
        self.anomalous_counts = self.anomalous.sum(axis=1)


@lru_cache(maxsize=None)
def _state_space(n_cameras: int) -> _StateSpace:
    return _StateSpace(n_cameras)


def log_emission_density(z: float, anomalous: int, params: EmissionParams) -> float:
    """Log density of one camera's residual given its anomaly indicator."""
    if z < 0:
        raise ValueError(f"residual must be nonnegative, got {z}")
    if anomalous:
        return params.log_anomalous_density
    return max(-z / params.mu - math.log(params.mu), LOG_DENSITY_FLOOR)


def emission_density(z: float, anomalous: int, params: EmissionParams) -> float:
    """Density of one camera's residual: exp(-z/mu)/mu normally, 1/M anomalous.

    The anomalous branch keeps its 1/M height beyond M (floored at 1e-300)
    rather than dropping to zero; see the module docstring.
    """
    return math.exp(log_emission_density(z, anomalous, params))


def joint_log_likelihood(
    obs: ObservationVector, state: HiddenState, params: EmissionParams
) -> float:
    """Log likelihood of a frame's residual vector under one joint state.

    Residuals are independent across cameras given the state; camera n uses
    the anomalous branch iff ``state.s or state.o[n]``.
    """
    if obs.n_cameras != state.n_cameras:
        raise ValueError(
            f"observation has {obs.n_cameras} cameras but state has {state.n_cameras}"
        )
    return sum(
        log_emission_density(z, state.s or o_bit, params)
        for z, o_bit in zip(obs.z, state.o)
    )


def joint_likelihood(
    obs: ObservationVector, state: HiddenState, params: EmissionParams
) -> float:
    """Exponentiated convenience accessor for ``joint_log_likelihood``."""
    return math.exp(joint_log_likelihood(obs, state, params))


def transition_prob(prev: HiddenState, next: HiddenState, params: TransitionParams) -> float:
    """Joint one-step transition probability, a product over the chains."""
    if prev.n_cameras != next.n_cameras:
        raise ValueError("prev and next must share the camera count")
    if prev.n_cameras != params.n_cameras:
        raise ValueError(
            f"states have {prev.n_cameras} cameras but params have {params.n_cameras}"
        )
    p = params.s_chain[prev.s, next.s]
    for chain, a, b in zip(params.o_chains, prev.o, next.o):
        p *= chain[a, b]
    return float(p)


def _predict(probs: np.ndarray, transitions: TransitionParams) -> np.ndarray:
    """Apply the factored joint transition: one 2x2 product per chain axis.

    With C-order reshape to shape (2,)*(N+1), axis 0 carries the s bit and
    axis j (j >= 1) carries o[N-j].
    """
    n = transitions.n_cameras
    t = probs.reshape((2,) * (n + 1))
    t = np.moveaxis(np.tensordot(t, transitions.s_chain, axes=([0], [0])), -1, 0)
    for axis in range(1, n + 1):
        chain = transitions.o_chains[n - axis]
        t = np.moveaxis(np.tensordot(t, chain, axes=([axis], [0])), -1, axis)
    return np.ascontiguousarray(t).reshape(-1)


def _log_likelihood_vector(z: np.ndarray, params: EmissionParams, space: _StateSpace) -> np.ndarray:
    log_normal = np.maximum(-z / params.mu - math.log(params.mu), LOG_DENSITY_FLOOR)
    return space.anomalous_counts * params.log_anomalous_density + space.normal @ log_normal


def step(belief: BeliefState, obs: ObservationVector, params: ModelParams) -> BeliefState:
    """One exact Bayes update: transition the belief, then absorb one frame.

    Returns the posterior at ``belief.t + 1``: the predicted belief reweighted
    by the joint observation likelihood and renormalised.  Runs in log space
    with max subtraction, so large residuals cannot underflow the update.
    """
    n = params.n_cameras
    if belief.n_cameras != n:
        raise ValueError(f"belief covers {belief.n_cameras} cameras, params {n}")
    if obs.n_cameras != n:
        raise ValueError(f"observation has {obs.n_cameras} cameras, params {n}")
    space = _state_space(n)
    predicted = _predict(belief.probs, params.transitions)
    loglik = _log_likelihood_vector(obs.z, params.emission, space)
    with np.errstate(divide="ignore"):
        log_post = np.log(predicted) + loglik
    peak = log_post.max()
    if not np.isfinite(peak):
        # Every reachable state had zero likelihood. Unreachable while the
        # density floor holds; fall back to the predicted belief.
        _diagnostics["underflow_fallbacks"] += 1
        post = predicted / predicted.sum()
    else:
        post = np.exp(log_post - peak)
        total = post.sum()
        if total <= 0.0 or not np.isfinite(total):
            raise NumericalUnderflow(
                f"posterior normaliser is {total!r} at t={belief.t + 1}"
            )
        post /= total
    return BeliefState(probs=post, t=belief.t + 1)


def marginal_appearance_change(belief: BeliefState) -> float:
    """Posterior probability that the appearance-change bit is 1."""
    space = _state_space(belief.n_cameras)
    return float(space.s_bits @ belief.probs)


def marginal_occlusion(belief: BeliefState, n: int) -> float:
    """Posterior probability that camera ``n`` (0-based) is occluded."""
    if not 0 <= n < belief.n_cameras:
        raise IndexError(f"camera index {n} out of range for {belief.n_cameras} cameras")
    space = _state_space(belief.n_cameras)
    return float(space.o_bits[:, n] @ belief.probs)


def _marginals(belief: BeliefState) -> tuple[float, tuple[float, ...]]:
    space = _state_space(belief.n_cameras)
    p_change = float(space.s_bits @ belief.probs)
    p_occ = tuple(float(v) for v in belief.probs @ space.o_bits)
    return p_change, p_occ


def run(
    stream: Iterable[ObservationVector | Sequence[float] | np.ndarray],
    params: ModelParams,
) -> Iterator[FilterStep]:
    """Fold ``step`` over an observation stream, yielding one result per frame.

    Starts from ``params.prior`` and yields lazily, so arbitrarily long
    streams can be filtered in constant memory.  Errors raised by ``step``
    are re-raised with the failing time index attached.
    """
    belief = params.prior
    t = belief.t
    for raw in stream:
        t += 1
        obs = raw if isinstance(raw, ObservationVector) else ObservationVector(z=np.asarray(raw))
        try:
            belief = step(belief, obs, params)
        except (ValueError, NumericalUnderflow) as exc:
            raise type(exc)(f"at t={t}: {exc}") from exc
        p_change, p_occ = _marginals(belief)
        yield FilterStep(belief=belief, p_change=p_change, p_occlusion=p_occ)
