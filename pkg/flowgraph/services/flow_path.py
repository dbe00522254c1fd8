"""
Conditional probability paths, conditional rates and Euler transition kernels.

All per-dimension operations are thin wrappers around the vectorized
``*_batch`` functions, so a kernel computed for one dimension is bit-identical
to the same row of a batched computation.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

from flowgraph.core.exceptions import DomainError, PreconditionError, ValidationError

FINAL_STEP_EPS = 1e-6
PROB_TOLERANCE = 1e-9


@dataclass(frozen=True)
class CategoricalState:
    value: int
    cardinality: int

    def __post_init__(self):
        if not 0 <= self.value < self.cardinality:
            raise ValidationError(
                "categorical value out of range", {"value": self.value, "cardinality": self.cardinality}
            )


@dataclass(frozen=True, eq=False)
class PathParams:
    """Time and reference distribution q for one dimension"""

    t: float
    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64, copy=True).reshape(-1)
        if not 0.0 <= self.t <= 1.0:
            raise ValidationError("t must lie in [0, 1]", {"t": self.t})
        if (q < 0).any() or abs(q.sum() - 1.0) > PROB_TOLERANCE:
            raise ValidationError("q must be a probability vector", {"sum": float(q.sum())})
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def cardinality(self) -> int:
        return int(self.q.shape[0])

    @classmethod
    def point_mass(cls, t: float, x0: CategoricalState) -> "PathParams":
        return cls(t, one_hot(x0.value, x0.cardinality))


@dataclass(frozen=True, eq=False)
class RateVector:
    """Jump rates out of ``current``; the diagonal holds minus the exit rate"""

    rates: np.ndarray
    current: int


def one_hot(index, cardinality: int) -> np.ndarray:
    return np.eye(cardinality, dtype=np.float64)[np.asarray(index)]


def _check_pair(a: CategoricalState, params: PathParams) -> None:
    if a.cardinality != params.cardinality:
        raise PreconditionError(
            "state and path cardinality differ", {"state": a.cardinality, "path": params.cardinality}
        )


# ---------------------------------------------------------------------------
# vectorized forms: leading axes are dimensions, last axis is the category
# ---------------------------------------------------------------------------


def path_prob_batch(x1: np.ndarray, q: np.ndarray, t: float) -> np.ndarray:
    """p_t(. | x1) = t * onehot(x1) + (1 - t) * q"""
    return t * one_hot(x1, q.shape[-1]) + (1.0 - t) * q


def conditional_rates_batch(xt: np.ndarray, x1: np.ndarray, q: np.ndarray, t: float) -> np.ndarray:
    """u(xt -> x) = ReLU(dp(x) - dp(xt)) / (Z_t * p_t(xt)) on the reachable set.

    The reachable set is {x : p_t(x) > 0} plus x1; Z_t is its size. Rates are
    zero whenever p_t(xt) = 0.
    """
    xt = np.asarray(xt)
    cardinality = q.shape[-1]
    target = one_hot(x1, cardinality)
    pt = t * target + (1.0 - t) * q
    dpt = target - q
    reachable = (pt > 0) | (target > 0)
    z = reachable.sum(axis=-1)

    p_current = np.take_along_axis(pt, xt[..., None], axis=-1)[..., 0]
    d_current = np.take_along_axis(dpt, xt[..., None], axis=-1)[..., 0]
    numerator = np.maximum(dpt - d_current[..., None], 0.0) * reachable

    denominator = z * p_current
    safe = np.where(denominator > 0, denominator, 1.0)
    rates = np.where((denominator > 0)[..., None], numerator / safe[..., None], 0.0)

    current = one_hot(xt, cardinality) > 0
    rates = np.where(current, 0.0, rates)
    rates = np.where(current, -rates.sum(axis=-1, keepdims=True), rates)
    return rates


def euler_kernel_batch(
    xt: np.ndarray, x1_hat: np.ndarray, q: np.ndarray, t: float, dt: float
) -> np.ndarray:
    """onehot(xt) + u * dt, clamped at zero and renormalized; absorbing at the final step"""
    cardinality = q.shape[-1]
    if t + dt >= 1.0 - FINAL_STEP_EPS:
        return one_hot(x1_hat, cardinality) * np.ones(q.shape[:-1] + (1,))
    rates = conditional_rates_batch(xt, x1_hat, q, t)
    probs = np.maximum(one_hot(xt, cardinality) + rates * dt, 0.0)
    return probs / probs.sum(axis=-1, keepdims=True)


def temper(probs: np.ndarray, temperature: float, literal: bool = False) -> np.ndarray:
    """Flatten categorical rows by raising to 1/T and renormalizing.

    ``literal`` divides the probabilities by T before normalizing, which is
    the printed form of the exploration policy and leaves rows unchanged.
    """
    if temperature <= 0:
        raise ValidationError("temperature must be positive", {"T": temperature})
    if temperature == 1.0:
        return probs
    weights = probs / temperature if literal else np.power(probs, 1.0 / temperature)
    return weights / weights.sum(axis=-1, keepdims=True)


def categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row; zero-probability categories are never selected"""
    cumulative = np.cumsum(probs, axis=-1)
    cumulative = cumulative / cumulative[..., -1:]
    u = rng.random(probs.shape[:-1])
    return (cumulative <= u[..., None]).sum(axis=-1)


def sample_xt_batch(x0: np.ndarray, x1: np.ndarray, t, rng: np.random.Generator) -> np.ndarray:
    """Point-mass path: x1 with probability t, else x0, independently per entry"""
    keep = rng.random(np.shape(x1)) < np.asarray(t)
    return np.where(keep, x1, x0)


def sample_xt_mixture_batch(x1: np.ndarray, q: np.ndarray, t, rng: np.random.Generator) -> np.ndarray:
    """Mixture-to-prior path: x1 with probability t, else a fresh draw from q"""
    noise = categorical(np.broadcast_to(q, np.shape(x1) + q.shape[-1:]), rng)
    keep = rng.random(np.shape(x1)) < np.asarray(t)
    return np.where(keep, x1, noise)


# ---------------------------------------------------------------------------
# per-dimension operations
# ---------------------------------------------------------------------------


def path_prob(x1: CategoricalState, params: PathParams) -> np.ndarray:
    _check_pair(x1, params)
    return path_prob_batch(np.asarray(x1.value), params.q, params.t)


def sample_xt(
    x0: CategoricalState, x1: CategoricalState, t: float, rng: np.random.Generator
) -> CategoricalState:
    if x0.cardinality != x1.cardinality:
        raise PreconditionError("x0 and x1 cardinality differ")
    if not 0.0 <= t <= 1.0:
        raise PreconditionError("t must lie in [0, 1]", {"t": t})
    value = sample_xt_batch(np.asarray(x0.value), np.asarray(x1.value), t, rng)
    return CategoricalState(int(value), x1.cardinality)


def conditional_velocity(xt: CategoricalState, x1: CategoricalState, params: PathParams) -> RateVector:
    _check_pair(xt, params)
    _check_pair(x1, params)
    if params.t >= 1.0:
        raise DomainError("conditional velocity is undefined at t >= 1", {"t": params.t})
    rates = conditional_rates_batch(np.asarray(xt.value), np.asarray(x1.value), params.q, params.t)
    return RateVector(rates=rates, current=xt.value)


def euler_kernel(
    xt: CategoricalState, x1_hat: CategoricalState, params: PathParams, dt: Union[float, int]
) -> np.ndarray:
    _check_pair(xt, params)
    _check_pair(x1_hat, params)
    if dt <= 0:
        raise PreconditionError("dt must be positive", {"dt": dt})
    return euler_kernel_batch(np.asarray(xt.value), np.asarray(x1_hat.value), params.q, params.t, float(dt))
