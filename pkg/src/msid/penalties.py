"""Differentiable penalties that encode physical knowledge in the cost.

Each term scores one candidate point: state-dependent terms (energy
deviation, state bounds) are charged at every step of the horizon, while
parameter-only terms (parameter box) are charged once per cost evaluation.
Every term carries its own nonnegative weight and exposes analytic
gradients with respect to the state and the parameters; one of the two is
identically zero for single-argument terms.

Exponential barriers saturate their exponent at ``exp_cap`` (default 700,
just under the double-precision overflow boundary) so that a grossly
infeasible iterate yields a huge but finite value and a finite gradient
that still points back toward feasibility.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, ClassVar, Optional

import numpy as np

from .errors import InvalidBox
from .model import numeric_jacobian

Array = np.ndarray

EXP_CAP = 700.0


def _clipped_exp(exponent, cap):
    return np.exp(np.minimum(exponent, cap))


@dataclass(frozen=True)
class EnergyConservation:
    """Quadratic deviation of a scalar energy function from a reference value.

    ``h(x) = (energy_fn(x) - reference)**2``.  ``energy_fn`` must be a fixed
    map of the state alone; if ``energy_grad`` is omitted its gradient is
    approximated by central differences.
    """

    energy_fn: Callable[[Array], float]
    reference: float
    energy_grad: Optional[Callable[[Array], Array]] = None
    weight: float = 1.0

    depends_on_state: ClassVar[bool] = True

    def value(self, x, theta) -> float:
        return float(self.energy_fn(x) - self.reference) ** 2

    def grad_x(self, x, theta) -> Array:
        deviation = float(self.energy_fn(x) - self.reference)
        if self.energy_grad is not None:
            grad = np.asarray(self.energy_grad(x), dtype=float)
        else:
            grad = numeric_jacobian(lambda v: np.atleast_1d(self.energy_fn(v)), x)[0]
        return 2.0 * deviation * grad

    def grad_theta(self, x, theta) -> Array:
        return np.zeros_like(np.asarray(theta, dtype=float))


@dataclass(frozen=True)
class UpperBarrier:
    """Exponential barrier pushing each state component below its bound.

    ``h(x) = sum_i exp(2 * alpha * (x_i - bounds_i))``; a bound of +inf
    deactivates its component (contributes exactly zero).
    """

    bounds: Array
    alpha: float
    weight: float = 1.0
    exp_cap: float = EXP_CAP

    depends_on_state: ClassVar[bool] = True

    def __post_init__(self):
        object.__setattr__(self, "bounds", np.asarray(self.bounds, dtype=float))
        if not self.alpha > 0:
            raise InvalidBox(f"alpha must be positive, got {self.alpha}")

    def value(self, x, theta) -> float:
        exponent = 2.0 * self.alpha * (np.asarray(x, dtype=float) - self.bounds)
        return float(np.sum(_clipped_exp(exponent, self.exp_cap)))

    def grad_x(self, x, theta) -> Array:
        exponent = 2.0 * self.alpha * (np.asarray(x, dtype=float) - self.bounds)
        return 2.0 * self.alpha * _clipped_exp(exponent, self.exp_cap)

    def grad_theta(self, x, theta) -> Array:
        return np.zeros_like(np.asarray(theta, dtype=float))


@dataclass(frozen=True)
class LowerBarrier:
    """Exponential barrier pushing each state component above its bound.

    ``h(x) = sum_i exp(2 * alpha * (bounds_i - x_i))``; a bound of -inf
    deactivates its component.  With ``bounds = 0`` this is a soft
    non-negativity constraint on the state.
    """

    bounds: Array
    alpha: float
    weight: float = 1.0
    exp_cap: float = EXP_CAP

    depends_on_state: ClassVar[bool] = True

    def __post_init__(self):
        object.__setattr__(self, "bounds", np.asarray(self.bounds, dtype=float))
        if not self.alpha > 0:
            raise InvalidBox(f"alpha must be positive, got {self.alpha}")

    def value(self, x, theta) -> float:
        exponent = 2.0 * self.alpha * (self.bounds - np.asarray(x, dtype=float))
        return float(np.sum(_clipped_exp(exponent, self.exp_cap)))

    def grad_x(self, x, theta) -> Array:
        exponent = 2.0 * self.alpha * (self.bounds - np.asarray(x, dtype=float))
        return -2.0 * self.alpha * _clipped_exp(exponent, self.exp_cap)

    def grad_theta(self, x, theta) -> Array:
        return np.zeros_like(np.asarray(theta, dtype=float))


@dataclass(frozen=True)
class ParameterBox:
    """Two-sided exponential barrier keeping the parameters inside a box.

    ``h(theta) = sum_i exp(2*alpha*(theta_i - upper_i))
               + sum_i exp(2*alpha*(lower_i - theta_i))``.
    Charged once per cost evaluation, not once per step, so its weight does
    not silently rescale with the horizon.
    """

    lower: Array
    upper: Array
    alpha: float
    weight: float = 1.0
    exp_cap: float = EXP_CAP

    depends_on_state: ClassVar[bool] = False

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != upper.shape:
            raise InvalidBox(f"bound shapes differ: {lower.shape} vs {upper.shape}")
        if np.any(lower > upper):
            raise InvalidBox("lower bound exceeds upper bound")
        if not self.alpha > 0:
            raise InvalidBox(f"alpha must be positive, got {self.alpha}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def value(self, x, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        above = 2.0 * self.alpha * (theta - self.upper)
        below = 2.0 * self.alpha * (self.lower - theta)
        return float(np.sum(_clipped_exp(above, self.exp_cap))
                     + np.sum(_clipped_exp(below, self.exp_cap)))

    def grad_x(self, x, theta) -> Array:
        return np.zeros_like(np.asarray(x, dtype=float))

    def grad_theta(self, x, theta) -> Array:
        theta = np.asarray(theta, dtype=float)
        above = 2.0 * self.alpha * (theta - self.upper)
        below = 2.0 * self.alpha * (self.lower - theta)
        return 2.0 * self.alpha * (_clipped_exp(above, self.exp_cap)
                                   - _clipped_exp(below, self.exp_cap))


@dataclass(frozen=True)
class ReluUpperBound:
    """Hinge penalty ``h(x) = sum_i max(0, x_i - bounds_i)``.

    Kept as a documented alternative to :class:`UpperBarrier`; it penalizes
    violations only linearly and is not differentiable at the bound (the
    subgradient used here is 0 there), so the exponential barrier is the
    recommended default.
    """

    bounds: Array
    weight: float = 1.0

    depends_on_state: ClassVar[bool] = True

    def __post_init__(self):
        object.__setattr__(self, "bounds", np.asarray(self.bounds, dtype=float))

    def value(self, x, theta) -> float:
        return float(np.sum(np.maximum(0.0, np.asarray(x, dtype=float) - self.bounds)))

    def grad_x(self, x, theta) -> Array:
        return (np.asarray(x, dtype=float) > self.bounds).astype(float)

    def grad_theta(self, x, theta) -> Array:
        return np.zeros_like(np.asarray(theta, dtype=float))


@dataclass(frozen=True)
class PenaltySpec:
    """An ordered collection of penalty terms with per-term weights."""

    terms: tuple

    def __post_init__(self):
        terms = tuple(self.terms)
        for term in terms:
            if term.weight < 0:
                raise InvalidBox(f"penalty weight must be nonnegative, got {term.weight}")
        object.__setattr__(self, "terms", terms)

    def _state_terms(self):
        return (t for t in self.terms if t.depends_on_state)

    def _param_terms(self):
        return (t for t in self.terms if not t.depends_on_state)

    def step_value(self, x, theta) -> float:
        """Weighted penalty charged at one step of the horizon."""
        return sum(t.weight * t.value(x, theta) for t in self._state_terms())

    def step_grad_x(self, x, theta) -> Array:
        grad = np.zeros_like(np.asarray(x, dtype=float))
        for t in self._state_terms():
            grad += t.weight * t.grad_x(x, theta)
        return grad

    def step_grad_theta(self, x, theta) -> Array:
        grad = np.zeros_like(np.asarray(theta, dtype=float))
        for t in self._state_terms():
            grad += t.weight * t.grad_theta(x, theta)
        return grad

    def param_value(self, theta) -> float:
        """Weighted parameter-only penalty, charged once per evaluation."""
        return sum(t.weight * t.value(None, theta) for t in self._param_terms())

    def param_grad(self, theta) -> Array:
        grad = np.zeros_like(np.asarray(theta, dtype=float))
        for t in self._param_terms():
            grad += t.weight * t.grad_theta(None, theta)
        return grad

    def total_value(self, states, theta) -> float:
        """Weighted penalty over a whole trajectory (states = first T rows)."""
        total = self.param_value(theta)
        for x in states:
            total += self.step_value(x, theta)
        return float(total)


def eval_penalty(term, x, theta) -> float:
    """Unweighted penalty value of a single term."""
    return term.value(x, theta)


def penalty_gradients(term, x, theta) -> tuple[Array, Array]:
    """Unweighted analytic gradients (d/dx, d/dtheta) of a single term."""
    return term.grad_x(x, theta), term.grad_theta(x, theta)


def project_box(theta, lower, upper) -> Array:
    """Componentwise clamp of the parameters onto [lower, upper].

    Idempotent and the identity on feasible points.  Raises
    :class:`InvalidBox` when any lower bound exceeds its upper bound.
    """
    theta = np.asarray(theta, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), theta.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), theta.shape)
    if np.any(lower > upper):
        raise InvalidBox("lower bound exceeds upper bound")
    return np.clip(theta, lower, upper)
