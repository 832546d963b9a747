"""Multi-step cost and its exact gradients.

The cost accumulated over a horizon of T steps is

    C = sum_{k=0}^{T-1} (1/T) * e_k' Q e_k  +  penalties,

with e_k the difference between predicted and measured observations.  A
parameter influences C twice over: directly at each step, and through the
error it injects into the state, which every later step inherits.  Both
effects reduce to products of three Jacobian families (state-to-state,
parameter-to-state, state-to-observation), all evaluated along the rolled
out trajectory.

:func:`gradient` evaluates the exact gradient in a single backward pass:
an adjoint row vector starts at the last step and is pulled back one state
transition at a time, so the whole computation costs O(T) Jacobian-chain
applications.  :func:`gradient_naive` expands the same quantity as an
explicit double sum over step pairs with O(T^2) matrix chains and exists as
a cross-check and benchmark baseline.  :func:`fd_gradient` differentiates
the cost by central differences (re-rolling the trajectory per
perturbation) and is the independent oracle for both.

One convention worth stating: the backward pass includes the step-0 terms,
i.e. the direct effect of the initial state on the first prediction
g(x[0]) and the parameter-penalty contribution at step 0.  Dropping them
would make the result disagree with finite differences of the cost.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, NonFiniteValue, TrajectoryMismatch
from .model import Dataset, DynamicalModel, Trajectory, rollout
from .penalties import PenaltySpec
from .structure import masked_jac_f_x, sparse_chain_apply

Array = np.ndarray

PSD_TOL = 1e-12

# Steps used for the trajectory spot check are drawn from a fixed stream so
# that gradient evaluation stays a pure function of its arguments.
_SPOT_CHECK_SEED = 0x5EED


@dataclass(frozen=True)
class LossSpec:
    """Weighting and horizon of the multi-step cost.

    ``Q`` is a symmetric positive-semidefinite observation-error weight,
    ``horizon`` the number of scored steps (>= 2), ``penalty`` an optional
    :class:`~msid.penalties.PenaltySpec`.
    """

    Q: Array
    horizon: int
    penalty: Optional[PenaltySpec] = None

    def __post_init__(self):
        q = np.asarray(self.Q, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise DimensionMismatch(f"Q must be square, got shape {q.shape}")
        if not np.array_equal(q, q.T):
            raise DimensionMismatch("Q must be symmetric")
        if float(np.min(np.linalg.eigvalsh(q))) < -PSD_TOL:
            raise DimensionMismatch("Q must be positive semidefinite")
        if self.horizon < 2:
            raise DimensionMismatch(f"horizon must be >= 2, got {self.horizon}")
        q.setflags(write=False)
        object.__setattr__(self, "Q", q)

    @classmethod
    def scaled_identity(cls, n_z: int, horizon: int, scale: float = 1.0,
                        penalty: Optional[PenaltySpec] = None) -> "LossSpec":
        return cls(scale * np.eye(n_z), horizon, penalty)


@dataclass(frozen=True)
class GradientReport:
    """Cost, gradients, and per-step diagnostics for one candidate.

    ``penalty_total`` is the weighted penalty contribution, so
    ``cost == per_step_loss.sum() + penalty_total``.  ``chain_applications``
    counts backward Jacobian-chain products (T-1 for the adjoint pass, 0 for
    the finite-difference path).  ``per_step_gamma_norm`` is ``None`` for
    reports produced without the analytic seeds.
    """

    cost: float
    grad_theta: Array
    grad_x0: Array
    per_step_loss: Array
    penalty_total: float
    per_step_gamma_norm: Optional[Array] = None
    chain_applications: int = 0

    def to_json_dict(self) -> dict:
        return {
            "cost": float(self.cost),
            "grad_theta": [float(v) for v in self.grad_theta],
            "grad_x0": [float(v) for v in self.grad_x0],
            "penalty_total": float(self.penalty_total),
        }


def prediction_error(trajectory: Trajectory, dataset: Dataset) -> Array:
    """Per-step difference between predictions and measurements, shape (T, n_z)."""
    predictions = trajectory.predictions
    observations = dataset.observations
    if predictions.shape != observations.shape:
        raise DimensionMismatch(
            f"predictions {predictions.shape} and observations "
            f"{observations.shape} must have equal shapes")
    return predictions - observations


def _check_pair(trajectory: Trajectory, dataset: Dataset, spec: LossSpec) -> int:
    horizon = trajectory.horizon
    if len(dataset) != horizon:
        raise DimensionMismatch(
            f"trajectory horizon {horizon} does not match dataset length {len(dataset)}")
    if spec.horizon != horizon:
        raise DimensionMismatch(
            f"loss horizon {spec.horizon} does not match trajectory horizon {horizon}")
    return horizon


def _cost_parts(trajectory, dataset, spec, theta):
    horizon = _check_pair(trajectory, dataset, spec)
    errors = prediction_error(trajectory, dataset)
    weighted = errors @ spec.Q
    per_step = np.einsum("ti,ti->t", weighted, errors) / horizon
    penalty_total = 0.0
    if spec.penalty is not None:
        penalty_total = spec.penalty.total_value(trajectory.states[:horizon], theta)
    return per_step, penalty_total, weighted


def cost(trajectory: Trajectory, dataset: Dataset, spec: LossSpec, theta) -> float:
    """Multi-step cost of one candidate, penalties included."""
    per_step, penalty_total, _ = _cost_parts(trajectory, dataset, spec, theta)
    total = float(per_step.sum() + penalty_total)
    if not np.isfinite(total):
        raise NonFiniteValue("cost is not finite")
    return total


def _observation_jacobians(model, states, horizon):
    if model.jac_g_x_batch is not None:
        return np.asarray(model.jac_g_x_batch(states[:horizon]), dtype=float)
    return np.stack([np.asarray(model.jac_g_x(states[k]), dtype=float)
                     for k in range(horizon)])


def gamma_terms(trajectory: Trajectory, dataset: Dataset, spec: LossSpec,
                theta, model: DynamicalModel) -> tuple[Array, Array]:
    """Per-step gradient seeds of the (penalty-augmented) local loss.

    Returns ``(gamma, big_gamma)`` with shapes (T, n_theta) and (T, n_x):
    ``gamma[k]`` is the direct parameter gradient of the loss at step k
    (zero unless a state penalty depends on the parameters), ``big_gamma[k]``
    the loss gradient pulled back through the observation map into state
    space, ``(2/T) e_k' Q Jg(x_k)`` plus the weighted state-penalty gradient.
    """
    horizon = _check_pair(trajectory, dataset, spec)
    theta = np.asarray(theta, dtype=float)
    errors = prediction_error(trajectory, dataset)
    weighted = (2.0 / horizon) * (errors @ spec.Q)
    jac_g = _observation_jacobians(model, trajectory.states, horizon)
    big_gamma = np.einsum("ti,tij->tj", weighted, jac_g)
    gamma = np.zeros((horizon, theta.shape[0]))
    if spec.penalty is not None:
        for k in range(horizon):
            x = trajectory.states[k]
            big_gamma[k] += spec.penalty.step_grad_x(x, theta)
            gamma[k] += spec.penalty.step_grad_theta(x, theta)
    if not (np.all(np.isfinite(big_gamma)) and np.all(np.isfinite(gamma))):
        raise NonFiniteValue("gradient seeds are not finite")
    return gamma, big_gamma


def _spot_check_trajectory(model, trajectory, dataset, theta):
    theta = np.asarray(theta, dtype=float)
    if not np.array_equal(trajectory.parameters, theta):
        raise TrajectoryMismatch("trajectory was generated with different parameters")
    if not np.array_equal(trajectory.states[0], trajectory.initial_state):
        raise TrajectoryMismatch("trajectory initial state is inconsistent")
    horizon = trajectory.horizon
    rng = np.random.default_rng(_SPOT_CHECK_SEED)
    steps = rng.choice(horizon, size=min(3, horizon), replace=False)
    for k in steps:
        expected = np.asarray(
            model.f(trajectory.states[k], dataset.inputs[k], theta), dtype=float)
        if not np.array_equal(expected, trajectory.states[k + 1]):
            raise TrajectoryMismatch(
                f"stored state at step {k + 1} does not reproduce under f")


def _transition_jacobians(model, trajectory, dataset, theta):
    """State and parameter Jacobians of each transition along the trajectory.

    Index i holds the Jacobians of the map producing state i+1, i.e. the
    derivatives of f at (states[i], inputs[i], theta), for i = 0..T-2.  The
    transition into the final state is never needed because no loss is
    evaluated there.
    """
    horizon = trajectory.horizon
    states = trajectory.states[:horizon - 1]
    inputs = dataset.inputs[:horizon - 1]
    if model.sparsity is not None:
        jac_x = [masked_jac_f_x(model, states[i], inputs[i], theta, model.sparsity)
                 for i in range(horizon - 1)]
    elif model.jac_f_x_batch is not None:
        jac_x = np.asarray(model.jac_f_x_batch(states, inputs, theta), dtype=float)
    else:
        jac_x = np.stack([np.asarray(model.jac_f_x(states[i], inputs[i], theta), dtype=float)
                          for i in range(horizon - 1)])
    if model.jac_f_theta_batch is not None:
        jac_theta = np.asarray(model.jac_f_theta_batch(states, inputs, theta), dtype=float)
    else:
        jac_theta = np.stack(
            [np.asarray(model.jac_f_theta(states[i], inputs[i], theta), dtype=float)
             for i in range(horizon - 1)])
    return jac_x, jac_theta


def _apply_chain(adjoint, jac):
    if isinstance(jac, np.ndarray):
        return adjoint @ jac
    return sparse_chain_apply(adjoint, jac)


def gradient(model: DynamicalModel, trajectory: Trajectory, dataset: Dataset,
             spec: LossSpec, theta) -> GradientReport:
    """Exact cost gradient via one backward adjoint pass, O(T) chain products.

    The trajectory must have been produced by :func:`~msid.model.rollout`
    under ``theta`` and its stored initial state; a spot check re-evaluates
    the dynamics at three steps and raises :class:`TrajectoryMismatch` if
    the stored states do not reproduce.
    """
    theta = np.asarray(theta, dtype=float)
    _spot_check_trajectory(model, trajectory, dataset, theta)
    horizon = _check_pair(trajectory, dataset, spec)
    per_step, penalty_total, _ = _cost_parts(trajectory, dataset, spec, theta)
    total_cost = float(per_step.sum() + penalty_total)
    gamma, big_gamma = gamma_terms(trajectory, dataset, spec, theta, model)
    jac_x, jac_theta = _transition_jacobians(model, trajectory, dataset, theta)

    grad_theta = gamma.sum(axis=0)
    if spec.penalty is not None:
        grad_theta = grad_theta + spec.penalty.param_grad(theta)

    adjoint = big_gamma[horizon - 1].copy()
    chain_applications = 0
    for k in range(horizon - 1, 0, -1):
        grad_theta += adjoint @ jac_theta[k - 1]
        adjoint = big_gamma[k - 1] + _apply_chain(adjoint, jac_x[k - 1])
        chain_applications += 1
    grad_x0 = adjoint

    if not (np.isfinite(total_cost)
            and np.all(np.isfinite(grad_theta)) and np.all(np.isfinite(grad_x0))):
        raise NonFiniteValue("gradient evaluation produced non-finite values")
    return GradientReport(
        cost=total_cost, grad_theta=grad_theta, grad_x0=grad_x0,
        per_step_loss=per_step, penalty_total=penalty_total,
        per_step_gamma_norm=np.linalg.norm(big_gamma, axis=1),
        chain_applications=chain_applications)


def gradient_naive(model: DynamicalModel, trajectory: Trajectory, dataset: Dataset,
                   spec: LossSpec, theta) -> GradientReport:
    """Same contract as :func:`gradient`, computed as the explicit double sum.

    For every step pair (k, tau) with tau > k the full matrix chain
    Jx[tau]...Jx[k+1] is formed, so the cost is O(T^2) matrix products.
    Kept as a cross-check and benchmark baseline only.
    """
    theta = np.asarray(theta, dtype=float)
    _spot_check_trajectory(model, trajectory, dataset, theta)
    horizon = _check_pair(trajectory, dataset, spec)
    per_step, penalty_total, _ = _cost_parts(trajectory, dataset, spec, theta)
    total_cost = float(per_step.sum() + penalty_total)
    gamma, big_gamma = gamma_terms(trajectory, dataset, spec, theta, model)
    jac_x, jac_theta = _transition_jacobians(model, trajectory, dataset, theta)
    if model.sparsity is not None:
        jac_x = [j.to_dense() for j in jac_x]

    n_x = model.dims.n_x
    grad_theta = gamma.sum(axis=0)
    if spec.penalty is not None:
        grad_theta = grad_theta + spec.penalty.param_grad(theta)
    for k in range(1, horizon):
        grad_theta = grad_theta + big_gamma[k] @ jac_theta[k - 1]
        chain = np.eye(n_x)
        for tau in range(k + 1, horizon):
            chain = jac_x[tau - 1] @ chain
            grad_theta = grad_theta + (big_gamma[tau] @ chain) @ jac_theta[k - 1]

    grad_x0 = big_gamma[0].copy()
    chain = np.eye(n_x)
    for k in range(1, horizon):
        chain = jac_x[k - 1] @ chain
        grad_x0 = grad_x0 + big_gamma[k] @ chain

    if not (np.all(np.isfinite(grad_theta)) and np.all(np.isfinite(grad_x0))):
        raise NonFiniteValue("gradient evaluation produced non-finite values")
    return GradientReport(
        cost=total_cost, grad_theta=grad_theta, grad_x0=grad_x0,
        per_step_loss=per_step, penalty_total=penalty_total,
        per_step_gamma_norm=np.linalg.norm(big_gamma, axis=1),
        chain_applications=0)


def fd_gradient(model: DynamicalModel, x0, theta, dataset: Dataset,
                spec: LossSpec, step: float = 1e-6) -> GradientReport:
    """Central finite differences of the cost, re-rolling per perturbation.

    Independent of the analytic path; serves as its oracle and as the
    numerically-approximated gradient in optimizer comparisons.  The step
    for each component scales with max(1, |value|).
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    x0 = np.asarray(x0, dtype=float)
    theta = np.asarray(theta, dtype=float)

    def evaluate(th, x):
        trajectory = rollout(model, x, th, dataset.inputs)
        return cost(trajectory, dataset, spec, th)

    center = rollout(model, x0, theta, dataset.inputs)
    per_step, penalty_total, _ = _cost_parts(center, dataset, spec, theta)
    total_cost = float(per_step.sum() + penalty_total)

    grad_theta = np.empty_like(theta)
    for i in range(theta.size):
        h = step * max(1.0, abs(theta[i]))
        plus = theta.copy()
        plus[i] += h
        minus = theta.copy()
        minus[i] -= h
        grad_theta[i] = (evaluate(plus, x0) - evaluate(minus, x0)) / (plus[i] - minus[i])
    grad_x0 = np.empty_like(x0)
    for j in range(x0.size):
        h = step * max(1.0, abs(x0[j]))
        plus = x0.copy()
        plus[j] += h
        minus = x0.copy()
        minus[j] -= h
        grad_x0[j] = (evaluate(theta, plus) - evaluate(theta, minus)) / (plus[j] - minus[j])

    if not (np.all(np.isfinite(grad_theta)) and np.all(np.isfinite(grad_x0))):
        raise NonFiniteValue("finite-difference gradient is not finite")
    return GradientReport(
        cost=total_cost, grad_theta=grad_theta, grad_x0=grad_x0,
        per_step_loss=per_step, penalty_total=penalty_total,
        per_step_gamma_norm=None, chain_applications=0)


def timed(fn, *args, **kwargs):
    """Run ``fn`` and return (result, elapsed seconds)."""
    start = time.perf_counter()
    result = fn(*args, **kwargs)
    return result, time.perf_counter() - start
