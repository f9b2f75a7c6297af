"""Two-layer perceptron bid-adjustment controller.

Each period the controller maps accumulated campaign feedback to a
multiplicative bid adjustment ``u`` in (0, u_max): a linear encoding layer
feeds a logistic decision layer.  The input concatenates, per constraint,
a unit target marker and the target-normalized achieved value, followed by
optional extra rate features.  Normalizing by target keeps budget-sized
and price-sized KPIs on one scale, so a single learning rate works.

Training minimizes a quadratic cost (weighted KPI error plus a penalty on
period-to-period adjustment change) without any model of the auction
environment.  The unobservable slope of feedback with respect to ``u`` is
replaced by the sign of the correlation between their last-two-period
deltas, and the encoding-layer factor by a Hebbian-style sign sum over
hidden-unit deltas.  Updates average the gradients logged over a short
window and rescale them to a fixed Frobenius step of ``learning_rate``, so
step size is controlled by direction agreement rather than raw magnitude.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .core import (
    ConfigurationError,
    ConstraintSet,
    KpiKind,
    PeriodFeedback,
    feedback_value,
)


class InsufficientHistory(RuntimeError):
    """Backward pass requested before a previous period exists."""


class FeatureSet(Enum):
    """Which extra rate features the input vector carries."""

    NONE = "none"            # constraints only
    POSTERIOR = "posterior"  # realized CTR, CVR
    PRIOR = "prior"          # mean predicted CTR, CVR over participated bids
    FULL = "full"            # posterior then prior

    @property
    def width(self) -> int:
        return {FeatureSet.NONE: 0, FeatureSet.POSTERIOR: 2,
                FeatureSet.PRIOR: 2, FeatureSet.FULL: 4}[self]


class BudgetErrorMode(Enum):
    """Reference the budget error is measured against.

    FULL_BUDGET compares cumulative spend to the whole budget from period
    one, which pushes spend toward the budget for the entire run.  PACED
    compares it to the elapsed fraction of the replay instead.
    """

    FULL_BUDGET = "full"
    PACED = "paced"


@dataclass(frozen=True)
class MlpControllerConfig:
    hidden_dim: int = 8
    learning_rate: float = 0.01
    grad_window: int = 4          # periods of gradient history averaged per update
    control_weight: float = 1.0   # quadratic penalty on adjustment change
    u_max: float = 1.0
    feature_set: FeatureSet = FeatureSet.FULL
    budget_error_mode: BudgetErrorMode = BudgetErrorMode.FULL_BUDGET
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden_dim < 1:
            raise ConfigurationError("hidden_dim must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.grad_window < 1:
            raise ConfigurationError("grad_window must be >= 1")
        if self.control_weight <= 0:
            raise ConfigurationError("control_weight must be positive")
        if self.u_max <= 0:
            raise ConfigurationError("u_max must be positive")


@dataclass
class ControllerState:
    """Mutable controller state owned by one campaign replay.

    ``fb_prev`` and ``resp_prev`` are the feedback snapshots: the cumulative
    counters after the previous period, and that period's own normalized
    response (its feedback delta over targets), which the slope estimate
    differences against.
    """

    w_enc: np.ndarray                 # (hidden_dim, input_dim)
    w_dec: np.ndarray                 # (hidden_dim,)
    u_curr: float
    u_prev: float
    h_curr: np.ndarray
    h_prev: np.ndarray
    x_curr: np.ndarray
    x_prev: np.ndarray
    fb_prev: Optional[PeriodFeedback]
    resp_prev: Optional[np.ndarray]
    grad_log_enc: deque = field(default_factory=deque)
    grad_log_dec: deque = field(default_factory=deque)
    period_index: int = 0


@dataclass(frozen=True)
class UpdateResult:
    """Which weight matrices actually moved in an update step."""

    enc_applied: bool
    dec_applied: bool


_ZERO_NORM_GUARD = 1e-12
# keeps u strictly inside (0, u_max) when the logistic saturates to 0/1 in floats
_U_MARGIN = 1e-12


def input_dim(n_constraints: int, feature_set: FeatureSet) -> int:
    return 2 * n_constraints + feature_set.width


def extra_features(feedback: PeriodFeedback, feature_set: FeatureSet) -> list[float]:
    posterior = [feedback.ctr, feedback.cvr]
    prior = [feedback.mean_pctr, feedback.mean_pcvr]
    if feature_set is FeatureSet.NONE:
        return []
    if feature_set is FeatureSet.POSTERIOR:
        return posterior
    if feature_set is FeatureSet.PRIOR:
        return prior
    return posterior + prior


def normalized_feedback(constraints: ConstraintSet, feedback: PeriodFeedback) -> np.ndarray:
    """Per-constraint achieved value divided by its target."""
    return np.array([feedback_value(c, feedback) / c.target for c in constraints.constraints])


def build_input(constraints: ConstraintSet, feedback: PeriodFeedback,
                feature_set: FeatureSet) -> np.ndarray:
    """Assemble the input vector [1, achieved/target, ...] + extra features."""
    xhat = normalized_feedback(constraints, feedback)
    parts: list[float] = []
    for value in xhat:
        parts.append(1.0)
        parts.append(float(value))
    parts.extend(extra_features(feedback, feature_set))
    return np.array(parts)


def _sigmoid(a: float) -> float:
    if a >= 0.0:
        return 1.0 / (1.0 + math.exp(-a))
    e = math.exp(a)
    return e / (1.0 + e)


def _sigmoid_slope(a: float) -> float:
    # equals exp(-a) / (1 + exp(-a))^2, computed without overflow
    s = _sigmoid(a)
    return s * (1.0 - s)


def forward(state: ControllerState, x: np.ndarray, u_max: float) -> tuple[np.ndarray, float]:
    """One forward pass; rolls current/previous snapshots in state."""
    if x.shape[0] != state.w_enc.shape[1]:
        raise ConfigurationError(
            f"input has {x.shape[0]} entries, encoding layer expects {state.w_enc.shape[1]}")
    h = state.w_enc @ x
    u = u_max * _sigmoid(float(state.w_dec @ h))
    u = min(max(u, u_max * _U_MARGIN), u_max * (1.0 - _U_MARGIN))
    state.x_prev, state.x_curr = state.x_curr, x
    state.h_prev, state.h_curr = state.h_curr, h
    state.u_prev, state.u_curr = state.u_curr, u
    return h, u


def kpi_error(constraints: ConstraintSet, feedback: PeriodFeedback,
              elapsed_fraction: float = 1.0,
              mode: BudgetErrorMode = BudgetErrorMode.FULL_BUDGET) -> np.ndarray:
    """Target-normalized error vector, one entry per constraint."""
    xhat = normalized_feedback(constraints, feedback)
    zhat = reference_vector(constraints, elapsed_fraction, mode)
    return xhat - zhat


def reference_vector(constraints: ConstraintSet, elapsed_fraction: float,
                     mode: BudgetErrorMode) -> np.ndarray:
    zhat = np.ones(len(constraints.constraints))
    if mode is BudgetErrorMode.PACED:
        for i, c in enumerate(constraints.constraints):
            if c.kind is KpiKind.BUDGET:
                zhat[i] = elapsed_fraction
    return zhat


def cost_value(errors: np.ndarray, error_weights: np.ndarray,
               du: np.ndarray, control_weights: np.ndarray) -> float:
    """Quadratic period cost: weighted KPI error plus weighted control change."""
    errors = np.asarray(errors, dtype=float)
    du = np.asarray(du, dtype=float)
    return float(np.sum(error_weights * errors * errors) + np.sum(control_weights * du * du))


def partial_j1(q: float, x: float, z: float) -> float:
    """Slope of the weighted squared KPI error with respect to the feedback."""
    return 2.0 * q * (x - z)


def partial_j2(r: float, u_curr: float, u_prev: float) -> float:
    """Slope of the control penalty with respect to the current adjustment
    (the previous adjustment is held constant)."""
    return 2.0 * r * (u_curr - u_prev)


def approx_dxdu(x_curr: float, x_prev: float, u_curr: float, u_prev: float) -> float:
    """Sign estimate of the feedback-vs-adjustment slope from the last two
    periods; 0 when either delta is zero (no evidence, no direction)."""
    product = (x_curr - x_prev) * (u_curr - u_prev)
    if product > 0.0:
        return 1.0
    if product < 0.0:
        return -1.0
    return 0.0


def sigmoid_layer_grads(w_dec: np.ndarray, h: np.ndarray,
                        u_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact decision-layer gradients: du/dh and du/dw_dec."""
    slope = u_max * _sigmoid_slope(float(w_dec @ h))
    return slope * w_dec, slope * h


def approx_dhdwe(x: np.ndarray, h_curr: np.ndarray, h_prev: np.ndarray,
                 u_curr: float, u_prev: float) -> np.ndarray:
    """Hebbian-style encoding-layer factor: the input vector scaled by the
    summed sign correlations between hidden-unit deltas and the adjustment
    delta."""
    du = u_curr - u_prev
    total = 0.0
    for dh in np.asarray(h_curr) - np.asarray(h_prev):
        product = dh * du
        if product > 0.0:
            total += 1.0
        elif product < 0.0:
            total -= 1.0
    return np.asarray(x) * total


def backward(state: ControllerState, constraints: ConstraintSet,
             feedback: PeriodFeedback, config: MlpControllerConfig,
             elapsed_fraction: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Assemble the approximated gradients for both layers and log them.

    ``feedback`` is the cumulative feedback after the period just run.  The
    KPI error slope uses the cumulative achieved values; the environment
    slope sign correlates each period's own response (the feedback delta
    that period produced) with the adjustment delta, since it is the
    per-period response that actually reacts to the current adjustment.
    """
    if state.period_index < 1 or state.fb_prev is None or state.resp_prev is None:
        raise InsufficientHistory("no previous period to difference against")
    xhat = normalized_feedback(constraints, feedback)
    resp = normalized_feedback(constraints, feedback - state.fb_prev)
    zhat = reference_vector(constraints, elapsed_fraction, config.budget_error_mode)
    chain = partial_j2(config.control_weight, state.u_curr, state.u_prev)
    for i, c in enumerate(constraints.constraints):
        slope = approx_dxdu(float(resp[i]), float(state.resp_prev[i]),
                            state.u_curr, state.u_prev)
        chain += partial_j1(c.error_weight, float(xhat[i]), float(zhat[i])) * slope
    du_dh, du_dwd = sigmoid_layer_grads(state.w_dec, state.h_curr, config.u_max)
    g_dec = chain * du_dwd
    dh_dwe = approx_dhdwe(state.x_curr, state.h_curr, state.h_prev,
                          state.u_curr, state.u_prev)
    g_enc = chain * np.outer(du_dh, dh_dwe)
    state.grad_log_enc.append(g_enc)
    state.grad_log_dec.append(g_dec)
    return g_enc, g_dec


def _normalized_step(w: np.ndarray, grad_log: deque, learning_rate: float) -> bool:
    if not grad_log:
        return False
    mean_grad = np.mean(np.stack(list(grad_log)), axis=0)
    norm = float(np.linalg.norm(mean_grad))
    if norm <= _ZERO_NORM_GUARD:
        return False
    w -= learning_rate * (mean_grad / norm)
    return True


def apply_update(state: ControllerState, config: MlpControllerConfig) -> UpdateResult:
    """Take one fixed-norm step per weight matrix from the windowed mean
    gradient; a matrix whose mean gradient is (numerically) zero is left
    untouched."""
    return UpdateResult(
        enc_applied=_normalized_step(state.w_enc, state.grad_log_enc, config.learning_rate),
        dec_applied=_normalized_step(state.w_dec, state.grad_log_dec, config.learning_rate),
    )


def init_state(config: MlpControllerConfig, dim: int) -> ControllerState:
    """Fresh state: small random weights in both layers (seeded), so the first
    adjustments sit near u_max/2 but differ period to period, which is what
    lets the sign-based slope estimates pick up a direction at all."""
    rng = np.random.default_rng(config.rng_seed)
    w_enc = rng.uniform(-0.1, 0.1, size=(config.hidden_dim, dim))
    w_dec = rng.uniform(-0.1, 0.1, size=config.hidden_dim)
    zeros_h = np.zeros(config.hidden_dim)
    return ControllerState(
        w_enc=w_enc,
        w_dec=w_dec,
        u_curr=config.u_max / 2.0,
        u_prev=config.u_max / 2.0,
        h_curr=zeros_h,
        h_prev=zeros_h.copy(),
        x_curr=np.zeros(dim),
        x_prev=np.zeros(dim),
        fb_prev=None,
        resp_prev=None,
        grad_log_enc=deque(maxlen=config.grad_window),
        grad_log_dec=deque(maxlen=config.grad_window),
    )


class MlpBidController:
    """Period-facing wrapper tying the pieces together for one campaign."""

    def __init__(self, constraints: ConstraintSet,
                 config: MlpControllerConfig | None = None):
        self.config = config if config is not None else MlpControllerConfig()
        self.constraints = constraints
        dim = input_dim(len(constraints.constraints), self.config.feature_set)
        self.state = init_state(self.config, dim)

    def begin_period(self, feedback: PeriodFeedback) -> float:
        """Produce this period's adjustment from cumulative feedback so far."""
        x = build_input(self.constraints, feedback, self.config.feature_set)
        _, u = forward(self.state, x, self.config.u_max)
        return u

    def end_period(self, feedback: PeriodFeedback, elapsed_fraction: float = 1.0) -> None:
        """Learn from the period just run; the very first period only seeds
        the feedback snapshots."""
        try:
            backward(self.state, self.constraints, feedback, self.config, elapsed_fraction)
        except InsufficientHistory:
            pass
        else:
            apply_update(self.state, self.config)
        delta = feedback - self.state.fb_prev if self.state.fb_prev is not None else feedback
        self.state.resp_prev = normalized_feedback(self.constraints, delta)
        self.state.fb_prev = feedback
        self.state.period_index += 1
