"""Loss, metric, optimizer and gradient verification."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from .errors import ConfigError, DataError, NumericError, ShapeError, StateError

CLAMP = 1e-7


@dataclass
class LossResult:
    value: float
    grad: np.ndarray


def _check_targets(predictions: np.ndarray, targets: np.ndarray) -> None:
    if predictions.shape != targets.shape or predictions.ndim != 2:
        raise ShapeError(f"predictions {predictions.shape} and targets {targets.shape} "
                         "must be equal [batch, classes] arrays")
    if predictions.shape[0] == 0:
        raise DataError("empty batch")
    onehot = np.all((targets == 0) | (targets == 1), axis=1) & (targets.sum(axis=1) == 1)
    if not np.all(onehot):
        bad = int(np.argmin(onehot))
        raise DataError(f"target row {bad} is not one-hot: {targets[bad].tolist()}")


def bce_loss(predictions: np.ndarray, targets: np.ndarray) -> LossResult:
    """Binary cross entropy averaged over batch and outputs.

    Each output is treated as an independent Bernoulli probability (the model
    ends in per-output sigmoids, not a softmax).  Predictions are clamped to
    ``[1e-7, 1 - 1e-7]`` and the gradient is taken at the clamped value.
    """
    _check_targets(predictions, targets)
    p = np.clip(predictions, CLAMP, 1.0 - CLAMP)
    t = targets.astype(p.dtype)
    n = p.size
    value = float(-np.mean(t * np.log(p) + (1 - t) * np.log(1 - p), dtype=np.float64))
    grad = (p - t) / (p * (1 - p)) / p.dtype.type(n)
    return LossResult(value, grad)


def accuracy(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Fraction of rows whose argmax matches; ties go to the lower index."""
    if predictions.shape != targets.shape:
        raise ShapeError(f"shape mismatch: {predictions.shape} vs {targets.shape}")
    if predictions.ndim != 2 or predictions.shape[0] == 0:
        raise DataError("accuracy is undefined on an empty batch")
    return float(np.mean(predictions.argmax(axis=1) == targets.argmax(axis=1)))


@dataclass
class RmsPropState:
    v: np.ndarray
    learning_rate: float = 0.001
    rho: float = 0.9
    epsilon: float = 1e-7

    def __post_init__(self) -> None:
        validate_rmsprop(self.learning_rate, self.rho, self.epsilon)


def validate_rmsprop(learning_rate: float, rho: float, epsilon: float) -> None:
    if learning_rate < 0:
        raise ConfigError(f"learning rate must be non-negative, got {learning_rate}")
    if not 0.0 < rho < 1.0:
        raise ConfigError(f"rho must be in (0, 1), got {rho}")
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")


def rmsprop_step(param: np.ndarray, grad: np.ndarray, state: RmsPropState) -> np.ndarray:
    """One in-place RMSProp update; ``epsilon`` is added outside the square root."""
    if param.shape != grad.shape or state.v.shape != param.shape:
        raise ShapeError(f"param {param.shape}, grad {grad.shape} and accumulator "
                         f"{state.v.shape} must share a shape")
    dt = param.dtype.type
    state.v *= dt(state.rho)
    state.v += dt(1.0 - state.rho) * grad * grad
    param -= dt(state.learning_rate) * grad / (np.sqrt(state.v) + dt(state.epsilon))
    return param


class RMSProp:
    """Keeps one :class:`RmsPropState` per named parameter."""

    def __init__(self, learning_rate: float = 0.001, rho: float = 0.9,
                 epsilon: float = 1e-7) -> None:
        validate_rmsprop(learning_rate, rho, epsilon)
        self.learning_rate = learning_rate
        self.rho = rho
        self.epsilon = epsilon
        self.states: Dict[str, RmsPropState] = {}

    def step(self, parameters: Iterable[Tuple[str, np.ndarray, np.ndarray]]) -> None:
        for name, param, grad in parameters:
            state = self.states.get(name)
            if state is None:
                state = RmsPropState(np.zeros_like(param), self.learning_rate,
                                     self.rho, self.epsilon)
                self.states[name] = state
            rmsprop_step(param, grad, state)


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class GradCheckReport:
    errors: Dict[str, float]
    tolerance: float
    epsilon: float
    checked: Dict[str, int] = field(default_factory=dict)
    skipped: Dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def lines(self):
        for name, err in self.errors.items():
            yield (f"{name}\t{err:.3e}\t({self.checked.get(name, 0)} checked, "
                   f"{self.skipped.get(name, 0)} at kinks)")


def relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)


class _SingleLayer:
    """Adapter giving a bare layer the model interface the checker uses."""

    def __init__(self, layer) -> None:
        self.layers = [layer]

    def forward(self, x, training=False):
        return self.layers[0].forward(x, training)

    def backward(self, g):
        return self.layers[0].backward(g)

    def parameters(self):
        layer = self.layers[0]
        for key in layer.params:
            yield key, layer.params[key], layer.grads[key]

    def zero_grad(self):
        self.layers[0].zero_grad()


def _decisions(model):
    return [d.copy() for d in (l.decisions() for l in model.layers) if d is not None]


def finite_difference_check(target, x: np.ndarray, epsilon: float = 1e-5,
                            tolerance: float = 1e-4, targets: Optional[np.ndarray] = None,
                            max_entries: int = 16, seed: int = 0,
                            check_input: Optional[bool] = None) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``target`` is a layer or a :class:`~hemocnn.model.SequentialModel`.  With
    ``targets`` the loss is :func:`bce_loss`; otherwise it is
    ``0.5 * sum((y - r)**2)`` for a fixed random ``r``.  Up to ``max_entries``
    randomly chosen entries of each parameter tensor (and of the input) are
    perturbed.  The input gradient is checked too unless ``check_input`` is
    false (the default for whole models, whose raw 0..255 pixel input is
    rescaled so far below ``epsilon`` that the check sits at roundoff level).
    Stochastic layers replay the same random draws on every
    evaluation, so dropout masks stay fixed.

    A perturbation that flips a ReLU mask or a max-pool argmax straddles a
    kink where the function is not differentiable; such entries are skipped
    and another entry is drawn (counted in ``report.skipped``).
    """
    if not np.isfinite(epsilon) or epsilon <= 0:
        raise NumericError(f"finite-difference step must be positive, got {epsilon}")
    model = target if hasattr(target, "layers") else _SingleLayer(target)
    if check_input is None:
        check_input = isinstance(model, _SingleLayer)
    if x.dtype != np.float64 or any(p.dtype != np.float64 for _, p, _ in model.parameters()):
        raise StateError("gradient checking requires 64-bit precision")

    rng = np.random.default_rng(seed)
    stochastic = [l for l in model.layers if hasattr(l, "rng")]
    snapshot = [l.rng.bit_generator.state for l in stochastic]
    ref = None

    def evaluate(inp):
        nonlocal ref
        for layer, state in zip(stochastic, snapshot):
            layer.rng.bit_generator.state = state
        y = model.forward(inp, training=True)
        if targets is not None:
            res = bce_loss(y, targets)
            value, grad = res.value, res.grad
        else:
            if ref is None:
                ref = rng.standard_normal(y.shape)
            diff = y - ref
            value, grad = float(0.5 * np.sum(diff * diff)), diff
        if not np.isfinite(value):
            raise NumericError("loss is not finite during gradient check")
        return value, grad

    def same_branch(base):
        return all(np.array_equal(a, b) for a, b in zip(base, _decisions(model)))

    x = x.copy()
    model.zero_grad()
    _, g = evaluate(x)
    base = _decisions(model)
    dx = model.backward(g)

    tensors = [(name, p, grad.copy()) for name, p, grad in model.parameters()]
    if check_input:
        tensors.append(("input", x, dx))
    report = GradCheckReport({}, tolerance, epsilon)
    for name, p, analytic in tensors:
        flat, aflat = p.reshape(-1), analytic.reshape(-1)
        want = min(max_entries, flat.size)
        worst, done, skipped = 0.0, 0, 0
        for i in rng.permutation(flat.size):
            if done == want or skipped > 4 * want:
                break
            orig = flat[i]
            flat[i] = orig + epsilon
            lp, _ = evaluate(x)
            ok = same_branch(base)
            flat[i] = orig - epsilon
            lm, _ = evaluate(x)
            ok = ok and same_branch(base)
            flat[i] = orig
            if not ok:
                skipped += 1
                continue
            numeric = (lp - lm) / (2 * epsilon)
            worst = max(worst, float(relative_error(aflat[i], numeric)))
            done += 1
        report.errors[name] = worst
        report.checked[name] = done
        report.skipped[name] = skipped
    return report
