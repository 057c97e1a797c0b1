"""Single-step update rules. Pure functions over numpy vectors; callers own state."""

from __future__ import annotations

from django.core.exceptions import ValidationError

from model_core.params import ParamVector, check_dims, ensure_finite


def _checked(*vectors):
    check_dims(*vectors)
    for vector in vectors:
        ensure_finite(vector, what="update input")


def _positive_lr(lr: float) -> None:
    if not lr > 0:
        raise ValidationError(f"Learning rate must be positive, got {lr}.")


def sgd_step(w: ParamVector, grad: ParamVector, lr: float) -> ParamVector:
    _checked(w, grad)
    _positive_lr(lr)
    return ensure_finite(w - lr * grad, what="weights")


def momentum_step_u(u: ParamVector, w: ParamVector, grad: ParamVector, lr: float, mu: float) -> tuple[ParamVector, ParamVector]:
    """u' = μu + g; w' = w − lr·u'."""
    _checked(u, w, grad)
    _positive_lr(lr)
    u_next = mu * u + grad
    return ensure_finite(w - lr * u_next, what="weights"), u_next


def momentum_step_v(v: ParamVector, w: ParamVector, grad: ParamVector, lr: float, mu: float) -> tuple[ParamVector, ParamVector]:
    """v' = μv + lr·g; w' = w − v'. Same trajectory as the u form for a static lr."""
    _checked(v, w, grad)
    _positive_lr(lr)
    v_next = mu * v + lr * grad
    return ensure_finite(w - v_next, what="weights"), v_next


def linear_scaling_rescale(v: ParamVector, k: float) -> ParamVector:
    if not k > 0:
        raise ValidationError(f"Batch ratio k must be positive, got {k}.")
    return ensure_finite(k * v, what="momentum buffer")


def dynamic_sgd_step(
    u: ParamVector, w: ParamVector, grad: ParamVector, lr_base: float, mu: float, gamma: float
) -> tuple[ParamVector, ParamVector]:
    """u' = μu + g; w' = w − γ·lr_base·u'. The buffer carries no learning rate."""
    _checked(u, w, grad)
    _positive_lr(lr_base)
    u_next = mu * u + grad
    return ensure_finite(w - gamma * lr_base * u_next, what="weights"), u_next


def decoupled_momentum_step(
    v: ParamVector, w: ParamVector, sum_grads: ParamVector, step_size_hat: float, mu: float
) -> tuple[ParamVector, ParamVector]:
    """v' = μv + η̂·Σ∇l_i with the unnormalised batch sum; w' = w − v'."""
    _checked(v, w, sum_grads)
    _positive_lr(step_size_hat)
    v_next = mu * v + step_size_hat * sum_grads
    return ensure_finite(w - v_next, what="weights"), v_next
