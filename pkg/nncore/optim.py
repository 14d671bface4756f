"""
SGD with momentum and Adam, as pure update functions and as small
optimizer objects that drive a `Network`.
"""

from dataclasses import dataclass, field

import numpy as np

from core.exceptions import ConfigError, DimensionError


def _check_shapes(params, grads):
    if len(params) != len(grads):
        raise DimensionError(f"dimension error: {len(params)} parameters, {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionError(f"dimension error: parameter {p.shape} vs gradient {g.shape}")


def sgd_step(params, grads, lr, momentum=0.0, velocity=None):
    """
    v <- momentum * v - lr * g;  p <- p + v

    Returns:
        tuple: (new_params, new_velocity)
    """
    _check_shapes(params, grads)
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    velocity = [momentum * v - lr * g for v, g in zip(velocity, grads)]
    return [p + v for p, v in zip(params, velocity)], velocity


@dataclass
class AdamState:
    """First/second moment estimates and the step counter."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    One bias-corrected Adam update.

    Returns:
        tuple: (new_params, new_state)
    """
    _check_shapes(params, grads)
    m = state.m or [np.zeros_like(p) for p in params]
    v = state.v or [np.zeros_like(p) for p in params]
    t = state.t + 1
    m = [beta1 * mi + (1.0 - beta1) * g for mi, g in zip(m, grads)]
    v = [beta2 * vi + (1.0 - beta2) * g * g for vi, g in zip(v, grads)]
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    new_params = [
        p - lr * (mi / correction1) / (np.sqrt(vi / correction2) + eps)
        for p, mi, vi in zip(params, m, v)
    ]
    return new_params, AdamState(m, v, t)


class Optimizer:
    """
    Applies an update rule to one or more networks in a fixed order.

    Attributes:
        lr (float): Current learning rate (mutated by schedules).
    """

    def __init__(self, lr):
        self.lr = float(lr)

    def step(self, networks):
        params = [p for net in networks for p in net.parameter_arrays()]
        grads = [g for net in networks for g in net.gradient_arrays()]
        updated = self._update(params, grads)
        offset = 0
        for net in networks:
            count = len(net.named_parameters())
            net.assign_parameters(updated[offset:offset + count])
            offset += count

    def _update(self, params, grads):
        raise NotImplementedError


class SGD(Optimizer):

    def __init__(self, lr, momentum=0.0):
        super().__init__(lr)
        self.momentum = float(momentum)
        self.velocity = None

    def _update(self, params, grads):
        updated, self.velocity = sgd_step(params, grads, self.lr, self.momentum, self.velocity)
        return updated


class Adam(Optimizer):

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def _update(self, params, grads):
        updated, self.state = adam_step(
            params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps
        )
        return updated


OPTIMIZERS = {"sgd": SGD, "adam": Adam}


def make_optimizer(name, lr, momentum=0.9):
    if name == "sgd":
        return SGD(lr, momentum)
    if name == "adam":
        return Adam(lr)
    raise ConfigError(f"unknown optimizer '{name}'")
