"""
Layer classes wrapping the kernels in `nncore.functional`.

Every layer is described by a `LayerSpec` (kind plus hyperparameters) and
owns its parameters and their gradients. Parameters are initialized
uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)); biases start at zero.
"""

from dataclasses import dataclass, field

import numpy as np

from core.exceptions import ConfigError, DimensionError
from . import functional as F


@dataclass(frozen=True)
class LayerSpec:
    """
    Kind tag and kind-specific hyperparameters of one layer.

    Example:
        LayerSpec("dense", {"in_dim": 40, "out_dim": 128})
        LayerSpec("timedelay", {"offsets": (-2, 0, 2), "in_dim": 100})
    """

    kind: str
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        normalized = {}
        for key, value in self.hyper.items():
            normalized[key] = tuple(int(v) for v in value) if isinstance(value, (list, tuple)) else value
        object.__setattr__(self, "hyper", normalized)

    def build(self):
        try:
            layer_class = LAYER_KINDS[self.kind]
        except KeyError:
            raise ConfigError(f"unknown layer kind '{self.kind}'")
        return layer_class(**self.hyper)


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """
    Base class: stateless layers leave `params` empty.

    Attributes:
        kind (str): LayerSpec kind tag.
        params (dict[str, np.ndarray]): Parameters in `param_names` order.
        grads (dict[str, np.ndarray]): Gradients from the last backward pass.
    """

    kind = None
    param_names = ()

    def __init__(self):
        self.params = {}
        self.grads = {}

    def hyper(self):
        return {}

    def spec(self):
        return LayerSpec(self.kind, self.hyper())

    def param_shapes(self):
        return {}

    def init_params(self, rng):
        pass

    def n_parameters(self):
        return int(sum(np.prod(shape) for shape in self.param_shapes().values()))

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad_out, cache):
        raise NotImplementedError

    def pattern(self, cache):
        """Discrete state of a non-smooth layer (relu mask, pool argmax), else None."""
        return None

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.hyper().items())
        return f"{self.__class__.__name__}({args})"


class Dense(Layer):
    kind = "dense"
    param_names = ("W", "b")

    def __init__(self, in_dim, out_dim):
        super().__init__()
        if in_dim < 1 or out_dim < 1:
            raise ConfigError(f"dense dims must be positive, got {in_dim}->{out_dim}")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)

    def hyper(self):
        return {"in_dim": self.in_dim, "out_dim": self.out_dim}

    def param_shapes(self):
        return {"W": (self.out_dim, self.in_dim), "b": (self.out_dim,)}

    def init_params(self, rng):
        self.params["W"] = glorot_uniform(rng, (self.out_dim, self.in_dim), self.in_dim, self.out_dim)
        self.params["b"] = np.zeros(self.out_dim)

    def forward(self, x):
        return F.dense_forward(x, self.params["W"], self.params["b"])

    def backward(self, grad_out, cache):
        grad_x, self.grads["W"], self.grads["b"] = F.dense_backward(grad_out, cache)
        return grad_x


class Conv2d(Layer):
    kind = "conv2d"
    param_names = ("W", "b")

    def __init__(self, in_channels, out_channels, kernel_h, kernel_w, stride=1):
        super().__init__()
        if min(in_channels, out_channels, kernel_h, kernel_w, stride) < 1:
            raise ConfigError("conv2d hyperparameters must be positive")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_h = int(kernel_h)
        self.kernel_w = int(kernel_w)
        self.stride = int(stride)

    def hyper(self):
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_h": self.kernel_h,
            "kernel_w": self.kernel_w,
            "stride": self.stride,
        }

    def param_shapes(self):
        return {
            "W": (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w),
            "b": (self.out_channels,),
        }

    def init_params(self, rng):
        area = self.kernel_h * self.kernel_w
        self.params["W"] = glorot_uniform(
            rng, self.param_shapes()["W"], self.in_channels * area, self.out_channels * area
        )
        self.params["b"] = np.zeros(self.out_channels)

    def forward(self, x):
        return F.conv2d_forward(x, self.params["W"], self.params["b"], self.stride)

    def backward(self, grad_out, cache):
        grad_x, self.grads["W"], self.grads["b"] = F.conv2d_backward(grad_out, cache)
        return grad_x


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, pool_h, pool_w):
        super().__init__()
        if pool_h < 1 or pool_w < 1:
            raise ConfigError("pool sizes must be positive")
        self.pool_h = int(pool_h)
        self.pool_w = int(pool_w)

    def hyper(self):
        return {"pool_h": self.pool_h, "pool_w": self.pool_w}

    def forward(self, x):
        return F.maxpool2d_forward(x, self.pool_h, self.pool_w)

    def backward(self, grad_out, cache):
        return F.maxpool2d_backward(grad_out, cache)

    def pattern(self, cache):
        return cache[3]


class TimeDelay(Layer):
    kind = "timedelay"

    def __init__(self, offsets, in_dim):
        super().__init__()
        offsets = tuple(int(o) for o in offsets)
        if not offsets:
            raise ConfigError("timedelay offsets must be non-empty")
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise ConfigError(f"timedelay offsets must be strictly increasing, got {offsets}")
        self.offsets = offsets
        self.in_dim = int(in_dim)

    @property
    def left(self):
        return max(0, -self.offsets[0])

    @property
    def right(self):
        return max(0, self.offsets[-1])

    @property
    def out_dim(self):
        return len(self.offsets) * self.in_dim

    def hyper(self):
        return {"offsets": self.offsets, "in_dim": self.in_dim}

    def forward(self, x):
        width = x.shape[1] * x.shape[3] if x.ndim == 4 else x.shape[-1]
        if width != self.in_dim:
            raise DimensionError(f"dimension error: timedelay input width {width} != {self.in_dim}")
        return F.timedelay_forward(x, self.offsets)

    def backward(self, grad_out, cache):
        return F.timedelay_backward(grad_out, cache)


class Crop(Layer):
    kind = "crop"

    def __init__(self, left, right):
        super().__init__()
        if left < 0 or right < 0:
            raise ConfigError("crop sizes must be non-negative")
        self.left = int(left)
        self.right = int(right)

    def hyper(self):
        return {"left": self.left, "right": self.right}

    def forward(self, x):
        return F.crop_forward(x, self.left, self.right)

    def backward(self, grad_out, cache):
        return F.crop_backward(grad_out, cache)


class PNorm(Layer):
    kind = "pnorm"

    def __init__(self, in_dim, group_size, p=2.0):
        super().__init__()
        if group_size < 1 or in_dim % group_size:
            raise ConfigError(f"pnorm in_dim {in_dim} not divisible by group size {group_size}")
        if p < 1.0:
            raise ConfigError(f"pnorm p must be >= 1, got {p}")
        self.in_dim = int(in_dim)
        self.group_size = int(group_size)
        self.p = float(p)

    @property
    def out_dim(self):
        return self.in_dim // self.group_size

    def hyper(self):
        return {"in_dim": self.in_dim, "group_size": self.group_size, "p": self.p}

    def forward(self, x):
        return F.pnorm_forward(x, self.group_size, self.p)

    def backward(self, grad_out, cache):
        return F.pnorm_backward(grad_out, cache)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return F.relu_forward(x)

    def backward(self, grad_out, cache):
        return F.relu_backward(grad_out, cache)

    def pattern(self, cache):
        return cache > 0.0


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x):
        return F.softmax_forward(x)

    def backward(self, grad_out, cache):
        return F.softmax_backward(grad_out, cache)


LAYER_KINDS = {
    layer.kind: layer
    for layer in (Dense, Conv2d, MaxPool2d, TimeDelay, Crop, PNorm, ReLU, Softmax)
}
