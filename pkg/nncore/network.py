"""
A feed-forward stack of layers with explicit backpropagation.

Training a network mutates its parameters, gradients and cached activations,
so a single network must only be driven by one trainer at a time. Forward
passes without `keep_cache` do not touch any state.
"""

import hashlib

import numpy as np

from core.exceptions import ConfigError
from .layers import LayerSpec, Softmax


class Network:
    """
    Ordered layer stack plus free-form string metadata.

    Attributes:
        layers (list[Layer]): Layers applied in order.
        metadata (dict[str, str]): e.g. {"model_kind": "phone", "seed": "7"}.

    Example:
        net = Network.build([LayerSpec("dense", {"in_dim": 4, "out_dim": 2})], seed=0)
        y = net.forward(np.ones((3, 4)))
    """

    def __init__(self, layers, metadata=None):
        self.layers = list(layers)
        self.metadata = {str(k): str(v) for k, v in (metadata or {}).items()}
        self._caches = None

    @classmethod
    def build(cls, specs, seed, metadata=None):
        """
        Instantiate layers from specs and initialize parameters from `seed`.
        """
        rng = np.random.default_rng(seed)
        layers = []
        for spec in specs:
            layer = spec.build() if isinstance(spec, LayerSpec) else spec
            layer.init_params(rng)
            layers.append(layer)
        return cls(layers, metadata)

    @property
    def specs(self):
        return [layer.spec() for layer in self.layers]

    @property
    def kind(self):
        return self.metadata.get("model_kind", "")

    def n_parameters(self):
        return sum(layer.n_parameters() for layer in self.layers)

    def named_parameters(self):
        """[(name, array)] in layer order, names like "3.W"."""
        return [
            (f"{index}.{name}", layer.params[name])
            for index, layer in enumerate(self.layers)
            for name in layer.param_names
        ]

    def named_gradients(self):
        return [
            (f"{index}.{name}", layer.grads[name])
            for index, layer in enumerate(self.layers)
            for name in layer.param_names
        ]

    def parameter_arrays(self):
        return [array for _, array in self.named_parameters()]

    def gradient_arrays(self):
        return [array for _, array in self.named_gradients()]

    def assign_parameters(self, arrays):
        arrays = iter(arrays)
        for layer in self.layers:
            for name in layer.param_names:
                layer.params[name] = next(arrays)

    def _run(self, x, layers, keep_cache, taps=()):
        caches = []
        tapped = {}
        for index, layer in enumerate(layers):
            x, cache = layer.forward(x)
            if keep_cache:
                caches.append(cache)
            if index in taps:
                tapped[index] = x
        if keep_cache:
            self._caches = (layers, caches)
        return x, tapped

    def forward(self, x, keep_cache=False):
        """Run every layer, including a trailing softmax."""
        y, _ = self._run(np.asarray(x, dtype=np.float64), self.layers, keep_cache)
        return y

    def forward_with_taps(self, x, taps):
        """
        Run every layer and also return the outputs of the layers in `taps`.

        Returns:
            tuple: (output, {layer_index: activation})
        """
        return self._run(np.asarray(x, dtype=np.float64), self.layers, False, set(taps))

    def logit_layers(self):
        if self.layers and isinstance(self.layers[-1], Softmax):
            return self.layers[:-1]
        return self.layers

    def logits(self, x, keep_cache=False):
        """Run every layer except a trailing softmax."""
        y, _ = self._run(np.asarray(x, dtype=np.float64), self.logit_layers(), keep_cache)
        return y

    def backward(self, grad_out):
        """
        Backpropagate through the layers of the last cached forward pass,
        storing parameter gradients on each layer.

        Returns:
            np.ndarray: Gradient with respect to the network input.
        """
        if self._caches is None:
            raise ConfigError("backward called without a cached forward pass")
        layers, caches = self._caches
        grad = grad_out
        for layer, cache in zip(reversed(layers), reversed(caches)):
            grad = layer.backward(grad, cache)
        return grad

    def activation_pattern(self):
        """
        Digest of the discrete state (relu masks, pool winners) of the last
        cached forward pass; equal digests mean the same linear region.
        """
        if self._caches is None:
            return ""
        layers, caches = self._caches
        digest = hashlib.sha256()
        for layer, cache in zip(layers, caches):
            state = layer.pattern(cache)
            if state is not None:
                digest.update(np.ascontiguousarray(state).tobytes())
        return digest.hexdigest()

    def clear_cache(self):
        self._caches = None

    def __repr__(self):
        return f"Network({self.kind or 'unnamed'}, {len(self.layers)} layers, {self.n_parameters()} params)"
