"""
Additive log-spectrum model: ln x = f(q) + g(s) + h(e) + residual.

Each of f, g and h is a small dense network whose output is already a
log-domain vector, so the prediction is the plain sum of three branch
outputs and swapping one factor shifts the prediction by that branch's
difference alone.
"""

import numpy as np

from core.exceptions import CheckpointFormatError, DimensionError
from networks.configs import MODEL_RECON
from networks.inference import require_kind
from nncore.checkpoint import load_checkpoint, save_checkpoint
from nncore.layers import LayerSpec
from nncore.network import Network

BRANCHES = ("q", "s", "e")


def branch_specs(in_dim, cfg):
    specs = []
    width = in_dim
    for _ in range(cfg.hidden_layers):
        specs.append(LayerSpec("dense", {"in_dim": width, "out_dim": cfg.hidden_units}))
        specs.append(LayerSpec("relu"))
        width = cfg.hidden_units
    specs.append(LayerSpec("dense", {"in_dim": width, "out_dim": cfg.spec_dim}))
    return specs


class Reconstructor:
    """
    The three branch networks f (on q), g (on s) and h (on e).

    Stored as one "recon" checkpoint whose layers are the f, g and h layers
    in that order; metadata `branch_layers` holds the three layer counts.

    Example:
        model = Reconstructor.build(q_dim=20, s_dim=40, e_dim=40, cfg=ReconConfig(), seed=0)
        log_spectrum = model.predict(q, s, e)
    """

    def __init__(self, branches, metadata=None):
        self.branches = list(branches)
        self.metadata = dict(metadata or {})

    @classmethod
    def build(cls, q_dim, s_dim, e_dim, cfg, seed):
        rng = np.random.default_rng(seed)
        branches = []
        for in_dim in (q_dim, s_dim, e_dim):
            branch_seed = int(rng.integers(0, 2**31))
            branches.append(Network.build(branch_specs(in_dim, cfg), branch_seed))
        metadata = {
            "model_kind": MODEL_RECON,
            "q_dim": q_dim,
            "s_dim": s_dim,
            "e_dim": e_dim,
            "spec_dim": cfg.spec_dim,
            "hidden_layers": cfg.hidden_layers,
            "hidden_units": cfg.hidden_units,
            "seed": seed,
        }
        return cls(branches, {k: str(v) for k, v in metadata.items()})

    @property
    def input_dims(self):
        return tuple(int(self.metadata[f"{name}_dim"]) for name in BRANCHES)

    @property
    def spec_dim(self):
        return int(self.metadata["spec_dim"])

    def to_network(self):
        layers = [layer for branch in self.branches for layer in branch.layers]
        metadata = dict(self.metadata)
        metadata["branch_layers"] = ",".join(str(len(b.layers)) for b in self.branches)
        return Network(layers, metadata)

    @classmethod
    def from_network(cls, network):
        require_kind(network, MODEL_RECON)
        try:
            counts = [int(n) for n in network.metadata["branch_layers"].split(",")]
        except (KeyError, ValueError) as exc:
            raise CheckpointFormatError(f"malformed checkpoint: branch_layers ({exc})") from exc
        if len(counts) != 3 or sum(counts) != len(network.layers):
            raise CheckpointFormatError(
                f"malformed checkpoint: branch_layers {counts} for {len(network.layers)} layers"
            )
        branches, start = [], 0
        for count in counts:
            branches.append(Network(network.layers[start:start + count]))
            start += count
        metadata = {k: v for k, v in network.metadata.items() if k != "branch_layers"}
        return cls(branches, metadata)

    def save(self, path):
        return save_checkpoint(self.to_network(), path)

    @classmethod
    def load(cls, path):
        return cls.from_network(load_checkpoint(path))

    def _inputs(self, q, s, e):
        arrays = [np.asarray(a, dtype=np.float64) for a in (q, s, e)]
        for name, array, dim in zip(BRANCHES, arrays, self.input_dims):
            if array.shape[-1] != dim:
                raise DimensionError(
                    f"dimension error: {name} has width {array.shape[-1]}, the reconstructor expects {dim}"
                )
        return arrays

    def branch_outputs(self, q, s, e, keep_cache=False):
        """[f(q), g(s), h(e)], each [..., spec_dim]."""
        return [
            branch.forward(x, keep_cache=keep_cache)
            for branch, x in zip(self.branches, self._inputs(q, s, e))
        ]

    def predict(self, q, s, e, keep_cache=False):
        f, g, h = self.branch_outputs(q, s, e, keep_cache)
        return f + g + h

    def backward(self, grad_out):
        for branch in self.branches:
            branch.backward(grad_out)

    def clear_cache(self):
        for branch in self.branches:
            branch.clear_cache()

    def n_parameters(self):
        return sum(branch.n_parameters() for branch in self.branches)

    def __repr__(self):
        return f"Reconstructor(q,s,e -> {self.spec_dim}, {self.n_parameters()} params)"


def square_error(prediction, target):
    """
    Mean over frames of the squared Euclidean error, and its gradient.

    Returns:
        tuple: (loss, grad_prediction)
    """
    diff = prediction - target
    n = diff.shape[0]
    return float(np.sum(diff**2) / n), 2.0 * diff / n


def reconstruct_frame(q, s, e, model):
    """
    ln f(q) + ln g(s) + ln h(e) for one frame.

    Args:
        q, s, e (np.ndarray): Factor vectors of one frame.
        model (Reconstructor | Network): Reconstructor or its checkpoint.

    Returns:
        np.ndarray: [spec_dim] log-power spectrum.

    Raises:
        DimensionError: A factor width differs from the trained one.
    """
    if isinstance(model, Network):
        model = Reconstructor.from_network(model)
    for name, vector in zip(BRANCHES, (q, s, e)):
        if np.ndim(vector) != 1:
            raise DimensionError(f"dimension error: {name} must be a vector, got shape {np.shape(vector)}")
    return model.predict(q, s, e)
