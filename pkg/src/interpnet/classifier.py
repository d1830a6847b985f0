"""Feed-forward ReLU classifier and the activation-concatenation representation."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from interpnet import autodiff as ad
from interpnet.autodiff import Node, Tape

PREFIX = "classifier."


class RepresentationVariant(str, enum.Enum):
    OUTPUT_ONLY = "output_only"
    ALL_ACTIVATIONS = "all_activations"
    INPUT_ONLY = "input_only"


# variant name -> (number of hidden layers, representation)
VARIANTS: dict[str, tuple[int, RepresentationVariant]] = {
    "interpnet0": (0, RepresentationVariant.OUTPUT_ONLY),
    "interpnet1": (1, RepresentationVariant.ALL_ACTIVATIONS),
    "interpnet2": (2, RepresentationVariant.ALL_ACTIVATIONS),
    "interpnet3": (3, RepresentationVariant.ALL_ACTIVATIONS),
    # same classifier as interpnet0; only what the explainer sees differs
    "captioning": (0, RepresentationVariant.INPUT_ONLY),
}


def variant_layout(name: str, hidden_width: int = 64) -> tuple[tuple[int, ...], RepresentationVariant]:
    """Hidden layer widths and representation kind for a named architecture."""
    try:
        depth, kind = VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}") from None
    return (hidden_width,) * depth, kind


@dataclass(frozen=True)
class ClassifierConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64,)
    num_classes: int = 200

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim <= 0 or self.num_classes <= 0:
            raise ValueError("input_dim and num_classes must be positive")
        if len(self.hidden_dims) > 3:
            raise ValueError(f"at most 3 hidden layers supported, got {len(self.hidden_dims)}")
        if any(h <= 0 for h in self.hidden_dims):
            raise ValueError(f"hidden widths must be positive: {self.hidden_dims}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.num_classes]

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden_dims": list(self.hidden_dims),
                "num_classes": self.num_classes}


@dataclass
class ClassifierModel:
    config: ClassifierConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def num_layers(self) -> int:
        return len(self.config.hidden_dims) + 1


@dataclass
class ClassifierActivations:
    """[f1 (input), hidden activations..., class probabilities]."""
    layers: list[np.ndarray]

    @property
    def probs(self) -> np.ndarray:
        return self.layers[-1]


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_classifier(config: ClassifierConfig, seed: int = 0) -> ClassifierModel:
    rng = np.random.default_rng(seed)
    dims = config.layer_dims
    params = {}
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"layer{i}.weight"] = glorot(rng, d_in, d_out)
        params[f"layer{i}.bias"] = np.zeros(d_out)
    return ClassifierModel(config, params)


def representation_dim(config: ClassifierConfig, kind: RepresentationVariant) -> int:
    if kind is RepresentationVariant.ALL_ACTIVATIONS:
        return config.input_dim + sum(config.hidden_dims) + config.num_classes
    if kind is RepresentationVariant.OUTPUT_ONLY:
        return config.num_classes
    return config.input_dim


def forward_nodes(model: ClassifierModel, tape: Tape, x: Node,
                  trainable: bool = True) -> list[Node]:
    """Batched forward on ``tape``; returns the activation nodes f1..f_{L+2}."""
    if x.value.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise ValueError(f"expected features of shape (batch, {model.config.input_dim}), got {x.shape}")
    p = tape.bind(model.params, PREFIX, trainable)
    layers = [x]
    h = x
    for i in range(model.num_layers):
        z = ad.add_bias(ad.matmul(h, p[f"layer{i}.weight"]), p[f"layer{i}.bias"])
        h = ad.relu(z) if i < model.num_layers - 1 else ad.softmax(z)
        layers.append(h)
    return layers


def representation_node(layers: list[Node], kind: RepresentationVariant) -> Node:
    if kind is RepresentationVariant.ALL_ACTIVATIONS:
        return ad.concat(layers)
    if kind is RepresentationVariant.OUTPUT_ONLY:
        return layers[-1]
    return layers[0]


def _as_batch(model: ClassifierModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != model.config.input_dim:
        raise ValueError(f"feature length {x.shape[-1] if x.ndim else 0} does not match "
                         f"input_dim {model.config.input_dim}")
    return batch, single


def classifier_forward(model: ClassifierModel, x) -> tuple[np.ndarray, ClassifierActivations]:
    """Class probabilities and recorded activations for one vector (or a batch of rows)."""
    batch, single = _as_batch(model, x)
    tape = Tape()
    layers = forward_nodes(model, tape, tape.constant(batch), trainable=False)
    values = [n.value[0] if single else n.value for n in layers]
    return values[-1], ClassifierActivations(values)


def representation(acts: ClassifierActivations, kind: RepresentationVariant) -> np.ndarray:
    if kind is RepresentationVariant.ALL_ACTIVATIONS:
        return np.concatenate(acts.layers, axis=-1)
    if kind is RepresentationVariant.OUTPUT_ONLY:
        return acts.layers[-1]
    return acts.layers[0]


def classifier_loss(model: ClassifierModel, xs, ys, tape: Tape | None = None) -> Node:
    """Mean cross-entropy over a batch; the returned node's tape holds the parameters."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64).reshape(-1)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError("classifier_loss needs a nonempty (batch, features) array")
    if ys.shape[0] != xs.shape[0]:
        raise ValueError(f"{ys.shape[0]} labels for {xs.shape[0]} examples")
    tape = tape or Tape()
    layers = forward_nodes(model, tape, tape.constant(xs))
    return ad.cross_entropy(layers[-1], ys)


def predict(model: ClassifierModel, x) -> int | np.ndarray:
    """Argmax class; ties go to the lowest index."""
    probs, _ = classifier_forward(model, x)
    return int(np.argmax(probs)) if probs.ndim == 1 else np.argmax(probs, axis=1)
