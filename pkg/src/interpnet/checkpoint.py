"""JSON checkpoints holding configs, vocabulary and named float64 parameter tensors.

Floats are written with ``repr`` precision, so load(save(m)) is bitwise exact,
and the same model always serializes to the same bytes.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from interpnet.classifier import ClassifierConfig, ClassifierModel, RepresentationVariant
from interpnet.explainer import ExplainerConfig, ExplainerModel, Vocabulary
from interpnet.model import InterpNet

FORMAT = "interpnet-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _encode_params(params: dict[str, np.ndarray]) -> dict:
    return {name: {"shape": list(v.shape), "data": np.ravel(v).tolist()}
            for name, v in sorted(params.items())}


def _decode_params(obj: dict) -> dict[str, np.ndarray]:
    out = {}
    for name, t in obj.items():
        arr = np.asarray(t["data"], dtype=np.float64)
        shape = tuple(t["shape"])
        if arr.size != int(np.prod(shape)):
            raise CheckpointError(f"parameter {name}: {arr.size} values for shape {shape}")
        out[name] = arr.reshape(shape)
    return out


def classifier_to_dict(model: ClassifierModel) -> dict:
    return {"config": model.config.to_dict(), "params": _encode_params(model.params)}


def classifier_from_dict(d: dict) -> ClassifierModel:
    return ClassifierModel(ClassifierConfig(**d["config"]), _decode_params(d["params"]))


def explainer_to_dict(model: ExplainerModel) -> dict:
    return {"config": model.config.to_dict(), "vocab": model.vocab.to_dict(),
            "params": _encode_params(model.params)}


def explainer_from_dict(d: dict) -> ExplainerModel:
    return ExplainerModel(ExplainerConfig(**d["config"]), Vocabulary.from_dict(d["vocab"]),
                          _decode_params(d["params"]))


def dumps(obj: dict) -> str:
    return json.dumps({"format": FORMAT, "format_version": FORMAT_VERSION, **obj},
                      sort_keys=True, separators=(",", ":")) + "\n"


def _read(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(obj, dict) or obj.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not an {FORMAT} file")
    if obj.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {obj.get('format_version')!r}")
    return obj


def save_classifier(model: ClassifierModel, path):
    Path(path).write_text(dumps({"classifier": classifier_to_dict(model)}))


def load_classifier(path) -> ClassifierModel:
    obj = _read(path)
    try:
        return classifier_from_dict(obj["classifier"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed classifier section ({exc})") from None


def save_checkpoint(net: InterpNet, path, run: dict | None = None):
    Path(path).write_text(dumps({
        "variant": net.variant,
        "representation": net.kind.value,
        "classifier": classifier_to_dict(net.classifier),
        "explainer": explainer_to_dict(net.explainer),
        "run": run or {},
    }))


def load_checkpoint(path) -> tuple[InterpNet, dict]:
    """Returns the model pair and the free-form run metadata stored with it."""
    obj = _read(path)
    try:
        net = InterpNet(classifier_from_dict(obj["classifier"]),
                        explainer_from_dict(obj["explainer"]),
                        obj["variant"], RepresentationVariant(obj["representation"]))
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    return net, obj.get("run", {})
