from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from interpnet.classifier import (
    ClassifierModel,
    RepresentationVariant,
    classifier_forward,
    representation,
    representation_dim,
)
from interpnet.explainer import ExplainerModel, beam_search, greedy_batch


class ConfigError(ValueError):
    """Incompatible model/run configuration."""


@dataclass
class InterpNet:
    """A trained classifier paired with the explainer reading its activations."""
    classifier: ClassifierModel
    explainer: ExplainerModel
    variant: str
    kind: RepresentationVariant

    def __post_init__(self):
        check_compatible(self.classifier, self.explainer, self.kind)

    def represent(self, x) -> tuple[np.ndarray, np.ndarray]:
        """(class probabilities, representation) for a vector or a batch of rows."""
        probs, acts = classifier_forward(self.classifier, x)
        return probs, representation(acts, self.kind)

    def explain(self, x, beam_width: int = 1, ablate: bool = False) -> list[tuple[int, float, list[str]]]:
        """Predicted class, its probability and the decoded words, per input row."""
        x = np.asarray(x, dtype=np.float64)
        rows = x[None, :] if x.ndim == 1 else x
        probs, r = self.represent(rows)
        if ablate:
            r = np.zeros_like(r)
        if beam_width <= 1:
            decoded = [t for t, _ in greedy_batch(self.explainer, r)]
        else:
            decoded = [beam_search(self.explainer, r[i], beam_width)[0] for i in range(len(r))]
        out = []
        for p, toks in zip(probs, decoded):
            k = int(np.argmax(p))
            out.append((k, float(p[k]), self.explainer.vocab.decode(toks)))
        return out


def check_compatible(classifier: ClassifierModel, explainer: ExplainerModel,
                     kind: RepresentationVariant):
    expected = representation_dim(classifier.config, kind)
    if explainer.config.r_dim != expected:
        raise ConfigError(f"explainer expects r_dim {explainer.config.r_dim} but the "
                          f"{kind.value} representation of this classifier has {expected}")
