"""ADAM and the two-phase routine: classifier to convergence, then the explainer
against a frozen classifier (its representation passes through ``stop_gradient``).
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Sequence

import numpy as np

from interpnet import autodiff as ad
from interpnet.autodiff import Tape
from interpnet.classifier import (
    ClassifierConfig,
    ClassifierModel,
    RepresentationVariant,
    classifier_forward,
    classifier_loss,
    forward_nodes,
    init_classifier,
    representation_dim,
    representation_node,
    variant_layout,
)
from interpnet.dataset import DatasetRecord, build_vocabulary, encode_explanation, feature_matrix
from interpnet.explainer import PREFIX as EXPLAINER_PREFIX
from interpnet.explainer import ExplainerConfig, ExplainerModel, batch_loss, init_explainer, pad_batch, unroll
from interpnet.model import ConfigError, InterpNet, check_compatible

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """A loss or gradient became non-finite."""


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected ADAM update. Returns new parameter arrays; ``state`` is advanced."""
    for name, p in params.items():
        if name not in grads:
            raise ValueError(f"no gradient for parameter {name!r}")
        if grads[name].shape != p.shape:
            raise ValueError(f"gradient shape {grads[name].shape} does not match "
                             f"parameter {name!r} of shape {p.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1.0 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out, state


@dataclass
class TrainConfig:
    classifier_epochs: int = 100
    explainer_epochs: int = 100
    patience: int = 10
    batch_size: int = 32
    seed: int = 0
    classifier_lr: float = 1e-3
    explainer_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        for name in ("classifier_epochs", "explainer_epochs"):
            if self.patience >= getattr(self, name):
                raise ValueError(f"patience ({self.patience}) must be below {name}")

    def adam(self, lr: float) -> AdamState:
        return AdamState(lr=lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)


@dataclass
class EpochRecord:
    phase: str
    epoch: int
    train_loss: float
    val_loss: float
    val_metric: float
    wall_time: float
    timestamp: str


class TrainLog:
    def __init__(self):
        self.records: list[EpochRecord] = []

    def add(self, phase, epoch, train_loss, val_loss, val_metric, wall_time):
        rec = EpochRecord(phase, epoch, float(train_loss), float(val_loss), float(val_metric),
                          float(wall_time), datetime.now(timezone.utc).isoformat())
        self.records.append(rec)
        log.info("%s epoch %d: train %.5f val %.5f metric %.4f", phase, epoch,
                 train_loss, val_loss, val_metric)

    def phase(self, name: str) -> list[EpochRecord]:
        return [r for r in self.records if r.phase == name]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


def _check_finite(value: float, what: str):
    if not np.isfinite(value):
        raise DivergenceError(f"{what} became non-finite ({value})")


def _batches(rng: np.random.Generator, n: int, size: int):
    perm = rng.permutation(n)
    return [perm[i:i + size] for i in range(0, n, size)]


def _stop_after(patience: int) -> int:
    return max(patience, 1)


# --------------------------------------------------------------------------
# phase 1
# --------------------------------------------------------------------------

def train_classifier(model: ClassifierModel, train: Sequence[DatasetRecord],
                     val: Sequence[DatasetRecord], config: TrainConfig,
                     train_log: TrainLog | None = None) -> tuple[ClassifierModel, TrainLog]:
    """ADAM on mean cross-entropy with early stopping on validation accuracy.

    Validation loss breaks accuracy ties. Returns the best epoch's parameters.
    """
    if not train or not val:
        raise ValueError("train and validation splits must be nonempty")
    train_log = train_log if train_log is not None else TrainLog()
    X, y = feature_matrix(train)
    Xv, yv = feature_matrix(val)
    rng = np.random.default_rng(config.seed)
    state = config.adam(config.classifier_lr)
    current = ClassifierModel(model.config, dict(model.params))
    best_key, best_params, stale = None, dict(current.params), 0
    start = time.perf_counter()
    for epoch in range(1, config.classifier_epochs + 1):
        total = 0.0
        for idx in _batches(rng, len(X), config.batch_size):
            loss = classifier_loss(current, X[idx], y[idx])
            _check_finite(float(loss.value), "classifier loss")
            total += float(loss.value) * len(idx)
            grads = {k[len("classifier."):]: g for k, g in ad.backward(loss.tape, loss).items()}
            current.params, state = adam_step(current.params, grads, state)
        probs, _ = classifier_forward(current, Xv)
        val_loss = float(-np.log(np.maximum(probs[np.arange(len(yv)), yv], ad.LOG_FLOOR)).mean())
        acc = float((np.argmax(probs, axis=1) == yv).mean())
        train_log.add("classifier", epoch, total / len(X), val_loss, acc,
                      time.perf_counter() - start)
        key = (acc, -val_loss)
        if best_key is None or key > best_key:
            best_key, best_params, stale = key, dict(current.params), 0
        else:
            stale += 1
            if stale >= _stop_after(config.patience):
                break
    return ClassifierModel(model.config, best_params), train_log


# --------------------------------------------------------------------------
# phase 2
# --------------------------------------------------------------------------

def explanation_pairs(records: Sequence[DatasetRecord], vocab) -> tuple[np.ndarray, list[list[int]]]:
    """One (features, token ids) pair per reference explanation."""
    feats, seqs = [], []
    for r in records:
        for e in r.explanations:
            feats.append(r.features)
            seqs.append(encode_explanation(e, vocab))
    return np.stack(feats), seqs


def explainer_step_loss(classifier: ClassifierModel, explainer: ExplainerModel,
                        kind: RepresentationVariant, X: np.ndarray, seqs, tape: Tape | None = None):
    """L_E for a batch with the classifier on the same tape, behind a gradient stop."""
    tape = tape or Tape()
    layers = forward_nodes(classifier, tape, tape.constant(X))
    r = ad.stop_gradient(representation_node(layers, kind))
    return batch_loss(explainer, tape, r, seqs)


def _validation(classifier, explainer, kind, X, seqs) -> tuple[float, float]:
    """Validation L_E and teacher-forced next-token accuracy."""
    tape = Tape()
    layers = forward_nodes(classifier, tape, tape.constant(X), trainable=False)
    r = representation_node(layers, kind)
    tokens, lengths = pad_batch(seqs, explainer.vocab.end_index)
    outs = unroll(explainer, tape, r, tokens, trainable=False)
    rows = np.arange(len(seqs))
    per_seq = np.zeros(len(seqs))
    hits = total = 0
    for t, o in enumerate(outs):
        valid = t + 1 < lengths
        tgt = tokens[:, t + 1]
        per_seq += np.where(valid, -o.value[rows, tgt], 0.0)
        hits += int(((np.argmax(o.value, axis=1) == tgt) & valid).sum())
        total += int(valid.sum())
    return float((per_seq / (lengths - 1)).mean()), hits / total


def train_explainer(classifier: ClassifierModel, explainer: ExplainerModel,
                    train: Sequence[DatasetRecord], val: Sequence[DatasetRecord],
                    config: TrainConfig, kind: RepresentationVariant,
                    train_log: TrainLog | None = None) -> tuple[ExplainerModel, TrainLog]:
    """ADAM on L_E with early stopping on validation L_E; the classifier is never updated."""
    if not train or not val:
        raise ValueError("train and validation splits must be nonempty")
    expected = representation_dim(classifier.config, kind)
    if explainer.config.r_dim != expected:
        raise ConfigError(f"explainer r_dim {explainer.config.r_dim} != {kind.value} "
                          f"representation size {expected}")
    train_log = train_log if train_log is not None else TrainLog()
    X, seqs = explanation_pairs(train, explainer.vocab)
    Xv, seqs_v = explanation_pairs(val, explainer.vocab)
    rng = np.random.default_rng(config.seed + 1)
    state = config.adam(config.explainer_lr)
    current = ExplainerModel(explainer.config, explainer.vocab, dict(explainer.params))
    best_loss, best_params, stale = None, dict(current.params), 0
    n_prefix = len(EXPLAINER_PREFIX)
    start = time.perf_counter()
    for epoch in range(1, config.explainer_epochs + 1):
        total = 0.0
        for idx in _batches(rng, len(X), config.batch_size):
            loss = explainer_step_loss(classifier, current, kind, X[idx], [seqs[i] for i in idx])
            _check_finite(float(loss.value), "explanation loss")
            total += float(loss.value) * len(idx)
            grads = ad.backward(loss.tape, loss)
            leaked = [k for k, g in grads.items() if k.startswith("classifier.") and np.any(g)]
            if leaked:
                raise RuntimeError(f"gradient reached classifier parameters {leaked}")
            grads = {k[n_prefix:]: g for k, g in grads.items() if k.startswith(EXPLAINER_PREFIX)}
            current.params, state = adam_step(current.params, grads, state)
        val_loss, token_acc = _validation(classifier, current, kind, Xv, seqs_v)
        _check_finite(val_loss, "validation loss")
        train_log.add("explainer", epoch, total / len(X), val_loss, token_acc,
                      time.perf_counter() - start)
        if best_loss is None or val_loss < best_loss:
            best_loss, best_params, stale = val_loss, dict(current.params), 0
        else:
            stale += 1
            if stale >= _stop_after(config.patience):
                break
    return ExplainerModel(explainer.config, explainer.vocab, best_params), train_log


# --------------------------------------------------------------------------
# both phases
# --------------------------------------------------------------------------

@dataclass
class ModelConfig:
    """Architecture sizes shared by every variant."""
    hidden_width: int = 64
    embed_dim: int = 32
    lstm_hidden_dim: int = 64
    max_decode_len: int = 30
    vocab_min_count: int = 1


def build_models(variant: str, input_dim: int, n_classes: int, vocab,
                 model_config: ModelConfig, seed: int = 0):
    hidden, kind = variant_layout(variant, model_config.hidden_width)
    ccfg = ClassifierConfig(input_dim, hidden, n_classes)
    ecfg = ExplainerConfig(vocab_size=len(vocab), r_dim=representation_dim(ccfg, kind),
                           embed_dim=model_config.embed_dim, hidden_dim=model_config.lstm_hidden_dim,
                           max_decode_len=model_config.max_decode_len)
    return init_classifier(ccfg, seed), init_explainer(ecfg, vocab, seed + 1), kind


def train_full(train: Sequence[DatasetRecord], val: Sequence[DatasetRecord], variant: str,
               model_config: ModelConfig | None = None, config: TrainConfig | None = None,
               n_classes: int | None = None) -> tuple[InterpNet, TrainLog]:
    """Phase 1 to convergence, then phase 2 against the trained classifier."""
    model_config = model_config or ModelConfig()
    config = config or TrainConfig()
    if not train or not val:
        raise ValueError("train and validation splits must be nonempty")
    n_classes = n_classes or max(r.label for r in (*train, *val)) + 1
    vocab = build_vocabulary(train, model_config.vocab_min_count)
    classifier, explainer, kind = build_models(variant, train[0].features.shape[0], n_classes,
                                               vocab, model_config, config.seed)
    check_compatible(classifier, explainer, kind)
    train_log = TrainLog()
    classifier, _ = train_classifier(classifier, train, val, config, train_log)
    explainer, _ = train_explainer(classifier, explainer, train, val, config, kind, train_log)
    return InterpNet(classifier, explainer, variant, kind), train_log
