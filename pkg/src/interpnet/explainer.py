"""Two-layer LSTM explanation generator conditioned on a classifier representation.

The conditioning vector ``r`` is concatenated to the input of the *second* LSTM
layer at every timestep; the first layer only sees token embeddings.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from interpnet import autodiff as ad
from interpnet.autodiff import Node, Tape
from interpnet.classifier import glorot

PREFIX = "explainer."
START, UNK, END = "<s>", "<unk>", "."


@dataclass
class Vocabulary:
    words: list[str]
    start_index: int
    end_index: int
    unk_index: int
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.words = list(self.words)
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("vocabulary words must be distinct")
        specials = (self.start_index, self.end_index, self.unk_index)
        if len(set(specials)) != 3 or not all(0 <= i < len(self.words) for i in specials):
            raise ValueError(f"start/end/unk indices {specials} must be distinct and valid")

    def __len__(self):
        return len(self.words)

    def encode(self, tokens: Sequence[str], add_start: bool = True) -> list[int]:
        ids = [self.index.get(t, self.unk_index) for t in tokens]
        return [self.start_index, *ids] if add_start else ids

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.words[i] for i in ids if i != self.start_index]

    def to_dict(self) -> dict:
        return {"words": self.words, "start_index": self.start_index,
                "end_index": self.end_index, "unk_index": self.unk_index}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(d["words"], d["start_index"], d["end_index"], d["unk_index"])


@dataclass(frozen=True)
class ExplainerConfig:
    vocab_size: int
    r_dim: int
    embed_dim: int = 32
    hidden_dim: int = 64
    max_decode_len: int = 30

    def __post_init__(self):
        for name in ("vocab_size", "r_dim", "embed_dim", "hidden_dim", "max_decode_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def to_dict(self) -> dict:
        return {"vocab_size": self.vocab_size, "r_dim": self.r_dim, "embed_dim": self.embed_dim,
                "hidden_dim": self.hidden_dim, "max_decode_len": self.max_decode_len}


@dataclass
class ExplainerModel:
    config: ExplainerConfig
    vocab: Vocabulary
    params: dict[str, np.ndarray] = field(default_factory=dict)


def _lstm_params(rng, in_dim: int, hidden: int, forget_bias: float) -> dict[str, np.ndarray]:
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = forget_bias
    return {"w_input": glorot(rng, in_dim, 4 * hidden),
            "w_hidden": glorot(rng, hidden, 4 * hidden),
            "bias": bias}


def init_explainer(config: ExplainerConfig, vocab: Vocabulary, seed: int = 0,
                   forget_bias: float = 1.0) -> ExplainerModel:
    if len(vocab) != config.vocab_size:
        raise ValueError(f"vocab has {len(vocab)} words but config says {config.vocab_size}")
    rng = np.random.default_rng(seed)
    E, H, V = config.embed_dim, config.hidden_dim, config.vocab_size
    params = {"embed": glorot(rng, V, E)}
    for name, in_dim in (("lstm1", E), ("lstm2", H + config.r_dim)):
        for k, v in _lstm_params(rng, in_dim, H, forget_bias).items():
            params[f"{name}.{k}"] = v
    params["output.weight"] = glorot(rng, H, V)
    params["output.bias"] = np.zeros(V)
    return ExplainerModel(config, vocab, params)


def lstm_cell(params: dict[str, Node], x: Node, h_prev: Node, c_prev: Node) -> tuple[Node, Node]:
    """One LSTM step on row batches. Gate layout in the fused weights: i, f, g, o."""
    w_in, w_h, b = params["w_input"], params["w_hidden"], params["bias"]
    hidden = h_prev.shape[-1]
    if w_in.shape != (x.shape[-1], 4 * hidden) or w_h.shape != (hidden, 4 * hidden):
        raise ad.ShapeError(f"lstm_cell: input {x.shape}, hidden {h_prev.shape} do not fit "
                            f"weights {w_in.shape}, {w_h.shape}")
    if c_prev.shape != h_prev.shape:
        raise ad.ShapeError(f"lstm_cell: cell state {c_prev.shape} vs hidden {h_prev.shape}")
    z = ad.add_bias(ad.add(ad.matmul(x, w_in), ad.matmul(h_prev, w_h)), b)
    i = ad.sigmoid(ad.slice_cols(z, 0, hidden))
    f = ad.sigmoid(ad.slice_cols(z, hidden, 2 * hidden))
    g = ad.tanh(ad.slice_cols(z, 2 * hidden, 3 * hidden))
    o = ad.sigmoid(ad.slice_cols(z, 3 * hidden, 4 * hidden))
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h = ad.mul(o, ad.tanh(c))
    return h, c


def _split(p: dict[str, Node], layer: str) -> dict[str, Node]:
    return {k: p[f"{layer}.{k}"] for k in ("w_input", "w_hidden", "bias")}


def _step(p: dict[str, Node], r: Node, token_ids, state):
    """Feed one token per row; returns (log-prob node over the vocab, new state)."""
    h1, c1, h2, c2 = state
    x = ad.row_select(p["embed"], token_ids)
    h1, c1 = lstm_cell(_split(p, "lstm1"), x, h1, c1)
    h2, c2 = lstm_cell(_split(p, "lstm2"), ad.concat([h1, r]), h2, c2)
    logits = ad.add_bias(ad.matmul(h2, p["output.weight"]), p["output.bias"])
    return ad.log_softmax(logits), (h1, c1, h2, c2)


def _zero_state(tape: Tape, rows: int, hidden: int):
    z = np.zeros((rows, hidden))
    return tuple(tape.constant(z) for _ in range(4))


def _check_r(model: ExplainerModel, r: Node):
    if r.value.ndim != 2 or r.shape[1] != model.config.r_dim:
        raise ValueError(f"representation of shape {r.shape} does not match r_dim {model.config.r_dim}")


def _check_tokens(model: ExplainerModel, tokens: np.ndarray):
    V = model.config.vocab_size
    if tokens.size and (tokens.min() < 0 or tokens.max() >= V):
        raise ValueError(f"token index out of range for vocabulary of size {V}")


def unroll(model: ExplainerModel, tape: Tape, r: Node, tokens: np.ndarray,
           trainable: bool = True) -> list[Node]:
    """Teacher-forced pass over padded token rows (batch, T); returns T-1 log-prob nodes."""
    _check_r(model, r)
    tokens = np.asarray(tokens, dtype=np.int64)
    _check_tokens(model, tokens)
    p = tape.bind(model.params, PREFIX, trainable)
    state = _zero_state(tape, tokens.shape[0], model.config.hidden_dim)
    outputs = []
    for t in range(tokens.shape[1] - 1):
        logp, state = _step(p, r, tokens[:, t], state)
        outputs.append(logp)
    return outputs


def _as_r_node(tape: Tape, r) -> Node:
    if isinstance(r, Node):
        return r
    r = np.asarray(r, dtype=np.float64)
    return tape.constant(r[None, :] if r.ndim == 1 else r)


def explainer_forward(model: ExplainerModel, r, tokens: Sequence[int]) -> np.ndarray:
    """Log-probabilities (len(tokens)-1, vocab) for predicting tokens[1:] under teacher forcing."""
    tokens = list(tokens)
    if not tokens or tokens[0] != model.vocab.start_index:
        raise ValueError("token sequence must begin with the start index")
    tape = Tape()
    outs = unroll(model, tape, _as_r_node(tape, r), np.asarray([tokens]), trainable=False)
    return np.stack([o.value[0] for o in outs]) if outs else np.zeros((0, model.config.vocab_size))


def pad_batch(sequences: Sequence[Sequence[int]], pad: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad token lists; returns (tokens, per-row lengths)."""
    lengths = np.array([len(s) for s in sequences])
    out = np.full((len(sequences), lengths.max()), pad, dtype=np.int64)
    for i, s in enumerate(sequences):
        out[i, :len(s)] = s
    return out, lengths


def batch_loss(model: ExplainerModel, tape: Tape, r: Node,
               sequences: Sequence[Sequence[int]]) -> Node:
    """Mean over sequences of each sequence's mean next-token cross-entropy."""
    if r.shape[0] != len(sequences):
        raise ValueError(f"{r.shape[0]} representations for {len(sequences)} sequences")
    vocab = model.vocab
    for s in sequences:
        if len(s) < 2:
            raise ValueError("explanation sequences need at least 2 tokens")
        if s[0] != vocab.start_index or s[-1] != vocab.end_index:
            raise ValueError("explanation sequences must run from start index to end index")
    tokens, lengths = pad_batch(sequences, vocab.end_index)
    outputs = unroll(model, tape, r, tokens)
    n = len(sequences)
    terms = []
    for t, logp in enumerate(outputs):
        weights = np.where(t + 1 < lengths, 1.0 / ((lengths - 1) * n), 0.0)
        terms.append(ad.weighted_nll(logp, tokens[:, t + 1], weights))
    total = terms[0]
    for term in terms[1:]:
        total = ad.add(total, term)
    return total


def explanation_loss(model: ExplainerModel, r, tokens: Sequence[int], tape: Tape | None = None) -> Node:
    """Mean next-token cross-entropy of one explanation. ``r`` may be a node on ``tape``."""
    if isinstance(r, Node):
        tape = r.tape
    tape = tape or Tape()
    return batch_loss(model, tape, _as_r_node(tape, r), [list(tokens)])


def sequence_log_prob(model: ExplainerModel, r, tokens: Sequence[int]) -> float:
    """Total log-probability of generating ``tokens`` (start token excluded) given r."""
    seq = [model.vocab.start_index, *tokens]
    logp = explainer_forward(model, r, seq)
    return float(sum(logp[t, seq[t + 1]] for t in range(len(tokens))))


# --------------------------------------------------------------------------
# decoding
# --------------------------------------------------------------------------

class _Stepper:
    """Runs single decoding steps with the parameters held constant."""

    def __init__(self, model: ExplainerModel, r_rows: np.ndarray):
        self.model = model
        self.tape = Tape()
        self.p = self.tape.bind(model.params, PREFIX, trainable=False)
        self.r_rows = np.asarray(r_rows, dtype=np.float64)
        mask = np.zeros(model.config.vocab_size)
        mask[[model.vocab.start_index, model.vocab.unk_index]] = -np.inf
        self.mask = mask

    def initial(self, rows: int):
        z = np.zeros((rows, self.model.config.hidden_dim))
        return (z, z, z, z)

    def __call__(self, token_ids, state, r_index):
        tape = self.tape
        r = tape.constant(self.r_rows[r_index])
        st = tuple(tape.constant(s) for s in state)
        logp, new = _step(self.p, r, np.asarray(token_ids), st)
        return logp.value + self.mask, tuple(n.value for n in new)


def _r_rows(model: ExplainerModel, r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    rows = r[None, :] if r.ndim == 1 else r
    if rows.ndim != 2 or rows.shape[1] != model.config.r_dim:
        raise ValueError(f"representation of shape {r.shape} does not match r_dim {model.config.r_dim}")
    return rows


def greedy_batch(model: ExplainerModel, r, max_len: int | None = None) -> list[tuple[list[int], float]]:
    """Greedy decode for each row of r; returns (tokens, total log-prob) per row."""
    rows = _r_rows(model, r)
    max_len = max_len or model.config.max_decode_len
    step = _Stepper(model, rows)
    n = rows.shape[0]
    end = model.vocab.end_index
    tokens: list[list[int]] = [[] for _ in range(n)]
    scores = np.zeros(n)
    active = np.arange(n)
    last = np.full(n, model.vocab.start_index)
    state = step.initial(n)
    for _ in range(max_len):
        if active.size == 0:
            break
        logp, state = step(last, state, active)
        choice = np.argmax(logp, axis=1)
        scores[active] += logp[np.arange(active.size), choice]
        for row, tok in zip(active, choice):
            tokens[row].append(int(tok))
        keep = choice != end
        active, last = active[keep], choice[keep]
        state = tuple(s[keep] for s in state)
    return [(t, float(s)) for t, s in zip(tokens, scores)]


def decode_greedy(model: ExplainerModel, r, max_len: int | None = None) -> list[int]:
    """Argmax decoding from the start token until the terminal token or ``max_len``.

    The result excludes the start token and includes the terminal one if produced.
    """
    return greedy_batch(model, r, max_len)[0][0]


def beam_search(model: ExplainerModel, r, beam_width: int,
                max_len: int | None = None) -> tuple[list[int], float]:
    """Beam search returning the best complete hypothesis and its log-probability.

    Per step, all completed expansions compete for a single beam slot (only the
    best completed one can matter), and unfinished expansions that reach a
    bitwise-identical decoder state are merged keeping the better score. A
    hypothesis is complete when it emits the terminal token or reaches ``max_len``.
    The greedy hypothesis is always scored too, so the result is never worse.
    """
    if beam_width < 1:
        raise ValueError(f"beam_width must be >= 1, got {beam_width}")
    rows = _r_rows(model, r)
    if rows.shape[0] != 1:
        raise ValueError("beam search decodes one representation at a time")
    max_len = max_len or model.config.max_decode_len
    step = _Stepper(model, rows)
    end = model.vocab.end_index

    live: list[tuple[float, tuple[int, ...]]] = [(0.0, ())]
    state = step.initial(1)
    logp, state = step([model.vocab.start_index], state, [0])
    finished: list[tuple[float, tuple[int, ...]]] = []
    allowed = np.flatnonzero(np.isfinite(logp[0]))

    for t in range(1, max_len + 1):
        ends = []
        cont = []  # (score, tokens, parent row, token)
        for i, (score, toks) in enumerate(live):
            for w in allowed:
                cand = (score + logp[i, w], toks + (int(w),))
                if w == end:
                    ends.append(cand)
                else:
                    cont.append((*cand, i, int(w)))
        groups: list[tuple] = []
        if ends:
            groups.append(("end", min(ends, key=lambda c: (-c[0], c[1]))))
        if cont and t < max_len:
            parents = np.array([c[2] for c in cont])
            nlogp, nstate = step([c[3] for c in cont], tuple(s[parents] for s in state),
                                 np.zeros(len(cont), dtype=np.int64))
            best: dict[bytes, int] = {}
            for j, c in enumerate(cont):
                key = b"".join(s[j].tobytes() for s in nstate)
                k = best.get(key)
                if k is None or (-c[0], c[1]) < (-cont[k][0], cont[k][1]):
                    best[key] = j
            groups.extend(("live", j) for j in best.values())
        elif cont:
            # max_len reached: unfinished hypotheses are complete as they stand
            groups.extend(("end", (c[0], c[1])) for c in cont)

        def rank(g):
            score, toks = (g[1] if g[0] == "end" else cont[g[1]][:2])
            return (-score, toks)

        groups.sort(key=rank)
        kept_live = []
        for kind, item in groups[:beam_width]:
            if kind == "end":
                finished.append(item)
            else:
                kept_live.append(item)
        if not kept_live:
            break
        live = [cont[j][:2] for j in kept_live]
        logp = nlogp[kept_live]
        state = tuple(s[kept_live] for s in nstate)

    greedy_tokens, greedy_score = greedy_batch(model, rows, max_len)[0]
    finished.append((greedy_score, tuple(greedy_tokens)))
    score, toks = min(finished, key=lambda c: (-c[0], c[1]))
    return list(toks), float(score)


def decode_beam(model: ExplainerModel, r, beam_width: int, max_len: int | None = None) -> list[int]:
    return beam_search(model, r, beam_width, max_len)[0]
