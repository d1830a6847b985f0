"""Corpus BLEU, exact-match METEOR and TF-IDF CIDEr for generated explanations.

A corpus is a sequence of ``(candidate_tokens, [reference_tokens, ...])`` pairs.
BLEU and METEOR are reported on a 0-100 scale; CIDEr on its native scale
(10 for a perfect match whose n-grams are all informative).
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from interpnet.text import detokenize, tokenize  # noqa: F401  (re-exported)

Tokens = Sequence[str]
Entry = tuple[Tokens, Sequence[Tokens]]


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_corpus(corpus: Sequence[Entry], minimum: int = 1):
    if len(corpus) < minimum:
        raise ValueError(f"corpus needs at least {minimum} entr{'y' if minimum == 1 else 'ies'}, "
                         f"got {len(corpus)}")
    for cand, refs in corpus:
        if not refs:
            raise ValueError("every corpus entry needs at least one reference")


# --------------------------------------------------------------------------
# BLEU
# --------------------------------------------------------------------------

def bleu(corpus: Sequence[Entry], max_n: int = 4, smooth: bool = True) -> float:
    """Corpus-level BLEU with brevity penalty.

    Orders with no candidate n-grams anywhere in the corpus are left out of the
    geometric mean. With ``smooth`` a zero match count is replaced by
    (0 + 1) / (total + 1).
    """
    _check_corpus(corpus)
    matched = [0] * max_n
    total = [0] * max_n
    cand_len = ref_len = 0
    for cand, refs in corpus:
        cand_len += len(cand)
        ref_len += min((len(r) for r in refs), key=lambda L: (abs(L - len(cand)), L))
        for n in range(1, max_n + 1):
            counts = ngrams(cand, n)
            if not counts:
                continue
            max_ref = Counter()
            for r in refs:
                max_ref |= ngrams(r, n)
            matched[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            total[n - 1] += sum(counts.values())
    if cand_len == 0:
        return 0.0
    log_p = []
    for m, t in zip(matched, total):
        if t == 0:
            continue
        if m == 0:
            if not smooth:
                return 0.0
            log_p.append(math.log(1.0 / (t + 1)))
        else:
            log_p.append(math.log(m / t))
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(sum(log_p) / len(log_p))


# --------------------------------------------------------------------------
# METEOR (exact matching only)
# --------------------------------------------------------------------------

def align(cand: Tokens, ref: Tokens) -> tuple[int, int]:
    """Exact unigram alignment maximizing matches, then minimizing chunks.

    Returns (matches, chunks). A chunk is a run of candidate words aligned to
    consecutive reference positions in the same order.
    """
    positions = [tuple(j for j, r in enumerate(ref) if r == w) for w in cand]

    @lru_cache(maxsize=None)
    def best(i: int, used: int, prev: int) -> tuple[int, int]:
        # (matches, -chunks) achievable from candidate position i onwards
        if i == len(cand):
            return (0, 0)
        m, c = best(i + 1, used, -2)
        options = [(m, c)]
        for j in positions[i]:
            if used >> j & 1:
                continue
            m, c = best(i + 1, used | 1 << j, j)
            options.append((m + 1, c - (0 if j == prev + 1 else 1)))
        return max(options)

    matches, neg_chunks = best(0, 0, -2)
    return matches, -neg_chunks


def meteor_sentence(cand: Tokens, ref: Tokens, alpha: float = 0.9,
                    beta: float = 3.0, gamma: float = 0.5) -> float:
    """Score in [0, 1] against a single reference."""
    if not cand or not ref:
        return 0.0
    matches, chunks = align(cand, ref)
    if matches == 0:
        return 0.0
    p = matches / len(cand)
    r = matches / len(ref)
    f_mean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (chunks / matches) ** beta
    return f_mean * (1.0 - penalty)


def meteor_entries(corpus: Sequence[Entry]) -> list[float]:
    return [max(meteor_sentence(c, r) for r in refs) for c, refs in corpus]


def meteor_lite(corpus: Sequence[Entry]) -> float:
    """Mean over entries of the best per-reference score, times 100."""
    _check_corpus(corpus)
    scores = meteor_entries(corpus)
    return 100.0 * sum(scores) / len(scores)


# --------------------------------------------------------------------------
# CIDEr
# --------------------------------------------------------------------------

def _tfidf(counts: Counter, idf: dict) -> tuple[dict, float]:
    vec = {g: tf * idf[g] for g, tf in counts.items()}
    return vec, math.sqrt(sum(v * v for v in vec.values()))


def _cosine(a, b) -> float:
    (va, na), (vb, nb) = a, b
    if na == 0 or nb == 0:
        return 0.0
    return sum(v * vb.get(g, 0.0) for g, v in va.items()) / (na * nb)


def cider_entries(corpus: Sequence[Entry], max_n: int = 4) -> list[float]:
    _check_corpus(corpus, minimum=2)
    n_docs = len(corpus)
    log_n = math.log(n_docs)
    per_entry = [0.0] * n_docs
    for n in range(1, max_n + 1):
        ref_counts = [[ngrams(r, n) for r in refs] for _, refs in corpus]
        df = Counter()
        for counts in ref_counts:
            df.update(set().union(*counts))
        cand_counts = [ngrams(c, n) for c, _ in corpus]
        vocab = set(df) | set().union(*cand_counts)
        idf = {g: log_n - math.log(max(1, df[g])) for g in vocab}
        for k, (cc, rcs) in enumerate(zip(cand_counts, ref_counts)):
            cv = _tfidf(cc, idf)
            sims = [_cosine(cv, _tfidf(rc, idf)) for rc in rcs]
            per_entry[k] += sum(sims) / len(sims) / max_n
    return [10.0 * s for s in per_entry]


def cider(corpus: Sequence[Entry], max_n: int = 4) -> float:
    """Mean over entries of the n-averaged TF-IDF cosine similarity, times 10.

    IDF of an n-gram is log(N / df) with df the number of entries whose
    references contain it (floored at 1 for unseen n-grams).
    """
    scores = cider_entries(corpus, max_n)
    return sum(scores) / len(scores)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass
class MetricReport:
    bleu: float
    meteor_lite: float
    cider: float | None
    accuracy: float | None = None
    num_examples: int = 0
    entries: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def summary(self) -> dict:
        return {"bleu": self.bleu, "meteor_lite": self.meteor_lite,
                "cider": self.cider, "accuracy": self.accuracy}


def score_corpus(corpus: Sequence[Entry], ids: Sequence[str] | None = None) -> MetricReport:
    """All three metrics plus per-entry breakdowns. CIDEr is None for a single entry."""
    _check_corpus(corpus)
    meteors = meteor_entries(corpus)
    ciders = cider_entries(corpus) if len(corpus) >= 2 else [None] * len(corpus)
    entries = []
    for k, ((cand, refs), m, c) in enumerate(zip(corpus, meteors, ciders)):
        entries.append({"id": ids[k] if ids else str(k), "candidate": detokenize(cand),
                        "bleu": bleu([(cand, refs)]), "meteor_lite": 100.0 * m, "cider": c})
    return MetricReport(
        bleu=bleu(corpus),
        meteor_lite=100.0 * sum(meteors) / len(meteors),
        cider=sum(ciders) / len(ciders) if len(corpus) >= 2 else None,
        num_examples=len(corpus),
        entries=entries,
    )


def read_corpus(path) -> list[Entry]:
    """Line-delimited JSON: {"candidate": str, "references": [str, ...]} per line."""
    corpus = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                cand, refs = rec["candidate"], rec["references"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed corpus record ({exc})") from None
            corpus.append((tokenize(cand), [tokenize(r) for r in refs]))
    return corpus


def write_corpus(path, candidates: Sequence[str], references: Sequence[Sequence[str]]):
    with open(path, "w") as fh:
        for c, refs in zip(candidates, references):
            fh.write(json.dumps({"candidate": c, "references": list(refs)}) + "\n")


def evaluate(net, records, beam_width: int = 1, ablate: bool = False) -> MetricReport:
    """Decode one explanation per record, score it against all the record's
    references and measure classification accuracy.

    ``ablate`` replaces the representation with zeros before decoding.
    """
    if not records:
        raise ValueError("cannot evaluate on zero records")
    X = np.stack([r.features for r in records])
    outputs = net.explain(X, beam_width=beam_width, ablate=ablate)
    corpus = [(words, [tokenize(e) for e in r.explanations]) for (_, _, words), r in zip(outputs, records)]
    report = score_corpus(corpus, [r.id for r in records])
    correct = 0
    for entry, (k, p, _), r in zip(report.entries, outputs, records):
        entry.update(label=r.label, predicted=k, probability=p)
        correct += k == r.label
    report.accuracy = correct / len(records)
    return report
