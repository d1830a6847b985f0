"""Reference computations that share no code with the paths they check."""
import itertools
import math

import numpy as np


def central_diff(loss_fn, params: dict, h: float = 1e-5) -> dict:
    """Central finite differences of a scalar function of a dict of arrays."""
    grads = {}
    for name, value in params.items():
        g = np.zeros_like(value, dtype=np.float64)
        for idx in np.ndindex(value.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            g[idx] = (loss_fn(plus) - loss_fn(minus)) / (2 * h)
        grads[name] = g
    return grads


def rel_error(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def dense_cider(corpus, max_n=4) -> list[float]:
    """CIDEr via explicit dense TF-IDF matrices over the whole n-gram vocabulary."""
    N = len(corpus)
    totals = np.zeros(N)
    for n in range(1, max_n + 1):
        def grams(toks):
            return [tuple(toks[i:i + n]) for i in range(len(toks) - n + 1)]
        vocab = sorted({g for c, refs in corpus for s in [c, *refs] for g in grams(s)})
        col = {g: i for i, g in enumerate(vocab)}
        df = np.zeros(len(vocab))
        for _, refs in corpus:
            present = np.zeros(len(vocab), dtype=bool)
            for r in refs:
                for g in grams(r):
                    present[col[g]] = True
            df += present
        idf = math.log(N) - np.log(np.maximum(df, 1.0))

        def vec(toks):
            v = np.zeros(len(vocab))
            for g in grams(toks):
                v[col[g]] += 1
            return v * idf

        for k, (c, refs) in enumerate(corpus):
            cv = vec(c)
            sims = []
            for r in refs:
                rv = vec(r)
                d = np.linalg.norm(cv) * np.linalg.norm(rv)
                sims.append(0.0 if d == 0 else float(cv @ rv) / d)
            totals[k] += np.mean(sims) / max_n
    return list(10 * totals)


def all_sequences(emittable, end, max_len):
    """Every hypothesis a decoder can return: terminated by ``end`` or cut at max_len."""
    words = [w for w in emittable if w != end]
    for length in range(1, max_len + 1):
        for body in itertools.product(words, repeat=length - 1):
            yield [*body, end]
        if length == max_len:
            for body in itertools.product(words, repeat=length):
                yield list(body)
