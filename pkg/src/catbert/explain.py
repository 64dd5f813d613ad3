"""Local linear explanations of single predictions, LIME style.

Neighborhood samples mask each content word independently with probability
1/2 (masked words become [UNK]), the model scores every masked variant, and
a proximity-weighted ridge regression over the presence vectors yields
per-word weights. Weights for repeated words are summed per word string.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tokenizer import UNK, pre_tokenize

RIDGE_LAMBDA = 1e-3


@dataclass
class Attribution:
    weights: dict[str, float]
    intercept: float
    r2: float
    sigma: float
    n_samples: int
    top_positive: list[tuple[str, float]]
    top_negative: list[tuple[str, float]]

    def to_dict(self) -> dict:
        return {
            "weights": self.weights, "intercept": self.intercept, "r2": self.r2,
            "sigma": self.sigma, "n_samples": self.n_samples,
            "top_positive": [[t, w] for t, w in self.top_positive],
            "top_negative": [[t, w] for t, w in self.top_negative],
        }


def lime_explain(score_fn, text: str, n_samples: int = 1000, seed: int = 0,
                 sigma: float | None = None, top_k: int = 10) -> Attribution:
    """Fit the local surrogate around ``text``.

    ``score_fn(texts) -> probs`` scores a batch of masked variants; context
    features, if the caller has any, must be closed over (masking never
    touches them).
    """
    if n_samples < 50:
        raise ValueError(f"need n_samples >= 50, got {n_samples}")
    words = pre_tokenize(text)
    n = len(words)
    if n == 0:
        raise ValueError("cannot explain empty content")
    if sigma is None:
        sigma = 0.75 * math.sqrt(n)
    rng = np.random.default_rng(seed)

    Z = (rng.random((n_samples, n)) < 0.5).astype(np.float64)  # 1 = word kept
    texts = [" ".join(w if keep else UNK for w, keep in zip(words, row))
             for row in Z.astype(bool)]
    y = np.asarray(score_fn(texts), dtype=np.float64)
    if y.shape != (n_samples,):
        raise ValueError(f"score_fn returned shape {y.shape}, expected ({n_samples},)")

    hamming = n - Z.sum(axis=1)
    kw = np.exp(-(hamming ** 2) / (sigma ** 2))

    # weighted ridge with unpenalized intercept
    X = np.concatenate([np.ones((n_samples, 1)), Z], axis=1)
    XtW = X.T * kw
    A = XtW @ X
    A[1:, 1:] += RIDGE_LAMBDA * np.eye(n)
    beta = np.linalg.solve(A, XtW @ y)
    intercept, coef = float(beta[0]), beta[1:]

    pred = X @ beta
    w_mean = float((kw * y).sum() / kw.sum())
    ss_res = float((kw * (y - pred) ** 2).sum())
    ss_tot = float((kw * (y - w_mean) ** 2).sum())
    r2 = 1.0 if ss_tot < 1e-18 else 1.0 - ss_res / ss_tot

    weights: dict[str, float] = {}
    for word, c in zip(words, coef):
        weights[word] = weights.get(word, 0.0) + float(c)
    ordered = sorted(weights.items(), key=lambda kv: kv[1], reverse=True)
    top_positive = [(t, w) for t, w in ordered[:top_k] if w > 0]
    top_negative = [(t, w) for t, w in ordered[::-1][:top_k] if w < 0]
    return Attribution(weights=weights, intercept=intercept, r2=r2, sigma=sigma,
                       n_samples=n_samples, top_positive=top_positive,
                       top_negative=top_negative)


def explain_record(model, vocab, record, n_samples: int = 1000, seed: int = 0,
                   max_len: int = 128, use_context: bool = True) -> Attribution:
    """Explain one email's score. The record's context features are held
    fixed across the whole neighborhood."""
    from .mail import build_content
    from .pipeline import encode_texts, score_dataset

    def score_fn(texts):
        ds = encode_texts(texts, [record] * len(texts), vocab, max_len=max_len)
        return score_dataset(model, ds, use_context=use_context)

    return lime_explain(score_fn, build_content(record), n_samples=n_samples, seed=seed)
