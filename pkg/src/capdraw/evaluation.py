"""Held-out evaluation: bound estimates, image similarity, retrieval.

Retrieval scores a candidate image by the likelihood ratio between the
bound conditioned on the query caption and the bound conditioned on the
mean sentence representation of the training captions; candidates are
ranked per caption and summarized as Recall@K plus the median rank.

The structural-similarity score compares two images over sliding windows,
combining luminance, contrast, and covariance per window; it lies in
[-1, 1] and equals 1 only for identical windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .model import ModelParams, encode, generate, infer_bound
from .recurrent import LangEncoding
from .rng import RngStream


def estimate_bound(params: ModelParams, image: np.ndarray, enc: LangEncoding,
                   rng: RngStream, n_samples: int = 1):
    """Mean variational bound over independent noise draws, with the
    standard error of the mean (zero when a single draw is requested)."""
    if n_samples < 1:
        raise ValueError("estimate_bound: need at least one sample")
    values = np.empty(n_samples)
    with ad.no_grad():
        for i in range(n_samples):
            values[i] = infer_bound(params, image, enc, rng=rng, samples=1).bound
    stderr = 0.0 if n_samples == 1 else float(values.std(ddof=1) / math.sqrt(n_samples))
    return float(values.mean()), stderr


# ---------------------------------------------------------------------------
# structural similarity

@dataclass
class SsiConfig:
    window: int = 8
    stride: int = 4
    dynamic_range: float = 1.0
    c1: Optional[float] = None  # defaults to (0.01 * range)^2
    c2: Optional[float] = None  # defaults to (0.03 * range)^2

    def __post_init__(self):
        if self.c1 is None:
            self.c1 = (0.01 * self.dynamic_range) ** 2
        if self.c2 is None:
            self.c2 = (0.03 * self.dynamic_range) ** 2
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("SsiConfig: stabilizers must be positive")
        if self.window < 1 or self.stride < 1:
            raise ValueError("SsiConfig: window and stride must be >= 1")


def _window_starts(extent: int, window: int, stride: int):
    return range(0, extent - window + 1, stride)


def ssi(a: np.ndarray, b: np.ndarray, cfg: Optional[SsiConfig] = None) -> float:
    """Mean windowed similarity of two equally-sized grayscale images."""
    cfg = cfg or SsiConfig()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssi: shapes {a.shape} and {b.shape} differ")
    h, w = a.shape
    if cfg.window > min(h, w):
        raise ValueError(f"ssi: window {cfg.window} does not fit in {a.shape}")
    scores = []
    for r in _window_starts(h, cfg.window, cfg.stride):
        for c in _window_starts(w, cfg.window, cfg.stride):
            wa = a[r:r + cfg.window, c:c + cfg.window]
            wb = b[r:r + cfg.window, c:c + cfg.window]
            mu_a, mu_b = wa.mean(), wb.mean()
            var_a = (wa * wa).mean() - mu_a * mu_a
            var_b = (wb * wb).mean() - mu_b * mu_b
            cov = (wa * wb).mean() - mu_a * mu_b
            num = (2 * mu_a * mu_b + cfg.c1) * (2 * cov + cfg.c2)
            den = (mu_a * mu_a + mu_b * mu_b + cfg.c1) * (var_a + var_b + cfg.c2)
            scores.append(num / den)
    return float(np.mean(scores))


def ssi_protocol(params: ModelParams, test_samples, rng: RngStream,
                 samples_per_caption: int = 50, cfg: Optional[SsiConfig] = None):
    """Draw prior samples per test caption and compare each against the
    caption's ground-truth image; returns (mean, std, all scores)."""
    scores = []
    for image, codes in test_samples:
        enc = encode(params, codes)
        for _ in range(samples_per_caption):
            trace = generate(params, enc, rng)
            scores.append(ssi(trace.mean_image, image, cfg))
    scores = np.array(scores)
    return float(scores.mean()), float(scores.std(ddof=1)), scores


# ---------------------------------------------------------------------------
# retrieval

@dataclass
class RetrievalResult:
    ranks: np.ndarray
    recall_at: dict
    median_rank: float


def rank_of_true_image(scores: np.ndarray, true_index: int) -> int:
    """1-indexed position of the true image under descending score, ties
    broken by pool order."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    return int(np.nonzero(order == true_index)[0][0]) + 1


def retrieval(score_fn: Callable, queries, pool, recall_ks=(1, 5, 10, 50)) -> RetrievalResult:
    """Rank every pool image for every query.

    ``queries`` is a list of (query, true_index); ``score_fn(query_index,
    image_index, query, image)`` returns a real score, larger meaning a
    better match. Ranks are invariant under any strictly increasing
    transform of the scores.
    """
    ranks = np.empty(len(queries), dtype=np.int64)
    for qi, (query, true_index) in enumerate(queries):
        if not 0 <= true_index < len(pool):
            raise ValueError(f"retrieval: query {qi} ground truth {true_index} not in pool")
        scores = np.array([score_fn(qi, ii, query, pool[ii]) for ii in range(len(pool))])
        ranks[qi] = rank_of_true_image(scores, true_index)
    recall = {k: float(np.mean(ranks <= k)) for k in recall_ks}
    return RetrievalResult(ranks=ranks, recall_at=recall, median_rank=float(np.median(ranks)))


def mean_sentence_baseline(params: ModelParams, caption_code_lists) -> LangEncoding:
    """Length-averaged encoder output, averaged over captions, packaged as
    a single-word pseudo-caption encoding."""
    if not caption_code_lists:
        raise ValueError("mean_sentence_baseline: no captions")
    with ad.no_grad():
        acc = None
        for codes in caption_code_lists:
            states = encode(params, codes).states.data
            per_caption = states.mean(axis=0)
            acc = per_caption if acc is None else acc + per_caption
        mean_vec = acc / len(caption_code_lists)
    m = mean_vec.size // 2
    return LangEncoding(states=ad.constant(mean_vec.reshape(1, -1)), per_direction=m)


def likelihood_ratio_scorer(params: ModelParams, baseline: LangEncoding, seed: int,
                            n_samples: int = 1):
    """score(image | caption) = bound(image | caption) - bound(image | baseline).

    Every (query, image) pair evaluates under its own spawned stream, so
    scoring order cannot change any score.
    """
    def score(query_index, image_index, enc, image):
        rng_q = RngStream(seed).spawn(f"retrieval-q{query_index}-i{image_index}")
        rng_b = RngStream(seed).spawn(f"retrieval-base-i{image_index}")
        conditioned, _ = estimate_bound(params, image, enc, rng_q, n_samples)
        unconditioned, _ = estimate_bound(params, image, baseline, rng_b, n_samples)
        return conditioned - unconditioned

    return score


# ---------------------------------------------------------------------------
# importance-sampled log-likelihood (bound sanity reference)

def _diag_log_density(z, mean, std):
    u = (z - mean) / std
    return -0.5 * np.sum(u * u) - np.sum(np.log(std)) - 0.5 * z.size * math.log(2 * math.pi)


def importance_log_likelihood(params: ModelParams, image: np.ndarray, enc: LangEncoding,
                              rng: RngStream, n_samples: int):
    """log p(image | caption) estimated with posterior-proposal importance
    sampling; returns (estimate, standard error via the delta method)."""
    if n_samples < 1:
        raise ValueError("importance_log_likelihood: need at least one sample")
    log_weights = np.empty(n_samples)
    with ad.no_grad():
        for i in range(n_samples):
            report = infer_bound(params, image, enc, rng=rng, samples=1, collect=True)
            detail = report.details[0]
            lw = -detail.recon_nll
            for t in range(detail.latents.shape[0]):
                lw += _diag_log_density(detail.latents[t], detail.prior_means[t],
                                        detail.prior_stds[t])
                lw -= _diag_log_density(detail.latents[t], detail.posterior_means[t],
                                        detail.posterior_stds[t])
            log_weights[i] = lw
    shift = log_weights.max()
    scaled = np.exp(log_weights - shift)
    estimate = shift + math.log(scaled.mean())
    stderr = float(scaled.std(ddof=1) / (math.sqrt(n_samples) * scaled.mean())) if n_samples > 1 else float("inf")
    return float(estimate), stderr
