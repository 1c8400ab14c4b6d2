"""Soft alignment over caption words.

Each generative step scores every encoded word against the previous
generator state, turns the scores into probabilities, and mixes the word
vectors into one dynamic sentence representation for that step.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor
from .recurrent import LangEncoding


@dataclass
class AlignParams:
    """Parameters of the word-scoring network.

    ``enc_proj`` maps a word vector (size 2m) and ``state_proj`` maps the
    generator state (size n) into a shared score space of size ``score_dim``;
    ``score_weights`` reduces the tanh of their sum to a scalar per word.
    """

    score_weights: Tensor  # (l,)
    enc_proj: Tensor       # (l, 2m)
    state_proj: Tensor     # (l, n)
    bias: Tensor           # (l,)

    @property
    def score_dim(self) -> int:
        return self.score_weights.shape[0]


@dataclass
class AlignmentState:
    probabilities: Tensor   # (N,)
    representation: Tensor  # (2m,)


def alignment_probabilities(gen_state: Tensor, enc: LangEncoding, params: AlignParams) -> Tensor:
    """Probability over caption words for one generative step."""
    if enc.length == 0:
        raise ValueError("alignment_probabilities: empty encoding")
    # scores_k = score_weights . tanh(enc_proj h_k + state_proj h_prev + bias),
    # evaluated for all words at once with the state term broadcast per row
    projected_words = ad.matmul(enc.states, ad.transpose(params.enc_proj))      # (N, l)
    state_term = ad.matmul(params.state_proj, gen_state) + params.bias          # (l,)
    scores = ad.matmul(ad.tanh(projected_words + state_term), params.score_weights)  # (N,)
    return ad.softmax(scores)


def dynamic_representation(probabilities: Tensor, enc: LangEncoding) -> Tensor:
    """Probability-weighted sum of the per-word encodings."""
    if probabilities.shape != (enc.length,):
        raise ad.ShapeMismatch(
            f"dynamic_representation: {probabilities.shape} weights for {enc.length} words"
        )
    return ad.matmul(probabilities, enc.states)


def align(gen_state: Tensor, enc: LangEncoding, params: AlignParams) -> AlignmentState:
    alpha = alignment_probabilities(gen_state, enc, params)
    return AlignmentState(probabilities=alpha, representation=dynamic_representation(alpha, enc))
