"""LSTM cell with forget gates and the bidirectional caption encoder.

The encoder embeds each word, runs one LSTM left-to-right and another
right-to-left over the embedded sequence, and pairs the two states of each
word into a single per-word vector. Captions are processed at their true
length; there is no padding or masking.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class LstmWeights:
    """Gate parameters; the four gates (input, forget, cell, output) are
    stacked along the leading axis, so both maps have 4*hidden rows."""

    w_input: Tensor   # (4*hidden, input_size)
    w_hidden: Tensor  # (4*hidden, hidden)
    bias: Tensor      # (4*hidden,)

    @property
    def hidden_size(self) -> int:
        return self.w_hidden.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_input.shape[1]

    def __post_init__(self):
        rows = self.w_input.shape[0]
        if rows != 4 * self.hidden_size or self.w_hidden.shape[0] != rows or self.bias.shape != (rows,):
            raise ad.ShapeMismatch(
                f"LstmWeights: gate stack {rows} inconsistent with hidden size {self.hidden_size}"
            )


def lstm_step(prev_hidden: Tensor, prev_cell: Tensor, inp: Tensor, weights: LstmWeights):
    """One forget-gate LSTM update; returns (hidden, cell)."""
    n = weights.hidden_size
    if prev_hidden.shape != (n,) or prev_cell.shape != (n,):
        raise ad.ShapeMismatch(
            f"lstm_step: state shapes {prev_hidden.shape}/{prev_cell.shape} vs hidden size {n}"
        )
    gates = ad.matmul(weights.w_input, inp) + ad.matmul(weights.w_hidden, prev_hidden) + weights.bias
    gate_in = ad.sigmoid(ad.narrow(gates, 0, 0, n))
    gate_forget = ad.sigmoid(ad.narrow(gates, 0, n, n))
    candidate = ad.tanh(ad.narrow(gates, 0, 2 * n, n))
    gate_out = ad.sigmoid(ad.narrow(gates, 0, 3 * n, n))
    cell = gate_forget * prev_cell + gate_in * candidate
    hidden = gate_out * ad.tanh(cell)
    return hidden, cell


@dataclass
class LangEncoding:
    """Per-word encoder outputs, stacked as an (N, 2m) matrix.

    Row i is the forward state for word i followed by the backward state
    for word i, each of size ``per_direction``.
    """

    states: Tensor
    per_direction: int

    @property
    def length(self) -> int:
        return self.states.shape[0]

    def word_vector(self, i: int) -> Tensor:
        return ad.reshape(ad.narrow(self.states, 0, i, 1), (self.states.shape[1],))


def _run_direction(embedded, weights):
    n = weights.hidden_size
    hidden = ad.constant([0.0] * n)
    cell = ad.constant([0.0] * n)
    states = []
    for vec in embedded:
        hidden, cell = lstm_step(hidden, cell, vec, weights)
        states.append(hidden)
    return states


def encode_caption(codes, embedding: Tensor, fwd: LstmWeights, bwd: LstmWeights) -> LangEncoding:
    """Bidirectional encoding of a word-index sequence.

    ``embedding`` has one row per vocabulary entry; both LSTMs start from
    zero states and see the same embedded sequence, one per direction.
    """
    if len(codes) == 0:
        raise ValueError("encode_caption: empty caption")
    vocab_size, width = embedding.shape
    for idx in codes:
        if not 0 <= idx < vocab_size:
            raise ValueError(f"encode_caption: word index {idx} outside vocabulary of {vocab_size}")
    if fwd.hidden_size != bwd.hidden_size:
        raise ad.ShapeMismatch("encode_caption: forward/backward hidden sizes differ")

    embedded = [ad.reshape(ad.narrow(embedding, 0, idx, 1), (width,)) for idx in codes]
    fwd_states = _run_direction(embedded, fwd)
    bwd_states = _run_direction(list(reversed(embedded)), bwd)
    bwd_states.reverse()  # index by word position again

    m = fwd.hidden_size
    rows = [
        ad.reshape(ad.concat([f, b]), (1, 2 * m))
        for f, b in zip(fwd_states, bwd_states)
    ]
    return LangEncoding(states=ad.concat(rows, axis=0), per_direction=m)
