"""Character n-gram language model with additive smoothing.

Stands in for a large neural LM during shallow fusion: what matters for
decoding is a per-grapheme conditional log probability, which this
provides over the tokenizer's grapheme inventory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .tokens import Vocabulary, default_vocabulary

BOS = "\x02"


@dataclass
class CharNgramLm:
    order: int
    smoothing: float
    graphemes: tuple[str, ...]
    context_logp: dict[tuple[str, ...], dict[str, float]] = field(default_factory=dict)
    _uniform: float = 0.0

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.smoothing <= 0:
            raise ValueError("smoothing must be positive")
        self._uniform = -math.log(len(self.graphemes))
        self._index = {g: i for i, g in enumerate(self.graphemes)}

    def logp(self, grapheme: str, history: str) -> float:
        """log P(grapheme | last order-1 characters of history)."""
        if grapheme not in self._index:
            raise ValueError(f"grapheme {grapheme!r} unknown to the language model")
        ctx = tuple((BOS * (self.order - 1) + history)[-(self.order - 1):]) \
            if self.order > 1 else ()
        table = self.context_logp.get(ctx)
        if table is None:
            return self._uniform
        return table[grapheme]

    def sequence_logp(self, text: str) -> float:
        return sum(self.logp(ch, text[:i]) for i, ch in enumerate(text))


def train_char_lm(texts, order: int = 4, smoothing: float = 0.1,
                  vocab: Vocabulary | None = None) -> CharNgramLm:
    """Count n-grams over the given transcripts and smooth additively, so
    every context distribution sums to one over the grapheme inventory."""
    vocab = vocab or default_vocabulary()
    graphemes = vocab.graphemes
    counts: dict[tuple[str, ...], dict[str, int]] = {}
    for text in texts:
        padded = BOS * (order - 1) + text
        for i in range(order - 1, len(padded)):
            ctx = tuple(padded[i - order + 1:i]) if order > 1 else ()
            ch = padded[i]
            if ch not in graphemes:
                raise ValueError(f"training text contains out-of-vocabulary character {ch!r}")
            counts.setdefault(ctx, {}).setdefault(ch, 0)
            counts[ctx][ch] += 1
    lm = CharNgramLm(order=order, smoothing=smoothing, graphemes=graphemes)
    v = len(graphemes)
    for ctx, table in counts.items():
        total = sum(table.values())
        denom = total + smoothing * v
        lm.context_logp[ctx] = {
            g: math.log((table.get(g, 0) + smoothing) / denom) for g in graphemes
        }
    return lm
