"""Grapheme tokenization.

The vocabulary is the CTC blank at index 0 followed by lowercase a-z,
space and apostrophe (29 symbols). encode/decode are inverse bijections
between in-vocabulary text and blank-free id sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

BLANK = 0
BLANK_SYMBOL = "<blank>"
GRAPHEMES = tuple("abcdefghijklmnopqrstuvwxyz") + (" ", "'")


@dataclass(frozen=True)
class Vocabulary:
    symbols: tuple[str, ...] = (BLANK_SYMBOL,) + GRAPHEMES
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def graphemes(self) -> tuple[str, ...]:
        return self.symbols[1:]

    def id_of(self, grapheme: str) -> int:
        try:
            return self._index[grapheme]
        except KeyError:
            raise ValueError(f"grapheme {grapheme!r} is not in the vocabulary") from None

    def encode(self, text: str) -> list[int]:
        ids = []
        for ch in text:
            if ch not in self._index or ch == BLANK_SYMBOL:
                raise ValueError(f"grapheme {ch!r} is not in the vocabulary")
            ids.append(self._index[ch])
        return ids

    def decode(self, ids) -> str:
        chars = []
        for i in ids:
            i = int(i)
            if i == BLANK:
                raise ValueError("blank id in sequence passed to decode")
            if not 0 < i < len(self.symbols):
                raise ValueError(f"id {i} outside vocabulary of size {len(self.symbols)}")
            chars.append(self.symbols[i])
        return "".join(chars)


_DEFAULT = Vocabulary()


def default_vocabulary() -> Vocabulary:
    return _DEFAULT


def encode(text: str) -> list[int]:
    return _DEFAULT.encode(text)


def decode(ids) -> str:
    return _DEFAULT.decode(ids)
