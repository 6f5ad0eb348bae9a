"""Symbol vocabulary, LaTeX token sequences, and count ground truth.

The vocabulary is a bijection between tokens and class ids. Six tokens
("sos", "eos", "^", "_", "{", "}") leave no ink on the page; their count
ground truth is forced to zero so the counting head is never asked to
find pixels that do not exist.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

SOS = "sos"
EOS = "eos"
SOS_ID = 0
EOS_ID = 1

#: Tokens with no visual footprint; their count ground truth is zero.
INVISIBLE_TOKENS = (SOS, EOS, "^", "_", "{", "}")


class UnknownTokenError(ValueError):
    def __init__(self, token: str, position: int):
        super().__init__(f"unknown token {token!r} at position {position}")
        self.token = token
        self.position = position


class SymbolVocabulary:
    """Ordered token set; the list index is the class id.

    "sos" must be first and "eos" second so that ids 0/1 are stable
    across every vocabulary built from the same conventions.
    """

    def __init__(self, tokens):
        tokens = list(tokens)
        if len(tokens) < 2 or tokens[0] != SOS or tokens[1] != EOS:
            raise ValueError('vocabulary must start with "sos", "eos"')
        if len(set(tokens)) != len(tokens):
            dupes = sorted({t for t in tokens if tokens.count(t) > 1})
            raise ValueError(f"duplicate tokens in vocabulary: {dupes}")
        self.tokens = tokens
        self.index_of = {tok: i for i, tok in enumerate(tokens)}
        # Invisible tokens absent from a reduced vocabulary are skipped.
        self.invisible_ids = frozenset(
            self.index_of[t] for t in INVISIBLE_TOKENS if t in self.index_of
        )

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index_of

    @classmethod
    def from_file(cls, path) -> "SymbolVocabulary":
        """Load a vocabulary file: UTF-8, one token per line, no comments."""
        text = Path(path).read_text(encoding="utf-8")
        return cls([line for line in text.splitlines() if line != ""])

    def to_file(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    def content_hash(self) -> str:
        """Hash of the exact token list; used to pair checkpoints with data."""
        import hashlib

        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TokenSequence:
    """Class-id sequence framed by sos/eos with no interior sos/eos."""

    ids: tuple

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        object.__setattr__(self, "ids", ids)
        if len(ids) < 2 or ids[0] != SOS_ID or ids[-1] != EOS_ID:
            raise ValueError("sequence must start with sos and end with eos")
        if any(i in (SOS_ID, EOS_ID) for i in ids[1:-1]):
            raise ValueError("interior sos/eos not allowed")

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    @property
    def interior(self) -> tuple:
        return self.ids[1:-1]


def tokenize(markup: str, vocab: SymbolVocabulary) -> TokenSequence:
    """Whitespace-split `markup` and wrap the looked-up ids with sos/eos.

    Raises UnknownTokenError naming the offending token and its
    (0-based) position among the whitespace-delimited tokens.
    """
    ids = [SOS_ID]
    for pos, tok in enumerate(markup.split()):
        idx = vocab.index_of.get(tok)
        if idx is None:
            raise UnknownTokenError(tok, pos)
        ids.append(idx)
    ids.append(EOS_ID)
    return TokenSequence(tuple(ids))


def detokenize(seq: TokenSequence, vocab: SymbolVocabulary) -> str:
    """Space-joined interior tokens; inverse of tokenize for normalized markup."""
    out = []
    for i in seq.interior:
        if not 0 <= i < len(vocab):
            raise IndexError(f"class id {i} out of range for vocabulary of {len(vocab)}")
        out.append(vocab.tokens[i])
    return " ".join(out)


def counting_ground_truth(seq: TokenSequence, vocab: SymbolVocabulary) -> np.ndarray:
    """Per-class occurrence counts with invisible classes zeroed.

    Returns a float vector of length C; ground-truth entries are
    non-negative integers by construction.
    """
    counts = np.zeros(len(vocab), dtype=np.float32)
    for i in seq.ids:
        if not 0 <= i < len(vocab):
            raise IndexError(f"class id {i} out of range for vocabulary of {len(vocab)}")
        counts[i] += 1.0
    for i in vocab.invisible_ids:
        counts[i] = 0.0
    return counts
