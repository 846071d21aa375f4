"""Word-level tokenizer and vocabulary file handling.

The vocabulary file is UTF-8 with one token per line; the line index is the
token id.  Ids 0-3 are reserved for the special tokens below.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, CLS, MASK = "[PAD]", "[UNK]", "[CLS]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, MASK)
PAD_ID, UNK_ID, CLS_ID, MASK_ID = range(4)

_WORD = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _WORD.findall(text.lower())


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        self.index = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.index:
                raise ValueError(f"duplicate vocabulary entry {tok!r}")
            self.index[tok] = i

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def build(cls, texts: Iterable[str], max_size: int = 8192) -> "Vocabulary":
        """Most frequent words first, ties broken alphabetically."""
        counts = Counter(w for t in texts for w in tokenize(t))
        words = sorted(counts, key=lambda w: (-counts[w], w))
        return cls(list(SPECIALS) + words[: max(0, max_size - len(SPECIALS))])

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    def encode(self, text: str, max_len: int) -> list[int]:
        """``[CLS]`` followed by word ids, truncated to ``max_len``."""
        ids = [CLS_ID] + [self.index.get(w, UNK_ID) for w in tokenize(text)]
        return ids[:max_len]


def pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id lists into ``(ids, mask)`` arrays of shape ``(B, n_max)``."""
    if not seqs:
        raise ValueError("empty batch")
    n = max(len(s) for s in seqs)
    if n == 0:
        raise ValueError("empty sequence in batch")
    ids = np.full((len(seqs), n), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask
