"""Character-level vocabulary."""

from typing import Dict, Iterable, List, Sequence

import numpy as np

PAD, UNK, CLS = "[PAD]", "[UNK]", "[CLS]"
RESERVED = (PAD, UNK, CLS)
PAD_ID, UNK_ID, CLS_ID = 0, 1, 2


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:3]) != RESERVED:
            raise ValueError("vocabulary must start with [PAD], [UNK], [CLS]")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate vocabulary entries")
        self.tokens: List[str] = tokens
        self.index: Dict[str, int] = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        """Characters in order of first appearance; whitespace is skipped."""
        seen = dict.fromkeys(RESERVED)
        for text in texts:
            for ch in text:
                if not ch.isspace():
                    seen.setdefault(ch)
        return cls(list(seen))

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, text: str, max_len: int) -> np.ndarray:
        ids = [self.index.get(ch, UNK_ID) for ch in text if not ch.isspace()][:max_len]
        out = np.full(max_len, PAD_ID, dtype=np.int64)
        out[: len(ids)] = ids
        return out

    def encode_many(self, texts: Sequence[str], max_len: int) -> np.ndarray:
        if not texts:
            return np.zeros((0, max_len), dtype=np.int64)
        return np.stack([self.encode(t, max_len) for t in texts])
