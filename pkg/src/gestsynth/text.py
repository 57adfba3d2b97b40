"""Whitespace tokenizer over the corpus vocabulary.

A BERT-style subword tokenizer can be swapped in by matching the encode()
contract; ids 0 and 1 are reserved for padding and unknown words.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DataError

PAD_ID = 0
UNK_ID = 1
MAX_TEXT_LEN = 20


@dataclass
class Tokenizer:
    vocab: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_texts(cls, texts) -> "Tokenizer":
        words = sorted({w for t in texts for w in t.lower().split()})
        vocab = {"<pad>": PAD_ID, "<unk>": UNK_ID}
        for w in words:
            vocab[w] = len(vocab)
        return cls(vocab)

    @property
    def size(self) -> int:
        return len(self.vocab)

    def encode(self, text: str, max_len: int = MAX_TEXT_LEN) -> list[int]:
        """Token ids, truncated to max_len. No padding; callers pad batches."""
        words = text.lower().split()
        if not words:
            raise DataError("cannot encode an empty transcript")
        ids = [self.vocab.get(w, UNK_ID) for w in words]
        return ids[:max_len]

    def pad_batch(self, sequences: list[list[int]], max_len: int = MAX_TEXT_LEN):
        """(ids, lengths) lists padded to the longest sequence (capped)."""
        cap = min(max(len(s) for s in sequences), max_len)
        ids = [(s[:cap] + [PAD_ID] * (cap - len(s[:cap]))) for s in sequences]
        lengths = [min(len(s), cap) for s in sequences]
        return ids, lengths

    def to_dict(self) -> dict:
        return dict(self.vocab)

    @classmethod
    def from_dict(cls, d: dict) -> "Tokenizer":
        return cls({str(k): int(v) for k, v in d.items()})
