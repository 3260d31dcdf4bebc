"""Small word-piece tokenizer trained on the corpus at hand.

Frequent words are kept whole. Rare words are split greedily into the
longest known prefix piece followed by ``##`` continuation pieces; single
characters seen during training are always in the vocabulary.
"""

from __future__ import annotations

import json
from collections import Counter
from collections.abc import Iterable

PAD, UNK, MASK = "[PAD]", "[UNK]", "[MASK]"
SPECIALS = (PAD, UNK, MASK)


class Tokenizer:
    def __init__(self, vocab: Iterable[str], max_piece: int = 3):
        self.vocab = list(vocab)
        if tuple(self.vocab[: len(SPECIALS)]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        self.index = {tok: i for i, tok in enumerate(self.vocab)}
        if len(self.index) != len(self.vocab):
            raise ValueError("vocabulary contains duplicates")
        self.max_piece = max_piece
        self._cache: dict[str, list[int]] = {}

    def __len__(self) -> int:
        return len(self.vocab)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    @property
    def mask_id(self) -> int:
        return self.index[MASK]

    @classmethod
    def train(cls, texts: Iterable[str], min_count: int = 3, max_piece: int = 3, max_vocab: int = 8000) -> "Tokenizer":
        words = Counter(t.lower() for t in texts if t)
        whole = Counter({w: c for w, c in words.items() if c >= min_count})
        pieces: Counter[str] = Counter()
        chars: set[str] = set()
        for w, c in words.items():
            chars.update(w)
            if c >= min_count:
                continue
            for size in range(1, max_piece + 1):
                if len(w) > size:
                    pieces[w[:size]] += c
                for i in range(1, len(w) - size + 1):
                    pieces["##" + w[i : i + size]] += c
        ranked = [tok for tok, _ in (whole + Counter({p: c for p, c in pieces.items() if c >= min_count})).most_common()]
        base = sorted(chars) + sorted("##" + ch for ch in chars)
        budget = max(max_vocab - len(SPECIALS) - len(base), 0)
        vocab = list(SPECIALS) + base
        seen = set(vocab)
        for tok in ranked:
            if budget == 0:
                break
            if tok not in seen:
                vocab.append(tok)
                seen.add(tok)
                budget -= 1
        return cls(vocab, max_piece)

    def encode_word(self, text: str) -> list[int]:
        text = text.lower()
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        if not text:
            ids = [self.unk_id]
        elif text in self.index:
            ids = [self.index[text]]
        else:
            ids = []
            pos = 0
            while pos < len(text):
                prefix = "##" if pos else ""
                for size in range(min(self.max_piece, len(text) - pos), 0, -1):
                    piece = prefix + text[pos : pos + size]
                    if piece in self.index:
                        ids.append(self.index[piece])
                        pos += size
                        break
                else:
                    ids.append(self.unk_id)
                    pos += 1
        self._cache[text] = ids
        return ids

    def to_json(self) -> str:
        return json.dumps({"vocab": self.vocab, "max_piece": self.max_piece})

    @classmethod
    def from_json(cls, payload: str) -> "Tokenizer":
        obj = json.loads(payload)
        return cls(obj["vocab"], obj["max_piece"])
