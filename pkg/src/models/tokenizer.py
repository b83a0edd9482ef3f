"""
Word-level tokenizer over the closed caption/prompt vocabulary
"""
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import torch

from data.scenes import caption_vocabulary
from utils.config import DEGRADATION_LABELS

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1
DEFAULT_MAX_LENGTH = 12


@dataclass(frozen=True)
class TokenSequence:
    ids: Tuple[int, ...]
    length: int


class Vocabulary:
    """Fixed vocabulary; ids 0 and 1 are reserved for padding and unknown words"""

    def __init__(self, words: Iterable[str]):
        self.words: List[str] = [PAD_TOKEN, UNK_TOKEN]
        for word in words:
            if word not in self.words:
                self.words.append(word)
        self._index: Dict[str, int] = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def id_of(self, word: str) -> int:
        return self._index.get(word, UNK_ID)

    @classmethod
    def default(cls) -> "Vocabulary":
        return cls(list(caption_vocabulary()) + ["a", "photo"] + list(DEGRADATION_LABELS))


_DEFAULT_VOCAB: Optional[Vocabulary] = None


def default_vocabulary() -> Vocabulary:
    global _DEFAULT_VOCAB
    if _DEFAULT_VOCAB is None:
        _DEFAULT_VOCAB = Vocabulary.default()
    return _DEFAULT_VOCAB


def tokenize(text: str, vocab: Optional[Vocabulary] = None,
             max_length: int = DEFAULT_MAX_LENGTH) -> TokenSequence:
    """Lower-case whitespace split, UNK for unknown words, truncate and pad to max_length"""
    vocab = vocab or default_vocabulary()
    ids = [vocab.id_of(w) for w in text.lower().split()][:max_length]
    length = len(ids)
    return TokenSequence(ids=tuple(ids + [PAD_ID] * (max_length - length)), length=length)


def tokenize_batch(texts: Sequence[str], vocab: Optional[Vocabulary] = None,
                   max_length: int = DEFAULT_MAX_LENGTH) -> Tuple[torch.Tensor, torch.Tensor]:
    """Token ids [N, max_length] and lengths [N]"""
    sequences = [tokenize(t, vocab, max_length) for t in texts]
    ids = torch.tensor([s.ids for s in sequences], dtype=torch.long).reshape(len(sequences), max_length)
    lengths = torch.tensor([s.length for s in sequences], dtype=torch.long)
    return ids, lengths
