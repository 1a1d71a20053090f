"""Lyrics tokenisation and skip-gram embeddings for words and syllables.

Two independent skip-gram models (one over words, one over syllables) are
trained with negative sampling; a lyric position is then represented by the
20-d concatenation ``word_vector | syllable_vector``.
"""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .checkpoint import atomic_write_bytes

DIM = 10
EMBED_DIM = 2 * DIM

_SENTENCE_BREAK = re.compile(r"[\n\r.!?;]+")
_WORD = re.compile(r"[a-z][a-z']*")
_VOWELS = re.compile(r"[aeiouy]")


@dataclass(frozen=True)
class Token:
    text: str
    kind: str  # "word" or "syllable"

    def __post_init__(self):
        if not self.text or any(ch.isspace() for ch in self.text):
            raise ValueError(f"token text must be non-empty without whitespace: {self.text!r}")
        if self.kind not in ("word", "syllable"):
            raise ValueError(f"unknown token kind {self.kind!r}")


class Syllabifier:
    """Dictionary lookup first, hyphenation patterns second.

    The dictionary maps a word to its syllables, typically harvested from
    the aligned training lyrics. Unknown words go through the en_US
    hyphenation patterns; a word the patterns leave whole is one syllable.
    """

    def __init__(self, lexicon: dict[str, Sequence[str]] | None = None):
        import pyphen

        self.lexicon = {w: tuple(s) for w, s in (lexicon or {}).items()}
        self._hyphenator = pyphen.Pyphen(lang="en_US", left=1, right=2)

    def __call__(self, word: str) -> tuple[str, ...]:
        if word in self.lexicon:
            return self.lexicon[word]
        cuts = [0, *self._hyphenator.positions(word), len(word)]
        parts: list[str] = []
        for piece in (word[a:b] for a, b in zip(cuts, cuts[1:]) if b > a):
            # hyphenation points are not syllable boundaries; a fragment
            # without a vowel ("s-tar") belongs to its neighbour
            if parts and not _VOWELS.search(parts[-1]):
                parts[-1] += piece
            elif parts and not _VOWELS.search(piece):
                parts[-1] += piece
            else:
                parts.append(piece)
        return tuple(parts) if "".join(parts) == word else (word,)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "Syllabifier":
        return cls(lexicon_from_pairs(pairs))


def lexicon_from_pairs(pairs: Iterable[tuple[str, str]]) -> dict[str, tuple[str, ...]]:
    """Most frequent syllable split of each word in a (word, syllable) stream."""
    splits: dict[str, Counter] = {}
    current: list[str] = []
    current_word = None
    for word, syl in pairs:
        if current_word == word and "".join(current) != word and word.startswith("".join(current) + syl):
            current.append(syl)
        else:
            current, current_word = [syl], word
        if "".join(current) == word:
            splits.setdefault(word, Counter())[tuple(current)] += 1
    return {w: max(c.items(), key=lambda kv: (kv[1], kv[0]))[0] for w, c in sorted(splits.items())}


def normalize(text: str) -> str:
    return text.lower().replace("’", "'")


def tokenize_sentences(text: str, syllabifier: Syllabifier | None = None
                       ) -> list[list[tuple[Token, Token]]]:
    """(word, syllable) token pairs grouped by sentence/line."""
    syllabifier = syllabifier or Syllabifier()
    out = []
    for sentence in _SENTENCE_BREAK.split(normalize(text)):
        pairs = []
        for raw in _WORD.findall(sentence):
            word = raw.strip("'")
            if not word:
                continue
            w = Token(word, "word")
            pairs.extend((w, Token(s, "syllable")) for s in syllabifier(word))
        if pairs:
            out.append(pairs)
    return out


def tokenize(text: str, syllabifier: Syllabifier | None = None) -> list[tuple[Token, Token]]:
    """Flat (word, syllable) pairs in reading order; '' gives []."""
    return [p for sentence in tokenize_sentences(text, syllabifier) for p in sentence]


# ----------------------------------------------------------------------------
# skip-gram


@dataclass
class EmbeddingTable:
    vocab: dict[str, np.ndarray]
    dimension: int = DIM
    loss_history: list[float] = field(default_factory=list, compare=False)

    def __post_init__(self):
        for tok, vec in self.vocab.items():
            if vec.shape != (self.dimension,) or not np.all(np.isfinite(vec)):
                raise ValueError(f"bad vector for {tok!r}: expected {self.dimension} finite values")

    def __len__(self) -> int:
        return len(self.vocab)

    def __contains__(self, token) -> bool:
        return _text(token) in self.vocab

    def vector(self, token) -> np.ndarray:
        """Vector for ``token``; the zero vector if it is out of vocabulary."""
        vec = self.vocab.get(_text(token))
        return np.zeros(self.dimension) if vec is None else vec

    def dumps(self) -> str:
        lines = [" ".join([tok, *(repr(float(v)) for v in vec)]) for tok, vec in self.vocab.items()]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def loads(cls, text: str, dimension: int = DIM) -> "EmbeddingTable":
        vocab = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dimension + 1:
                raise ValueError(f"line {lineno}: expected token and {dimension} values, got {len(parts) - 1}")
            vocab[parts[0]] = np.array([float(v) for v in parts[1:]])
        return cls(vocab, dimension)

    def save(self, path) -> None:
        atomic_write_bytes(path, self.dumps().encode("utf-8"))

    @classmethod
    def load(cls, path, dimension: int = DIM) -> "EmbeddingTable":
        return cls.loads(Path(path).read_text(encoding="utf-8"), dimension)


def _text(token) -> str:
    return token.text if isinstance(token, Token) else str(token)


def skipgram_epochs(lr0: float, lr_min: float, decay: float) -> int:
    """Epochs until the per-epoch exponential decay reaches ``lr_min``."""
    return int(math.ceil(math.log(lr_min / lr0) / math.log(decay))) + 1


def train_skipgram(sentences: Sequence[Sequence], dim: int = DIM, window: int = 7,
                   neg_alpha: float = 0.75, lr0: float = 0.03, lr_min: float = 0.0007,
                   lr_decay: float = 0.8, negative: int = 5, epochs: int | None = None,
                   batch: int = 64, seed: int = 0) -> EmbeddingTable:
    """Skip-gram with negative sampling, trained by minibatch SGD.

    ``sentences`` are token sequences (strings or :class:`Token`); context
    windows never cross a sentence. The learning rate is ``lr0 * decay**e``
    floored at ``lr_min``; by default training stops at the first epoch that
    reaches the floor. Per-epoch mean loss is kept in ``loss_history``.
    """
    sentences = [[_text(t) for t in s] for s in sentences]
    counts = Counter(t for s in sentences for t in s)
    if len(counts) < 2:
        raise ValueError(f"need at least 2 distinct tokens, got {len(counts)}")
    vocab = sorted(counts, key=lambda t: (-counts[t], t))
    index = {t: i for i, t in enumerate(vocab)}
    freq = np.array([counts[t] for t in vocab], dtype=np.float64) ** neg_alpha
    noise_dist = freq / freq.sum()

    centers, contexts = [], []
    for s in sentences:
        ids = [index[t] for t in s]
        for i, c in enumerate(ids):
            for j in range(max(0, i - window), min(len(ids), i + window + 1)):
                if j != i:
                    centers.append(c)
                    contexts.append(ids[j])
    centers = np.array(centers, dtype=np.int64)
    contexts = np.array(contexts, dtype=np.int64)

    rng = np.random.default_rng(seed)
    w_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(len(vocab), dim))
    w_out = np.zeros((len(vocab), dim))
    if epochs is None:
        epochs = skipgram_epochs(lr0, lr_min, lr_decay)
    history = []
    for epoch in range(epochs):
        lr = max(lr0 * lr_decay ** epoch, lr_min)
        if len(centers) == 0:
            break
        order = rng.permutation(len(centers))
        total = 0.0
        for start in range(0, len(order), batch):
            sel = order[start:start + batch]
            c, o = centers[sel], contexts[sel]
            neg = rng.choice(len(vocab), size=(len(sel), negative), p=noise_dist)
            targets = np.concatenate([o[:, None], neg], axis=1)  # (b, 1+k)
            labels = np.zeros(targets.shape)
            labels[:, 0] = 1.0
            v = w_in[c]  # (b, d)
            u = w_out[targets]  # (b, 1+k, d)
            score = np.einsum("bd,bkd->bk", v, u)
            p = 0.5 * (1.0 + np.tanh(0.5 * score))
            total += float(-np.sum(np.log(np.where(labels > 0, p, 1.0 - p) + 1e-12)))
            err = p - labels  # dloss/dscore
            grad_v = np.einsum("bk,bkd->bd", err, u)
            grad_u = err[:, :, None] * v[:, None, :]
            np.add.at(w_out, targets, -lr * grad_u)
            np.add.at(w_in, c, -lr * grad_v)
        history.append(total / len(centers))
    table = EmbeddingTable({t: w_in[i].copy() for i, t in enumerate(vocab)}, dim)
    table.loss_history = history
    return table


# ----------------------------------------------------------------------------
# concatenated lyric embedding


def embed(word, syllable, word_table: EmbeddingTable, syll_table: EmbeddingTable) -> np.ndarray:
    """20-d ``word_vector | syllable_vector``; unknown tokens contribute zeros."""
    out = np.concatenate([word_table.vector(word), syll_table.vector(syllable)])
    if out.shape != (EMBED_DIM,):
        raise ValueError(f"embedding must have {EMBED_DIM} components, got {out.shape[0]}")
    return out


def embed_sequence(pairs: Sequence[tuple], word_table: EmbeddingTable,
                   syll_table: EmbeddingTable) -> np.ndarray:
    return np.stack([embed(w, s, word_table, syll_table) for w, s in pairs])


def save_tables(directory, word_table: EmbeddingTable, syll_table: EmbeddingTable,
                lexicon: dict[str, Sequence[str]] | None = None) -> None:
    directory = Path(directory)
    word_table.save(directory / "words.txt")
    syll_table.save(directory / "syllables.txt")
    payload = json.dumps({w: list(s) for w, s in sorted((lexicon or {}).items())},
                         sort_keys=True, indent=0)
    atomic_write_bytes(directory / "lexicon.json", payload.encode("utf-8"))


def load_tables(directory) -> tuple[EmbeddingTable, EmbeddingTable, Syllabifier]:
    directory = Path(directory)
    lexicon_path = directory / "lexicon.json"
    lexicon = json.loads(lexicon_path.read_text()) if lexicon_path.exists() else {}
    return (
        EmbeddingTable.load(directory / "words.txt"),
        EmbeddingTable.load(directory / "syllables.txt"),
        Syllabifier(lexicon),
    )
