"""Word-level tokenizer with guaranteed single-token answer words.

Text is split into words, punctuation runs, and atomic ``<id>`` tokens. A
word-level vocabulary keeps the embedding table small and ensures "yes" and
"no" are always exactly one token each, which the yes/no logit lookup
requires.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DecodeError, VocabError
from .ktlp import KtlpExample, PromptTemplate, RepresentationMode, format_example
from .data import Exercise, StudentHistory, Interaction

_TOKEN_RE = re.compile(r"<[^<>\s]+>|\w+|[^\w\s]+")

SPECIAL_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")


def tokenize(text: str) -> list[str]:
    """Split text into words, punctuation runs, and atomic <id> tokens."""
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class TokenizerVocab:
    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return self.token_to_id["<pad>"]

    @property
    def unk_id(self) -> int:
        return self.token_to_id["<unk>"]

    @property
    def bos_id(self) -> int:
        return self.token_to_id["<bos>"]

    @property
    def eos_id(self) -> int:
        return self.token_to_id["<eos>"]

    def answer_ids(self, template: PromptTemplate = PromptTemplate()) -> tuple[int, int]:
        """ids of (negative, positive) answer words; VocabError if missing."""
        ids = []
        for word in template.answer_words:
            toks = tokenize(word)
            if len(toks) != 1 or toks[0] not in self.token_to_id:
                raise VocabError(f"answer word {word!r} is not a single in-vocabulary token")
            ids.append(self.token_to_id[toks[0]])
        if ids[0] == ids[1]:
            raise VocabError("answer words map to the same token id")
        return ids[0], ids[1]

    def content_hash(self) -> str:
        return hashlib.sha256(json.dumps(list(self.id_to_token)).encode()).hexdigest()


def build_vocab(corpus: Sequence[KtlpExample], extra_id_tokens: Iterable[str] = ()) -> TokenizerVocab:
    """Build a word-level vocabulary over a formatted corpus.

    Token order is deterministic: the four specials, then tokens by
    descending frequency with lexicographic tie-break. Answer words and
    ``extra_id_tokens`` are always included.
    """
    if not corpus:
        raise VocabError("cannot build a vocabulary from an empty corpus")
    counts: dict[str, int] = {}
    for ex in corpus:
        for tok in tokenize(ex.input_text) + tokenize(ex.output_text):
            counts[tok] = counts.get(tok, 0) + 1
    for word in ("yes", "no"):
        counts.setdefault(word, 0)
    for tok in extra_id_tokens:
        counts.setdefault(tok, 0)
    ordered = sorted(counts, key=lambda t: (-counts[t], t))
    id_to_token = SPECIAL_TOKENS + tuple(t for t in ordered if t not in SPECIAL_TOKENS)
    return TokenizerVocab(
        token_to_id={t: i for i, t in enumerate(id_to_token)},
        id_to_token=id_to_token,
    )


def encode(text: str, vocab: TokenizerVocab) -> list[int]:
    unk = vocab.unk_id
    return [vocab.token_to_id.get(tok, unk) for tok in tokenize(text)]


def decode(ids: Sequence[int], vocab: TokenizerVocab) -> str:
    toks = []
    for i in ids:
        if not 0 <= int(i) < vocab.size:
            raise DecodeError(f"token id {i} out of range for vocabulary of size {vocab.size}")
        toks.append(vocab.id_to_token[int(i)])
    return " ".join(toks)


def save_vocab(vocab: TokenizerVocab, path) -> None:
    payload = {
        "tokens": dict(vocab.token_to_id),
        "special_tokens": {
            "pad": "<pad>",
            "unk": "<unk>",
            "bos": "<bos>",
            "eos": "<eos>",
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=1)


def load_vocab(path) -> TokenizerVocab:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    token_to_id = {t: int(i) for t, i in payload["tokens"].items()}
    id_to_token = [""] * len(token_to_id)
    for t, i in token_to_id.items():
        id_to_token[i] = t
    return TokenizerVocab(token_to_id=token_to_id, id_to_token=tuple(id_to_token))


def build_domain_vocab(
    kc_tables: Sequence[dict[str, str]],
    template: PromptTemplate = PromptTemplate(),
    mode: RepresentationMode = RepresentationMode.DESCRIPTION,
) -> TokenizerVocab:
    """Vocabulary covering a domain's KC language without touching student data.

    A synthetic mini-corpus is formatted from the KC tables alone (one pair
    per KC and correctness word), so the vocabulary spans every KC name or
    id token, the template delimiters, and the answer words. Cross-domain
    runs pass several KC tables to get the union vocabulary.
    """
    mode = RepresentationMode(mode)
    corpus: list[KtlpExample] = []
    extra: list[str] = []
    for table in kc_tables:
        for kc_id in sorted(table):
            ex = Exercise(exercise_id=f"probe-{kc_id}", kc_id=kc_id, kc_name=table[kc_id])
            for correct in (0, 1):
                hist = StudentHistory(
                    "vocab",
                    (
                        Interaction(
                            student_id="vocab",
                            step=0,
                            exercise_id=ex.exercise_id,
                            kc_id=kc_id,
                            kc_name=table[kc_id],
                            correct=correct,
                        ),
                    ),
                )
                corpus.append(format_example(hist, ex, mode, template, label=correct))
            if mode == RepresentationMode.ID:
                extra.append(f"<{kc_id}>")
    return build_vocab(corpus, extra_id_tokens=extra)
