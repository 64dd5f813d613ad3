"""WordPiece tokenization with BERT-style special-token framing.

A vocabulary is a plain text file, one token per line, id = line index.
Sub-word continuation pieces carry the ``##`` prefix. Tokenization is
lowercase, splits on whitespace and punctuation (punctuation survives as
single-char tokens), then greedy longest-match-first within each word.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
_SPECIALS = (PAD, UNK, CLS, SEP)
CONT = "##"


class VocabularyError(ValueError):
    pass


@dataclass
class Vocabulary:
    tokens: list[str]
    token_to_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.token_to_id = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.token_to_id:
                raise VocabularyError(
                    f"duplicate token {tok!r} on lines {self.token_to_id[tok] + 1} and {i + 1}"
                )
            self.token_to_id[tok] = i
        missing = [s for s in _SPECIALS if s not in self.token_to_id]
        if missing:
            raise VocabularyError(f"vocabulary missing special tokens: {', '.join(missing)}")
        self.pad_id = self.token_to_id[PAD]
        self.unk_id = self.token_to_id[UNK]
        self.cls_id = self.token_to_id[CLS]
        self.sep_id = self.token_to_id[SEP]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id[token]


def load_vocab(path) -> Vocabulary:
    """Read a UTF-8 vocab file, one token per line (line index = token id)."""
    with open(path, encoding="utf-8") as f:
        tokens = [line.rstrip("\n") for line in f]
    if tokens and tokens[-1] == "":
        tokens.pop()  # trailing newline, not an empty token
    return Vocabulary(tokens)


def save_vocab(tokens: list[str], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for tok in tokens:
            f.write(tok + "\n")


def _is_punct(ch: str) -> bool:
    # ASCII symbol ranges count too ('$', '@', ...), matching uncased BERT
    o = ord(ch)
    if 33 <= o <= 47 or 58 <= o <= 64 or 91 <= o <= 96 or 123 <= o <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def pre_tokenize(text: str) -> list[str]:
    """Lowercase and split into words, punctuation as single-char tokens."""
    out: list[str] = []
    buf: list[str] = []
    for ch in text.lower():
        if ch.isspace():
            if buf:
                out.append("".join(buf))
                buf = []
        elif _is_punct(ch):
            if buf:
                out.append("".join(buf))
                buf = []
            out.append(ch)
        else:
            buf.append(ch)
    if buf:
        out.append("".join(buf))
    return out


def _split_word(word: str, vocab: Vocabulary) -> list[str]:
    pieces: list[str] = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while end > start:
            cand = word[start:end]
            if start > 0:
                cand = CONT + cand
            if cand in vocab:
                piece = cand
                break
            end -= 1
        if piece is None:
            return [UNK]
        pieces.append(piece)
        start = end
    return pieces


def wordpiece(text: str, vocab: Vocabulary) -> list[str]:
    """Tokenize ``text`` into vocab pieces; unmatchable words become [UNK]."""
    out: list[str] = []
    for word in pre_tokenize(text):
        out.extend(_split_word(word, vocab))
    return out


@dataclass
class TokenSequence:
    ids: list[int]
    attention_mask: list[int]
    n_tokens: int  # content token count before truncation


def encode(subject: str, body: str, vocab: Vocabulary, max_len: int = 128,
           truncate: str = "head") -> TokenSequence:
    """Tokenize subject+body, frame with [CLS]/[SEP], truncate, pad to max_len.

    ``truncate="head"`` keeps the first max_len-2 content tokens, ``"tail"``
    the last ones.
    """
    if max_len < 3:
        raise ValueError(f"max_len must be >= 3, got {max_len}")
    if truncate not in ("head", "tail"):
        raise ValueError(f"truncate must be 'head' or 'tail', got {truncate!r}")
    content = wordpiece(subject + " " + body, vocab)
    n_tokens = len(content)
    budget = max_len - 2
    if n_tokens > budget:
        content = content[:budget] if truncate == "head" else content[-budget:]
    ids = [vocab.cls_id] + [vocab.id_of(t) for t in content] + [vocab.sep_id]
    mask = [1] * len(ids)
    pad = max_len - len(ids)
    ids.extend([vocab.pad_id] * pad)
    mask.extend([0] * pad)
    return TokenSequence(ids=ids, attention_mask=mask, n_tokens=n_tokens)


def decode(ids: list[int], vocab: Vocabulary) -> str:
    """Inverse of encode up to normalization: drop specials, merge ## pieces."""
    words: list[str] = []
    for i in ids:
        tok = vocab.tokens[i]
        if tok in _SPECIALS:
            continue
        if tok.startswith(CONT) and words:
            words[-1] += tok[len(CONT):]
        else:
            words.append(tok)
    return " ".join(words)
