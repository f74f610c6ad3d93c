"""Text normalization, n-gram feature extraction, and vocabulary building.

The normalization rules are deliberately simple and deterministic:
lower-casing, whitespace tokenization with punctuation runs split off,
digit masking for number-heavy tokens, a wildcard for very long words,
and explicit sentence boundary tokens. Features are unigram and bigram
ids looked up in a fixed vocabulary, with out-of-vocabulary items mapped
to a stable hash bucket so repeated runs agree bit for bit.
"""

from __future__ import annotations

import hashlib
import io
import re
import unicodedata
import zlib
from collections import Counter
from dataclasses import dataclass, field

from .errors import EmptyCorpus, ParseError

# Out-of-vocabulary features hash into buckets 0..50000; vocabulary ids
# start above that range so the two can never collide.
OOV_BUCKETS = 50001
VOCAB_ID_BASE = OOV_BUCKETS

SENT_START = "<s>"
SENT_END = "</s>"
LONGWORD = "LONGWORD"
MAX_TOKEN_LEN = 16
DIGIT_MASK_THRESHOLD = 5

VOCAB_HEADER = "#polyfind-vocab v1"

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
_DIGITS = re.compile(r"\d")

Token = str


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _split_punct(word: str) -> list[str]:
    """Split leading/trailing punctuation runs off a word.

    A word that is entirely punctuation stays a single token, so masked
    number tokens like ``#####`` survive re-normalization unchanged.
    """
    i = 0
    while i < len(word) and _is_punct(word[i]):
        i += 1
    j = len(word)
    while j > i and _is_punct(word[j - 1]):
        j -= 1
    if i == j:
        return [word]
    parts = []
    if i > 0:
        parts.append(word[:i])
    parts.append(word[i:j])
    if j < len(word):
        parts.append(word[j:])
    return parts


def _normalize_word(word: str) -> str:
    if word == LONGWORD:
        # Keep the wildcard literal so normalize is idempotent.
        return word
    word = word.lower()
    if len(_DIGITS.findall(word)) >= DIGIT_MASK_THRESHOLD:
        word = _DIGITS.sub("#", word)
    if len(word) > MAX_TOKEN_LEN:
        return LONGWORD
    return word


def normalize(text: str) -> list[Token]:
    """Normalize raw text into a flat token list with sentence boundaries.

    Each detected sentence is wrapped in ``<s>`` ... ``</s>``. Tokens with
    five or more digits have every digit replaced by ``#``; tokens still
    longer than 16 characters become the literal ``LONGWORD``. Empty input
    yields an empty list.
    """
    tokens: list[Token] = []
    for sentence in _SENTENCE_SPLIT.split(text.strip()):
        words: list[str] = []
        for raw in sentence.split():
            for piece in _split_punct(raw):
                words.append(_normalize_word(piece))
        if not words:
            continue
        tokens.append(SENT_START)
        tokens.extend(words)
        tokens.append(SENT_END)
    return tokens


def segments(tokens: list[Token]) -> list[list[Token]]:
    """Group a normalized token list into its sentence segments."""
    segs: list[list[Token]] = []
    current: list[Token] = []
    for tok in tokens:
        current.append(tok)
        if tok == SENT_END:
            segs.append(current)
            current = []
    if current:
        segs.append(current)
    return segs


def oov_bucket(feature: str) -> int:
    """Stable hash bucket in [0, 50000] for an out-of-vocab feature."""
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % OOV_BUCKETS


@dataclass(frozen=True)
class FeatureSet:
    """Unigram and bigram feature ids for one piece of text."""

    unigrams: tuple[int, ...] = ()
    bigrams: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.unigrams) + len(self.bigrams)


@dataclass
class Vocab:
    """Frozen n-gram vocabulary with dense ids above the OOV bucket range.

    ``unigram_ids`` maps token -> (id, count); ``bigram_ids`` maps
    (tok1, tok2) -> (id, count). Ids are dense per kind starting at
    VOCAB_ID_BASE, assigned by descending count with lexicographic
    tie-breaking, so identical corpora produce identical vocabularies.
    """

    unigram_ids: dict[str, tuple[int, int]] = field(default_factory=dict)
    bigram_ids: dict[tuple[str, str], tuple[int, int]] = field(default_factory=dict)
    min_count: int = 10
    max_bigrams: int = 200_000

    @property
    def n_unigrams(self) -> int:
        return len(self.unigram_ids)

    @property
    def n_bigrams(self) -> int:
        return len(self.bigram_ids)

    def unigram_rows(self) -> int:
        """Embedding-table row count needed for unigram features."""
        return VOCAB_ID_BASE + len(self.unigram_ids)

    def bigram_rows(self) -> int:
        return VOCAB_ID_BASE + len(self.bigram_ids)

    def unigram_id(self, token: str) -> int:
        entry = self.unigram_ids.get(token)
        return entry[0] if entry is not None else oov_bucket(token)

    def bigram_id(self, pair: tuple[str, str]) -> int:
        entry = self.bigram_ids.get(pair)
        return entry[0] if entry is not None else oov_bucket(" ".join(pair))

    def checksum(self) -> int:
        """CRC32 over the canonical serialization, for model/vocab pairing."""
        buf = io.StringIO()
        _write_vocab(self, buf)
        return zlib.crc32(buf.getvalue().encode("utf-8")) & 0xFFFFFFFF


def extract(tokens: list[Token], vocab: Vocab) -> FeatureSet:
    """Look up unigram and bigram ids for a normalized token list.

    Bigrams pair adjacent tokens within a sentence segment and never
    cross a ``</s>`` ``<s>`` boundary. Unknown features fall into the
    shared OOV bucket range.
    """
    unigrams = tuple(vocab.unigram_id(tok) for tok in tokens)
    bigrams: list[int] = []
    for seg in segments(tokens):
        for a, b in zip(seg, seg[1:]):
            bigrams.append(vocab.bigram_id((a, b)))
    return FeatureSet(unigrams=unigrams, bigrams=tuple(bigrams))


def featurize(text: str, vocab: Vocab) -> FeatureSet:
    """Convenience: normalize then extract."""
    return extract(normalize(text), vocab)


def merge_features(parts) -> FeatureSet:
    """Concatenate feature sets as separately-bounded sentences.

    Used to join dialogue-history pieces: each part keeps its own
    sentence boundaries, so no bigram ever spans two pieces.
    """
    unigrams: list[int] = []
    bigrams: list[int] = []
    for part in parts:
        unigrams.extend(part.unigrams)
        bigrams.extend(part.bigrams)
    return FeatureSet(unigrams=tuple(unigrams), bigrams=tuple(bigrams))


def build_vocab(corpus, min_count: int = 10, max_bigrams: int = 200_000) -> Vocab:
    """Count n-grams over a stream of raw strings and freeze a vocabulary.

    Unigrams below ``min_count`` are dropped, except the sentence boundary
    tokens, which are always kept. Bigrams keep the ``max_bigrams`` most
    frequent entries. Ties break lexicographically so the result is a
    deterministic function of the corpus.

    Raises:
        EmptyCorpus: if the corpus contains no tokens at all.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    uni_counts: Counter[str] = Counter()
    bi_counts: Counter[tuple[str, str]] = Counter()
    for text in corpus:
        tokens = normalize(text)
        uni_counts.update(tokens)
        for seg in segments(tokens):
            bi_counts.update(zip(seg, seg[1:]))
    if not uni_counts:
        raise EmptyCorpus("no tokens survived normalization")

    kept_unis = {
        tok: count
        for tok, count in uni_counts.items()
        if count >= min_count or tok in (SENT_START, SENT_END)
    }
    uni_order = sorted(kept_unis.items(), key=lambda kv: (-kv[1], kv[0]))
    unigram_ids = {
        tok: (VOCAB_ID_BASE + i, count) for i, (tok, count) in enumerate(uni_order)
    }

    bi_order = sorted(bi_counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_bigrams]
    bigram_ids = {
        pair: (VOCAB_ID_BASE + i, count) for i, (pair, count) in enumerate(bi_order)
    }

    return Vocab(
        unigram_ids=unigram_ids,
        bigram_ids=bigram_ids,
        min_count=min_count,
        max_bigrams=max_bigrams,
    )


def _write_vocab(vocab: Vocab, fh) -> None:
    fh.write(VOCAB_HEADER + "\n")
    for tok, (fid, count) in sorted(vocab.unigram_ids.items(), key=lambda kv: kv[1][0]):
        fh.write(f"U\t{tok}\t{fid}\t{count}\n")
    for pair, (fid, count) in sorted(vocab.bigram_ids.items(), key=lambda kv: kv[1][0]):
        fh.write(f"B\t{pair[0]} {pair[1]}\t{fid}\t{count}\n")


def save_vocab(vocab: Vocab, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        _write_vocab(vocab, fh)


def load_vocab(path) -> Vocab:
    unigram_ids: dict[str, tuple[int, int]] = {}
    bigram_ids: dict[tuple[str, str], tuple[int, int]] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != VOCAB_HEADER:
            raise ParseError(f"expected header {VOCAB_HEADER!r}, got {header!r}", line=1)
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError("expected kind<TAB>feature<TAB>id<TAB>count", line=lineno)
            kind, feature, fid_s, count_s = parts
            try:
                fid, count = int(fid_s), int(count_s)
            except ValueError:
                raise ParseError("id and count must be integers", line=lineno) from None
            if kind == "U":
                unigram_ids[feature] = (fid, count)
            elif kind == "B":
                toks = feature.split(" ")
                if len(toks) != 2:
                    raise ParseError("bigram feature must be 'tok1 tok2'", line=lineno)
                bigram_ids[(toks[0], toks[1])] = (fid, count)
            else:
                raise ParseError(f"unknown kind {kind!r}", line=lineno)
    return Vocab(unigram_ids=unigram_ids, bigram_ids=bigram_ids)
