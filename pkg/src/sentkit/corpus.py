"""Corpus data model: parsed sentences, IOB2 codecs, embeddings, lexicons, BOW series.

Everything here is immutable after loading and safe to share across workers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

# 6 basic word classes plus a catch-all for anything richer taggers emit.
POS_CLASSES = ("noun", "verb", "adjective", "adverb", "preposition", "conjunction", "other")
IOB2_TAGS = ("B-A", "I-A", "O")


class CorpusError(ValueError):
    """Malformed corpus/embedding/lexicon input."""


@dataclass(frozen=True)
class Token:
    surface: str
    pos: str = "other"
    head: int | None = None  # 0-based index of dependency head within the sentence
    deprel: str = ""
    tag: str | None = None  # gold IOB2 tag, if annotated


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]
    doc_id: str = ""
    position: int = 0  # time instant t within the document
    label: str | None = None  # subjectivity label when present

    def __len__(self) -> int:
        return len(self.tokens)

    def words(self) -> list[str]:
        return [t.surface.lower() for t in self.tokens]

    def tags(self) -> list[str]:
        return [t.tag if t.tag is not None else "O" for t in self.tokens]


@dataclass(frozen=True)
class Document:
    doc_id: str
    sentences: tuple[Sentence, ...]


@dataclass(frozen=True, order=True)
class AspectSpan:
    """Half-open token span [start, end) marking one aspect chunk."""

    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span ({self.start},{self.end})")


def _hash_vector(word: str, dim: int, seed: int) -> np.ndarray:
    # Stable across processes: never use builtin hash() here.
    digest = hashlib.blake2b(f"{seed}\x00{word}".encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.uniform(-0.01, 0.01, dim)


class EmbeddingTable:
    """Word -> d-vector lookup. Lookup is total: misses fall back to `unk_policy`.

    unk_policy "seeded-hash" gives every unknown word a fixed pseudo-random
    vector in +-0.01 (deterministic for a given seed); "zero" gives zeros.
    """

    def __init__(self, dim: int, entries: dict[str, np.ndarray] | None = None,
                 unk_policy: str = "seeded-hash", seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be positive")
        if unk_policy not in ("zero", "seeded-hash"):
            raise ValueError(f"unknown unk_policy {unk_policy!r}")
        self.dim = dim
        self.entries: dict[str, np.ndarray] = {}
        self.unk_policy = unk_policy
        self.seed = seed
        for word, vec in (entries or {}).items():
            vec = np.asarray(vec, dtype=float)
            if vec.shape != (dim,):
                raise CorpusError(f"vector for {word!r} has length {vec.size}, expected {dim}")
            self.entries[word] = vec

    def __contains__(self, word: str) -> bool:
        return word in self.entries or word.lower() in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, word: str) -> np.ndarray:
        vec = self.entries.get(word)
        if vec is None:
            vec = self.entries.get(word.lower())
        if vec is not None:
            return vec
        if self.unk_policy == "zero":
            return np.zeros(self.dim)
        return _hash_vector(word, self.dim, self.seed)


@dataclass(frozen=True)
class Lexicon:
    """A set of (word, pos) pairs; pos may be '*' to match any class."""

    entries: frozenset[tuple[str, str]]
    kind: str = "subjectivity-clues"

    def contains(self, word: str, pos: str | None = None) -> bool:
        w = word.lower()
        if pos is None:
            return any(e[0] == w for e in self.entries)
        return (w, pos) in self.entries or (w, "*") in self.entries

    def words(self) -> list[str]:
        return sorted({w for w, _ in self.entries})


@dataclass
class BowTimeSeries:
    """Word-frequency matrix over a sentence sequence: matrix[i, t] = count of vocab[i] in s(t)."""

    vocab: list[str]
    matrix: np.ndarray  # N x T

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.vocab):
            raise ValueError("matrix must be N x T with N = len(vocab)")

    @property
    def n_instants(self) -> int:
        return self.matrix.shape[1]


# ---------------------------------------------------------------------------
# Parsed-corpus TSV
#
# One token per line: surface  pos  head  deprel  tag
#   head is 1-based, 0 for root; tag is "_" when absent.
# Blank lines end a sentence; "# doc <id>" starts a new document and
# "# label <label>" attaches a label to the following sentence.
# ---------------------------------------------------------------------------

def normalize_pos(raw: str, pos_map: dict[str, str] | None = None) -> str:
    """Project a tagger-specific POS onto the 7-class alphabet (unknown -> other)."""
    if pos_map and raw in pos_map:
        raw = pos_map[raw]
    low = raw.lower()
    return low if low in POS_CLASSES else "other"


def load_pos_map(path) -> dict[str, str]:
    """Read a whitespace-separated 'raw_tag class' projection file."""
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise CorpusError(f"{path}:{lineno}: expected 'raw class'")
            if parts[1].lower() not in POS_CLASSES:
                raise CorpusError(f"{path}:{lineno}: unknown target class {parts[1]!r}")
            mapping[parts[0]] = parts[1].lower()
    return mapping


def _finish_sentence(rows, doc_id, position, label, path):
    tokens = []
    n = len(rows)
    for lineno, parts in rows:
        surface, pos, head_s, deprel, tag = parts
        try:
            head_raw = int(head_s)
        except ValueError:
            raise CorpusError(f"{path}:{lineno}: head {head_s!r} is not an integer") from None
        if head_raw < 0 or head_raw > n:
            raise CorpusError(f"{path}:{lineno}: head index {head_raw} outside sentence of {n} tokens")
        head = None if head_raw == 0 else head_raw - 1
        if head is not None and head == len(tokens):
            raise CorpusError(f"{path}:{lineno}: token is its own head")
        if tag == "_":
            tag = None
        elif tag not in IOB2_TAGS:
            raise CorpusError(f"{path}:{lineno}: unknown IOB2 tag {tag!r}")
        tokens.append(Token(surface=surface, pos=pos, head=head, deprel=deprel, tag=tag))
    return Sentence(tokens=tuple(tokens), doc_id=doc_id, position=position, label=label)


def load_parsed_corpus(path, pos_map: dict[str, str] | None = None) -> list[Document]:
    """Load the tab-separated parsed corpus format into Documents."""
    docs: list[Document] = []
    cur_doc_id = None
    cur_sentences: list[Sentence] = []
    rows: list[tuple[int, list[str]]] = []
    pending_label = None

    def close_sentence():
        nonlocal rows, pending_label, cur_doc_id
        if not rows:
            return
        if cur_doc_id is None:
            cur_doc_id = "d0"
        sent = _finish_sentence(rows, cur_doc_id, len(cur_sentences), pending_label, path)
        cur_sentences.append(sent)
        rows = []
        pending_label = None

    def close_doc():
        nonlocal cur_sentences, cur_doc_id
        close_sentence()
        if cur_doc_id is not None:
            docs.append(Document(doc_id=cur_doc_id, sentences=tuple(cur_sentences)))
        cur_sentences = []
        cur_doc_id = None

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line.startswith("# doc"):
                close_doc()
                cur_doc_id = line[5:].strip() or f"d{len(docs)}"
                continue
            if line.startswith("# label"):
                pending_label = line[7:].strip()
                continue
            if line.startswith("#"):
                continue
            if not line.strip():
                close_sentence()
                continue
            parts = line.split()
            if len(parts) != 5:
                raise CorpusError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            parts[1] = normalize_pos(parts[1], pos_map)
            rows.append((lineno, parts))
    close_doc()
    return docs


def write_parsed_corpus(docs, path):
    """Inverse of load_parsed_corpus (tags written as '_' when absent)."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(f"# doc {doc.doc_id}\n")
            for sent in doc.sentences:
                if sent.label is not None:
                    fh.write(f"# label {sent.label}\n")
                for tok in sent.tokens:
                    head = 0 if tok.head is None else tok.head + 1
                    tag = tok.tag if tok.tag is not None else "_"
                    fh.write(f"{tok.surface}\t{tok.pos}\t{head}\t{tok.deprel or '_'}\t{tag}\n")
                fh.write("\n")


def sentences_of(docs) -> list[Sentence]:
    return [s for d in docs for s in d.sentences]


# ---------------------------------------------------------------------------
# IOB2 codec
# ---------------------------------------------------------------------------

def iob2_decode(tags) -> set[AspectSpan]:
    """Chunk a B-A/I-A/O sequence into spans.

    Total on the 3-tag alphabet: an I-A with no open chunk starts one
    (standard IOB2 leniency).
    """
    spans = set()
    start = None
    for i, tag in enumerate(tags):
        if tag not in IOB2_TAGS:
            raise CorpusError(f"unknown IOB2 tag {tag!r} at position {i}")
        if tag == "B-A":
            if start is not None:
                spans.add(AspectSpan(start, i))
            start = i
        elif tag == "I-A":
            if start is None:
                start = i
        else:
            if start is not None:
                spans.add(AspectSpan(start, i))
                start = None
    if start is not None:
        spans.add(AspectSpan(start, len(list(tags))))
    return spans


def iob2_encode(spans, length: int) -> list[str]:
    """Render non-overlapping spans as a B-A/I-A/O sequence of the given length."""
    tags = ["O"] * length
    for span in sorted(spans):
        if span.end > length:
            raise CorpusError(f"span ({span.start},{span.end}) exceeds length {length}")
        for i in range(span.start, span.end):
            if tags[i] != "O":
                raise CorpusError(f"overlapping spans at token {i}")
            tags[i] = "B-A" if i == span.start else "I-A"
    return tags


# ---------------------------------------------------------------------------
# Embeddings / lexicons / BOW
# ---------------------------------------------------------------------------

def load_embeddings(path, dim: int, unk_policy: str = "seeded-hash", seed: int = 0) -> EmbeddingTable:
    """Load 'word v1 ... vd' text embeddings."""
    entries: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if len(values) != dim:
                raise CorpusError(
                    f"{path}:{lineno}: word {word!r} has {len(values)} values, expected {dim}")
            entries[word] = np.array([float(v) for v in values])
    return EmbeddingTable(dim=dim, entries=entries, unk_policy=unk_policy, seed=seed)


def write_embeddings(table: EmbeddingTable, path):
    with open(path, "w", encoding="utf-8") as fh:
        for word in sorted(table.entries):
            vals = " ".join(repr(float(v)) for v in table.entries[word])
            fh.write(f"{word} {vals}\n")


def load_lexicon(path, kind: str = "subjectivity-clues") -> Lexicon:
    """Load a 'word<TAB>pos' lexicon; pos '*' matches any class."""
    entries = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) == 1:
                parts.append("*")
            word, pos = parts[0].lower(), parts[1].lower()
            if pos != "*" and pos not in POS_CLASSES:
                raise CorpusError(f"{path}:{lineno}: unknown POS class {pos!r}")
            entries.add((word, pos))
    return Lexicon(entries=frozenset(entries), kind=kind)


def build_bow_series(sentences, vocab) -> BowTimeSeries:
    """Count vocab items per sentence; multiword vocab entries count n-gram starts."""
    if isinstance(vocab, Lexicon):
        vocab = vocab.words()
    vocab = list(vocab)
    if not vocab:
        raise ValueError("vocab must be non-empty")
    sentences = list(sentences)
    matrix = np.zeros((len(vocab), len(sentences)))
    split_vocab = [v.lower().split() for v in vocab]
    for t, sent in enumerate(sentences):
        words = sent.words()
        for i, parts in enumerate(split_vocab):
            n = len(parts)
            if n == 1:
                matrix[i, t] = sum(1 for w in words if w == parts[0])
            else:
                matrix[i, t] = sum(
                    1 for p in range(len(words) - n + 1) if words[p:p + n] == parts)
    return BowTimeSeries(vocab=vocab, matrix=matrix)
