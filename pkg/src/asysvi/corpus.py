"""Sparse bag-of-words corpora and the UCI docword/vocab file format.

The UCI layout is three header lines (D, W, NNZ) followed by NNZ lines of
``docID wordID count`` with 1-based ids. Internally every id is 0-based;
the conversion happens only in :func:`parse_uci_bow` and
:func:`serialize_uci_bow`.
"""

from dataclasses import dataclass, field
import gzip
import io
import logging
import os
import warnings

import numpy as np

from .errors import CorpusParseError, CorpusRangeError, UsageError

logger = logging.getLogger(__name__)

GZIP_MAGIC = b"\x1f\x8b"


@dataclass(eq=False)
class Document:
    """One document: sorted distinct word ids with their positive counts."""

    word_ids: np.ndarray
    counts: np.ndarray
    doc_id: int = 0

    def __post_init__(self):
        self.word_ids = np.asarray(self.word_ids, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.word_ids.shape != self.counts.shape or self.word_ids.ndim != 1:
            raise UsageError("word_ids and counts must be parallel 1-D sequences")
        if self.word_ids.size and np.any(np.diff(self.word_ids) <= 0):
            raise UsageError("word_ids must be strictly increasing")
        if np.any(self.counts < 1):
            raise UsageError("counts must be >= 1")
        if self.word_ids.size and self.word_ids[0] < 0:
            raise UsageError("word ids must be non-negative")

    @classmethod
    def from_tokens(cls, tokens, doc_id=0):
        ids, counts = np.unique(np.asarray(tokens, dtype=np.int64), return_counts=True)
        return cls(ids, counts, doc_id)

    @property
    def length(self):
        return int(self.counts.sum())

    def __len__(self):
        return int(self.word_ids.size)

    def __eq__(self, other):
        if not isinstance(other, Document):
            return NotImplemented
        return (
            self.doc_id == other.doc_id
            and np.array_equal(self.word_ids, other.word_ids)
            and np.array_equal(self.counts, other.counts)
        )

    def __repr__(self):
        pairs = ", ".join(f"{w}:{c}" for w, c in zip(self.word_ids, self.counts))
        return f"Document(doc_id={self.doc_id}, {{{pairs}}})"


@dataclass(eq=False)
class Corpus:
    """Immutable-by-convention collection of documents over a vocabulary.

    ``dropped_empty`` records how many header-declared documents had no
    tokens and were discarded at parse time; it takes no part in equality.
    """

    docs: list
    vocab: list
    dropped_empty: int = field(default=0)

    def __post_init__(self):
        self.docs = list(self.docs)
        self.vocab = list(self.vocab)
        W = len(self.vocab)
        for d in self.docs:
            if d.word_ids.size and d.word_ids[-1] >= W:
                raise CorpusRangeError(
                    f"document {d.doc_id} uses word id {d.word_ids[-1]} >= W={W}"
                )

    @property
    def D(self):
        return len(self.docs)

    @property
    def W(self):
        return len(self.vocab)

    @property
    def total_tokens(self):
        return int(sum(d.length for d in self.docs))

    def __len__(self):
        return len(self.docs)

    def __getitem__(self, i):
        return self.docs[i]

    def __iter__(self):
        return iter(self.docs)

    def subset(self, indices):
        return Corpus([self.docs[i] for i in indices], self.vocab)

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return self.vocab == other.vocab and self.docs == other.docs

    def __repr__(self):
        return f"Corpus(D={self.D}, W={self.W}, total_tokens={self.total_tokens})"


def _int_line(line, lineno, what):
    try:
        return int(line.strip())
    except ValueError:
        raise CorpusParseError(f"expected integer {what} in header, got {line.strip()!r}",
                               line=lineno) from None


def parse_uci_bow(docword_stream, vocab_stream=None):
    """Parse a UCI bag-of-words stream into a Corpus.

    Documents appear in order of first appearance of their docID; repeated
    (doc, word) pairs are merged. Documents declared in the header but
    without tokens are dropped and counted in ``Corpus.dropped_empty``.
    Without a vocab stream, words are named by their 0-based id.
    """
    lines = iter(docword_stream)
    header = []
    lineno = 0
    for what in ("D", "W", "NNZ"):
        lineno += 1
        try:
            raw = next(lines)
        except StopIteration:
            raise CorpusParseError(f"truncated header: missing {what}", line=lineno) from None
        header.append(_int_line(raw, lineno, what))
    D, W, nnz = header
    if D < 0 or W < 0 or nnz < 0:
        raise CorpusParseError("header values must be non-negative", line=1)

    order = []
    entries = {}
    seen = 0
    for raw in lines:
        lineno += 1
        parts = raw.split()
        if not parts:
            continue
        if len(parts) != 3:
            raise CorpusParseError(f"expected 'docID wordID count', got {raw.strip()!r}",
                                   line=lineno)
        try:
            doc, word, count = (int(p) for p in parts)
        except ValueError:
            raise CorpusParseError(f"non-integer field in {raw.strip()!r}", line=lineno) from None
        if not 1 <= doc <= D:
            raise CorpusRangeError(f"docID {doc} outside [1, {D}]", line=lineno)
        if not 1 <= word <= W:
            raise CorpusRangeError(f"wordID {word} outside [1, {W}]", line=lineno)
        if count < 0:
            raise CorpusParseError(f"negative count {count}", line=lineno)
        seen += 1
        if count == 0:
            continue
        bucket = entries.get(doc)
        if bucket is None:
            bucket = entries[doc] = {}
            order.append(doc)
        bucket[word - 1] = bucket.get(word - 1, 0) + count

    if seen != nnz:
        warnings.warn(f"header declares NNZ={nnz} but {seen} entries were read", stacklevel=2)

    docs = []
    for doc in order:
        bucket = entries[doc]
        ids = np.fromiter(sorted(bucket), dtype=np.int64, count=len(bucket))
        cts = np.array([bucket[i] for i in ids], dtype=np.int64)
        docs.append(Document(ids, cts, doc - 1))
    dropped = D - len(docs)
    if dropped:
        warnings.warn(f"dropped {dropped} empty document(s)", stacklevel=2)

    if vocab_stream is None:
        vocab = [str(i) for i in range(W)]
    else:
        vocab = [v.rstrip("\r\n") for v in vocab_stream]
        while vocab and vocab[-1] == "":
            vocab.pop()
        if len(vocab) != W:
            raise CorpusParseError(f"vocabulary has {len(vocab)} entries, header says W={W}")
    return Corpus(docs, vocab, dropped_empty=dropped)


def serialize_uci_bow(corpus):
    """Return ``(docword_text, vocab_text)`` for a corpus.

    The header D is ``max(doc_id) + 1`` so document ids survive a round
    trip; ids that hold no document read back as dropped empties.
    """
    D = max((d.doc_id for d in corpus.docs), default=-1) + 1
    nnz = sum(len(d) for d in corpus.docs)
    out = io.StringIO()
    out.write(f"{D}\n{corpus.W}\n{nnz}\n")
    for d in corpus.docs:
        did = d.doc_id + 1
        for w, c in zip(d.word_ids.tolist(), d.counts.tolist()):
            out.write(f"{did} {w + 1} {c}\n")
    vocab = "".join(f"{v}\n" for v in corpus.vocab)
    return out.getvalue(), vocab


def _open_text(path):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == GZIP_MAGIC:
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def read_uci(docword_path, vocab_path=None):
    """Read ``docword.*.txt`` (optionally gzipped) and its vocab file."""
    with _open_text(docword_path) as dw:
        if vocab_path is None:
            return parse_uci_bow(dw)
        with _open_text(vocab_path) as vf:
            return parse_uci_bow(dw, vf)


def vocab_path_for(docword_path):
    """``docword.NAME.txt`` -> ``vocab.NAME.txt`` in the same directory."""
    head, tail = os.path.split(os.fspath(docword_path))
    if tail.startswith("docword."):
        tail = "vocab." + tail[len("docword."):]
    else:
        tail = tail + ".vocab"
    if tail.endswith(".gz"):
        tail = tail[:-3]
    return os.path.join(head, tail)


def save_corpus(corpus, path):
    """Write ``path`` in UCI layout plus the sidecar vocab file."""
    docword, vocab = serialize_uci_bow(corpus)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(docword)
    with open(vocab_path_for(path), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(vocab)


def load_corpus(path):
    """Inverse of :func:`save_corpus`; the vocab sidecar is used if present."""
    vpath = vocab_path_for(path)
    return read_uci(path, vpath if os.path.exists(vpath) else None)


@dataclass(frozen=True)
class SplitSpec:
    """How to carve a corpus into train / validation / test.

    After the seeded shuffle, the first ``validation_count`` documents go
    to validation, the next ``test_count`` to test, and
    ``round(train_fraction * remaining)`` of the rest to train.
    """

    train_fraction: float = 1.0
    validation_count: int = 0
    test_count: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.validation_count < 0 or self.test_count < 0:
            raise UsageError("split counts must be non-negative")
        if not 0.0 <= self.train_fraction <= 1.0:
            raise UsageError("train_fraction must lie in [0, 1]")


def split(corpus, spec):
    """Seeded shuffle then partition into ``(train, validation, test)``."""
    D = corpus.D
    held = spec.validation_count + spec.test_count
    if held > D:
        raise UsageError(
            f"split asks for {held} held-out documents but the corpus has {D}"
        )
    perm = np.random.default_rng(spec.seed).permutation(D)
    v, t = spec.validation_count, spec.test_count
    n_train = int(round(spec.train_fraction * (D - held)))
    val = perm[:v]
    test = perm[v:v + t]
    train = perm[held:held + n_train]
    return corpus.subset(train), corpus.subset(val), corpus.subset(test)
