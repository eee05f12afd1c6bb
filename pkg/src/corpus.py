"""
Corpus ingestion, vocabularies, k-to-k chunking and token-budget batching.

Corpus files are parallel UTF-8 texts with one pre-tokenized sentence per
line; documents are separated by a blank line at the same position in both
files.
"""

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from errors import BatchingError, CorpusFormatError, VocabularyError

PAD, BOS, EOS, SEP, UNK = "<pad>", "<s>", "</s>", "<sep>", "<unk>"
PAD_ID, BOS_ID, EOS_ID, SEP_ID, UNK_ID = 0, 1, 2, 3, 4
SPECIAL_TOKENS = (PAD, BOS, EOS, SEP, UNK)


class Vocabulary:
    """Token <-> id map with the special tokens pinned to ids 0..4"""

    def __init__(self, tokens, counts=None):
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise VocabularyError(f"vocabulary must start with {SPECIAL_TOKENS}")
        self.tokens = list(tokens)
        self.index = {token: i for i, token in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise VocabularyError("vocabulary contains duplicate tokens")
        self.counts = dict(counts or {})

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def encode(self, tokens):
        return [self.index.get(token, UNK_ID) for token in tokens]

    def decode(self, ids, strip_special=True):
        out = []
        for i in ids:
            token = self.tokens[i] if 0 <= i < len(self.tokens) else UNK
            if strip_special and token in (PAD, BOS, EOS):
                continue
            out.append(token)
        return out

    def save(self, filename):
        """Write the vocabulary as a tab-separated Token/Count file"""
        with open(filename, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, delimiter="\t", quoting=csv.QUOTE_NONE, escapechar="\\")
            writer.writerow(["Token", "Count"])
            for token in self.tokens:
                writer.writerow([token, self.counts.get(token, 0)])
        logging.info(f"Saved vocabulary of {len(self.tokens)} tokens to {filename}")

    @classmethod
    def load(cls, filename):
        tokens, counts = [], {}
        with open(filename, "r", newline="", encoding="utf-8") as f:
            reader = csv.reader(f, delimiter="\t", quoting=csv.QUOTE_NONE, escapechar="\\")
            next(reader, None)  # header
            for row in reader:
                if len(row) >= 2:
                    tokens.append(row[0])
                    counts[row[0]] = int(row[1])
        logging.info(f"Loaded vocabulary of {len(tokens)} tokens from {filename}")
        return cls(tokens, counts)


def build_vocab(corpus, max_size=None, min_freq=1):
    """Frequency-ranked vocabulary; ties are broken lexicographically.

    Args:
        corpus: iterable of token lists
        max_size: cap on the total vocabulary size including special tokens
        min_freq: tokens seen fewer times map to <unk>
    """
    counts = Counter()
    n_sentences = 0
    for sentence in corpus:
        counts.update(sentence)
        n_sentences += 1
    if n_sentences == 0 or not counts:
        raise VocabularyError("cannot build a vocabulary from an empty corpus")

    ranked = sorted(
        (token for token, n in counts.items() if n >= min_freq and token not in SPECIAL_TOKENS),
        key=lambda token: (-counts[token], token),
    )
    if max_size is not None:
        ranked = ranked[: max(0, max_size - len(SPECIAL_TOKENS))]
    return Vocabulary(list(SPECIAL_TOKENS) + ranked, {t: counts[t] for t in ranked})


@dataclass
class Document:
    """Parallel sentences of one document; tokens are strings or ids"""

    doc_id: int
    src: list
    tgt: list

    def __post_init__(self):
        if len(self.src) != len(self.tgt):
            raise CorpusFormatError(
                f"document {self.doc_id}: {len(self.src)} source vs {len(self.tgt)} target sentences"
            )

    def __len__(self):
        return len(self.src)


@dataclass
class Chunk:
    """k (or fewer, at a document end) consecutive sentences joined by <sep>"""

    doc_id: int
    start: int
    src_ids: list
    tgt_ids: list
    src_boundaries: list = field(default_factory=list)
    tgt_boundaries: list = field(default_factory=list)
    k_actual: int = 1

    @property
    def num_tokens(self):
        # decoder input and output each carry one extra token (bos / eos)
        return max(len(self.src_ids), len(self.tgt_ids) + 1)

    @property
    def label(self):
        return f"doc {self.doc_id} window {self.start}"


def _split_lines(path):
    with open(path, "r", encoding="utf-8") as f:
        return [line.rstrip("\n").rstrip("\r") for line in f]


def _group_documents(lines):
    documents, current = [], []
    for line in lines:
        if line.strip():
            current.append(line.split())
        elif current:
            documents.append(current)
            current = []
    if current:
        documents.append(current)
    return documents


def read_parallel_corpus(src_path, tgt_path):
    """Read two aligned files into Documents of token strings"""
    src_lines = _split_lines(src_path)
    tgt_lines = _split_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise CorpusFormatError(
            f"{src_path} has {len(src_lines)} lines but {tgt_path} has {len(tgt_lines)}"
        )
    for line_no, (s, t) in enumerate(zip(src_lines, tgt_lines), start=1):
        if bool(s.strip()) != bool(t.strip()):
            raise CorpusFormatError(
                f"line {line_no}: document break in only one of {src_path}, {tgt_path}"
            )
    src_docs = _group_documents(src_lines)
    tgt_docs = _group_documents(tgt_lines)
    documents = [Document(i, s, t) for i, (s, t) in enumerate(zip(src_docs, tgt_docs))]
    logging.info(
        f"Read {len(documents)} documents, {sum(len(d) for d in documents)} sentence pairs from {src_path}"
    )
    return documents


def read_monolingual_documents(path):
    """Source-only documents (list of token-list sentences) for translation"""
    return _group_documents(_split_lines(path))


def encode_document(doc, src_vocab, tgt_vocab):
    return Document(
        doc.doc_id,
        [src_vocab.encode(s) for s in doc.src],
        [tgt_vocab.encode(t) for t in doc.tgt],
    )


def join_sentences(sentences, sep_id=SEP_ID):
    """Concatenate sentences with a separator; returns (ids, sentence start offsets)"""
    ids, boundaries = [], []
    for i, sentence in enumerate(sentences):
        if i:
            ids.append(sep_id)
        boundaries.append(len(ids))
        ids.extend(sentence)
    return ids, boundaries


def split_at_separator(ids, sep_id=SEP_ID):
    sentences = [[]]
    for token in ids:
        if token == sep_id:
            sentences.append([])
        else:
            sentences[-1].append(token)
    return sentences


def chunk_documents(doc, k, stride, sep_id=SEP_ID):
    """Windows of k sentences starting every `stride` sentences.

    stride == k gives disjoint training chunks (the tail may be shorter);
    stride == 1 gives the overlapping inference windows. Window starts are
    1-based sentence indices.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if not 1 <= stride <= k:
        raise ValueError(f"stride must be between 1 and k={k}, got {stride}")
    chunks = []
    for begin in range(0, len(doc), stride):
        end = min(begin + k, len(doc))
        src_ids, src_bounds = join_sentences(doc.src[begin:end], sep_id)
        tgt_ids, tgt_bounds = join_sentences(doc.tgt[begin:end], sep_id)
        chunks.append(Chunk(
            doc_id=doc.doc_id,
            start=begin + 1,
            src_ids=src_ids,
            tgt_ids=tgt_ids,
            src_boundaries=src_bounds,
            tgt_boundaries=tgt_bounds,
            k_actual=end - begin,
        ))
    return chunks


def split_chunk(chunk, sep_id=SEP_ID):
    """Inverse of chunking: the (source, target) sentences of a chunk"""
    return split_at_separator(chunk.src_ids, sep_id), split_at_separator(chunk.tgt_ids, sep_id)


@dataclass
class Batch:
    """Padded arrays for one training step"""

    src: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    chunk_indices: list

    @property
    def n_target_tokens(self):
        return int((self.tgt_out != PAD_ID).sum())


def _pad(rows, width, pad_id):
    out = np.full((len(rows), width), pad_id, dtype=np.int64)
    for i, row in enumerate(rows):
        out[i, : len(row)] = row
    return out


def make_batch(chunks, indices, pad_id=PAD_ID, bos_id=BOS_ID, eos_id=EOS_ID):
    selected = [chunks[i] for i in indices]
    tgt_in = [[bos_id] + c.tgt_ids for c in selected]
    tgt_out = [c.tgt_ids + [eos_id] for c in selected]
    return Batch(
        src=_pad([c.src_ids for c in selected], max(len(c.src_ids) for c in selected), pad_id),
        tgt_in=_pad(tgt_in, max(len(t) for t in tgt_in), pad_id),
        tgt_out=_pad(tgt_out, max(len(t) for t in tgt_out), pad_id),
        chunk_indices=list(indices),
    )


def batch(chunks, max_tokens, pad_id=PAD_ID, bos_id=BOS_ID, eos_id=EOS_ID):
    """Greedy length-bucketed packing under a padded-token budget.

    Chunks are visited in (length, position) order and appended to the
    current batch while batch_size * max_length stays within max_tokens.
    """
    for i, chunk in enumerate(chunks):
        if chunk.num_tokens > max_tokens:
            raise BatchingError(
                f"chunk {i} ({chunk.label}) needs {chunk.num_tokens} tokens, budget is {max_tokens}"
            )
    order = sorted(range(len(chunks)), key=lambda i: (chunks[i].num_tokens, i))
    groups, current, longest = [], [], 0
    for i in order:
        length = chunks[i].num_tokens
        if current and (len(current) + 1) * max(longest, length) > max_tokens:
            groups.append(current)
            current, longest = [], 0
        current.append(i)
        longest = max(longest, length)
    if current:
        groups.append(current)
    return [make_batch(chunks, group, pad_id, bos_id, eos_id) for group in groups]


def save_dataset(path, chunks, k=None):
    """Store chunks as flat int arrays with offsets (numpy .npz, no pickling).

    `k` is the chunk size the data was cut with; it defaults to the largest
    chunk and is read back by dataset_k.
    """
    if k is None:
        k = max((c.k_actual for c in chunks), default=0)
    def flatten(lists):
        offsets = np.cumsum([0] + [len(x) for x in lists]).astype(np.int64)
        values = np.fromiter((v for x in lists for v in x), dtype=np.int64)
        return values, offsets

    src, src_off = flatten([c.src_ids for c in chunks])
    tgt, tgt_off = flatten([c.tgt_ids for c in chunks])
    sb, sb_off = flatten([c.src_boundaries for c in chunks])
    tb, tb_off = flatten([c.tgt_boundaries for c in chunks])
    meta = np.asarray([[c.doc_id, c.start, c.k_actual] for c in chunks], dtype=np.int64).reshape(-1, 3)
    with open(path, "wb") as f:
        np.savez(f, src=src, src_off=src_off, tgt=tgt, tgt_off=tgt_off,
                 sb=sb, sb_off=sb_off, tb=tb, tb_off=tb_off, meta=meta, k=np.int64(k))


def dataset_k(path):
    with np.load(path, allow_pickle=False) as data:
        return int(data["k"])


def load_dataset(path):
    with np.load(path, allow_pickle=False) as data:
        def unflatten(values, offsets):
            return [values[offsets[i]:offsets[i + 1]].tolist() for i in range(len(offsets) - 1)]

        src = unflatten(data["src"], data["src_off"])
        tgt = unflatten(data["tgt"], data["tgt_off"])
        sb = unflatten(data["sb"], data["sb_off"])
        tb = unflatten(data["tb"], data["tb_off"])
        meta = data["meta"].tolist()
    return [
        Chunk(doc_id=m[0], start=m[1], src_ids=s, tgt_ids=t,
              src_boundaries=b1, tgt_boundaries=b2, k_actual=m[2])
        for m, s, t, b1, b2 in zip(meta, src, tgt, sb, tb)
    ]
