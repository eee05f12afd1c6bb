"""
Beam search over chunks, separator-based splitting of chunk outputs,
sliding-window document translation and per-position assembly.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from corpus import join_sentences
from errors import ConfigError, GridContractError

POSITION_LAST = "last"
EMPTY_SENTENCE = "<empty>"


@dataclass
class DecodeConfig:
    beam_size: int = 4
    alpha: float = 0.6
    max_len_a: float = 2.0
    max_len_b: int = 10
    position: str = POSITION_LAST

    def __post_init__(self):
        if self.beam_size < 1:
            raise ConfigError(f"beam_size must be at least 1, got {self.beam_size}")
        if self.position != POSITION_LAST:
            try:
                if int(self.position) < 1:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"position must be a positive integer or 'last', got {self.position!r}") from None

    def max_len(self, src_len):
        return int(self.max_len_a * src_len + self.max_len_b)

    def resolve_position(self, k):
        return k if self.position == POSITION_LAST else min(int(self.position), k)


@dataclass
class Hypothesis:
    tokens: list
    log_prob: float = 0.0
    finished: bool = False
    order: int = 0

    def score(self, alpha):
        length = max(len(self.tokens), 1)
        return self.log_prob / (length ** alpha)


@dataclass
class BeamResult:
    tokens: list
    score: float
    log_prob: float
    truncated: bool = False


def _banned_ids(model):
    cfg = model.config
    return [cfg.pad_id, cfg.bos_id]


def beam_search(model, src_chunk, beam_size=4, max_len=None, alpha=0.6):
    """Best length-normalized hypothesis for one source chunk.

    Candidates are ranked by cumulative log-probability with ties broken by
    token id, then by the order their parent entered the beam. Hypotheses
    ending in eos leave the beam; search stops when the beam is empty,
    beam_size hypotheses have finished, or max_len tokens were generated.
    The returned tokens exclude bos and eos.
    """
    if beam_size < 1:
        raise ValueError(f"beam_size must be at least 1, got {beam_size}")
    cfg = model.config
    if max_len is None:
        max_len = 2 * len(src_chunk) + 10
    memory = model.encode(src_chunk)
    banned = _banned_ids(model)

    live = [Hypothesis(tokens=[], order=0)]
    finished = []
    counter = 1
    for _ in range(max_len):
        prefixes = np.asarray([[cfg.bos_id] + h.tokens for h in live], dtype=np.int64)
        logp = np.array(model.next_token_log_probs(memory, prefixes), dtype=np.float64)
        logp[:, banned] = -np.inf

        candidates = []
        for rank, hyp in enumerate(live):
            # stable sort keeps lower token ids first among equal scores
            best_tokens = np.argsort(-logp[rank], kind="stable")[:beam_size]
            for token in best_tokens:
                if np.isfinite(logp[rank, token]):
                    candidates.append((hyp.log_prob + logp[rank, token], int(token), rank))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

        next_live = []
        for total, token, rank in candidates[:beam_size]:
            hyp = Hypothesis(live[rank].tokens + [token], total, token == cfg.eos_id, counter)
            counter += 1
            (finished if hyp.finished else next_live).append(hyp)
        live = next_live
        if not live or len(finished) >= beam_size:
            break

    truncated = not finished
    pool = finished if finished else live
    best = min(pool, key=lambda h: (-h.score(alpha), h.order))
    tokens = best.tokens[:-1] if best.finished else best.tokens
    if truncated:
        logging.warning(f"no hypothesis finished within {max_len} tokens; returning best partial")
    return BeamResult(tokens=tokens, score=best.score(alpha), log_prob=best.log_prob, truncated=truncated)


def greedy_decode(model, src_chunk, max_len=None):
    """Argmax decoding; returns generated tokens without bos/eos"""
    cfg = model.config
    if max_len is None:
        max_len = 2 * len(src_chunk) + 10
    memory = model.encode(src_chunk)
    banned = _banned_ids(model)
    tokens = []
    for _ in range(max_len):
        logp = np.array(model.next_token_log_probs(memory, np.asarray([[cfg.bos_id] + tokens])))
        logp[0, banned] = -np.inf
        token = int(np.argmax(logp[0]))
        if token == cfg.eos_id:
            break
        tokens.append(token)
    return tokens


@dataclass
class SplitDiagnostic:
    expected: int
    found: int

    @property
    def kind(self):
        if self.found < self.expected:
            return "underflow"
        if self.found > self.expected:
            return "overflow"
        return "ok"


def split_sentences(tokens, sep_id, expected_k):
    """Split chunk output into exactly expected_k sentences.

    Missing sentences are padded as empty lists at the tail; surplus
    sentences are merged (without separators) into the last one.
    """
    sentences = [[]]
    for token in tokens:
        if token == sep_id:
            sentences.append([])
        else:
            sentences[-1].append(token)
    diagnostic = SplitDiagnostic(expected=expected_k, found=len(sentences))
    if len(sentences) < expected_k:
        sentences.extend([] for _ in range(expected_k - len(sentences)))
    elif len(sentences) > expected_k:
        head = sentences[: expected_k - 1]
        tail = [token for sentence in sentences[expected_k - 1:] for token in sentence]
        sentences = head + [tail]
    return sentences, diagnostic


@dataclass
class TranslationGrid:
    """Translations of one document keyed by (sentence i, window position j), 1-based"""

    doc_id: int
    n_sentences: int
    k: int
    entries: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)

    def set(self, i, j, tokens):
        self.entries[(i, j)] = list(tokens)

    def get(self, i, j):
        try:
            return self.entries[(i, j)]
        except KeyError:
            raise GridContractError(
                f"document {self.doc_id}: no translation of sentence {i} at position {j}"
            ) from None

    def positions(self, i):
        return sorted(j for (row, j) in self.entries if row == i)

    @property
    def malformed(self):
        return sum(1 for d in self.diagnostics if d.kind != "ok")


def sliding_translate(model, document, k, beam_size=4, alpha=0.6, decode_config=None, doc_id=0):
    """Translate every window of k source sentences starting at each sentence.

    `document` is a list of source sentences (token-id lists). Sentence i is
    recorded at position j from the window starting at sentence i - j + 1.
    """
    if not document:
        raise ValueError("cannot translate an empty document")
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    cfg = model.config
    n = len(document)
    grid = TranslationGrid(doc_id=doc_id, n_sentences=n, k=min(k, n))
    for start in range(n):
        window = document[start:start + k]
        src_ids, _ = join_sentences(window, cfg.sep_id)
        max_len = decode_config.max_len(len(src_ids)) if decode_config else None
        result = beam_search(model, src_ids, beam_size, max_len, alpha)
        sentences, diagnostic = split_sentences(result.tokens, cfg.sep_id, len(window))
        grid.diagnostics.append(diagnostic)
        if diagnostic.kind != "ok":
            logging.debug(
                f"doc {doc_id} window {start + 1}: expected {diagnostic.expected} sentences, "
                f"found {diagnostic.found}"
            )
        for offset, sentence in enumerate(sentences):
            grid.set(start + offset + 1, offset + 1, sentence)
    return grid


def assemble_position(grid, j):
    """Document rendered from each sentence's translation at position min(i, j).

    Positions past the grid's window size fall back to its last position.
    """
    if j < 1:
        raise ValueError(f"position must be at least 1, got {j}")
    j = min(j, grid.k)
    return [grid.get(i, min(i, j)) for i in range(1, grid.n_sentences + 1)]


def render(sentences, vocab):
    return [" ".join(vocab.decode(sentence)) for sentence in sentences]


def write_translation(path, documents):
    """One sentence per line, a blank line between documents.

    An empty sentence is written as EMPTY_SENTENCE so blank lines only ever
    mean a document break.
    """
    with open(path, "w", encoding="utf-8") as f:
        for index, sentences in enumerate(documents):
            if index:
                f.write("\n")
            for sentence in sentences:
                f.write((sentence or EMPTY_SENTENCE) + "\n")


def read_sentences(path):
    """Flat list of sentence strings; blank lines are dropped, EMPTY_SENTENCE reads back as ''"""
    sentences = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                sentences.append("" if line == EMPTY_SENTENCE else line)
    return sentences


def write_grid_dump(path, grids, vocab):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, delimiter="\t", quoting=csv.QUOTE_NONE, escapechar="\\", lineterminator="\n")
        for grid in grids:
            for (i, j) in sorted(grid.entries):
                writer.writerow([grid.doc_id, i, j, " ".join(vocab.decode(grid.entries[(i, j)]))])


def read_grid_dump(path):
    """Grids of whitespace-token strings from a `doc<TAB>i<TAB>j<TAB>text` dump"""
    grids = {}
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f, delimiter="\t", quoting=csv.QUOTE_NONE, escapechar="\\")
        for line_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != 4:
                raise GridContractError(f"{path}:{line_no}: expected 4 tab-separated fields, got {len(row)}")
            doc_id, i, j = int(row[0]), int(row[1]), int(row[2])
            grid = grids.setdefault(doc_id, TranslationGrid(doc_id=doc_id, n_sentences=0, k=0))
            grid.set(i, j, row[3].split())
            grid.n_sentences = max(grid.n_sentences, i)
            grid.k = max(grid.k, j)
    return [grids[doc_id] for doc_id in sorted(grids)]
