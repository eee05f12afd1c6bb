"""
BLEU reports, per-position BLEU tables and contrastive consistency scoring.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from sacrebleu.metrics import BLEU

from corpus import join_sentences
from decoding import assemble_position
from errors import CorpusFormatError, EvaluationError

PHENOMENA = ("deixis", "lexical-cohesion", "ellipsis-vp", "ellipsis-infl")
TOKENIZERS = ("13a", "none")
SCORING_MODES = ("sum", "mean")


@dataclass
class BleuReport:
    score: float
    precisions: list
    bp: float
    hyp_len: int
    ref_len: int
    tokenize: str = "13a"

    def format(self):
        precisions = "/".join(f"{p:.1f}" for p in self.precisions)
        return (
            f"BLEU = {self.score:.2f} {precisions} "
            f"(BP = {self.bp:.3f} ratio = {self.hyp_len / max(self.ref_len, 1):.3f} "
            f"hyp_len = {self.hyp_len} ref_len = {self.ref_len})"
        )


def bleu(hyps, refs, tokenize="13a"):
    """Corpus BLEU with clipped 4-gram precisions and brevity penalty, unsmoothed"""
    if tokenize not in TOKENIZERS:
        raise EvaluationError(f"tokenize must be one of {TOKENIZERS}, got {tokenize!r}")
    hyps, refs = list(hyps), list(refs)
    if not hyps:
        raise EvaluationError("cannot score an empty corpus")
    if len(hyps) != len(refs):
        raise EvaluationError(f"{len(hyps)} hypotheses but {len(refs)} references")
    metric = BLEU(tokenize=tokenize, smooth_method="none", effective_order=True)
    result = metric.corpus_score(hyps, [refs])
    return BleuReport(
        score=result.score,
        precisions=list(result.precisions),
        bp=result.bp,
        hyp_len=result.sys_len,
        ref_len=result.ref_len,
        tokenize=tokenize,
    )


def _text(tokens, vocab):
    if vocab is not None:
        return " ".join(vocab.decode(tokens))
    return " ".join(str(t) for t in tokens)


@dataclass
class PositionReport:
    rows: list = field(default_factory=list)

    def table(self):
        lines = [f"{'j':>3}  {'BLEU':>7}  {'BP':>6}  {'hyp_len':>8}"]
        for j, report in self.rows:
            lines.append(f"{j:>3}  {report.score:>7.2f}  {report.bp:>6.3f}  {report.hyp_len:>8}")
        return "\n".join(lines)

    def tsv_rows(self):
        return [f"{j}\t{report.score:.2f}" for j, report in self.rows]


def per_position_report(grids, refs, k, vocab=None, tokenize="13a"):
    """Corpus BLEU of the document set assembled at each window position 1..k.

    refs is a list of documents, each a list of reference sentence strings,
    in the same order as grids.
    """
    if len(grids) != len(refs):
        raise EvaluationError(f"{len(grids)} translated documents but {len(refs)} reference documents")
    flat_refs = [sentence for document in refs for sentence in document]
    report = PositionReport()
    for j in range(1, k + 1):
        hyps = []
        for grid in grids:
            hyps.extend(_text(s, vocab) for s in assemble_position(grid, j))
        report.rows.append((j, bleu(hyps, flat_refs, tokenize)))
        logging.info(f"position {j}: BLEU {report.rows[-1][1].score:.2f}")
    return report


@dataclass
class ContrastiveGroup:
    source: list
    candidates: list
    true_index: int
    phenomenon: str

    def __post_init__(self):
        if len(self.candidates) < 2:
            raise CorpusFormatError(f"contrastive group needs at least 2 candidates, got {len(self.candidates)}")
        if not 0 <= self.true_index < len(self.candidates):
            raise CorpusFormatError(
                f"true index {self.true_index} out of range for {len(self.candidates)} candidates"
            )
        if self.phenomenon not in PHENOMENA:
            raise CorpusFormatError(f"unknown phenomenon {self.phenomenon!r}; expected one of {PHENOMENA}")


def read_contrastive_file(path):
    """Blank-line separated blocks of SRC/CAND/TRUE/PHEN lines; TRUE is 0-based"""
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f]
    groups, block, start = [], [], 1
    for line_no, line in enumerate(lines + [""], start=1):
        if line.strip():
            if not block:
                start = line_no
            block.append(line)
            continue
        if block:
            groups.append(_parse_block(block, path, start))
            block = []
    return groups


def _parse_block(block, path, line_no):
    source, candidates, true_index, phenomenon = [], [], None, None
    for line in block:
        tag, sep, text = line.partition("\t")
        if not sep:
            raise CorpusFormatError(f"{path}:{line_no}: line without a tab: {line!r}")
        if tag == "SRC":
            source.append(text)
        elif tag == "CAND":
            candidates.append(text)
        elif tag == "TRUE":
            try:
                true_index = int(text)
            except ValueError:
                raise CorpusFormatError(f"{path}:{line_no}: TRUE is not an integer: {text!r}") from None
        elif tag == "PHEN":
            phenomenon = text.strip()
        else:
            raise CorpusFormatError(f"{path}:{line_no}: unknown tag {tag!r}")
    if not source or true_index is None or phenomenon is None:
        raise CorpusFormatError(f"{path}:{line_no}: block lacks SRC, TRUE or PHEN")
    return ContrastiveGroup(source, candidates, true_index, phenomenon)


def write_contrastive_file(path, groups):
    with open(path, "w", encoding="utf-8") as f:
        for index, group in enumerate(groups):
            if index:
                f.write("\n")
            for sentence in group.source:
                f.write(f"SRC\t{sentence}\n")
            for candidate in group.candidates:
                f.write(f"CAND\t{candidate}\n")
            f.write(f"TRUE\t{group.true_index}\n")
            f.write(f"PHEN\t{group.phenomenon}\n")


@dataclass
class ContrastiveReport:
    correct: dict = field(default_factory=OrderedDict)
    total: dict = field(default_factory=OrderedDict)
    skipped: int = 0

    def accuracy(self, phenomenon=None):
        if phenomenon is None:
            total = sum(self.total.values())
            return sum(self.correct.values()) / total if total else 0.0
        return self.correct[phenomenon] / self.total[phenomenon]

    def rows(self):
        return [(p, self.correct[p], self.total[p], self.accuracy(p)) for p in self.total]


def candidate_score(model, src_ids, cand_ids, scoring="sum"):
    logp = np.asarray(model.token_log_probs(src_ids, cand_ids))
    return float(logp.sum()) if scoring == "sum" else float(logp.mean())


def contrastive_accuracy(model, groups, src_vocab, tgt_vocab, scoring="sum"):
    """Per-phenomenon accuracy of ranking the true candidate strictly first.

    The source sentences of a group are joined with the separator into one
    chunk; each candidate is the full target chunk. A tie at the top counts
    as incorrect.
    """
    if scoring not in SCORING_MODES:
        raise EvaluationError(f"scoring must be one of {SCORING_MODES}, got {scoring!r}")
    if not groups:
        raise EvaluationError("no contrastive groups to score")
    sep_id = model.config.sep_id
    report = ContrastiveReport()
    for index, group in enumerate(groups):
        candidates = [tgt_vocab.encode(c.split()) for c in group.candidates]
        if any(not ids for ids in candidates):
            logging.warning(f"group {index} ({group.phenomenon}): empty candidate, skipped")
            report.skipped += 1
            continue
        src_ids, _ = join_sentences([src_vocab.encode(s.split()) for s in group.source], sep_id)
        scores = [candidate_score(model, src_ids, ids, scoring) for ids in candidates]
        true_score = scores[group.true_index]
        others = [s for i, s in enumerate(scores) if i != group.true_index]
        report.total[group.phenomenon] = report.total.get(group.phenomenon, 0) + 1
        report.correct.setdefault(group.phenomenon, 0)
        if true_score > max(others):
            report.correct[group.phenomenon] += 1
    return report
