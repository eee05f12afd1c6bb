"""
Synthetic cross-sentence agreement corpus.

Every sentence after the first opens with a source pronoun "it" whose
target form depends on the noun class of the previous sentence's noun.
Nothing inside the sentence itself reveals that class, so a sentence-level
model can only guess, while a model that sees the previous sentence can get
it right every time.
"""

import logging
from dataclasses import dataclass

import numpy as np

from corpus import Document
from evaluation import ContrastiveGroup


@dataclass
class AgreementSpec:
    n_classes: int = 2
    nouns_per_class: int = 8
    n_verbs: int = 8
    n_adjectives: int = 6
    min_sentences: int = 3
    max_sentences: int = 6
    adjective_rate: float = 0.5

    def agreement_tokens(self):
        return [f"PRON{g}" for g in range(self.n_classes)]


def _sentence(rng, spec, first):
    g = int(rng.integers(spec.n_classes))
    x = int(rng.integers(spec.nouns_per_class))
    v = int(rng.integers(spec.n_verbs))
    src = ["a" if first else "it", f"v{v}"]
    tgt = [None, f"V{v}"]
    if rng.random() < spec.adjective_rate:
        a = int(rng.integers(spec.n_adjectives))
        src.append(f"adj{a}")
        tgt.append(f"ADJ{a}")
    src.append(f"n{g}_{x}")
    tgt.append(f"N{g}_{x}")
    return src, tgt, g


def generate_agreement_corpus(n_documents, spec=None, seed=0):
    """Documents of token-string sentences with cross-sentence agreement"""
    spec = spec or AgreementSpec()
    rng = np.random.default_rng(seed)
    documents = []
    for doc_id in range(n_documents):
        n = int(rng.integers(spec.min_sentences, spec.max_sentences + 1))
        src_doc, tgt_doc, previous = [], [], None
        for t in range(n):
            src, tgt, g = _sentence(rng, spec, first=t == 0)
            tgt[0] = "A" if previous is None else f"PRON{previous}"
            src_doc.append(src)
            tgt_doc.append(tgt)
            previous = g
        documents.append(Document(doc_id, src_doc, tgt_doc))
    logging.info(f"Generated {n_documents} synthetic documents (seed {seed})")
    return documents


def write_parallel_corpus(documents, src_path, tgt_path):
    with open(src_path, "w", encoding="utf-8") as fs, open(tgt_path, "w", encoding="utf-8") as ft:
        for index, doc in enumerate(documents):
            if index:
                fs.write("\n")
                ft.write("\n")
            for src, tgt in zip(doc.src, doc.tgt):
                fs.write(" ".join(src) + "\n")
                ft.write(" ".join(tgt) + "\n")


@dataclass
class AgreementReport:
    correct: int
    total: int

    @property
    def accuracy(self):
        return self.correct / self.total if self.total else 0.0


def agreement_accuracy(hypotheses, documents):
    """Share of context-dependent sentences whose first target token is right.

    hypotheses: per document, a list of translated sentences (token strings).
    The first sentence of each document carries no dependency and is skipped.
    """
    correct = total = 0
    for hyp_doc, doc in zip(hypotheses, documents):
        for hyp, ref in list(zip(hyp_doc, doc.tgt))[1:]:
            total += 1
            if hyp and hyp[0] == ref[0]:
                correct += 1
    return AgreementReport(correct, total)


def contrastive_groups(documents, k, spec=None):
    """One deixis group per context-dependent sentence: true vs. swapped pronoun.

    The group source holds the sentence and up to k-1 preceding sentences;
    every candidate is the whole target window with the pronoun of the final
    sentence varied.
    """
    spec = spec or AgreementSpec()
    groups = []
    for doc in documents:
        for t in range(1, len(doc)):
            begin = max(0, t - k + 1)
            source = [" ".join(s) for s in doc.src[begin:t + 1]]
            context = [" ".join(s) for s in doc.tgt[begin:t]]
            true_pronoun = doc.tgt[t][0]
            candidates = []
            for pronoun in spec.agreement_tokens():
                sentence = " ".join([pronoun] + doc.tgt[t][1:])
                candidates.append(" <sep> ".join(context + [sentence]))
            groups.append(ContrastiveGroup(
                source=source,
                candidates=candidates,
                true_index=spec.agreement_tokens().index(true_pronoun),
                phenomenon="deixis",
            ))
    return groups
