#!/usr/bin/env python3
"""
Unit tests for synthetic.py
"""

import pytest

from corpus import read_parallel_corpus
from synthetic import (
    AgreementSpec,
    agreement_accuracy,
    contrastive_groups,
    generate_agreement_corpus,
    write_parallel_corpus,
)


@pytest.fixture
def documents():
    return generate_agreement_corpus(20, seed=4)


class TestGenerator:
    """Test suite for the agreement corpus generator"""

    def test_document_lengths(self, documents):
        spec = AgreementSpec()
        assert len(documents) == 20
        assert all(spec.min_sentences <= len(d) <= spec.max_sentences for d in documents)

    def test_pronoun_follows_previous_noun_class(self, documents):
        for doc in documents:
            assert doc.src[0][0] == "a" and doc.tgt[0][0] == "A"
            for t in range(1, len(doc)):
                previous_class = doc.src[t - 1][-1].split("_")[0][1:]
                assert doc.src[t][0] == "it"
                assert doc.tgt[t][0] == f"PRON{previous_class}"

    def test_rest_of_sentence_is_a_word_for_word_map(self, documents):
        for doc in documents:
            for src, tgt in zip(doc.src, doc.tgt):
                assert [token.upper() for token in src[1:]] == tgt[1:]

    def test_seeded(self):
        a = generate_agreement_corpus(5, seed=1)
        b = generate_agreement_corpus(5, seed=1)
        c = generate_agreement_corpus(5, seed=2)
        assert a == b
        assert a != c

    def test_more_classes(self):
        spec = AgreementSpec(n_classes=3)
        docs = generate_agreement_corpus(30, spec, seed=0)
        pronouns = {sentence[0] for d in docs for sentence in d.tgt[1:]}
        assert pronouns <= set(spec.agreement_tokens())
        assert len(pronouns) == 3

    def test_written_files_read_back(self, documents, tmp_path):
        src, tgt = tmp_path / "train.src", tmp_path / "train.tgt"
        write_parallel_corpus(documents, src, tgt)
        loaded = read_parallel_corpus(src, tgt)
        assert [d.tgt for d in loaded] == [d.tgt for d in documents]


class TestAgreementAccuracy:
    """Test suite for the pronoun agreement metric"""

    def test_references_score_perfectly(self, documents):
        report = agreement_accuracy([d.tgt for d in documents], documents)
        assert report.accuracy == 1.0
        assert report.total == sum(len(d) - 1 for d in documents)

    def test_wrong_pronoun(self, documents):
        doc = documents[0]
        hyps = [list(s) for s in doc.tgt]
        hyps[1][0] = "PRON0" if hyps[1][0] == "PRON1" else "PRON1"
        hyps[2] = []
        report = agreement_accuracy([hyps], [doc])
        assert report.correct == len(doc) - 3

    def test_no_context_sentences(self):
        assert agreement_accuracy([], []).accuracy == 0.0


class TestContrastiveGroups:
    """Test suite for synthetic contrastive groups"""

    def test_one_group_per_dependent_sentence(self, documents):
        groups = contrastive_groups(documents, k=2)
        assert len(groups) == sum(len(d) - 1 for d in documents)
        assert all(g.phenomenon == "deixis" and len(g.candidates) == 2 for g in groups)

    def test_true_candidate_is_the_reference(self, documents):
        doc = documents[0]
        group = contrastive_groups([doc], k=2)[0]
        assert group.source == [" ".join(doc.src[0]), " ".join(doc.src[1])]
        expected = " ".join(doc.tgt[0]) + " <sep> " + " ".join(doc.tgt[1])
        assert group.candidates[group.true_index] == expected

    def test_k_one_has_no_context(self, documents):
        group = contrastive_groups(documents[:1], k=1)[0]
        assert len(group.source) == 1
        assert "<sep>" not in group.candidates[0]
