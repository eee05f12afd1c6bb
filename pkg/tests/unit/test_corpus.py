#!/usr/bin/env python3
"""
Unit tests for corpus.py
"""

import pytest

from corpus import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    SEP_ID,
    SPECIAL_TOKENS,
    UNK_ID,
    Chunk,
    Document,
    Vocabulary,
    batch,
    build_vocab,
    chunk_documents,
    dataset_k,
    encode_document,
    join_sentences,
    load_dataset,
    read_monolingual_documents,
    read_parallel_corpus,
    save_dataset,
    split_chunk,
)
from errors import BatchingError, CorpusFormatError, VocabularyError


def _numbered_document(n, doc_id=0):
    """Sentence i (1-based) is [10*i, 10*i + 1] on both sides"""
    sentences = [[10 * i, 10 * i + 1] for i in range(1, n + 1)]
    return Document(doc_id, sentences, [list(s) for s in sentences])


def _sentence_number(sentence):
    return sentence[0] // 10


class TestVocabulary:
    """Test suite for vocabulary construction and lookup"""

    def test_frequency_ranking(self):
        vocab = build_vocab([["b", "a", "b"], ["c", "b", "a"]])
        assert vocab.tokens == list(SPECIAL_TOKENS) + ["b", "a", "c"]

    def test_ties_broken_lexicographically(self):
        vocab = build_vocab([["y", "x"]])
        assert vocab.tokens[5:] == ["x", "y"]

    def test_max_size_includes_specials(self):
        vocab = build_vocab([["a", "a", "b", "c"]], max_size=6)
        assert len(vocab) == 6
        assert vocab.encode(["a", "b"]) == [5, UNK_ID]

    def test_min_freq(self):
        vocab = build_vocab([["a", "a", "b"]], min_freq=2)
        assert "b" not in vocab

    def test_unknown_token(self):
        vocab = build_vocab([["a"]])
        assert vocab.encode(["zebra"]) == [UNK_ID]

    def test_decode_strips_specials(self):
        vocab = build_vocab([["a", "b"]])
        ids = [BOS_ID] + vocab.encode(["a", "b"]) + [EOS_ID, PAD_ID]
        assert vocab.decode(ids) == ["a", "b"]
        assert vocab.decode([SEP_ID]) == ["<sep>"]

    def test_empty_corpus(self):
        with pytest.raises(VocabularyError, match="empty corpus"):
            build_vocab([])

    def test_specials_required(self):
        with pytest.raises(VocabularyError):
            Vocabulary(["a", "b"])

    def test_save_and_load(self, tmp_path):
        vocab = build_vocab([["le", "chat", "le"], ["<s>", "x"]])
        path = tmp_path / "vocab.tsv"
        vocab.save(path)
        assert path.read_text(encoding="utf-8").splitlines()[0] == "Token\tCount"
        loaded = Vocabulary.load(path)
        assert loaded.tokens == vocab.tokens
        assert loaded.counts["le"] == 2


class TestReadCorpus:
    """Test suite for parallel corpus files"""

    def test_documents(self, toy_corpus_files):
        documents = read_parallel_corpus(*toy_corpus_files)
        assert [len(d) for d in documents] == [3, 2]
        assert documents[0].tgt[1] == ["it", "eats"]
        assert documents[1].doc_id == 1

    def test_line_count_mismatch(self, tmp_text):
        src = tmp_text("a.src", ["x", "y"])
        tgt = tmp_text("a.tgt", ["x"])
        with pytest.raises(CorpusFormatError, match="has 2 lines"):
            read_parallel_corpus(src, tgt)

    def test_misaligned_document_break(self, tmp_text):
        src = tmp_text("a.src", ["x", "", "y"])
        tgt = tmp_text("a.tgt", ["x", "z", "y"])
        with pytest.raises(CorpusFormatError, match="line 2"):
            read_parallel_corpus(src, tgt)

    def test_repeated_blank_lines(self, tmp_text):
        src = tmp_text("a.src", ["x", "", "", "y"])
        tgt = tmp_text("a.tgt", ["x", "", "", "y"])
        assert len(read_parallel_corpus(src, tgt)) == 2

    def test_monolingual(self, tmp_text):
        path = tmp_text("in.src", ["a b", "c", "", "d"])
        assert read_monolingual_documents(path) == [[["a", "b"], ["c"]], [["d"]]]

    def test_encode_document(self, toy_corpus_files):
        documents = read_parallel_corpus(*toy_corpus_files)
        src_vocab = build_vocab(s for d in documents for s in d.src)
        tgt_vocab = build_vocab(t for d in documents for t in d.tgt)
        encoded = encode_document(documents[0], src_vocab, tgt_vocab)
        assert tgt_vocab.decode(encoded.tgt[0]) == ["the", "cat", "sleeps"]

    def test_sentence_count_mismatch(self):
        with pytest.raises(CorpusFormatError):
            Document(0, [[1]], [[1], [2]])


class TestChunking:
    """Test suite for k-to-k chunking"""

    def test_join_sentences(self):
        assert join_sentences([[5, 6], [7], [8, 9]]) == ([5, 6, SEP_ID, 7, SEP_ID, 8, 9], [0, 3, 5])

    def test_sliding_windows_of_eight(self):
        chunks = chunk_documents(_numbered_document(8), k=4, stride=1)
        assert [c.start for c in chunks] == list(range(1, 9))
        window5 = chunks[4]
        assert [_sentence_number(s) for s in split_chunk(window5)[0]] == [5, 6, 7, 8]
        positions = {}
        for chunk in chunks:
            numbers = [_sentence_number(s) for s in split_chunk(chunk)[0]]
            if 5 in numbers:
                positions[chunk.start] = numbers.index(5) + 1
        assert positions == {2: 4, 3: 3, 4: 2, 5: 1}

    def test_k_one_has_no_separators(self):
        chunks = chunk_documents(_numbered_document(3), k=1, stride=1)
        assert len(chunks) == 3
        assert all(SEP_ID not in c.src_ids and c.k_actual == 1 for c in chunks)

    def test_tail_chunk_is_clipped(self):
        chunks = chunk_documents(_numbered_document(3), k=4, stride=4)
        assert len(chunks) == 1
        assert chunks[0].k_actual == 3

    def test_disjoint_training_chunks(self):
        chunks = chunk_documents(_numbered_document(5), k=2, stride=2)
        assert [c.k_actual for c in chunks] == [2, 2, 1]
        assert [c.start for c in chunks] == [1, 3, 5]

    def test_empty_document(self):
        assert chunk_documents(Document(0, [], []), k=2, stride=1) == []

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            chunk_documents(_numbered_document(2), k=0, stride=1)

    @pytest.mark.parametrize("stride", [0, 3])
    def test_stride_outside_one_to_k(self, stride):
        with pytest.raises(ValueError, match="stride"):
            chunk_documents(_numbered_document(6), k=2, stride=stride)

    @pytest.mark.parametrize("n", range(1, 10))
    @pytest.mark.parametrize("k", range(1, 5))
    def test_window_count_oracle(self, n, k):
        chunks = chunk_documents(_numbered_document(n), k=k, stride=1)
        for i in range(1, n + 1):
            covering = [c for c in chunks if i in [_sentence_number(s) for s in split_chunk(c)[0]]]
            assert len(covering) == min(i, k)

    @pytest.mark.parametrize("stride", [1, 2, 3])
    def test_every_sentence_is_covered(self, stride):
        chunks = chunk_documents(_numbered_document(7), k=3, stride=stride)
        seen = {_sentence_number(s) for c in chunks for s in split_chunk(c)[1]}
        assert seen == set(range(1, 8))

    def test_split_is_inverse(self):
        doc = _numbered_document(4)
        for chunk in chunk_documents(doc, k=3, stride=1):
            src, tgt = split_chunk(chunk)
            begin = chunk.start - 1
            assert src == doc.src[begin:begin + chunk.k_actual]
            assert tgt == doc.tgt[begin:begin + chunk.k_actual]

    def test_boundaries(self):
        chunk = chunk_documents(_numbered_document(2), k=2, stride=2)[0]
        assert chunk.src_boundaries == [0, 3]


class TestBatching:
    """Test suite for token-budget batching"""

    @staticmethod
    def _chunk(src_len, tgt_len, doc_id=0):
        return Chunk(doc_id, 1, [5] * src_len, [6] * tgt_len)

    def test_two_chunks_share_a_batch(self):
        batches = batch([self._chunk(5, 4), self._chunk(7, 6)], max_tokens=16)
        assert len(batches) == 1
        assert batches[0].src.shape == (2, 7)
        assert batches[0].src[0].tolist() == [5] * 5 + [PAD_ID] * 2

    def test_tight_budget_splits(self):
        batches = batch([self._chunk(5, 4), self._chunk(7, 6)], max_tokens=7)
        assert [b.chunk_indices for b in batches] == [[0], [1]]

    def test_target_arrays(self):
        (b,) = batch([Chunk(0, 1, [5], [6, 7])], max_tokens=8)
        assert b.tgt_in.tolist() == [[BOS_ID, 6, 7]]
        assert b.tgt_out.tolist() == [[6, 7, EOS_ID]]
        assert b.n_target_tokens == 3

    def test_padding_excluded_from_token_count(self):
        (b,) = batch([self._chunk(3, 1), self._chunk(3, 3)], max_tokens=32)
        assert b.n_target_tokens == 2 + 4

    def test_oversized_chunk_is_named(self):
        chunks = [self._chunk(3, 2), Chunk(4, 2, [5] * 9, [6])]
        with pytest.raises(BatchingError, match="chunk 1 \\(doc 4 window 2\\)"):
            batch(chunks, max_tokens=8)

    def test_every_chunk_batched_once(self):
        chunks = [self._chunk(n % 7 + 1, n % 5 + 1) for n in range(30)]
        batches = batch(chunks, max_tokens=20)
        indices = sorted(i for b in batches for i in b.chunk_indices)
        assert indices == list(range(30))
        assert all(b.src.size <= 20 and b.tgt_in.size <= 20 for b in batches)


class TestDatasetFiles:
    """Test suite for the preprocessed chunk store"""

    def test_save_and_load(self, tmp_path):
        chunks = chunk_documents(_numbered_document(5, doc_id=3), k=2, stride=2)
        path = tmp_path / "train.npz"
        save_dataset(path, chunks)
        assert load_dataset(path) == chunks
        assert dataset_k(path) == 2

    def test_stated_k_is_kept(self, tmp_path):
        chunks = chunk_documents(_numbered_document(2), k=4, stride=4)
        path = tmp_path / "train.npz"
        save_dataset(path, chunks, k=4)
        assert dataset_k(path) == 4

    def test_empty(self, tmp_path):
        path = tmp_path / "empty.npz"
        save_dataset(path, [])
        assert load_dataset(path) == []
