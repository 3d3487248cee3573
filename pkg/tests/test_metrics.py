import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrqvae.exceptions import ConfigError, UsageError
from hrqvae.metrics import (
    Corpus,
    MetricReport,
    corpus_bleu,
    ibleu,
    metric_report,
    pairwise_bleu,
    read_segments,
    round_half_up,
    self_bleu,
    tokenize,
)

# reference scores computed with sacrebleu (tokenize="none", no smoothing)
SINGLE_HYPS = ["the cat sat on the mat today", "a quick brown fox jumps over it"]
SINGLE_REFS = ["the cat sat on a mat today", "a quick brown fox jumped over it"]
SINGLE_BLEU = 48.892302243490086

MULTI_HYPS = ["the cat is on the mat", "there is a cat on the red mat"]
MULTI_STREAMS = [
    ["the cat is on the mat", "a cat is on the mat"],
    ["there is a cat on the mat", "there is a cat on the red mat now"],
]
MULTI_BLEU = 93.10627797040233


def _split(lines):
    return [line.split() for line in lines]


def _per_segment(streams):
    return [list(refs) for refs in zip(*[_split(s) for s in streams])]


class TestCorpusBleu:
    def test_single_reference(self):
        assert corpus_bleu(Corpus.from_single(_split(SINGLE_HYPS), _split(SINGLE_REFS))) == pytest.approx(
            SINGLE_BLEU, abs=1e-9
        )

    def test_multiple_references(self):
        corpus = Corpus(_split(MULTI_HYPS), _per_segment(MULTI_STREAMS))
        assert corpus_bleu(corpus) == pytest.approx(MULTI_BLEU, abs=1e-9)

    def test_brevity_penalty(self):
        corpus = Corpus.from_single([["the", "cat", "sat", "on", "the"]], [["the", "cat", "sat", "on", "the", "mat"]])
        assert corpus_bleu(corpus) == pytest.approx(100 * 2.718281828459045 ** (1 - 6 / 5), abs=1e-9)

    def test_identity(self):
        segs = _split(SINGLE_HYPS)
        assert corpus_bleu(Corpus.from_single(segs, segs)) == pytest.approx(100.0)

    def test_clipping(self):
        assert corpus_bleu(Corpus.from_single([["the"] * 4], [["the", "cat"]])) == 0.0

    def test_empty_corpus(self):
        with pytest.raises(UsageError):
            corpus_bleu(Corpus([], []))

    def test_reference_count_mismatch(self):
        with pytest.raises(UsageError):
            Corpus([["a"]], [])
        with pytest.raises(UsageError):
            Corpus([["a"]], [[]])

    @settings(max_examples=30, deadline=None)
    @given(st.permutations(list(range(4))))
    def test_segment_order_invariant(self, order):
        hyps = _split(SINGLE_HYPS + MULTI_HYPS)
        refs = _split(SINGLE_REFS + MULTI_STREAMS[0])
        base = corpus_bleu(Corpus.from_single(hyps, refs))
        permuted = Corpus.from_single([hyps[i] for i in order], [refs[i] for i in order])
        assert corpus_bleu(permuted) == pytest.approx(base, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=8), min_size=1, max_size=4))
    def test_bounded(self, segs):
        refs = [list(reversed(s)) for s in segs]
        assert 0.0 <= corpus_bleu(Corpus.from_single(segs, refs)) <= 100.0 + 1e-9


class TestIbleu:
    @pytest.mark.parametrize(
        "bleu,self_score,expected", [(37.10, 100.0, 9.68), (19.85, 100.0, -4.12), (34.52, 100.0, 7.616)]
    )
    def test_copy_rows(self, bleu, self_score, expected):
        assert ibleu(bleu, self_score, 0.8) == pytest.approx(expected, abs=1e-9)

    def test_alpha_extremes(self):
        assert ibleu(40.0, 70.0, 1.0) == 40.0
        assert ibleu(40.0, 70.0, 0.0) == -70.0

    @pytest.mark.parametrize("args", [(10.0, 10.0, 1.5), (-1.0, 10.0, 0.8), (10.0, 101.0, 0.8)])
    def test_invalid(self, args):
        with pytest.raises(ConfigError):
            ibleu(*args)

    def test_self_bleu_of_copy(self):
        segs = _split(SINGLE_HYPS)
        assert self_bleu(segs, segs) == pytest.approx(100.0)


class TestPairwiseBleu:
    def test_identical_candidates(self):
        sets = [[s, s] for s in _split(SINGLE_HYPS)]
        assert pairwise_bleu(sets) == pytest.approx(100.0)

    def test_matches_pair_average(self):
        a, b, c = _split(SINGLE_HYPS), _split(SINGLE_REFS), _split(MULTI_STREAMS[0])
        sets = [[a[i], b[i], c[i]] for i in range(2)]
        lists = [a, b, c]
        expected = [corpus_bleu(Corpus.from_single(lists[i], lists[j])) for i, j in itertools.permutations(range(3), 2)]
        assert pairwise_bleu(sets) == pytest.approx(sum(expected) / 6)

    @pytest.mark.parametrize("sets", [[], [[["a"]]], [[["a"], ["b"]], [["a"]]]])
    def test_invalid(self, sets):
        with pytest.raises(UsageError):
            pairwise_bleu(sets)


class TestRounding:
    @pytest.mark.parametrize("x,expected", [(9.675, 9.68), (7.616, 7.62), (-4.125, -4.13), (2.5, 2.5), (0.005, 0.01)])
    def test_half_up(self, x, expected):
        assert round_half_up(x) == expected


class TestReport:
    def test_copy_baseline(self):
        segs = _split(SINGLE_HYPS)
        report = metric_report(segs, [[r] for r in _split(SINGLE_REFS)], segs)
        assert report.self_bleu == pytest.approx(100.0)
        assert report.ibleu == pytest.approx(0.8 * SINGLE_BLEU - 20.0)
        assert report.p_bleu is None

    def test_serialisation(self):
        r = MetricReport(37.101, 100.0, 9.6809, None, 0.8)
        assert r.to_json() == '{"alpha": 0.8, "bleu": 37.1, "ibleu": 9.68, "p_bleu": null, "self_bleu": 100.0}'
        assert r.to_csv().splitlines() == ["bleu,self_bleu,ibleu,p_bleu,alpha", "37.1,100.0,9.68,,0.8"]


class TestTokenize:
    def test_lowercase(self):
        assert tokenize("The  Cat\tsat") == ["the", "cat", "sat"]
        assert tokenize("The Cat", lowercase=False) == ["The", "Cat"]

    def test_read_segments(self, tmp_path):
        path = tmp_path / "seg.txt"
        path.write_text("A b\n\nc\n", encoding="utf-8")
        assert read_segments(path) == [["a", "b"], [], ["c"]]
