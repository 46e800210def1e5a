import itertools
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hstgnn.metrics import bleu, edit_counts, parse_report, score, wer

tokens = st.lists(st.sampled_from("abcde"), min_size=1, max_size=6)


def _exhaustive_distance(ref, hyp):
    # recursion over every alignment; fine for strings of a few tokens
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    return min(_exhaustive_distance(ref[1:], hyp[1:]) + (ref[0] != hyp[0]),
               _exhaustive_distance(ref[1:], hyp) + 1,
               _exhaustive_distance(ref, hyp[1:]) + 1)


class TestWer:
    def test_equal(self):
        assert wer("A B C".split(), "A B C".split())[0] == 0.0

    def test_one_deletion(self):
        w, c = wer("A B C".split(), "A C".split())
        assert w == 1 / 3 and c.deletions == 1 and c.errors == 1

    def test_subs_plus_insertion(self):
        w, c = wer("A B".split(), "C D E".split())
        assert w == 1.5
        assert (c.substitutions, c.insertions, c.deletions) == (2, 1, 0)

    def test_all_deleted(self):
        w, c = wer(["a", "b"], [])
        assert w == 1.0 and c.deletions == 2

    def test_empty_reference(self):
        with pytest.raises(ValueError):
            wer([], ["a"])

    @given(tokens, st.lists(st.sampled_from("abcde"), max_size=5))
    def test_matches_exhaustive(self, ref, hyp):
        assert edit_counts(ref, hyp).errors == _exhaustive_distance(ref, hyp)

    @given(tokens, tokens)
    def test_zero_iff_equal(self, ref, hyp):
        assert (wer(ref, hyp)[0] == 0.0) == (ref == hyp)

    @given(tokens, tokens, st.permutations("abcde"))
    def test_relabeling_invariant(self, ref, hyp, perm):
        relabel = dict(zip("abcde", perm))
        a = wer(ref, hyp)[0]
        b = wer([relabel[t] for t in ref], [relabel[t] for t in hyp])[0]
        assert a == b


class TestBleu:
    def test_identical(self):
        refs = [["the", "cat", "sat", "on", "it"], ["a", "b", "c", "d"]]
        assert bleu(refs, refs) == [1.0, 1.0, 1.0, 1.0]

    def test_disjoint(self):
        assert bleu([["a", "b", "c", "d"]], [["w", "x", "y", "z"]]) == [0.0] * 4

    def test_short_hypothesis(self):
        b1 = bleu([["the", "cat", "sat"]], [["the", "cat"]])[0]
        assert abs(b1 - math.exp(1 - 3 / 2)) < 1e-12
        assert abs(b1 - 0.6065) < 1e-4

    def test_clipping(self):
        b1 = bleu([["the", "cat"]], [["the", "the", "the"]])[0]
        assert abs(b1 - 1 / 3) < 1e-15

    def test_zero_higher_order_kills_score(self):
        scores = bleu([["a", "b", "c"]], [["a", "c", "b"]])
        assert scores[0] == 1.0 and scores[1] == 0.0 and scores[3] == 0.0

    def test_smoothing_flag(self):
        scores = bleu([["a", "b", "c"]], [["a", "c", "b"]], smooth=True)
        assert scores[1] > 0.0

    def test_corpus_level(self):
        refs = [["a", "b"], ["c", "d", "e", "f"]]
        hyps = [["a", "b"], ["c", "x", "e", "f"]]
        # unigram 5/6, bigram 2/4 aggregated over the corpus
        assert abs(bleu(refs, hyps, max_n=2)[1] - math.sqrt(5 / 6 * 2 / 4)) < 1e-12

    def test_empty_hypotheses(self):
        assert bleu([["a"]], [[]]) == [0.0] * 4

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bleu([["a"]], [])

    @given(st.lists(st.sampled_from("abc"), min_size=2, max_size=8), st.integers(1, 7))
    def test_completing_short_hypothesis_never_hurts(self, ref, cut):
        cut = min(cut, len(ref) - 1)
        before = bleu([ref], [ref[:cut]])[0]
        after = bleu([ref], [ref[:cut + 1]])[0]
        assert after >= before


class TestReport:
    def test_keys_parse(self):
        rep = score([["A", "B", "C"]], [["A", "C"]], [["x", "y"]], [["x", "y"]])
        keys = parse_report(rep.format())
        for k in ("wer", "bleu1", "bleu2", "bleu3", "bleu4", "substitutions", "deletions",
                  "insertions", "ref_len", "brevity_penalty"):
            assert k in keys
        assert float(keys["wer"]) == 1 / 3
        assert float(keys["bleu2"]) == 1.0

    def test_pure(self):
        args = ([["a", "b"]], [["a"]], [["x", "y", "z"]], [["x", "y"]])
        assert score(*args).format() == score(*args).format()


def test_tie_preference_prefers_substitution():
    # "a b" -> "b": one deletion of a is optimal; with a tie between sub+del
    # patterns the backtrace still yields a single edit
    c = edit_counts(["a", "b"], ["b"])
    assert c.errors == 1 and c.deletions == 1
    # equal-cost alternatives (sub vs ins+del) resolve to substitution
    c = edit_counts(["a"], ["b"])
    assert (c.substitutions, c.insertions, c.deletions) == (1, 0, 0)


def test_exhaustive_helper_sane():
    for ref, hyp in itertools.product(["", "a", "ab"], repeat=2):
        assert _exhaustive_distance(ref, hyp) == edit_counts(list(ref), list(hyp)).errors
