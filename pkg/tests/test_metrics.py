import itertools
import random

import pytest

from capclean import metrics
from capclean.metrics import (
    EmptyCorpus,
    LengthMismatch,
    bleu_corpus,
    compare_systems,
    kendall_tau,
    render_eval_table,
    ribes_align,
    ribes_corpus,
    ribes_sentence,
    tokenize,
)

from oracles import align_by_stated_rule, bleu_brute_force, kendall_tau_enumerated


class TestTokenize:
    def test_whitespace_runs(self):
        assert tokenize("a  b\tc") == ["a", "b", "c"]

    def test_empty(self):
        assert tokenize("") == []
        assert tokenize("   \t ") == []

    def test_nfc_equivalence(self):
        # U+0958 canonically decomposes to U+0915 U+093C; both inputs must
        # tokenize identically after normalization.
        composed = "क़"
        decomposed = "क़"
        assert tokenize(composed) == tokenize(decomposed)


class TestBleu:
    def test_identical_corpus_scores_100(self):
        hyps = [tokenize("a small red boat on the water"), tokenize("one two three four")]
        report = bleu_corpus(hyps, hyps)
        assert report.score == 100.0
        assert report.precisions == (1.0, 1.0, 1.0, 1.0)
        assert report.brevity_penalty == 1.0

    def test_single_divergent_token(self):
        # hyp a b c d vs ref a b c e: p1=3/4, p2=2/3, p3=1/2, p4=0 -> score 0.
        report = bleu_corpus([["a", "b", "c", "d"]], [["a", "b", "c", "e"]])
        assert report.precisions == (0.75, 2 / 3, 0.5, 0.0)
        assert report.score == 0.0

    def test_frozen_two_sentence_corpus(self):
        hyps = [["a", "b", "c", "d", "e"], ["x", "y"]]
        refs = [["a", "b", "c", "d", "f"], ["x", "y", "z"]]
        report = bleu_corpus(hyps, refs)
        assert report.precisions == pytest.approx((6 / 7, 0.8, 2 / 3, 0.5), abs=1e-12)
        assert report.brevity_penalty == pytest.approx(0.8668778997501817, abs=1e-12)
        assert report.score == pytest.approx(59.939541538078146, abs=1e-9)

    def test_matches_brute_force_on_random_corpora(self):
        rng = random.Random(1234)
        vocab = ["a", "b", "c", "d"]
        for _ in range(100):
            n_sents = rng.randint(1, 6)
            hyps = [
                [rng.choice(vocab) for _ in range(rng.randint(1, 6))]
                for _ in range(n_sents)
            ]
            refs = [
                [rng.choice(vocab) for _ in range(rng.randint(1, 6))]
                for _ in range(n_sents)
            ]
            expected = bleu_brute_force(hyps, refs)
            report = bleu_corpus(hyps, refs)
            assert report.score == pytest.approx(expected["score"], abs=1e-9)
            assert list(report.precisions) == pytest.approx(
                expected["precisions"], abs=1e-12
            )

    def test_sentence_order_invariance(self):
        rng = random.Random(7)
        hyps = [[rng.choice("abcd") for _ in range(5)] for _ in range(8)]
        refs = [[rng.choice("abcd") for _ in range(5)] for _ in range(8)]
        base = bleu_corpus(hyps, refs).score
        order = list(range(8))
        rng.shuffle(order)
        shuffled = bleu_corpus([hyps[i] for i in order], [refs[i] for i in order]).score
        assert shuffled == pytest.approx(base, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            bleu_corpus([["a"]], [["a"], ["b"]])

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            bleu_corpus([], [])

    def test_short_sentences_zero_fourgram_pool(self):
        # All hypotheses shorter than 4 tokens: p4 has an empty pool, score 0
        # even for identical sentences.
        hyps = [["a", "b"]]
        report = bleu_corpus(hyps, hyps)
        assert report.score == 0.0
        assert report.precisions[3] == 0.0


class TestRibesAlign:
    def test_all_unique_reversal(self):
        assert ribes_align(["a", "b", "c"], ["c", "b", "a"]) == [(0, 2), (1, 1), (2, 0)]

    def test_repeated_word_without_context(self):
        assert ribes_align(["a", "a"], ["a"]) == []

    def test_disjoint_sentences(self):
        assert ribes_align(["x"], ["y"]) == []

    def test_context_disambiguation(self):
        hyp = "the book was read by the boy".split()
        ref = "the boy read the book".split()
        assert ribes_align(hyp, ref) == [(0, 3), (1, 4), (3, 2), (5, 0), (6, 1)]

    def test_matches_naive_rule_on_random_sentences(self):
        rng = random.Random(99)
        vocab = ["a", "b", "c", "d", "e"]
        for _ in range(200):
            hyp = [rng.choice(vocab) for _ in range(rng.randint(0, 7))]
            ref = [rng.choice(vocab) for _ in range(rng.randint(0, 7))]
            assert ribes_align(hyp, ref) == align_by_stated_rule(hyp, ref)

    def test_alignment_is_one_to_one(self):
        rng = random.Random(5)
        for _ in range(100):
            hyp = [rng.choice("abc") for _ in range(rng.randint(1, 8))]
            ref = [rng.choice("abc") for _ in range(rng.randint(1, 8))]
            pairs = ribes_align(hyp, ref)
            assert len({i for i, _ in pairs}) == len(pairs)
            assert len({j for _, j in pairs}) == len(pairs)


class TestKendallTau:
    def test_matches_enumeration_small_permutations(self):
        for n in range(2, 7):
            for perm in itertools.permutations(range(n)):
                assert kendall_tau(list(perm)) == pytest.approx(
                    kendall_tau_enumerated(list(perm)), abs=1e-12
                )

    def test_sorted_is_one(self):
        assert kendall_tau([0, 1, 2, 3]) == 1.0

    def test_reversed_is_minus_one(self):
        assert kendall_tau([3, 2, 1, 0]) == -1.0

    def test_needs_two_ranks(self):
        with pytest.raises(ValueError):
            kendall_tau([1])


class TestRibesSentence:
    def test_identical_unique_words(self):
        sent = ["w1", "w2", "w3", "w4"]
        row = ribes_sentence(sent, sent)
        assert row.score == 1.0
        assert row.nkt == 1.0
        assert row.unigram_precision == 1.0
        assert row.brevity_penalty == 1.0

    def test_exact_reversal_scores_zero(self):
        ref = ["w1", "w2", "w3", "w4", "w5"]
        row = ribes_sentence(list(reversed(ref)), ref)
        assert row.nkt == 0.0
        assert row.score == 0.0

    def test_one_swap(self):
        # ranks (0, 2, 1, 3): 5 of 6 pairs concordant, tau 2/3, nkt 5/6.
        row = ribes_sentence(["a", "c", "b", "d"], ["a", "b", "c", "d"])
        assert row.nkt == pytest.approx(5 / 6, abs=1e-12)
        assert row.unigram_precision == 1.0
        assert row.brevity_penalty == 1.0
        assert row.score == pytest.approx(5 / 6, abs=1e-12)

    def test_frozen_mixed_sentence(self):
        hyp = "he read the book because he was interested in world history".split()
        ref = "he was interested in world history because he read the book".split()
        row = ribes_sentence(hyp, ref)
        assert row.aligned == 10
        assert row.score == pytest.approx(0.3471836763293549, abs=1e-12)

    def test_fewer_than_two_aligned_scores_zero(self):
        assert ribes_sentence(["a"], ["a"]).score == 0.0
        assert ribes_sentence(["a", "x"], ["a", "y"]).score == 0.0

    def test_empty_hypothesis(self):
        row = ribes_sentence([], ["a", "b"])
        assert row.score == 0.0

    def test_score_in_unit_interval(self):
        rng = random.Random(321)
        for _ in range(200):
            hyp = [rng.choice("abcde") for _ in range(rng.randint(0, 8))]
            ref = [rng.choice("abcde") for _ in range(rng.randint(0, 8))]
            assert 0.0 <= ribes_sentence(hyp, ref).score <= 1.0

    def test_breaking_sorted_order_never_raises_nkt(self):
        # Swapping an adjacent in-order pair of a unique-word hypothesis
        # introduces exactly one inversion, so nkt must drop.
        rng = random.Random(17)
        for _ in range(50):
            n = rng.randint(3, 8)
            ref = [f"w{i}" for i in range(n)]
            perm = list(range(n))
            rng.shuffle(perm)
            hyp = [ref[i] for i in perm]
            in_order = [
                k for k in range(n - 1) if perm[k] < perm[k + 1]
            ]
            if not in_order:
                continue
            base = ribes_sentence(hyp, ref).nkt
            k = rng.choice(in_order)
            swapped = hyp[:]
            swapped[k], swapped[k + 1] = swapped[k + 1], swapped[k]
            assert ribes_sentence(swapped, ref).nkt < base


class TestRibesCorpus:
    def test_mean_of_sentences(self):
        hyps = [["a", "b", "c"], ["x", "z", "y"]]
        refs = [["a", "b", "c"], ["x", "y", "z"]]
        report = ribes_corpus(hyps, refs)
        per_sentence = [s.score for s in report.sentences]
        assert report.score == pytest.approx(sum(per_sentence) / 2, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            ribes_corpus([["a"]], [])


class TestCompareSystems:
    def test_identical_systems_delta_zero(self):
        hyps = [tokenize("a blue boat on a lake"), tokenize("two birds fly")]
        refs = [tokenize("a blue ship on a lake"), tokenize("two birds fly away")]
        report = compare_systems(hyps, hyps, refs)
        assert report.delta_bleu == 0.0

    def test_perfect_corrected_beats_imperfect_original(self):
        refs = [tokenize("the dog sat on the mat"), tokenize("a girl reads a book")]
        original = [tokenize("the cat sat on the mat"), tokenize("a girl reads a letter")]
        report = compare_systems(original, refs, refs)
        assert report.delta_bleu > 0
        assert report.corrected.bleu.score == 100.0

    def test_table_layout(self):
        refs = [tokenize("a b c d")]
        report = compare_systems(refs, refs, refs, language="Bengali", test_set="eval")
        table = render_eval_table(report)
        assert "Model" in table and "Test Set" in table
        assert "BLEU" in table and "RIBES" in table and "Δ BLEU" in table
        assert "+0.00" in table

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            compare_systems([["a"]], [["a"], ["b"]], [["a"]])

    def test_json_round_trip_fields(self):
        refs = [tokenize("a b c d e")]
        report = compare_systems(refs, refs, refs, language="Hindi", test_set="challenge")
        blob = metrics.eval_to_json(report)
        assert blob["delta_bleu"] == 0.0
        assert blob["original"]["bleu"] == 100.0
        assert blob["language"] == "Hindi"
