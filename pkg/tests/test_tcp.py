import numpy as np
import pytest

from signgraph.rng import CounterRng
from signgraph.tcp import (
    NormalizerConfig, build_vocab, feature_dispersion, make_pseudo_gloss,
    suffix_lemmatizer,
)


class TestPseudoGloss:
    def test_basic_normalization(self):
        assert make_pseudo_gloss("Hello, world!") == ["hello", "world"]

    def test_order_preserved(self):
        assert make_pseudo_gloss("c b a") == ["c", "b", "a"]

    def test_idempotent(self):
        toks = make_pseudo_gloss("The cat, the CAT sat.")
        again = make_pseudo_gloss(" ".join(toks))
        assert toks == again

    def test_no_lowercase_option(self):
        cfg = NormalizerConfig(lowercase=False)
        assert make_pseudo_gloss("Ab Cd.", cfg) == ["Ab", "Cd"]

    def test_empty_text(self):
        assert make_pseudo_gloss("...  !") == []

    def test_lemmatizer_applied(self):
        cfg = NormalizerConfig(lemmatizer=suffix_lemmatizer(("ath", "um")))
        assert make_pseudo_gloss("baloath kanum qi.", cfg) == ["balo", "kan", "qi"]


class TestSuffixLemmatizer:
    def test_strips_longest_first(self):
        lem = suffix_lemmatizer(("s", "es"))
        assert lem("boxes") == "box"

    def test_keeps_short_stems(self):
        lem = suffix_lemmatizer(("ath",))
        assert lem("ath") == "ath"        # stem would be empty
        assert lem("boath") == "boath"    # stem would be 2 chars
        assert lem("baloath") == "balo"

    def test_non_matching_unchanged(self):
        lem = suffix_lemmatizer(("xy",))
        assert lem("hello") == "hello"


class TestBuildVocab:
    def test_frequency_then_lexicographic(self):
        v = build_vocab([["b", "a", "b"], ["c", "a"]])
        # b and a both appear twice: lexicographic tie puts a first
        assert v.tokens == ["a", "b", "c"]
        assert v.id_of("a") == 1

    def test_blank_reserved(self):
        v = build_vocab([["x"]])
        assert v.size == 2 and v.id_of("x") == 1

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            build_vocab([])


class TestFeatureDispersion:
    def test_identical_rows_give_one(self):
        assert feature_dispersion(np.ones((4, 3))) == pytest.approx(1.0)

    def test_orthogonal_rows_give_zero(self):
        seq = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        assert feature_dispersion(seq) == pytest.approx(0.0)

    def test_opposite_rows_give_minus_one(self):
        seq = np.array([[1.0, 0.0], [-1.0, 0.0]])
        assert feature_dispersion(seq) == pytest.approx(-1.0)

    def test_zero_row_against_nonzero_counts_zero(self):
        seq = np.array([[0.0, 0.0], [1.0, 0.0]])
        assert feature_dispersion(seq) == pytest.approx(0.0)

    def test_mean_over_consecutive_pairs(self):
        seq = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        assert feature_dispersion(seq) == pytest.approx(0.5)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            feature_dispersion(np.ones((1, 3)))

    def test_scale_invariant(self):
        x = CounterRng("disp").normal((6, 4))
        assert feature_dispersion(x) == pytest.approx(feature_dispersion(3.7 * x))
