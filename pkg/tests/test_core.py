import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepcrf.core import (Dataset, LabelAlphabet, LabeledSequence, encode_onehot, onehot_rows,
                          split_folds)


def _dataset(n, T=2):
    alphabet = LabelAlphabet(("a", "b"))
    seqs = tuple(LabeledSequence(np.zeros((T, 2)), [0] * T, "s%d" % i) for i in range(n))
    return Dataset(seqs, alphabet, 2)


class TestOnehot:
    def test_first_and_last(self):
        np.testing.assert_array_equal(encode_onehot(0, 3), [1, 0, 0])
        np.testing.assert_array_equal(encode_onehot(2, 3), [0, 0, 1])

    def test_ocr_alphabet_size(self):
        v = encode_onehot(25, 26)
        assert v.shape == (26,) and v[-1] == 1 and v.sum() == 1

    @pytest.mark.parametrize("idx,K", [(3, 3), (-1, 3), (0, 0)])
    def test_out_of_range(self, idx, K):
        with pytest.raises(ValueError):
            encode_onehot(idx, K)

    @given(st.integers(2, 30).flatmap(lambda K: st.tuples(st.just(K), st.integers(0, K - 1), st.integers(0, K - 1))))
    def test_injective(self, args):
        K, i, j = args
        same = np.array_equal(encode_onehot(i, K), encode_onehot(j, K))
        assert same == (i == j)

    def test_rows(self):
        np.testing.assert_array_equal(onehot_rows([1, 0], 2), [[0, 1], [1, 0]])


class TestTypes:
    def test_alphabet_rejects_duplicates_and_singletons(self):
        with pytest.raises(ValueError):
            LabelAlphabet(("a", "a"))
        with pytest.raises(ValueError):
            LabelAlphabet(("a",))

    def test_alphabet_bijection(self):
        a = LabelAlphabet(("x", "y", "z"))
        assert [a.index(a.name(i)) for i in range(a.K)] == [0, 1, 2]
        with pytest.raises(KeyError):
            a.index("w")

    def test_first_seen_order(self):
        a = LabelAlphabet.from_observed([["b", "a"], ["c", "b"]])
        assert a.labels == ("b", "a", "c")

    def test_sequence_validation(self):
        with pytest.raises(ValueError):
            LabeledSequence(np.zeros((3, 2)), [0, 1], "bad")
        with pytest.raises(ValueError):
            LabeledSequence(np.zeros((0, 2)), [], "empty")

    def test_sequence_is_readonly(self):
        s = LabeledSequence(np.zeros((2, 2)), [0, 1], "s")
        with pytest.raises(ValueError):
            s.frames[0, 0] = 1.0

    def test_dataset_checks_labels_and_width(self):
        alphabet = LabelAlphabet(("a", "b"))
        with pytest.raises(ValueError):
            Dataset((LabeledSequence(np.zeros((1, 2)), [2], "s"),), alphabet, 2)
        with pytest.raises(ValueError):
            Dataset((LabeledSequence(np.zeros((1, 3)), [0], "s"),), alphabet, 2)


class TestSplitFolds:
    def test_one_per_fold(self):
        f = split_folds(_dataset(10), 10, seed=7)
        assert f.sizes() == [1] * 10

    def test_sizes_three_two_and_reproducible(self):
        ds = _dataset(5)
        a = split_folds(ds, 2, seed=1)
        b = split_folds(ds, 2, seed=1)
        assert sorted(a.sizes()) == [2, 3]
        assert a.assignment == b.assignment
        assert list(a.assignment.items()) == list(b.assignment.items())

    def test_too_many_folds(self):
        with pytest.raises(ValueError):
            split_folds(_dataset(3), 4, seed=0)
        with pytest.raises(ValueError):
            split_folds(_dataset(3), 1, seed=0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 40), st.integers(2, 12), st.integers(0, 2**31))
    def test_partition(self, n, k, seed):
        if k > n:
            return
        ds = _dataset(n, T=1)
        f = split_folds(ds, k, seed)
        recovered = sorted(sid for fold in range(k) for sid in f.fold_ids(fold))
        assert recovered == sorted(s.id for s in ds)
        assert max(f.sizes()) - min(f.sizes()) <= 1
        assert min(f.sizes()) >= 1

    def test_train_test_split_is_whole_sequences(self):
        ds = _dataset(6, T=3)
        f = split_folds(ds, 3, seed=0)
        train, test = f.train_test(ds, 0)
        assert train.N + test.N == 6
        assert {s.id for s in train}.isdisjoint({s.id for s in test})
