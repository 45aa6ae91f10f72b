import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hadahash.codebook import (build_codebook, load_codebook, make_target,
                               project_and_sign, sample_projection,
                               save_codebook, select_order, sylvester,
                               target_batch)
from hadahash.io import BadMagicError, BadVersionError, TruncatedFileError


class TestSylvester:
    def test_order_one(self):
        assert np.array_equal(sylvester(1), [[1]])

    def test_order_two(self):
        assert np.array_equal(sylvester(2), [[1, 1], [1, -1]])

    def test_order_four(self):
        expected = [[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]]
        assert np.array_equal(sylvester(4), expected)

    @pytest.mark.parametrize("order", [1, 2, 4, 8, 32, 128, 256])
    def test_orthogonality_exact(self, order):
        h = sylvester(order)
        assert h.dtype == np.int64
        assert np.array_equal(h @ h.T, order * np.eye(order, dtype=np.int64))

    @pytest.mark.parametrize("order", [2, 4, 16, 64])
    def test_first_row_and_column_all_ones(self, order):
        h = sylvester(order)
        assert np.all(h[0] == 1)
        assert np.all(h[:, 0] == 1)

    @pytest.mark.parametrize("order", [2, 4, 16, 64])
    def test_balance_of_all_but_first(self, order):
        h = sylvester(order)
        assert np.all(h[1:].sum(axis=1) == 0)
        assert np.all(h[:, 1:].sum(axis=0) == 0)

    @pytest.mark.parametrize("order", [0, 3, 12, 20, -4, 1000])
    def test_rejects_non_powers_of_two(self, order):
        with pytest.raises(ValueError, match="power of two"):
            sylvester(order)


class TestSelectOrder:
    def test_examples(self):
        assert select_order(16, 10) == 16
        assert select_order(64, 100) == 128
        # strict margin: 64 classes need 65 candidates, so double up
        assert select_order(64, 64) == 128

    def test_margin_always_leaves_enough_candidates(self):
        for k in (2, 8, 16, 48, 64):
            for c in (1, 2, 10, 21, 100):
                order = select_order(k, c)
                assert order >= k
                assert order - 1 >= c
                assert order & (order - 1) == 0

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            select_order(0, 5)
        with pytest.raises(ValueError):
            select_order(8, 0)


class TestSampleProjection:
    def test_deterministic_for_seed(self):
        a = sample_projection(128, 64, seed=7)
        b = sample_projection(128, 64, seed=7)
        assert np.array_equal(a.values, b.values)

    def test_seed_changes_matrix(self):
        a = sample_projection(128, 64, seed=7)
        b = sample_projection(128, 64, seed=8)
        assert not np.array_equal(a.values, b.values)

    def test_moments_near_standard_normal(self):
        # 128 * 64 = 8192 samples is enough for the +-0.05 window
        p = sample_projection(128, 64, seed=7)
        assert abs(p.values.mean()) <= 0.05
        assert abs(p.values.var() - 1.0) <= 0.05

    def test_rejects_when_projection_not_needed(self):
        with pytest.raises(ValueError, match="order > code_bits"):
            sample_projection(64, 64, seed=1)
        with pytest.raises(ValueError, match="order > code_bits"):
            sample_projection(32, 64, seed=1)


# Output of a straight dense-multiply pass for (order=16, K=8, seed=3),
# recorded before any optimization of the sign path.
GOLDEN_16_8_SEED3 = [
    "-+-+----",
    "++-+----",
    "--++++++",
    "-+-+---+",
    "-+-++-+-",
    "+-+-+-++",
    "+-++++-+",
    "+-+----+",
    "+-+---++",
    "---+-+--",
    "+-+---++",
    "+++-+-+-",
    "+++-++-+",
    "+-+++-+-",
    "-++-+--+",
    "--+--+++",
]


def _rows_to_matrix(rows):
    return np.array([[1 if ch == "+" else -1 for ch in row] for row in rows],
                    dtype=np.int8)


class TestProjectAndSign:
    def test_orthogonal_pick_recovers_row_truncation(self):
        # (1/order) * H^T @ H is the identity, so its first K columns as the
        # projection reproduce the first-K truncation of every row of H.
        from hadahash.codebook import ProjectionMatrix
        order, k = 16, 8
        h = sylvester(order)
        t = ProjectionMatrix(values=(h.T @ h)[:, :k] / order, seed=0)
        result = project_and_sign(h, t)
        assert np.array_equal(result, h[:, :k])

    def test_entries_are_signs(self):
        h = sylvester(32)
        t = sample_projection(32, 16, seed=11)
        result = project_and_sign(h, t)
        assert set(np.unique(result)) <= {-1, 1}

    def test_golden_matrix(self):
        h = sylvester(16)
        t = sample_projection(16, 8, seed=3)
        assert np.array_equal(project_and_sign(h, t), _rows_to_matrix(GOLDEN_16_8_SEED3))

    def test_matches_independent_dense_product(self):
        # Oracle reduces over the inner axis with explicit broadcasting,
        # a different accumulation path than the matmul in the library.
        from hadahash.codebook import ProjectionMatrix
        rng = np.random.default_rng(42)
        for order, k in ((4, 2), (64, 16), (256, 256)):
            h = sylvester(order)
            values = rng.normal(size=(order, k))
            t = ProjectionMatrix(values=values, seed=0)
            oracle = np.add.reduce(h[:, :, None] * values[None, :, :], axis=1)
            expected = np.where(oracle >= 0, 1, -1)
            assert np.array_equal(project_and_sign(h, t), expected)

    def test_spot_check_pure_python_sums(self):
        h = sylvester(16)
        t = sample_projection(16, 8, seed=3)
        result = project_and_sign(h, t)
        for i, j in ((0, 0), (7, 3), (15, 7)):
            total = sum(int(h[i, l]) * float(t.values[l, j]) for l in range(16))
            assert result[i, j] == (1 if total >= 0 else -1)

    def test_rejects_dimension_mismatch(self):
        h = sylvester(16)
        t = sample_projection(32, 8, seed=0)
        with pytest.raises(ValueError, match="mismatch"):
            project_and_sign(h, t)


class TestBuildCodebook:
    def test_direct_path_is_exactly_orthogonal_and_balanced(self):
        book = build_codebook(16, 10, seed=1)
        assert book.provenance == "direct"
        w = book.codewords.astype(np.int64)
        gram = w @ w.T
        assert np.array_equal(gram, 16 * np.eye(10, dtype=np.int64))
        assert np.all(w.sum(axis=1) == 0)

    def test_deterministic(self):
        a = build_codebook(16, 10, seed=1)
        b = build_codebook(16, 10, seed=1)
        assert np.array_equal(a.codewords, b.codewords)
        assert np.array_equal(a.selected_indices, b.selected_indices)

    def test_selection_excludes_index_zero_and_is_distinct(self):
        for k, c, seed in ((16, 10, 1), (48, 100, 5), (32, 31, 9)):
            book = build_codebook(k, c, seed)
            idx = book.selected_indices
            assert len(set(idx.tolist())) == c
            assert 0 not in idx

    def test_projected_golden_max_correlation(self):
        # Brute-force maximum over distinct pairs, frozen for this seed.
        book = build_codebook(48, 100, seed=5)
        assert book.provenance == "projected"
        w = book.codewords.astype(np.int64)
        best = max(abs(int(w[i] @ w[j])) / 48
                   for i in range(100) for j in range(i + 1, 100))
        assert best == 28 / 48
        assert best <= 0.6

    def test_projected_path_composes_published_operations(self):
        book = build_codebook(48, 100, seed=5)
        order = select_order(48, 100)
        pool = project_and_sign(sylvester(order), sample_projection(order, 48, seed=5))
        assert np.array_equal(book.codewords, pool[book.selected_indices])

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            build_codebook(1, 10, seed=0)
        with pytest.raises(ValueError):
            build_codebook(16, 0, seed=0)
        with pytest.raises(ValueError):
            build_codebook(16, 10, seed=-1)


class TestMakeTarget:
    def test_single_label_is_codeword_lookup(self):
        book = build_codebook(16, 10, seed=1)
        for c in range(10):
            y = np.zeros(10, dtype=np.uint8)
            y[c] = 1
            target = make_target(book, y)
            assert np.array_equal(target.values, book.codeword(c))
            assert target.mask.all()

    def test_agreeing_bits_keep_shared_sign(self):
        book = build_codebook(16, 10, seed=1)
        y = np.zeros(10, dtype=np.uint8)
        y[[2, 5]] = 1
        target = make_target(book, y)
        agree = book.codeword(2) == book.codeword(5)
        assert np.array_equal(target.values[agree], book.codeword(2)[agree])
        assert target.mask[agree].all()

    def test_disagreeing_bits_are_masked_out(self):
        book = build_codebook(16, 10, seed=1)
        y = np.zeros(10, dtype=np.uint8)
        y[[2, 5]] = 1
        target = make_target(book, y)
        disagree = book.codeword(2) != book.codeword(5)
        assert np.all(target.values[disagree] == 0)
        assert not target.mask[disagree].any()

    def test_mask_iff_nonzero(self):
        book = build_codebook(16, 10, seed=3)
        y = np.array([1, 0, 1, 1, 0, 0, 1, 0, 0, 0], dtype=np.uint8)
        target = make_target(book, y)
        assert np.array_equal(target.mask, target.values != 0)

    def test_rejects_all_zero_labels(self):
        book = build_codebook(16, 10, seed=1)
        with pytest.raises(ValueError, match="no positive"):
            make_target(book, np.zeros(10, dtype=np.uint8))

    @given(st.integers(min_value=0, max_value=9))
    @settings(max_examples=20, deadline=None)
    def test_single_label_lookup_property(self, class_index):
        book = build_codebook(32, 10, seed=7)
        y = np.zeros(10, dtype=np.uint8)
        y[class_index] = 1
        target = make_target(book, y)
        assert np.array_equal(target.values, book.codeword(class_index))

    def test_batch_matches_per_row(self):
        book = build_codebook(16, 6, seed=2)
        rng = np.random.default_rng(0)
        labels = (rng.random((20, 6)) < 0.4).astype(np.uint8)
        labels[labels.sum(axis=1) == 0, 0] = 1
        values, mask = target_batch(book, labels)
        for i in range(20):
            target = make_target(book, labels[i])
            assert np.array_equal(values[i], target.values.astype(np.float64))
            assert np.array_equal(mask[i], target.mask)


class TestCodebookFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "book.hccb"
        for k, c, seed in ((16, 10, 1), (48, 100, 5)):
            book = build_codebook(k, c, seed)
            save_codebook(book, path)
            loaded = load_codebook(path)
            assert np.array_equal(loaded.codewords, book.codewords)
            assert loaded.provenance == book.provenance
            assert loaded.seed == book.seed
            assert loaded.selected_indices is None

    def test_rerun_writes_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a.hccb", tmp_path / "b.hccb"
        save_codebook(build_codebook(16, 10, 1), a)
        save_codebook(build_codebook(16, 10, 1), b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.hccb"
        path.write_bytes(b"XXXX" + b"\0" * 32)
        with pytest.raises(BadMagicError):
            load_codebook(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "book.hccb"
        save_codebook(build_codebook(16, 10, 1), path)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(BadVersionError):
            load_codebook(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "book.hccb"
        save_codebook(build_codebook(16, 10, 1), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) - 10])
        with pytest.raises(TruncatedFileError):
            load_codebook(path)
