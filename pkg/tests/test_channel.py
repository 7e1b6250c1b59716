import numpy as np
import pytest
from numpy.testing import assert_allclose

from otfsq.channel import (
    ChannelPath,
    ChannelRealization,
    OtfsDims,
    build_h0,
    doppler_dft,
    draw_channel,
    ideal_channel_matrix,
)
from otfsq.validate import dense_h0_oracle


def single_path(gain, delay, doppler, l_max=None, k_max=None):
    return ChannelRealization(
        paths=(ChannelPath(gain=gain, delay_tap=delay, doppler_tap=doppler),),
        l_max=delay if l_max is None else l_max,
        k_max=abs(doppler) if k_max is None else k_max,
    )


class TestH0Construction:
    def test_identity_case(self):
        op = build_h0(single_path(1.0, 0, 0), OtfsDims(4, 1))
        assert_allclose(op.h0_dense(), np.eye(4), atol=1e-15)

    def test_unit_delay_is_cyclic_shift(self):
        op = build_h0(single_path(1.0, 1, 0), OtfsDims(4, 1))
        expected = np.zeros((4, 4))
        for r, c in [(1, 0), (2, 1), (3, 2), (0, 3)]:
            expected[r, c] = 1.0
        assert_allclose(op.h0_dense(), expected, atol=1e-15)

    def test_unit_doppler_is_phase_ramp(self):
        op = build_h0(single_path(1.0, 0, 1), OtfsDims(4, 1))
        assert_allclose(op.h0_dense(), np.diag([1, 1j, -1, -1j]), atol=1e-14)

    def test_matches_dense_accumulation_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            dims = OtfsDims(4, 3)
            ch = draw_channel(rng, 3, 3, 4)
            op = build_h0(ch, dims)
            assert_allclose(op.h0_dense(), dense_h0_oracle(ch, dims), atol=1e-13)

    def test_sparsity_at_most_p_nonzeros_per_row_and_column(self):
        rng = np.random.default_rng(5)
        dims = OtfsDims(8, 4)
        ch = draw_channel(rng, 5, 6, 6)
        h0 = build_h0(ch, dims).h0_dense()
        nz_rows = (np.abs(h0) > 0).sum(axis=1)
        nz_cols = (np.abs(h0) > 0).sum(axis=0)
        assert nz_rows.max() <= 5 and nz_cols.max() <= 5

    def test_rejects_oversized_delay(self):
        with pytest.raises(ValueError):
            build_h0(single_path(1.0, 4, 0), OtfsDims(4, 1))


class TestGridVectorisation:
    def test_round_trip(self):
        from otfsq.channel import grid_to_vec, vec_to_grid

        rng = np.random.default_rng(4)
        dims = OtfsDims(3, 5)
        x = rng.standard_normal(15) + 1j * rng.standard_normal(15)
        grid = vec_to_grid(x, dims)
        assert grid.shape == (3, 5)
        assert np.array_equal(grid_to_vec(grid), x)
        # delay index fastest: entry (m, n) sits at position m + M*n
        assert grid[2, 1] == x[2 + 3 * 1]


class TestDopplerDft:
    def test_single_slot_is_identity(self):
        dims = OtfsDims(5, 1)
        x = np.arange(5, dtype=complex)
        assert_allclose(doppler_dft(x, dims, forward=True), x, atol=1e-15)

    def test_two_point_transform(self):
        dims = OtfsDims(1, 2)
        out = doppler_dft(np.array([1.0, 0.0], dtype=complex), dims, forward=True)
        assert_allclose(out, [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-15)

    def test_adjoint_inverts_forward(self):
        rng = np.random.default_rng(2)
        dims = OtfsDims(4, 8)
        x = rng.standard_normal(32) + 1j * rng.standard_normal(32)
        rt = doppler_dft(doppler_dft(x, dims, forward=True), dims, forward=False)
        assert_allclose(rt, x, atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            doppler_dft(np.zeros(5, dtype=complex), OtfsDims(2, 2))


class TestEffectiveChannel:
    def test_identity_h0_reduces_to_idft(self):
        dims = OtfsDims(1, 2)
        op = build_h0(single_path(1.0, 0, 0), dims)
        out = op.apply(np.array([1.0, 0.0], dtype=complex))
        assert_allclose(out, [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-15)

    def test_effective_channel_differs_from_identity(self):
        # even for H0 = I the quantizer-side operator keeps one transform
        dims = OtfsDims(2, 4)
        op = build_h0(single_path(1.0, 0, 0), dims)
        h = op.to_dense()
        h_ideal = ideal_channel_matrix(op)
        assert np.linalg.norm(h - np.eye(8)) > 0.1
        assert np.linalg.norm(h_ideal - np.eye(8)) < 1e-12

    def test_apply_matches_dense(self):
        rng = np.random.default_rng(7)
        dims = OtfsDims(4, 4)
        ch = draw_channel(rng, 3, 3, 3)
        op = build_h0(ch, dims)
        hd = op.to_dense()
        for _ in range(5):
            x = rng.standard_normal(16) + 1j * rng.standard_normal(16)
            assert_allclose(op.apply(x), hd @ x, atol=1e-12)
            assert_allclose(op.apply_adjoint(x), hd.conj().T @ x, atol=1e-12)

    def test_spectrum_equivalence(self):
        # unitary conjugation preserves the Gram spectrum
        rng = np.random.default_rng(9)
        dims = OtfsDims(4, 4)
        ch = draw_channel(rng, 4, 3, 3)
        op = build_h0(ch, dims)
        h = op.to_dense()
        h0 = op.h0_dense()
        ev_h = np.sort(np.linalg.eigvalsh(h.conj().T @ h))
        ev_h0 = np.sort(np.linalg.eigvalsh(h0.conj().T @ h0))
        assert_allclose(ev_h, ev_h0, atol=1e-10)


class TestIdealChannel:
    def test_identity_conjugation(self):
        op = build_h0(single_path(1.0, 0, 0), OtfsDims(3, 2))
        assert_allclose(ideal_channel_matrix(op), np.eye(6), atol=1e-13)

    def test_single_path_generalized_permutation(self):
        op = build_h0(single_path(1.0, 0, 1, l_max=1, k_max=1), OtfsDims(2, 2))
        hi = ideal_channel_matrix(op)
        mags = np.abs(hi)
        big = mags > 1e-10
        assert np.all(big.sum(axis=0) == 1) and np.all(big.sum(axis=1) == 1)
        assert_allclose(mags[big], 1.0, atol=1e-10)

    def test_single_path_index_map_is_2d_shift(self):
        # observed index map: input bin (m, n) lands on ((m+l) % M, (n+k) % N),
        # each with a unit-magnitude phase
        for m_dim, n_dim, l, k in [(4, 4, 1, 1), (8, 2, 3, 1), (3, 5, 2, -2)]:
            dims = OtfsDims(m_dim, n_dim)
            op = build_h0(single_path(1.0, l, k, l_max=max(l, 1), k_max=abs(k)), dims)
            hi = ideal_channel_matrix(op)
            for c in range(dims.mn):
                r = int(np.argmax(np.abs(hi[:, c])))
                m_in, n_in = c % m_dim, c // m_dim
                assert r % m_dim == (m_in + l) % m_dim
                assert r // m_dim == (n_in + k) % n_dim

    def test_frobenius_norm_invariance(self):
        rng = np.random.default_rng(13)
        dims = OtfsDims(4, 4)
        # distinct (delay, doppler) pairs so path contributions cannot overlap
        paths = (
            ChannelPath(gain=0.5 + 0.2j, delay_tap=0, doppler_tap=0),
            ChannelPath(gain=-0.3 + 0.9j, delay_tap=1, doppler_tap=2),
            ChannelPath(gain=0.1 - 0.4j, delay_tap=2, doppler_tap=-1),
        )
        ch = ChannelRealization(paths=paths, l_max=3, k_max=2)
        op = build_h0(ch, dims)
        expected = dims.mn * sum(abs(p.gain) ** 2 for p in paths)
        assert np.isclose(np.sum(np.abs(ideal_channel_matrix(op)) ** 2), expected, rtol=1e-10)
        assert np.isclose(np.sum(np.abs(op.h0_dense()) ** 2), expected, rtol=1e-10)


class TestDrawChannel:
    def test_first_tap_is_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            ch = draw_channel(rng, 4, 5, 3)
            assert ch.paths[0].delay_tap == 0

    def test_gain_power_normalisation(self):
        rng = np.random.default_rng(1)
        p = 4
        gains = np.concatenate([draw_channel(rng, p, 5, 3).gains for _ in range(2500)])
        assert abs(np.mean(np.abs(gains) ** 2) - 1.0 / p) < 0.05 / p

    def test_degenerate_delay_support(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            ch = draw_channel(rng, 2, 1, 2)
            assert ch.paths[1].delay_tap == 1

    def test_tap_ranges(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            ch = draw_channel(rng, 5, 7, 4)
            assert all(0 <= p.delay_tap <= 7 for p in ch.paths)
            assert all(-4 <= p.doppler_tap <= 4 for p in ch.paths)
