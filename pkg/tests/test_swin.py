import itertools

import numpy as np
import pytest

from histoswin.errors import ContractError, ShapeError
from histoswin.swin import (
    AttentionParams,
    WindowLayout,
    build_attention_mask,
    cyclic_shift,
    multi_head_attention,
    region_labels,
    swin_block_forward,
    window_partition,
    window_reverse,
)
from histoswin.tensor import Tensor, grad_check_params, layer_norm, sample_indices, tsum


def attn(rng, d, heads, scale=0.5, dtype=np.float32):
    return AttentionParams(*[(rng.standard_normal((d, d)) * scale).astype(dtype) for _ in range(4)], heads)


def brute_force_regions(h, w, window, shift):
    """Region of each position of the shifted map: which pre-shift band it came from.

    A position lands in a window together with others; two tokens may attend
    only if their pre-shift coordinates were contiguous in the unrolled map,
    i.e. neither wrapped across the border relative to the other.
    """
    labels = np.zeros((h, w), dtype=np.int64)
    for i in range(h):
        for j in range(w):
            src_i, src_j = (i + shift) % h, (j + shift) % w  # forward roll by -shift
            wrapped_i = i >= h - shift
            wrapped_j = j >= w - shift
            # windows at the bottom/right edge straddle real and wrapped content
            band_i = 2 if wrapped_i else (1 if i >= h - window else 0)
            band_j = 2 if wrapped_j else (1 if j >= w - window else 0)
            assert src_i == (i + shift) % h and src_j == (j + shift) % w
            labels[i, j] = band_i * 3 + band_j
    return labels


def window_members(h, w, window):
    """Brute-force list of positions per window: row-major windows, row-major tokens."""
    out = []
    for wr in range(h // window):
        for wc in range(w // window):
            out.append([(wr * window + r, wc * window + c) for r in range(window) for c in range(window)])
    return out


def no_wrap_oracle(h, w, window, shift):
    """Admissibility from first principles: tokens may attend iff their original
    positions are not separated by the wrap-around seam in either axis."""
    masks = []
    for members in window_members(h, w, window):
        n = len(members)
        m = np.zeros((n, n), bool)
        for a, (ia, ja) in enumerate(members):
            for b, (ib, jb) in enumerate(members):
                wrap_a = (ia >= h - shift, ja >= w - shift)
                wrap_b = (ib >= h - shift, jb >= w - shift)
                m[a, b] = wrap_a == wrap_b
        masks.append(m)
    return np.array(masks)


class TestPartition:
    def test_single_window(self, rng):
        f = rng.standard_normal((3, 4, 4)).astype(np.float32)
        win = window_partition(f, WindowLayout(4, 4, 4)).data
        assert win.shape == (1, 16, 3)
        assert np.array_equal(win[0], f.reshape(3, 16).T)

    def test_four_windows(self):
        f = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
        win = window_partition(f, WindowLayout(4, 4, 2)).data[..., 0]
        assert win.shape == (4, 4)
        assert list(win[0]) == [0, 1, 4, 5]

    def test_index_oracle_6x6(self, rng):
        f = rng.standard_normal((2, 6, 6)).astype(np.float32)
        win = window_partition(f, WindowLayout(6, 6, 3)).data
        for k, members in enumerate(window_members(6, 6, 3)):
            for t, (i, j) in enumerate(members):
                assert np.array_equal(win[k, t], f[:, i, j])

    def test_reverse_against_oracle(self, rng):
        layout = WindowLayout(6, 6, 3)
        win = rng.standard_normal((4, 9, 2)).astype(np.float32)
        ref = np.zeros((2, 6, 6), np.float32)
        for k, members in enumerate(window_members(6, 6, 3)):
            for t, (i, j) in enumerate(members):
                ref[:, i, j] = win[k, t]
        assert np.array_equal(window_reverse(win, layout).data, ref)

    @pytest.mark.parametrize("h", [4, 6, 8, 12])
    @pytest.mark.parametrize("w", [4, 6, 8, 12])
    def test_round_trip_grid(self, h, w, rng):
        f = rng.standard_normal((3, h, w)).astype(np.float32)
        for win in [d for d in range(1, min(h, w) + 1) if h % d == 0 and w % d == 0]:
            layout = WindowLayout(h, w, win)
            assert np.array_equal(window_reverse(window_partition(f, layout), layout).data, f)

    def test_indivisible(self):
        with pytest.raises(ShapeError):
            WindowLayout(6, 6, 4)

    def test_inconsistent_reverse(self):
        with pytest.raises(ShapeError):
            window_reverse(np.zeros((3, 4, 2)), WindowLayout(4, 4, 2))


class TestShift:
    def test_zero_shift(self, rng):
        f = rng.standard_normal((2, 4, 4))
        assert np.array_equal(cyclic_shift(f, 0).data, f)

    def test_inverse(self, rng):
        f = rng.standard_normal((2, 6, 6))
        assert np.array_equal(cyclic_shift(cyclic_shift(f, 2, "forward"), 2, "inverse").data, f)

    def test_modular_oracle(self):
        f = np.arange(16.0).reshape(1, 4, 4)
        inv = cyclic_shift(f, 2, "inverse").data
        fwd = cyclic_shift(f, 1, "forward").data
        for i, j in itertools.product(range(4), repeat=2):
            assert inv[0, (i + 2) % 4, (j + 2) % 4] == f[0, i, j]
            assert fwd[0, (i - 1) % 4, (j - 1) % 4] == f[0, i, j]
        assert inv[0, 2, 2] == 0


class TestMask:
    def test_no_shift_all_admissible(self):
        assert build_attention_mask(WindowLayout(8, 8, 4, 0)).all()

    def test_single_window_four_regions(self):
        mask = build_attention_mask(WindowLayout(4, 4, 4, 2))
        assert mask.shape == (1, 16, 16)
        assert mask.sum() == 64
        assert len(np.unique(region_labels(WindowLayout(4, 4, 4, 2)))) == 4

    def test_8x8_region_counts(self):
        layout = WindowLayout(8, 8, 4, 2)
        labels = brute_force_regions(8, 8, 4, 2)
        assert np.array_equal(region_labels(layout), labels)
        regions = [len(np.unique([labels[i, j] for i, j in m])) for m in window_members(8, 8, 4)]
        assert regions == [1, 2, 2, 4]
        counts = build_attention_mask(layout).sum(axis=(1, 2))
        assert list(counts) == [256, 128, 128, 64]

    @pytest.mark.parametrize("h,w,window,shift", [(8, 8, 4, 2), (4, 4, 4, 2), (12, 8, 4, 1), (6, 6, 3, 1),
                                                  (12, 12, 6, 3), (8, 8, 4, 3)])
    def test_matches_no_wrap_oracle(self, h, w, window, shift):
        assert np.array_equal(build_attention_mask(WindowLayout(h, w, window, shift)), no_wrap_oracle(h, w, window, shift))

    def test_symmetric_with_diagonal(self):
        m = build_attention_mask(WindowLayout(12, 12, 6, 3))
        assert np.array_equal(m, m.transpose(0, 2, 1))
        assert m[:, np.arange(36), np.arange(36)].all()


def reference_attention(x, p, mask=None):
    x = x.astype(np.float64)
    q, k, v, o = (np.asarray(a, np.float64) for a in (p.q, p.k, p.v, p.out))
    n, d = x.shape
    dk = d // p.heads
    heads = []
    for h in range(p.heads):
        cols = slice(h * dk, (h + 1) * dk)
        qh, kh, vh = x @ q[:, cols], x @ k[:, cols], x @ v[:, cols]
        logits = qh @ kh.T / np.sqrt(dk)
        if mask is not None:
            logits = np.where(mask, logits, -np.inf)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        heads.append((e / e.sum(axis=1, keepdims=True)) @ vh)
    return np.concatenate(heads, axis=1) @ o


class TestAttention:
    def test_single_token(self, rng):
        p = attn(rng, 4, 2)
        x = rng.standard_normal((1, 4)).astype(np.float32)
        out, weights = multi_head_attention(x, p, return_weights=True)
        assert np.all(weights.data == 1.0)
        np.testing.assert_allclose(out.data, (x @ p.v) @ p.out, rtol=1e-6)

    def test_identical_tokens(self, rng):
        x = np.repeat(rng.standard_normal((1, 6)).astype(np.float32), 5, axis=0)
        out = multi_head_attention(x, attn(rng, 6, 3)).data
        assert np.all(out == out[0])

    @pytest.mark.parametrize("heads", [1, 2])
    def test_against_64bit_reference(self, rng, heads):
        p = attn(rng, 4, heads)
        x = rng.standard_normal((3, 4)).astype(np.float32)
        np.testing.assert_allclose(multi_head_attention(x, p).data, reference_attention(x, p), rtol=1e-5, atol=1e-6)

    def test_masked_against_reference(self, rng):
        p = attn(rng, 4, 2)
        x = rng.standard_normal((4, 4)).astype(np.float32)
        mask = np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]], bool)
        np.testing.assert_allclose(multi_head_attention(x, p, mask).data, reference_attention(x, p, mask),
                                   rtol=1e-5, atol=1e-6)

    def test_empty_row_rejected(self, rng):
        mask = np.ones((3, 3), bool)
        mask[1] = False
        with pytest.raises(ContractError):
            multi_head_attention(np.zeros((3, 4), np.float32), attn(rng, 4, 2), mask)

    def test_permutation_equivariance(self, rng):
        p = attn(rng, 6, 2)
        x = rng.standard_normal((7, 6)).astype(np.float64)
        perm = rng.permutation(7)
        p64 = AttentionParams(*(np.asarray(a, np.float64) for a in (p.q, p.k, p.v, p.out)), 2)
        np.testing.assert_allclose(multi_head_attention(x[perm], p64).data,
                                   multi_head_attention(x, p64).data[perm], rtol=1e-12, atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        layout = WindowLayout(8, 8, 4, 2)
        p = attn(rng, 8, 2, scale=2.0)
        win = window_partition(rng.standard_normal((8, 8, 8)).astype(np.float32), layout)
        _, w = multi_head_attention(win, p, build_attention_mask(layout), return_weights=True)
        assert np.all(w.data >= 0)
        assert np.abs(w.data.sum(axis=-1) - 1).max() <= 1e-6


def block_params(rng, d, heads, scale=0.5):
    return (attn(rng, d, heads, scale), attn(rng, d, heads, scale)), (np.ones(d, np.float32), np.zeros(d, np.float32))


class TestSwinBlock:
    def test_zero_projections(self, rng):
        zero = AttentionParams(*[np.zeros((4, 4), np.float32) for _ in range(4)], 2)
        f = rng.standard_normal((4, 8, 8)).astype(np.float32)
        g, b = rng.standard_normal(4).astype(np.float32), rng.standard_normal(4).astype(np.float32)
        out = swin_block_forward(f, (zero, zero), (g, b), WindowLayout(8, 8, 4, 2)).data
        ref = layer_norm(f.transpose(1, 2, 0), g, b).data.transpose(2, 0, 1)
        assert np.array_equal(out, ref)

    def test_no_shift_equals_plain_window_passes(self, rng):
        (pa, pb), norm = block_params(rng, 4, 2)
        f = rng.standard_normal((4, 8, 8)).astype(np.float32)
        layout = WindowLayout(8, 8, 4, 0)
        out = swin_block_forward(f, (pa, pb), norm, layout).data
        win = window_partition(f, layout)
        t = window_reverse(win.data + multi_head_attention(win, pa).data, layout)
        win = window_partition(t, layout)
        t = window_reverse(win.data + multi_head_attention(win, pb, np.ones((16, 16), bool)).data, layout)
        ref = layer_norm(t.data.transpose(1, 2, 0), *norm).data.transpose(2, 0, 1)
        assert np.array_equal(out, ref)

    def test_cross_region_weights_vanish(self, rng):
        layout = WindowLayout(8, 8, 4, 2)
        (pa, pb), norm = block_params(rng, 8, 2, scale=1.0)
        _, weights = swin_block_forward(rng.standard_normal((8, 8, 8)).astype(np.float32), (pa, pb), norm,
                                        layout, return_weights=True)
        oracle = no_wrap_oracle(8, 8, 4, 2)
        wb = weights["stage_b"].data  # windows × heads × n × n
        assert wb[:, :, ~oracle[0]].size == 0
        blocked = np.broadcast_to(~oracle[:, None], wb.shape)
        assert wb[blocked].max() < 1e-7
        assert np.abs(wb.sum(axis=-1) - 1).max() <= 1e-6

    def test_shape_and_batch(self, rng):
        (pa, pb), norm = block_params(rng, 4, 2)
        f = rng.standard_normal((2, 4, 8, 8)).astype(np.float32)
        layout = WindowLayout(8, 8, 4, 2)
        batch = swin_block_forward(f, (pa, pb), norm, layout).data
        assert batch.shape == f.shape
        np.testing.assert_allclose(batch[1], swin_block_forward(f[1], (pa, pb), norm, layout).data, atol=1e-6)

    def test_gradients(self, rng):
        layout = WindowLayout(8, 8, 4, 2)
        (pa, pb), (g, b) = block_params(rng, 4, 2)
        params = {"a.q": pa.q, "a.k": pa.k, "a.v": pa.v, "a.out": pa.out,
                  "b.q": pb.q, "b.k": pb.k, "b.v": pb.v, "b.out": pb.out, "gamma": g, "beta": b}
        f = rng.standard_normal((4, 8, 8)).astype(np.float32)
        c = rng.standard_normal((4, 8, 8))

        def loss(p):
            dt = p["gamma"].dtype
            out = swin_block_forward(f.astype(dt), (AttentionParams.from_params(p, "a", 2),
                                                    AttentionParams.from_params(p, "b", 2)),
                                     (p["gamma"], p["beta"]), layout)
            return tsum(out * c.astype(dt))

        idx = {k: sample_indices(v.shape, 4, rng) for k, v in params.items()}
        reports = grad_check_params(loss, params, idx, rng=rng)
        assert all(r.passed for r in reports.values()), {k: str(r) for k, r in reports.items()}
