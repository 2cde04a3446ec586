"""Neural-net primitives: forward values against brute-force loop oracles,
gradients against finite differences, and structural roundtrips."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdformer import ops
from sdformer.gradcheck import gradcheck
from sdformer.tensor import Tensor

import reference


def t(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


class TestConv2d:
    def test_dense_matches_loop_oracle(self, rng):
        x = rng.normal(size=(3, 6, 7))
        w = rng.normal(size=(5, 3, 3, 3))
        b = rng.normal(size=(5,))
        got = ops.conv2d(t(x), t(w), t(b), stride=1, padding=1).data
        want = reference.conv2d_loop(x, w, b, stride=1, padding=1)
        assert np.allclose(got, want, atol=1e-12)

    def test_strided_no_padding(self, rng):
        x = rng.normal(size=(2, 9, 9))
        w = rng.normal(size=(4, 2, 3, 3))
        got = ops.conv2d(t(x), t(w), stride=2, padding=0).data
        want = reference.conv2d_loop(x, w, None, stride=2, padding=0)
        assert got.shape == (4, 4, 4)
        assert np.allclose(got, want, atol=1e-12)

    def test_grouped_matches_loop_oracle(self, rng):
        x = rng.normal(size=(6, 5, 5))
        w = rng.normal(size=(4, 3, 3, 3))  # groups=2: 2 outs per group
        got = ops.conv2d(t(x), t(w), padding=1, groups=2).data
        want = reference.conv2d_loop(x, w, None, padding=1, groups=2)
        assert np.allclose(got, want, atol=1e-12)

    def test_depthwise_matches_loop_oracle(self, rng):
        x = rng.normal(size=(5, 6, 6))
        w = rng.normal(size=(5, 1, 3, 3))
        got = ops.conv2d(t(x), t(w), padding=1, groups=5).data
        want = reference.conv2d_loop(x, w, None, padding=1, groups=5)
        assert np.allclose(got, want, atol=1e-12)

    def test_1x1_is_channel_mix(self, rng):
        x = rng.normal(size=(4, 3, 3))
        w = rng.normal(size=(2, 4, 1, 1))
        got = ops.conv2d(t(x), t(w)).data
        want = np.einsum("oi,ihw->ohw", w[:, :, 0, 0], x)
        assert np.allclose(got, want, atol=1e-12)

    def test_invalid_geometry_rejected(self):
        x = t(np.zeros((2, 4, 4)))
        w = t(np.zeros((3, 2, 7, 7)))
        with pytest.raises(Exception):
            ops.conv2d(x, w)  # kernel larger than padded input

    @pytest.mark.parametrize(
        "groups,shape_w", [(1, (5, 4, 3, 3)), (2, (4, 2, 3, 3)), (4, (4, 1, 3, 3))]
    )
    def test_gradcheck(self, rng, groups, shape_w):
        x = t(rng.normal(size=(4, 6, 6)))
        w = t(rng.normal(size=shape_w) * 0.3)
        rep = gradcheck(
            lambda a, b: ops.conv2d(a, b, padding=1, groups=groups).square().mean(),
            [x, w],
            eps=1e-5,
            tol=1e-6,
        )
        assert rep.passed, str(rep)

    def test_bias_grad_is_output_count(self, rng):
        x = t(rng.normal(size=(2, 4, 4)))
        w = t(rng.normal(size=(3, 2, 3, 3)))
        b = t(np.zeros(3))
        ops.conv2d(x, w, b, padding=1).sum().backward()
        assert np.allclose(b.grad, np.full(3, 16.0))


class TestLayerNorm:
    def test_matches_loop_oracle(self, rng):
        x = rng.normal(size=(5, 3, 4)) * 3 + 1
        gamma = rng.normal(size=(5,))
        beta = rng.normal(size=(5,))
        got = ops.layer_norm(t(x), t(gamma), t(beta)).data
        want = reference.layer_norm_loop(x, gamma, beta)
        assert np.allclose(got, want, atol=1e-10)

    def test_output_statistics(self, rng):
        x = rng.normal(size=(16, 4, 4)) * 7 - 3
        y = ops.layer_norm(t(x), t(np.ones(16)), t(np.zeros(16))).data
        assert np.allclose(y.mean(axis=0), 0.0, atol=1e-7)
        assert np.allclose(y.std(axis=0), 1.0, atol=1e-3)

    def test_gradcheck_x_gamma_beta(self, rng):
        x = t(rng.normal(size=(6, 3, 3)))
        gamma = t(rng.normal(size=(6,)))
        beta = t(rng.normal(size=(6,)))
        rep = gradcheck(
            lambda a, g, b: ops.layer_norm(a, g, b).square().mean(),
            [x, gamma, beta],
            eps=1e-5,
            tol=1e-6,
        )
        assert rep.passed, str(rep)


class TestActivations:
    def test_gelu_matches_erf_formula(self, rng):
        x = rng.normal(size=(50,)) * 3
        got = ops.gelu(t(x)).data
        want = np.array([reference.gelu_scalar(v) for v in x])
        assert np.allclose(got, want, atol=1e-12)

    def test_gelu_asymptotics(self):
        x = t([-30.0, 0.0, 30.0])
        y = ops.gelu(x).data
        assert y[0] == pytest.approx(0.0, abs=1e-12)
        assert y[1] == 0.0
        assert y[2] == pytest.approx(30.0, abs=1e-12)

    def test_leaky_relu_values_and_slope(self):
        x = t([-2.0, 0.0, 3.0])
        y = ops.leaky_relu(x)
        assert np.allclose(y.data, [-0.4, 0.0, 3.0])
        y.sum().backward()
        assert np.allclose(x.grad, [0.2, 1.0, 1.0])

    def test_activation_gradchecks(self, rng):
        for fn in (ops.gelu, ops.leaky_relu):
            x = t(rng.normal(size=(40,)))
            rep = gradcheck(lambda a: fn(a).square().mean(), [x], tol=1e-6)
            assert rep.passed, str(rep)


class TestSoftmax:
    def test_matches_loop_oracle(self, rng):
        x = rng.normal(size=(4, 7)) * 5
        got = ops.softmax(t(x), axis=-1).data
        assert np.allclose(got, reference.softmax_loop(x), atol=1e-12)

    def test_rows_sum_to_one_and_shift_invariance(self, rng):
        x = rng.normal(size=(3, 9))
        y = ops.softmax(t(x), axis=-1).data
        assert np.allclose(y.sum(axis=-1), 1.0, atol=1e-12)
        y2 = ops.softmax(t(x + 1000.0), axis=-1).data
        assert np.allclose(y, y2, atol=1e-12)

    def test_extreme_logits_stable(self):
        x = t([[1e4, -1e4, 0.0]])
        y = ops.softmax(x, axis=-1).data
        assert np.isfinite(y).all()
        assert y[0, 0] == pytest.approx(1.0)

    def test_gradcheck(self, rng):
        x = t(rng.normal(size=(5, 6)))
        w = Tensor(rng.normal(size=(5, 6)))
        rep = gradcheck(
            lambda a: (ops.softmax(a, axis=-1) * w).sum(), [x], tol=1e-6
        )
        assert rep.passed, str(rep)


class TestPixelShuffle:
    def test_unshuffle_layout(self):
        # One channel, 4x4 ramp: unshuffle(2) packs each 2x2 cell into channels.
        x = np.arange(16, dtype=np.float64).reshape(1, 4, 4)
        y = ops.pixel_unshuffle(t(x), 2).data
        assert y.shape == (4, 2, 2)
        # channel order is (dy, dx) within the cell
        assert np.array_equal(y[0], [[0, 2], [8, 10]])
        assert np.array_equal(y[1], [[1, 3], [9, 11]])
        assert np.array_equal(y[2], [[4, 6], [12, 14]])
        assert np.array_equal(y[3], [[5, 7], [13, 15]])

    def test_roundtrip_bit_exact(self, rng):
        x = rng.normal(size=(3, 8, 12))
        y = ops.pixel_shuffle(ops.pixel_unshuffle(t(x), 2), 2).data
        assert np.array_equal(y, x)
        z = ops.pixel_unshuffle(ops.pixel_shuffle(t(rng.normal(size=(12, 4, 5))), 2), 2)
        assert z.shape == (12, 4, 5)

    def test_indivisible_rejected(self):
        with pytest.raises(Exception):
            ops.pixel_unshuffle(t(np.zeros((1, 5, 4))), 2)

    def test_gradcheck(self, rng):
        x = t(rng.normal(size=(2, 6, 4)))
        rep = gradcheck(
            lambda a: ops.pixel_shuffle(ops.pixel_unshuffle(a, 2), 2).square().mean(),
            [x],
            tol=1e-6,
        )
        assert rep.passed, str(rep)


class TestWindows:
    def test_partition_content(self):
        x = np.arange(2 * 4 * 6, dtype=np.float64).reshape(2, 4, 6)
        win = ops.window_partition(t(x), 2, 3).data
        # 4 windows of 2x3, each flattened row-major to length 6, channels last
        assert win.shape == (4, 6, 2)
        first = x[:, 0:2, 0:3]  # (C=2, 2, 3)
        assert np.array_equal(win[0], first.reshape(2, 6).T)

    def test_roundtrip_bit_exact(self, rng):
        x = rng.normal(size=(3, 8, 12))
        win = ops.window_partition(t(x), 4, 3)
        back = ops.window_merge(win, 8, 12, 4, 3).data
        assert np.array_equal(back, x)

    def test_window_must_tile(self):
        with pytest.raises(Exception):
            ops.window_partition(t(np.zeros((1, 5, 4))), 2, 2)

    def test_gradcheck(self, rng):
        x = t(rng.normal(size=(2, 4, 6)))
        rep = gradcheck(
            lambda a: ops.window_merge(
                ops.window_partition(a, 2, 3), 4, 6, 2, 3
            ).square().mean(),
            [x],
            tol=1e-6,
        )
        assert rep.passed, str(rep)


class TestPadCrop:
    def test_zero_pad_values(self):
        x = t(np.ones((1, 2, 2)))
        y = ops.pad2d(x, (1, 0, 0, 2), mode="zero").data
        assert y.shape == (1, 3, 4)
        assert y[0, 0].tolist() == [0, 0, 0, 0]
        assert y[0, 1].tolist() == [1, 1, 0, 0]

    def test_reflect_matches_numpy(self, rng):
        x = rng.normal(size=(2, 5, 6))
        y = ops.pad2d(t(x), (2, 1, 3, 2), mode="reflect").data
        want = np.pad(x, ((0, 0), (2, 1), (3, 2)), mode="reflect")
        assert np.array_equal(y, want)

    def test_reflect_single_row(self):
        # reflect on extent 1 has no neighbor to mirror; result must repeat it
        x = t(np.array([[[3.0, 4.0]]]))
        y = ops.pad2d(x, (1, 1, 0, 0), mode="reflect").data
        assert np.array_equal(y[0, :, 0], [3.0, 3.0, 3.0])

    def test_crop_inverts_pad(self, rng):
        x = rng.normal(size=(2, 4, 5))
        padded = ops.pad2d(t(x), (1, 2, 0, 3), mode="reflect")
        back = ops.crop2d(padded, (1, 2, 0, 3)).data
        assert np.array_equal(back, x)

    def test_pad_gradchecks(self, rng):
        for mode in ("zero", "reflect"):
            x = t(rng.normal(size=(2, 4, 5)))
            rep = gradcheck(
                lambda a: ops.pad2d(a, (2, 1, 1, 2), mode=mode).square().mean(),
                [x],
                tol=1e-6,
            )
            assert rep.passed, f"{mode}: {rep}"

    def test_reflect_grad_accumulates_at_mirrored_sources(self):
        # With input [a b c], pad (1,1) reflect = [b a b c b]; d/db of sum = 3
        x = t(np.array([[[1.0, 2.0, 3.0]]]))
        ops.pad2d(x, (0, 0, 1, 1), mode="reflect").sum().backward()
        assert np.array_equal(x.grad[0, 0], [1.0, 3.0, 1.0])


@settings(max_examples=30, deadline=None)
@given(
    c=st.integers(1, 4),
    hh=st.integers(1, 4),
    ww=st.integers(1, 4),
    r=st.integers(2, 3),
    data=st.data(),
)
def test_shuffle_roundtrip_property(c, hh, ww, r, data):
    shape = (c * r * r, hh, ww)
    x = np.asarray(
        data.draw(
            st.lists(
                st.floats(-1e6, 1e6, allow_nan=False, width=32),
                min_size=int(np.prod(shape)),
                max_size=int(np.prod(shape)),
            )
        ),
        dtype=np.float64,
    ).reshape(shape)
    y = ops.pixel_unshuffle(ops.pixel_shuffle(Tensor(x), r), r).data
    assert np.array_equal(y, x)


@settings(max_examples=30, deadline=None)
@given(
    c=st.integers(1, 3),
    th=st.integers(1, 3),
    tw=st.integers(1, 3),
    dh=st.integers(1, 4),
    dw=st.integers(1, 4),
    seed=st.integers(0, 2**31),
)
def test_window_roundtrip_property(c, th, tw, dh, dw, seed):
    h, w = th * dh, tw * dw
    x = np.random.default_rng(seed).normal(size=(c, h, w))
    back = ops.window_merge(ops.window_partition(Tensor(x), dh, dw), h, w, dh, dw).data
    assert np.array_equal(back, x)
