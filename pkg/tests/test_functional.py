import math

import numpy as np
import pytest

from planformer.nn.functional import (attention, conv, layer_norm, linear,
                                      mse_loss, multi_head_attention,
                                      positional_encoding, softmax)
from planformer.nn.optim import Adam
from planformer.nn.serialize import WeightFormatError, load_tensors, save_tensors
from planformer.nn.tensor import Tensor

from conftest import gradcheck


def tparam(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


class TestLinear:
    def test_forward(self, rng):
        x = rng.standard_normal((2, 3))
        w = rng.standard_normal((3, 4))
        b = rng.standard_normal(4)
        out = linear(Tensor(x), Tensor(w), Tensor(b))
        assert np.allclose(out.data, x @ w + b)

    def test_grad(self, rng):
        x, w, b = tparam(rng, 2, 5, 3), tparam(rng, 3, 4), tparam(rng, 4)
        gradcheck(lambda: (linear(x, w, b) ** 2.0).sum(), [x, w, b], rng)


class TestConv:
    def test_forward_matches_direct_2d(self, rng):
        x = rng.standard_normal((1, 1, 5, 5))
        k = rng.standard_normal((2, 1, 3, 3))
        b = rng.standard_normal(2)
        out = conv(Tensor(x), Tensor(k), Tensor(b), padding=1).data
        xp = np.pad(x[0, 0], 1)
        for o in range(2):
            for i in range(5):
                for j in range(5):
                    ref = (xp[i:i + 3, j:j + 3] * k[o, 0]).sum() + b[o]
                    assert out[0, o, i, j] == pytest.approx(ref)

    def test_grad_2d(self, rng):
        x, k, b = tparam(rng, 2, 3, 5, 4), tparam(rng, 4, 3, 3, 3), tparam(rng, 4)
        gradcheck(lambda: (conv(x, k, b) ** 2.0).sum(), [x, k, b], rng)

    def test_grad_3d(self, rng):
        x = tparam(rng, 1, 2, 4, 4, 4)
        k = tparam(rng, 3, 2, 3, 3, 3)
        b = tparam(rng, 3)
        gradcheck(lambda: (conv(x, k, b) ** 2.0).sum(), [x, k, b], rng)

    def test_grad_padding_zero(self, rng):
        x, k, b = tparam(rng, 1, 1, 7, 7), tparam(rng, 2, 1, 3, 3), tparam(rng, 2)
        gradcheck(lambda: (conv(x, k, b, padding=0) ** 2.0).sum(), [x, k, b], rng)

    def test_output_shape_padding_zero(self, rng):
        out = conv(tparam(rng, 1, 1, 7, 7), tparam(rng, 2, 1, 3, 3), tparam(rng, 2),
                   padding=0)
        assert out.shape == (1, 2, 5, 5)


class TestSoftmax:
    def test_rows_sum_to_one(self, rng):
        out = softmax(tparam(rng, 3, 5)).data
        assert np.allclose(out.sum(axis=-1), 1.0)

    def test_shift_invariance_large_values(self):
        out = softmax(Tensor([[1000.0, 1001.0]])).data
        ref = softmax(Tensor([[0.0, 1.0]])).data
        assert np.allclose(out, ref)

    def test_grad(self, rng):
        x = tparam(rng, 2, 4)
        t = Tensor(rng.standard_normal((2, 4)))
        gradcheck(lambda: ((softmax(x) - t) ** 2.0).sum(), [x], rng)


class TestLayerNorm:
    def test_normalizes(self, rng):
        x = tparam(rng, 4, 6)
        g = Tensor(np.ones(6), requires_grad=True)
        b = Tensor(np.zeros(6), requires_grad=True)
        out = layer_norm(x, g, b).data
        assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-9)
        assert np.allclose(out.std(axis=-1), 1.0, atol=1e-3)

    def test_grad(self, rng):
        x, g, b = tparam(rng, 3, 6), tparam(rng, 6), tparam(rng, 6)
        gradcheck(lambda: ((layer_norm(x, g, b)) ** 2.0).sum(), [x, g, b], rng)


class TestAttention:
    def test_uniform_keys_average_values(self, rng):
        # identical keys -> uniform weights -> output is the mean value vector
        q = Tensor(rng.standard_normal((1, 2, 4)))
        k = Tensor(np.zeros((1, 3, 4)))
        v = Tensor(rng.standard_normal((1, 3, 4)))
        out = attention(q, k, v).data
        assert np.allclose(out, v.data.mean(axis=1, keepdims=True))

    def test_mask_removes_key_influence(self, rng):
        q = tparam(rng, 1, 2, 4)
        k = tparam(rng, 1, 3, 4)
        v = tparam(rng, 1, 3, 4)
        mask = np.array([[True, True, False]])
        out_masked = attention(q, k, v, mask).data
        out_short = attention(Tensor(q.data), Tensor(k.data[:, :2]),
                              Tensor(v.data[:, :2])).data
        assert np.allclose(out_masked, out_short)

    def test_fully_masked_rows_are_zero(self, rng):
        q, k, v = tparam(rng, 1, 2, 4), tparam(rng, 1, 3, 4), tparam(rng, 1, 3, 4)
        mask = np.array([[False, False, False]])
        out = attention(q, k, v, mask).data
        assert np.isfinite(out).all()
        assert np.allclose(out, 0.0)

    def test_grad(self, rng):
        q, k, v = tparam(rng, 2, 3, 4), tparam(rng, 2, 5, 4), tparam(rng, 2, 5, 4)
        mask = np.ones((2, 5), dtype=bool)
        mask[1, 3:] = False
        gradcheck(lambda: (attention(q, k, v, mask) ** 2.0).sum(), [q, k, v], rng)

    def test_grad_4d(self, rng):
        q, k, v = tparam(rng, 2, 2, 3, 4), tparam(rng, 2, 2, 5, 4), tparam(rng, 2, 2, 5, 4)
        gradcheck(lambda: (attention(q, k, v) ** 2.0).sum(), [q, k, v], rng)


class TestMultiHeadAttention:
    def make_params(self, rng, d_model=8, n_head=2, head_dim=3):
        proj = n_head * head_dim
        ps = dict(wq=tparam(rng, d_model, proj), bq=tparam(rng, proj),
                  wk=tparam(rng, d_model, proj), bk=tparam(rng, proj),
                  wv=tparam(rng, d_model, proj), bv=tparam(rng, proj),
                  wo=tparam(rng, proj, d_model), bo=tparam(rng, d_model))
        return ps, n_head, head_dim

    def test_output_shape(self, rng):
        ps, n_head, head_dim = self.make_params(rng)
        x = tparam(rng, 2, 5, 8)
        out = multi_head_attention(x, x, **ps, n_head=n_head, head_dim=head_dim)
        assert out.shape == (2, 5, 8)

    def test_grad(self, rng):
        ps, n_head, head_dim = self.make_params(rng)
        x = tparam(rng, 2, 4, 8)
        mask = np.ones((2, 4), dtype=bool)
        mask[0, 2:] = False
        # bk is excluded: a shared key-bias shift cancels inside softmax, so
        # its true gradient is zero and the relative-error check is undefined
        checked = [x] + [ps[n] for n in ("wq", "bq", "wk", "wv", "bv", "wo", "bo")]
        gradcheck(lambda: (multi_head_attention(x, x, **ps, n_head=n_head,
                                                head_dim=head_dim,
                                                key_mask=mask) ** 2.0).sum(),
                  checked, rng)

    def test_padding_rows_do_not_leak(self, rng):
        ps, n_head, head_dim = self.make_params(rng)
        x = Tensor(rng.standard_normal((1, 5, 8)))
        x_pad = Tensor(np.concatenate([x.data, rng.standard_normal((1, 3, 8))], axis=1))
        mask = np.array([[True] * 5 + [False] * 3])
        out = multi_head_attention(x, x, **ps, n_head=n_head, head_dim=head_dim,
                                   key_mask=np.ones((1, 5), dtype=bool)).data
        out_pad = multi_head_attention(x_pad, x_pad, **ps, n_head=n_head,
                                       head_dim=head_dim, key_mask=mask).data
        assert np.allclose(out, out_pad[:, :5], atol=1e-12)


class TestPositionalEncoding:
    def test_values_match_formula_2d(self):
        d = 8
        pe = positional_encoding(np.array([[3.0, 7.0]]), d)[0]
        for j in range(d):
            coord = (3.0, 7.0)[j % 2]
            freq = 10000.0 ** (-2 * (j // 2) / d)
            ref = math.sin(coord * freq) if j % 2 == 0 else math.cos(coord * freq)
            assert pe[j] == pytest.approx(ref)

    def test_values_match_formula_3d(self):
        d = 9
        pe = positional_encoding(np.array([[1.0, 2.0, 3.0]]), d)[0]
        for j in range(d):
            coord = (1.0, 2.0, 3.0)[j % 3]
            freq = 10000.0 ** (-2 * (j // 2) / d)
            ref = math.sin(coord * freq) if j % 2 == 0 else math.cos(coord * freq)
            assert pe[j] == pytest.approx(ref)

    def test_bounded(self, rng):
        pe = positional_encoding(rng.uniform(0, 100, (50, 2)), 64)
        assert (np.abs(pe) <= 1.0).all()


class TestMseLoss:
    def test_value(self):
        loss = mse_loss(Tensor([[1.0, 2.0]]), Tensor([[0.0, 4.0]]))
        assert loss.item() == pytest.approx((1 + 4) / 2)

    def test_grad(self, rng):
        p = tparam(rng, 4, 2)
        t = Tensor(rng.standard_normal((4, 2)))
        gradcheck(lambda: mse_loss(p, t), [p], rng)


class TestAdam:
    def test_first_step_magnitude(self):
        # with bias correction the very first update has magnitude ~lr
        p = Tensor([1.0], requires_grad=True)
        opt = Adam([p], lr=0.1)
        (p * 3.0).sum().backward()
        opt.step()
        assert p.data[0] == pytest.approx(1.0 - 0.1, abs=1e-6)

    def test_converges_on_quadratic(self, rng):
        p = Tensor(rng.standard_normal(3), requires_grad=True)
        target = np.array([1.0, -2.0, 0.5])
        opt = Adam([p], lr=0.05)
        for _ in range(500):
            opt.zero_grad()
            ((p - Tensor(target)) ** 2.0).sum().backward()
            opt.step()
        assert np.allclose(p.data, target, atol=1e-2)


class TestSerialize:
    def test_roundtrip(self, tmp_path, rng):
        tensors = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(5)}
        p = tmp_path / "w.weights"
        save_tensors(p, tensors, meta={"note": 1})
        meta, loaded = load_tensors(p)
        assert meta == {"note": 1}
        for name in tensors:
            assert loaded[name].dtype == np.float64
            assert np.allclose(loaded[name], tensors[name], atol=1e-6)

    def test_truncated_blob_rejected(self, tmp_path, rng):
        p = tmp_path / "w.weights"
        save_tensors(p, {"a": rng.standard_normal(8)}, meta={})
        data = p.read_bytes()
        p.write_bytes(data[:-4])
        with pytest.raises(WeightFormatError):
            load_tensors(p)

    def test_garbage_header_rejected(self, tmp_path):
        p = tmp_path / "w.weights"
        p.write_bytes(b"not json\n\x00\x00")
        with pytest.raises(WeightFormatError):
            load_tensors(p)
