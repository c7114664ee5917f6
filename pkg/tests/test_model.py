import numpy as np
import pytest

from lfpstage.features import FeatureTensor
from lfpstage.loss import FocalLossConfig
from lfpstage.model import (
    ModelDims,
    ShapeError,
    backward,
    channel_attention,
    conv1d_forward,
    forward,
    head_forward,
    init_params,
    load_model,
    loss_and_grads,
    save_model,
    temporal_pool,
)

SMALL = ModelDims(n_layers=4, feat_dim=8, attn_dim=4, widths=(8, 8, 8))


def small_input(rng, frames=20, channels=8, dims=SMALL):
    return FeatureTensor(rng.standard_normal((channels, dims.n_layers, frames, dims.feat_dim)))


def attention_oracle(W_Q, W_K, W_V, F):
    d = W_Q.shape[0]
    scores = []
    for i in range(F.shape[0]):
        f = F[i].mean(axis=0)
        scores.append(np.dot(W_Q @ f, W_K @ f) / np.sqrt(d))
    scores = np.array(scores)
    alpha = np.exp(scores - scores.max())
    alpha /= alpha.sum()
    H = sum(alpha[i] * (F[i] @ W_V.T) for i in range(F.shape[0]))
    return H, alpha


def conv_oracle(K, b, X):
    c_out, c_in, w = K.shape
    T = X.shape[1] - w + 1
    out = np.zeros((c_out, T))
    for o in range(c_out):
        for t in range(T):
            out[o, t] = max(0.0, b[o] + sum(K[o, i, k] * X[i, t + k] for i in range(c_in) for k in range(w)))
    return out


class TestAttention:
    def test_matches_oracle(self, rng):
        W = [rng.standard_normal((4, 6)) for _ in range(3)]
        F = rng.standard_normal((8, 10, 6))
        H, alpha = channel_attention(*W, F)
        H2, alpha2 = attention_oracle(*W, F)
        np.testing.assert_allclose(H, H2, atol=1e-12)
        np.testing.assert_allclose(alpha, alpha2, atol=1e-12)

    def test_identical_channels_uniform(self, rng):
        W = [rng.standard_normal((4, 6)) for _ in range(3)]
        F = np.repeat(rng.standard_normal((1, 10, 6)), 8, axis=0)
        _, alpha = channel_attention(*W, F)
        np.testing.assert_allclose(alpha, 1 / 8, atol=1e-15)

    def test_single_channel(self, rng):
        W = [rng.standard_normal((4, 6)) for _ in range(3)]
        F = rng.standard_normal((1, 10, 6))
        H, alpha = channel_attention(*W, F)
        assert alpha.tolist() == [1.0]
        np.testing.assert_allclose(H, F[0] @ W[2].T, atol=1e-12)

    def test_no_channels(self, rng):
        W = [rng.standard_normal((4, 6)) for _ in range(3)]
        with pytest.raises(ShapeError):
            channel_attention(*W, np.zeros((0, 10, 6)))


class TestConv:
    def test_matches_oracle(self, rng):
        K = rng.standard_normal((3, 2, 5))
        b = rng.standard_normal(3)
        X = rng.standard_normal((2, 12))
        np.testing.assert_allclose(conv1d_forward(K, b, X), conv_oracle(K, b, X), atol=1e-12)

    def test_valid_length(self, rng):
        K = rng.standard_normal((2, 2, 5))
        assert conv1d_forward(K, np.zeros(2), rng.standard_normal((2, 100))).shape == (2, 96)

    def test_identity_kernel(self, rng):
        K = np.zeros((1, 1, 5))
        K[0, 0, 2] = 1.0
        X = np.abs(rng.standard_normal((1, 30)))
        np.testing.assert_array_equal(conv1d_forward(K, np.zeros(1), X), X[:, 2:-2])

    def test_relu_all_negative(self, rng):
        K = -np.abs(rng.standard_normal((2, 1, 5)))
        out = conv1d_forward(K, np.full(2, -0.1), np.abs(rng.standard_normal((1, 20))))
        assert np.all(out == 0)

    def test_too_short(self):
        with pytest.raises(ShapeError):
            conv1d_forward(np.zeros((1, 1, 5)), np.zeros(1), np.zeros((1, 4)))

    def test_same_padding_keeps_length(self, rng):
        K = rng.standard_normal((2, 3, 5))
        assert conv1d_forward(K, np.zeros(2), rng.standard_normal((3, 1)), padding="same").shape == (2, 1)


class TestPoolAndHead:
    def test_single_frame(self, rng):
        O = rng.standard_normal((5, 1))
        S, w = temporal_pool(rng.standard_normal(5), O)
        np.testing.assert_array_equal(S, O[:, 0])
        assert w.tolist() == [1.0]

    def test_identical_frames(self, rng):
        O = np.repeat(rng.standard_normal((5, 1)), 9, axis=1)
        S, _ = temporal_pool(rng.standard_normal(5), O)
        np.testing.assert_allclose(S, O[:, 0], atol=1e-14)

    def test_weights_normalized(self, rng):
        for _ in range(20):
            _, w = temporal_pool(rng.standard_normal(6), rng.standard_normal((6, 15)) * 5)
            assert abs(w.sum() - 1) < 1e-6

    def test_zero_head_uniform(self):
        _, p = head_forward(np.zeros((4, 3)), np.zeros(4), np.ones(3))
        np.testing.assert_array_equal(p, [0.25] * 4)

    def test_head_shift(self, rng):
        W, b, S = rng.standard_normal((4, 3)), rng.standard_normal(4), rng.standard_normal(3)
        _, p = head_forward(W, b, S)
        _, p2 = head_forward(W, b + 11.5, S)
        assert abs(p.sum() - 1) < 1e-9
        np.testing.assert_allclose(p, p2, atol=1e-9)


class TestForward:
    def test_outputs(self, rng):
        params = init_params(SMALL, 0)
        res = forward(params, small_input(rng))
        assert res.probs.shape == (4,) and abs(res.probs.sum() - 1) < 1e-9
        assert res.alpha.shape == (8,) and abs(res.alpha.sum() - 1) < 1e-6
        assert res.frame_weights.shape == (20 - 12,)
        np.testing.assert_allclose(res.layer_weights, 0.25)

    def test_deterministic(self, rng):
        params = init_params(SMALL, 4)
        ft = small_input(rng)
        assert forward(params, ft).probs.tobytes() == forward(params, ft).probs.tobytes()

    def test_permutation_invariance(self, rng):
        params = init_params(SMALL, 2)
        ft = small_input(rng)
        base = forward(params, ft)
        perm = rng.permutation(8)
        res = forward(params, ft.permute_channels(perm))
        assert res.probs.tobytes() == base.probs.tobytes()
        np.testing.assert_array_equal(res.alpha, base.alpha[perm])

    @pytest.mark.parametrize("T", [7, 12])
    def test_too_few_frames(self, rng, T):
        with pytest.raises(ShapeError, match="frames"):
            forward(init_params(SMALL), small_input(rng, frames=T))

    def test_short_input_with_same_padding(self, rng):
        dims = ModelDims(4, 8, 4, (8, 8, 8), padding="same")
        res = forward(init_params(dims), small_input(rng, frames=7, dims=dims))
        assert res.frame_weights.shape == (7,)

    def test_single_frame_input(self, rng):
        dims = ModelDims(1, 8, 4, (8, 8, 8), padding="same")
        res = forward(init_params(dims), FeatureTensor(rng.standard_normal((8, 1, 1, 8))))
        assert abs(res.probs.sum() - 1) < 1e-9

    def test_layer_and_dim_mismatch(self, rng):
        with pytest.raises(ShapeError):
            forward(init_params(SMALL), FeatureTensor(rng.standard_normal((8, 3, 20, 8))))
        with pytest.raises(ShapeError):
            forward(init_params(SMALL), FeatureTensor(rng.standard_normal((8, 4, 20, 9))))


class TestBackward:
    def test_finite_differences_all_tensors(self, rng):
        params = init_params(SMALL, 3)
        ft = small_input(rng, frames=16)
        cfg = FocalLossConfig(2.0, (0.7, 1.3, 0.5, 1.5))
        grads = backward(params, ft, 1, cfg)
        eps = 1e-5
        for name, tensor in params.tensors.items():
            flat_idx = rng.choice(tensor.size, size=min(tensor.size, 12), replace=False)
            for fi in flat_idx:
                idx = np.unravel_index(fi, tensor.shape)
                old = tensor[idx]
                tensor[idx] = old + eps
                up, _ = loss_and_grads(params, [ft], [1], cfg)
                tensor[idx] = old - eps
                down, _ = loss_and_grads(params, [ft], [1], cfg)
                tensor[idx] = old
                numeric = (up - down) / (2 * eps)
                assert abs(grads[name][idx] - numeric) <= 1e-4 * max(abs(numeric), abs(grads[name][idx]), 1e-6), name

    def test_gamma_zero_is_cross_entropy(self, rng):
        params = init_params(SMALL, 5)
        ft = small_input(rng)
        g_focal = backward(params, ft, 2, FocalLossConfig(0.0))
        # cross-entropy logits gradient p - onehot, pushed through the same reverse pass
        from lfpstage.model import backward_batch, forward_batch

        cache = forward_batch(params, [ft])
        onehot = np.eye(4)[[2]]
        g_ce = backward_batch(params, cache, cache["probs"] - onehot)
        for name in g_focal:
            np.testing.assert_allclose(g_focal[name], g_ce[name], atol=1e-10, rtol=0)

    def test_dead_unit_gradient_exactly_zero(self, rng):
        params = init_params(SMALL, 6)
        params.tensors["conv1.kernel"][3] = 0.0
        params.tensors["conv1.bias"][3] = -1.0
        grads = backward(params, small_input(rng), 0, FocalLossConfig())
        assert np.all(grads["conv2.kernel"][:, 3, :] == 0.0)
        assert np.all(grads["conv1.kernel"][3] == 0.0)
        assert grads["conv1.bias"][3] == 0.0

    def test_batch_gradient_is_mean_of_singles(self, rng):
        params = init_params(SMALL, 7)
        fts = [small_input(rng) for _ in range(3)]
        labels = [0, 3, 1]
        cfg = FocalLossConfig()
        _, g = loss_and_grads(params, fts, labels, cfg)
        singles = [backward(params, ft, lab, cfg) for ft, lab in zip(fts, labels)]
        for name in g:
            np.testing.assert_allclose(g[name], sum(s[name] for s in singles) / 3, atol=1e-12)


class TestModelFile:
    def test_round_trip(self, tmp_path):
        params = init_params(SMALL, 1)
        for k, v in params.tensors.items():
            params.tensors[k] = v.astype(np.float32).astype(np.float64)
        save_model(params, tmp_path / "m.modeljson", backend={"kind": "SurrogateFilterbank"}, backend_hash="abc")
        back, manifest = load_model(tmp_path / "m.modeljson")
        assert back.dims == params.dims
        assert manifest["backend_hash"] == "abc"
        for k in params.tensors:
            assert back.tensors[k].tobytes() == params.tensors[k].tobytes()
        save_model(back, tmp_path / "n.modeljson")
        assert (tmp_path / "n.weights").read_bytes() == (tmp_path / "m.weights").read_bytes()

    def test_manifest_order(self, tmp_path):
        params = init_params(SMALL, 1)
        save_model(params, tmp_path / "m.modeljson")
        import json

        names = [t["name"] for t in json.loads((tmp_path / "m.modeljson").read_text())["tensors"]]
        assert names == list(SMALL.tensor_shapes())

    def test_truncated_weights(self, tmp_path):
        save_model(init_params(SMALL), tmp_path / "m.modeljson")
        w = tmp_path / "m.weights"
        w.write_bytes(w.read_bytes()[:-8])
        with pytest.raises(ValueError, match="size mismatch"):
            load_model(tmp_path / "m.modeljson")
