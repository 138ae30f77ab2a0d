"""Network wiring, forward/backward correctness, and trace replay."""

import numpy as np
import pytest

from rra_uq import activations as act
from rra_uq import network as nn
from rra_uq.errors import ContractError, DimensionError, ParameterError
from rra_uq.rng import RngStream


def mlp(widths, kind=None, rng=None):
    """dense -> act -> ... -> dense chain over 1-d features."""
    layers = []
    for i in range(len(widths) - 1):
        layers.append(nn.dense(widths[i], widths[i + 1]))
        if kind is not None and i < len(widths) - 2:
            layers.append(nn.activation(kind))
    return nn.build_network(layers, (widths[0],), rng)


class TestBuild:
    def test_auto_names_by_position(self):
        net = mlp([2, 3, 2], kind=act.relu())
        assert [l.name for l in net.layers] == ["dense0", "activation1", "dense2"]

    def test_duplicate_names_rejected(self):
        layers = [nn.dense(2, 2, name="a"), nn.dense(2, 2, name="a")]
        with pytest.raises(ParameterError):
            nn.build_network(layers, (2,))

    def test_wiring_error_names_layer(self):
        layers = [nn.dense(2, 3), nn.dense(4, 2, name="head")]
        with pytest.raises(DimensionError, match="head"):
            nn.build_network(layers, (2,))

    def test_conv_into_dense_needs_flatten(self):
        layers = [nn.conv2d(1, 2, 3), nn.dense(8, 2)]
        with pytest.raises(DimensionError):
            nn.build_network(layers, (1, 4, 4))

    def test_zero_init_without_rng(self):
        net = mlp([3, 4, 2])
        for entry in net.params.values():
            for t in entry.values():
                assert np.array_equal(t, np.zeros_like(t))

    def test_kaiming_bound_and_zero_bias(self):
        net = nn.build_network([nn.dense(100, 50)], (100,), RngStream(0))
        w = net.params["dense0"]["w"]
        bound = np.sqrt(6.0 / 100)
        assert w.min() >= -bound and w.max() < bound
        assert abs(w.mean()) < bound / 10
        assert np.array_equal(net.params["dense0"]["b"], np.zeros(50))

    def test_parameter_count_matches_manual_walk(self):
        net = nn.build_network(
            [nn.conv2d(1, 4, 3), nn.activation(act.relu()), nn.flatten(),
             nn.dense(4 * 6 * 6, 10)],
            (1, 8, 8), RngStream(1))
        manual = 0
        for entry in net.params.values():
            for t in entry.values():
                manual += int(np.prod(t.shape))
        assert net.parameter_count() == manual == (4 * 1 * 9 + 4) + (144 * 10 + 10)

    def test_output_shape_and_stochastic_names(self):
        net = nn.build_network(
            [nn.dense(2, 4), nn.activation(act.droprelu(0.5)), nn.dropout_layer(0.2),
             nn.dense(4, 3), nn.activation(act.relu())],
            (2,))
        assert net.output_shape() == (3,)
        assert net.stochastic_layer_names() == ["activation1", "dropout2"]

    def test_same_padding_shape(self):
        net = nn.build_network([nn.conv2d(1, 2, 3, stride=2, padding="same")], (1, 5, 5))
        assert net.output_shape() == (2, 3, 3)


class TestForward:
    def test_zero_weights_zero_logits(self):
        net = mlp([3, 4, 2], kind=act.relu())
        x = RngStream(0).normal(0, 1, (5, 3))
        logits, _ = forward_eval(net, x)
        assert np.array_equal(logits, np.zeros((5, 2)))

    def test_identity_weights_relu_hand_case(self):
        net = nn.build_network([nn.dense(2, 2), nn.activation(act.relu())], (2,))
        net.params["dense0"]["w"] = np.eye(2)
        logits, _ = forward_eval(net, np.array([[-1.0, 2.0]]))
        assert np.array_equal(logits, np.array([[0.0, 2.0]]))

    def test_same_mode_and_stream_identical(self):
        net = mlp([2, 8, 2], kind=act.droprelu(0.5), rng=RngStream(3))
        x = RngStream(1).normal(0, 1, (6, 2))
        l1, _ = nn.forward(net, x, mode="eval", rng=RngStream(7))
        l2, _ = nn.forward(net, x, mode="eval", rng=RngStream(7))
        assert np.array_equal(l1, l2)

    def test_mask_replay_bit_identical(self):
        net = nn.build_network(
            [nn.dense(2, 16), nn.activation(act.rrelu()), nn.dropout_layer(0.3),
             nn.dense(16, 2)],
            (2,), RngStream(5))
        x = RngStream(2).normal(0, 1, (4, 2))
        logits, trace = nn.forward(net, x, mode="train", rng=RngStream(11))
        replay, _ = nn.forward(net, x, mode="train", masks=trace.masks)
        assert np.array_equal(logits, replay)

    def test_deterministic_flag_disables_sampling(self):
        net = nn.build_network(
            [nn.dense(2, 8), nn.activation(act.droprelu(0.6)), nn.dropout_layer(0.5),
             nn.dense(8, 2)],
            (2,), RngStream(5))
        x = RngStream(2).normal(0, 1, (4, 2))
        a, _ = nn.forward(net, x, mode="eval", deterministic=True)
        b, _ = nn.forward(net, x, mode="eval", deterministic=True)
        assert np.array_equal(a, b)
        # matches the pure-ReLU realization of the same parameters
        relu_net = nn.build_network(
            [nn.dense(2, 8), nn.activation(act.relu()), nn.dropout_layer(0.5),
             nn.dense(8, 2)],
            (2,))
        relu_net.params = net.params
        c, _ = nn.forward(relu_net, x, mode="eval")
        assert np.array_equal(a, c)

    def test_bad_mode_rejected(self):
        net = mlp([2, 2])
        with pytest.raises(ParameterError):
            nn.forward(net, np.ones((1, 2)), mode="test")

    def test_input_shape_mismatch(self):
        net = mlp([2, 2])
        with pytest.raises(DimensionError):
            nn.forward(net, np.ones((1, 3)), mode="eval")

    def test_dropout_off_in_plain_eval(self):
        net = nn.build_network([nn.dense(2, 2), nn.dropout_layer(0.9)], (2,), RngStream(4))
        x = np.ones((3, 2))
        a, _ = nn.forward(net, x, mode="eval", rng=RngStream(0))
        b, _ = nn.forward(net, x, mode="eval", rng=RngStream(99))
        assert np.array_equal(a, b)

    def test_sample_dropout_forces_eval_sampling(self):
        net = nn.build_network([nn.dense(2, 64), nn.dropout_layer(0.5)], (2,), RngStream(4))
        x = np.ones((1, 2))
        a, _ = nn.forward(net, x, mode="eval", rng=RngStream(0), sample_dropout=True)
        b, _ = nn.forward(net, x, mode="eval", rng=RngStream(99), sample_dropout=True)
        assert not np.array_equal(a, b)


def forward_eval(net, x):
    return nn.forward(net, x, mode="eval")


def conv_oracle(x, w, b, stride, padding):
    """Direct-summation convolution, loops only."""
    n, c, h, wd = x.shape
    oc, _, k, _ = w.shape
    if padding == "same":
        oh, ow = -(-h // stride), -(-wd // stride)
        ph = max((oh - 1) * stride + k - h, 0)
        pw = max((ow - 1) * stride + k - wd, 0)
        pt, pl = ph // 2, pw // 2
        xp = np.zeros((n, c, h + ph, wd + pw))
        xp[:, :, pt:pt + h, pl:pl + wd] = x
    else:
        oh, ow = (h - k) // stride + 1, (wd - k) // stride + 1
        xp = x
    y = np.zeros((n, oc, oh, ow))
    for ni in range(n):
        for oci in range(oc):
            for i in range(oh):
                for j in range(ow):
                    total = b[oci]
                    for ci in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                total += xp[ni, ci, i * stride + ki, j * stride + kj] * w[oci, ci, ki, kj]
                    y[ni, oci, i, j] = total
    return y


class TestConv2d:
    @pytest.mark.parametrize("stride,padding,hw", [
        (1, "valid", (5, 5)),
        (2, "valid", (7, 6)),
        (1, "same", (5, 5)),
        (2, "same", (5, 7)),
    ])
    def test_forward_matches_direct_convolution(self, stride, padding, hw):
        rng = RngStream(17)
        x = rng.normal(0, 1, (2, 3, *hw))
        net = nn.build_network(
            [nn.conv2d(3, 4, 3, stride=stride, padding=padding)],
            (3, *hw), RngStream(8))
        w = net.params["conv2d0"]["w"]
        b = rng.normal(0, 1, (4,))
        net.params["conv2d0"]["b"] = b
        got, _ = forward_eval(net, x)
        want = conv_oracle(x, w, b, stride, padding)
        assert got.shape == want.shape
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_even_kernel_asymmetric_same_padding(self):
        x = RngStream(3).normal(0, 1, (1, 1, 3, 3))
        net = nn.build_network([nn.conv2d(1, 1, 2, padding="same")], (1, 3, 3), RngStream(1))
        got, _ = forward_eval(net, x)
        want = conv_oracle(x, net.params["conv2d0"]["w"], net.params["conv2d0"]["b"],
                           1, "same")
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_kernel_larger_than_input_rejected(self):
        with pytest.raises(DimensionError):
            nn.build_network([nn.conv2d(1, 1, 5)], (1, 3, 3))


class TestBackward:
    def test_zero_upstream_zero_grads(self):
        net = mlp([2, 4, 3], kind=act.relu(), rng=RngStream(0))
        x = RngStream(1).normal(0, 1, (5, 2))
        logits, trace = nn.forward(net, x, mode="train")
        grads = nn.backward(net, trace, np.zeros_like(logits))
        for entry in grads.values():
            for g in entry.values():
                assert np.array_equal(g, np.zeros_like(g))

    def test_dense_weight_grad_is_outer_product(self):
        net = nn.build_network([nn.dense(2, 2)], (2,), RngStream(0))
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        g = np.array([[0.5, -1.0], [2.0, 0.25]])
        _, trace = nn.forward(net, x, mode="train")
        grads = nn.backward(net, trace, g)
        assert np.array_equal(grads["dense0"]["w"], x.T @ g)
        assert np.array_equal(grads["dense0"]["b"], g.sum(axis=0))

    def test_foreign_trace_rejected(self):
        net_a = mlp([2, 3], rng=RngStream(0))
        net_b = mlp([2, 3], rng=RngStream(0))
        logits, trace = nn.forward(net_a, np.ones((1, 2)), mode="train")
        with pytest.raises(ContractError):
            nn.backward(net_b, trace, np.zeros_like(logits))

    def test_grad_shape_mismatch_rejected(self):
        net = mlp([2, 3], rng=RngStream(0))
        _, trace = nn.forward(net, np.ones((1, 2)), mode="train")
        with pytest.raises(ContractError):
            nn.backward(net, trace, np.zeros((2, 3)))


class TestSoftmax:
    def test_rows_sum_to_one(self):
        logits = RngStream(0).normal(0, 5, (10, 4))
        p = nn.softmax(logits)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert (p >= 0).all()

    def test_large_logits_stable(self):
        p = nn.softmax(np.array([[1000.0, 1000.0], [1e8, 0.0]]))
        assert np.allclose(p[0], [0.5, 0.5])
        assert np.allclose(p[1], [1.0, 0.0])

    def test_cross_entropy_hand_value(self):
        logits = np.array([[0.0, 0.0]])
        loss, grad = nn.softmax_cross_entropy(logits, np.array([0]))
        assert abs(loss - np.log(2.0)) < 1e-15
        assert np.allclose(grad, [[0.5 - 1.0, 0.5]])

    def test_cross_entropy_grad_matches_finite_difference(self):
        rng = RngStream(2)
        logits = rng.normal(0, 1, (4, 3))
        labels = np.array([0, 2, 1, 1])
        _, grad = nn.softmax_cross_entropy(logits, labels)
        h = 1e-6
        for i in range(4):
            for j in range(3):
                up = logits.copy()
                up[i, j] += h
                down = logits.copy()
                down[i, j] -= h
                numeric = (nn.softmax_cross_entropy(up, labels)[0]
                           - nn.softmax_cross_entropy(down, labels)[0]) / (2 * h)
                assert abs(grad[i, j] - numeric) < 1e-8

    def test_label_shape_mismatch(self):
        with pytest.raises(ContractError):
            nn.softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 1, 2]))


class TestGradCheck:
    def test_dense_relu(self):
        net = mlp([3, 8, 4, 2], kind=act.relu(), rng=RngStream(1))
        x = RngStream(2).normal(0, 1, (6, 3))
        labels = np.array([0, 1, 1, 0, 1, 0])
        report = nn.grad_check(net, x, labels, RngStream(3))
        assert report["max_rel_error"] < 1e-5

    def test_dense_droprelu_frozen_mask(self):
        net = mlp([3, 8, 2], kind=act.droprelu(0.5), rng=RngStream(4))
        x = RngStream(5).normal(0, 1, (5, 3))
        labels = np.array([0, 1, 0, 1, 1])
        report = nn.grad_check(net, x, labels, RngStream(6))
        assert report["max_rel_error"] < 1e-5

    def test_conv_chain(self):
        net = nn.build_network(
            [nn.conv2d(1, 3, 3), nn.activation(act.relu()), nn.flatten(),
             nn.dense(3 * 3 * 3, 2)],
            (1, 5, 5), RngStream(7))
        x = RngStream(8).normal(0, 1, (3, 1, 5, 5))
        labels = np.array([0, 1, 0])
        report = nn.grad_check(net, x, labels, RngStream(9))
        assert report["max_rel_error"] < 1e-5

    def test_dropout_frozen_multiplier(self):
        net = nn.build_network(
            [nn.dense(3, 8), nn.activation(act.relu()), nn.dropout_layer(0.4),
             nn.dense(8, 2)],
            (3,), RngStream(10))
        x = RngStream(11).normal(0, 1, (5, 3))
        labels = np.array([1, 0, 1, 0, 1])
        report = nn.grad_check(net, x, labels, RngStream(12))
        assert report["max_rel_error"] < 1e-5
