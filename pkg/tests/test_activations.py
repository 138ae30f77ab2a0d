"""Sampled activation transforms and dropout: masks, replay, degenerate limits."""

import numpy as np
import pytest

from rra_uq import activations as act
from rra_uq.errors import DimensionError, ParameterError
from rra_uq.rng import RngStream


class TestKindFactories:
    def test_labels(self):
        assert act.relu().label() == "relu"
        assert act.identity().label() == "identity"
        assert act.droprelu(0.8).label() == "droprelu(0.8)"
        assert act.rrelu().label() == "rrelu(0.125,0.333333)"

    def test_stochastic_flags(self):
        assert not act.relu().is_stochastic()
        assert not act.identity().is_stochastic()
        assert act.droprelu(0.5).is_stochastic()
        assert act.rrelu().is_stochastic()

    def test_droprelu_rejects_bad_rate(self):
        for q in (-0.1, 1.1):
            with pytest.raises(ParameterError):
                act.droprelu(q)

    def test_rrelu_rejects_bad_bounds(self):
        with pytest.raises(ParameterError):
            act.rrelu(0.5, 0.25)
        with pytest.raises(ParameterError):
            act.rrelu(-0.1, 0.3)
        with pytest.raises(ParameterError):
            act.rrelu(0.2, 1.0)


class TestSampleMask:
    def test_droprelu_degenerate_rates(self):
        rng = RngStream(0)
        ones = act.sample_mask(act.droprelu(1.0), (8,), rng).slopes
        zeros = act.sample_mask(act.droprelu(0.0), (8,), rng).slopes
        assert np.array_equal(ones, np.zeros(8))
        assert np.array_equal(zeros, np.ones(8))

    def test_droprelu_zero_slope_fraction(self):
        # q is the probability the negative branch is zeroed
        mask = act.sample_mask(act.droprelu(0.8), (1_000_000,), RngStream(13))
        frac = float(np.mean(mask.slopes == 0.0))
        assert set(np.unique(mask.slopes)) <= {0.0, 1.0}
        assert abs(frac - 0.8) < 0.002

    def test_rrelu_slopes_in_range_with_uniform_mean(self):
        kind = act.rrelu()
        mask = act.sample_mask(kind, (1_000_000,), RngStream(5))
        assert mask.slopes.min() >= kind.low
        assert mask.slopes.max() < kind.high
        sigma = (kind.high - kind.low) / np.sqrt(12.0)
        assert abs(mask.slopes.mean() - (kind.low + kind.high) / 2.0) < 3 * sigma / 1000.0

    def test_relu_and_identity_need_no_rng(self):
        assert np.array_equal(act.sample_mask(act.relu(), (3,), None).slopes, np.zeros(3))
        assert np.array_equal(act.sample_mask(act.identity(), (3,), None).slopes, np.ones(3))

    def test_stochastic_kind_requires_rng(self):
        with pytest.raises(ParameterError):
            act.sample_mask(act.droprelu(0.5), (3,), None)

    def test_replay_is_bit_identical(self):
        mask1 = act.sample_mask(act.droprelu(0.7), (4, 5), RngStream(21).fork(2))
        mask2 = act.sample_mask(act.droprelu(0.7), (4, 5), RngStream(21).fork(2))
        assert np.array_equal(mask1.slopes, mask2.slopes)

    def test_deterministic_mask(self):
        assert np.array_equal(act.deterministic_mask(act.droprelu(0.3), (4,)).slopes, np.zeros(4))
        mid = act.deterministic_mask(act.rrelu(0.1, 0.5), (4,)).slopes
        assert np.array_equal(mid, np.full(4, 0.3))


class TestActivate:
    def test_hand_example(self):
        x = np.array([-2.0, 3.0])
        y = act.activate(x, act.SampledMask(np.array([0.25, 0.25])))
        assert np.array_equal(y, np.array([-0.5, 3.0]))

    def test_non_negative_inputs_pass_through(self):
        x = np.array([0.0, 0.5, 2.0])
        y = act.activate(x, act.SampledMask(np.array([0.0, 0.0, 0.0])))
        assert np.array_equal(y, x)

    def test_mixed_mask_example(self):
        y = act.activate(np.array([-1.0, -1.0]), act.SampledMask(np.array([0.0, 1.0])))
        assert np.array_equal(y, np.array([0.0, -1.0]))

    def test_exhaustive_branch_grid(self):
        xs = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0]
        slopes = [0.0, 1.0 / 8.0, 0.25, 1.0 / 3.0, 1.0]
        for xv in xs:
            for sv in slopes:
                got = act.activate(np.array([xv]), act.SampledMask(np.array([sv])))[0]
                want = xv if xv >= 0 else sv * xv
                assert got == want, (xv, sv)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            act.activate(np.ones((2, 2)), act.SampledMask(np.ones((2, 3))))


class TestActivateBackward:
    def test_positive_input_passes_gradient(self):
        g = act.activate_backward(np.array([5.0]), act.SampledMask(np.array([0.3])), np.array([1.0]))
        assert np.array_equal(g, np.array([1.0]))

    def test_negative_input_scales_gradient(self):
        g = act.activate_backward(np.array([-5.0]), act.SampledMask(np.array([0.3])), np.array([2.0]))
        assert np.allclose(g, np.array([0.6]), rtol=0, atol=1e-15)

    def test_zero_input_uses_positive_branch(self):
        g = act.activate_backward(np.array([0.0]), act.SampledMask(np.array([0.3])), np.array([1.0]))
        assert np.array_equal(g, np.array([1.0]))


class TestDegeneracyChain:
    def test_droprelu_one_equals_relu_elementwise(self):
        x = RngStream(3).normal(0, 2, (64,))
        mask_d = act.sample_mask(act.droprelu(1.0), x.shape, RngStream(9))
        mask_r = act.sample_mask(act.relu(), x.shape, None)
        assert np.array_equal(act.activate(x, mask_d), act.activate(x, mask_r))
        assert np.array_equal(act.activate(x, mask_r), np.maximum(x, 0.0))

    def test_droprelu_zero_equals_identity_elementwise(self):
        x = RngStream(4).normal(0, 2, (64,))
        mask_d = act.sample_mask(act.droprelu(0.0), x.shape, RngStream(9))
        assert np.array_equal(act.activate(x, mask_d), x)


class TestDropout:
    def test_spec_validation(self):
        with pytest.raises(ParameterError):
            act.DropoutSpec(-0.1)
        with pytest.raises(ParameterError):
            act.DropoutSpec(1.5)

    def test_zero_rate_is_identity(self):
        x = RngStream(7).normal(0, 1, (32,))
        y, mult = act.dropout_forward(x, act.DropoutSpec(0.0), "train", RngStream(0))
        assert np.array_equal(y, x)
        assert np.array_equal(mult, np.ones_like(x))

    def test_eval_mode_is_identity(self):
        x = RngStream(7).normal(0, 1, (32,))
        y, mult = act.dropout_forward(x, act.DropoutSpec(0.9), "eval", None)
        assert np.array_equal(y, x)
        assert np.array_equal(mult, np.ones_like(x))

    def test_unscaled_keep_fraction(self):
        x = np.ones(1_000_000)
        y, _ = act.dropout_forward(x, act.DropoutSpec(0.5), "train", RngStream(11), scaled=False)
        assert set(np.unique(y)) <= {0.0, 1.0}
        assert abs(y.mean() - 0.5) < 0.002

    def test_scaled_preserves_mean(self):
        x = np.ones(1_000_000)
        y, mult = act.dropout_forward(x, act.DropoutSpec(0.2), "train", RngStream(12))
        kept = y[y != 0.0]
        assert np.allclose(kept, 1.0 / 0.8)
        assert abs(y.mean() - 1.0) < 0.005
        assert np.array_equal(y, x * mult)

    def test_full_drop_scaled_rejected(self):
        with pytest.raises(ParameterError):
            act.dropout_forward(np.ones(4), act.DropoutSpec(1.0), "train", RngStream(0))

    def test_train_mode_requires_rng(self):
        with pytest.raises(ParameterError):
            act.dropout_forward(np.ones(4), act.DropoutSpec(0.5), "train", None)

    def test_multiplier_replays(self):
        x = RngStream(1).normal(0, 1, (64,))
        y1, m1 = act.dropout_forward(x, act.DropoutSpec(0.3), "train", RngStream(2).fork(5))
        y2, m2 = act.dropout_forward(x, act.DropoutSpec(0.3), "train", RngStream(2).fork(5))
        assert np.array_equal(m1, m2)
        assert np.array_equal(y1, y2)
