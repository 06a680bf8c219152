import numpy as np
import pytest

from csiloc.models import (build_classification_net, build_regression_net,
                           param_count, predict_class, predict_position)
from csiloc.nn import Conv2d, Dense, Dropout, Flatten, LeakyRelu, Network, Softmax


def layer_param_counts():
    """Arithmetic oracle: weights + biases per layer, written out long-hand."""
    conv = [32 * (4 * 4 * 1) + 32,
            64 * (4 * 4 * 32) + 64,
            128 * (3 * 3 * 64) + 128]
    regression_head = [256 * 512 + 256, 128 * 256 + 128, 35 * 128 + 35,
                       16 * 35 + 16, 8 * 16 + 8, 2 * 8 + 2]
    classification_head = [256 * 512 + 256, 64 * 256 + 64, 63 * 64 + 63]
    return conv, regression_head, classification_head


class TestArchitectures:
    def test_conv_stack_shapes(self):
        net = build_regression_net(seed=0)
        conv_shapes = [shape for shape in net.layer_shapes if isinstance(shape, tuple)]
        assert conv_shapes[0] == (6, 14, 32)
        assert conv_shapes[3] == (3, 6, 64)
        assert conv_shapes[6] == (1, 4, 128)
        flatten_index = [i for i, l in enumerate(net.layers) if isinstance(l, Flatten)][0]
        assert net.layer_shapes[flatten_index] == 512

    def test_regression_param_count(self):
        conv, reg_head, _ = layer_param_counts()
        assert conv[0] == 544
        assert param_count(build_regression_net(seed=0)) == sum(conv) + sum(reg_head)
        assert sum(conv) + sum(reg_head) == 276_701

    def test_classification_param_count(self):
        conv, _, cls_head = layer_param_counts()
        assert param_count(build_classification_net(seed=0)) == sum(conv) + sum(cls_head)
        assert sum(conv) + sum(cls_head) == 259_103

    def test_parameter_parity_within_10_percent(self):
        reg = param_count(build_regression_net(seed=0))
        cls = param_count(build_classification_net(seed=0))
        assert abs(reg - cls) / reg < 0.10

    def test_dropout_only_after_conv_activations(self):
        for net in (build_regression_net(0), build_classification_net(0)):
            kinds = [type(l) for l in net.layers]
            assert kinds.count(Dropout) == 3
            for i, kind in enumerate(kinds):
                if kind is Dropout:
                    assert kinds[i - 1] is LeakyRelu and kinds[i - 2] is Conv2d

    def test_regression_output_is_linear_2_vector(self):
        net = build_regression_net(seed=1)
        assert net.output_shape == 2
        assert isinstance(net.layers[-1], Dense)
        out = net.forward(np.random.default_rng(1).standard_normal((3, 9, 56, 1)))
        assert out.shape == (3, 2) and np.all(np.isfinite(out))

    def test_classification_output_is_63_way_distribution(self):
        net = build_classification_net(seed=1)
        assert net.output_shape == 63
        assert isinstance(net.layers[-1], Softmax)
        out = net.forward(np.random.default_rng(2).standard_normal((4, 9, 56, 1)))
        assert out.shape == (4, 63)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-9)

    def test_stride_tampering_fails_shape_check(self):
        net = build_regression_net(seed=0)
        layers = list(net.layers)
        conv = layers[3]
        layers[3] = Conv2d(conv.in_channels, conv.filters, conv.filter_h,
                           conv.filter_w, stride=(1, 3), weights=conv.weights,
                           bias=conv.bias)
        with pytest.raises(Exception):
            Network(layers, "regression", (9, 56, 1))

    def test_seeded_builds_are_reproducible(self):
        a = build_classification_net(seed=9)
        b = build_classification_net(seed=9)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)


class TestPredictionHelpers:
    def test_predict_position_shape(self):
        net = build_regression_net(seed=2)
        fingerprint = np.random.default_rng(3).standard_normal((9, 56))
        out = predict_position(net, fingerprint)
        assert out.shape == (2,)

    def test_predict_class_range(self):
        net = build_classification_net(seed=2)
        fingerprint = np.random.default_rng(4).standard_normal((9, 56))
        assert 1 <= predict_class(net, fingerprint) <= 63

    def test_argmax_tie_breaks_to_lowest_index(self):
        class TiedStub:
            def forward(self, x, train=False, rng=None):
                probs = np.zeros((x.shape[0], 63))
                probs[:, 10] = 0.5
                probs[:, 20] = 0.5
                return probs

        assert predict_class(TiedStub(), np.zeros((9, 56))) == 11
