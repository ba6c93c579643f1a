import numpy as np
import pytest

from spexplus.layers import BatchNorm1d, ConvLayer, GlobalLayerNorm, Linear, PReLULayer
from spexplus.model import SpexPlusConfig, SpexPlusModel
from spexplus.tensor import Tensor


class TestGlobalLayerNorm:
    def test_constant_input_maps_to_bias(self):
        layer = GlobalLayerNorm(3)
        x = Tensor(np.full((3, 5), 7.25, dtype=np.float32))
        out = layer.forward(x)
        assert np.allclose(out.data, 0.0, atol=1e-3)

    def test_unit_variance_preserved(self):
        layer = GlobalLayerNorm(1, eps=1e-12)
        out = layer.forward(Tensor(np.array([[1.0, -1.0]], dtype=np.float32)))
        assert np.allclose(out.data, [[1.0, -1.0]], atol=1e-5)

    def test_output_statistics_match_gain_bias(self, rng):
        layer = GlobalLayerNorm(4)
        layer.gain.data[:] = 1.7
        layer.bias.data[:] = -0.3
        x = Tensor(rng.normal(2.0, 3.0, size=(4, 2500)).astype(np.float32))
        out = layer.forward(x).data
        assert abs(out.mean() - -0.3) < 1e-4
        assert abs(out.var() - 1.7 ** 2) < 1e-2 * 1.7 ** 2

    def test_invariant_to_global_offset(self, rng):
        layer = GlobalLayerNorm(3)
        x = rng.normal(size=(3, 40)).astype(np.float32)
        a = layer.forward(Tensor(x)).data
        b = layer.forward(Tensor(x + 5.0)).data
        assert np.abs(a - b).max() < 1e-5


class TestBatchNorm:
    def test_train_mode_normalizes_per_channel(self, rng):
        layer = BatchNorm1d(3)
        out = layer.forward(Tensor(rng.normal(1.0, 2.0, (3, 400)).astype(np.float32))).data
        assert np.abs(out.mean(axis=1)).max() < 1e-5
        assert np.abs(out.var(axis=1) - 1.0).max() < 1e-4

    def test_eval_with_init_stats_is_identity(self, rng):
        layer = BatchNorm1d(3)
        layer.eval()
        x = rng.normal(size=(3, 10)).astype(np.float32)
        out = layer.forward(Tensor(x)).data
        assert np.allclose(out, x, atol=1e-6)

    def test_momentum_update_rule(self, rng):
        layer = BatchNorm1d(2, momentum=0.1)
        x = rng.normal(3.0, 2.0, (2, 50)).astype(np.float32)
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        layer.forward(Tensor(x))
        assert np.allclose(layer.running_mean, 0.9 * 0.0 + 0.1 * mu, atol=1e-6)
        assert np.allclose(layer.running_var, 0.9 * 1.0 + 0.1 * var, atol=1e-6)

    def test_train_eval_consistency_after_convergence(self, rng):
        layer = BatchNorm1d(2, momentum=0.1)
        x = rng.normal(-1.0, 0.5, (2, 2000)).astype(np.float32)
        for _ in range(80):
            train_out = layer.forward(Tensor(x)).data
        layer.eval()
        eval_out = layer.forward(Tensor(x)).data
        assert np.abs(train_out - eval_out).max() < 1e-2

    def test_train_mode_needs_two_steps(self):
        layer = BatchNorm1d(2)
        with pytest.raises(ValueError):
            layer.forward(Tensor(np.ones((2, 1), dtype=np.float32)))


class TestParameterEnumeration:
    def test_names_unique_and_hierarchical(self):
        model = SpexPlusModel(SpexPlusConfig.tiny(N_s=3), seed=0)
        names = [n for n, _ in model.named_parameters()]
        assert len(names) == len(set(names))
        assert "encoder.convs.0.weight" in names
        assert any(n.startswith("extractor.stacks.0.0.") for n in names)

    def test_tied_encoder_counted_once(self):
        model = SpexPlusModel(SpexPlusConfig.tiny(N_s=3), seed=0)
        encoder_entries = [n for n, _ in model.named_parameters()
                           if n.startswith("encoder")]
        assert encoder_entries == ["encoder.convs.0.weight",
                                   "encoder.convs.1.weight",
                                   "encoder.convs.2.weight"]

    def test_untied_adds_reference_encoder(self):
        model = SpexPlusModel(SpexPlusConfig.tiny(N_s=3, tied=False), seed=0)
        names = [n for n, _ in model.named_parameters()]
        assert "encoder_ref.convs.0.weight" in names

    def test_same_seed_same_names_and_values(self):
        a = SpexPlusModel(SpexPlusConfig.tiny(N_s=3), seed=5)
        b = SpexPlusModel(SpexPlusConfig.tiny(N_s=3), seed=5)
        na, nb = dict(a.named_parameters()), dict(b.named_parameters())
        assert list(na) == list(nb)
        for name in na:
            assert np.array_equal(na[name].data, nb[name].data), name

    def test_full_size_parameter_count(self):
        model = SpexPlusModel(SpexPlusConfig.paper(N_s=101), seed=0)
        count = model.param_count()
        assert abs(count - 11_100_000) <= 0.05 * 11_100_000

    def test_load_state_reports_mismatches(self):
        model = SpexPlusModel(SpexPlusConfig.tiny(N_s=3), seed=0)
        state = model.state_dict()
        state.pop("classifier.weight")
        state["bogus.weight"] = np.zeros(3, dtype=np.float32)
        with pytest.raises(KeyError) as err:
            model.load_state(state)
        assert "classifier.weight" in str(err.value)
        assert "bogus.weight" in str(err.value)


class TestSmallLayers:
    def test_prelu_initialized_at_quarter_slope(self):
        layer = PReLULayer()
        assert float(layer.slope.data[0]) == pytest.approx(0.25)
        out = layer.forward(Tensor(np.array([[-4.0, 4.0]], dtype=np.float32)))
        assert np.allclose(out.data, [[-1.0, 4.0]])

    def test_linear_shapes(self, rng):
        layer = Linear(5, 3, rng=rng)
        out = layer.forward(Tensor(np.ones(5, dtype=np.float32)))
        assert out.shape == (3,)

    def test_conv_layer_padding_policy(self, rng):
        layer = ConvLayer(1, 2, 4, padding=(0, 3), rng=rng)
        out = layer.forward(Tensor(np.ones((1, 10), dtype=np.float32)))
        assert out.shape == (2, 10)
