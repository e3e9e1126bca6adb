import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anyband.autodiff import DimensionError, Tensor
from anyband.nn import (
    ConfigurationError,
    DenseLayer,
    GroupNormParams,
    dense_apply,
    group_normalize,
    mean_pool_axis,
)


def test_dense_layer_shapes(rng):
    layer = DenseLayer.create(5, 3, rng)
    assert layer.weight.shape == (3, 5)
    assert layer.bias.shape == (3,)
    out = dense_apply(layer, Tensor(rng.standard_normal((7, 5))))
    assert out.shape == (7, 3)


def test_dense_layer_bias_must_match_rows():
    w = Tensor(np.zeros((3, 5), dtype=np.float32))
    with pytest.raises(DimensionError):
        DenseLayer(w, Tensor(np.zeros(4, dtype=np.float32)))


def test_group_norm_identity_params_normalizes(rng):
    # gamma=1, beta=0: per-group mean ~0, variance ~1
    p = GroupNormParams.create(16, groups=4)
    x = Tensor(rng.uniform(-5, 5, size=(20, 16)).astype(np.float32))
    out = group_normalize(x, p).data.reshape(20, 4, 4)
    assert np.abs(out.mean(axis=-1)).max() < 1e-5
    assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-3


def test_group_norm_rejects_indivisible_channels():
    with pytest.raises(ConfigurationError):
        GroupNormParams.create(10, groups=4)


def test_group_norm_rejects_nonpositive_eps():
    with pytest.raises(ConfigurationError):
        GroupNormParams.create(8, groups=4, eps=0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(3, 8))
def test_mean_pool_axis_permutation_invariant(seed, n):
    r = np.random.default_rng(seed)
    x = r.uniform(-1, 1, size=(n, 6)).astype(np.float32)
    perm = r.permutation(n)
    a = mean_pool_axis(Tensor(x), axis=0).data
    b = mean_pool_axis(Tensor(x[perm]), axis=0).data
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_mean_pool_axis_value(rng):
    x = rng.standard_normal((4, 3))
    np.testing.assert_allclose(
        mean_pool_axis(Tensor(x), axis=0).data, x.mean(axis=0), rtol=1e-12
    )
