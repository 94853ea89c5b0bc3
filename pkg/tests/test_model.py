"""Network stacks, initialization, pooling, and checkpoint serialization."""

import numpy as np
import pytest

from emtune.errors import ConfigError, DataError, DimensionError, FormatError, ParseError, StateError
from emtune.linalg import affine_forward, grad_check, relu_forward
from emtune.model import (
    CHECKPOINT_MAGIC,
    AdapterConfig,
    Checkpoint,
    EncoderConfig,
    adapter_forward,
    encoder_forward,
    init_adapter,
    init_encoder,
    init_stack,
    load_checkpoint,
    mean_pool,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    save_checkpoint,
)


def test_mean_pool_constant_sequence():
    seq = np.tile([1.0, 2.0], (3, 1))
    assert np.array_equal(mean_pool(seq), [1.0, 2.0])


def test_mean_pool_hand_value():
    assert np.array_equal(mean_pool([[0.0, 0.0], [2.0, 4.0]]), [1.0, 2.0])


def test_mean_pool_singleton():
    assert np.array_equal(mean_pool([[3.0, -1.0]]), [3.0, -1.0])


def test_mean_pool_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        mean_pool(np.zeros(4))
    with pytest.raises(DataError):
        mean_pool(np.zeros((0, 4)))


def test_mlp_forward_identity_slice():
    # single linear layer whose weight is the identity truncated to 2 columns
    params = [np.eye(4)[:, :2], np.zeros(2)]
    out = mlp_forward(params, [[1.0, 0.0, 0.0, 0.0]])
    assert np.array_equal(out, [[1.0, 0.0]])


def test_mlp_forward_matches_composed_layers():
    rng = np.random.default_rng(1)
    w0, b0 = rng.standard_normal((2, 2)), rng.standard_normal(2)
    w1, b1 = rng.standard_normal((2, 2)), rng.standard_normal(2)
    x = np.array([[1.0, 1.0]])
    expected = affine_forward(relu_forward(affine_forward(x, w0, b0)), w1, b1)
    assert np.array_equal(mlp_forward([w0, b0, w1, b1], x), expected)


def test_mlp_forward_rows_are_independent():
    rng = np.random.default_rng(2)
    params = init_stack((4, 3, 2), seed=0)
    x = rng.standard_normal((6, 4))
    perm = rng.permutation(6)
    assert np.array_equal(mlp_forward(params, x)[perm], mlp_forward(params, x[perm]))
    two = np.vstack([x[0], x[0]])
    out = mlp_forward(params, two)
    assert np.array_equal(out[0], out[1])


def test_encoder_and_adapter_forward_are_stack_aliases():
    params = init_stack((4, 3, 2), seed=3)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5, 4))
    assert np.array_equal(encoder_forward(params, x), mlp_forward(params, x))
    assert np.array_equal(adapter_forward(params, x), mlp_forward(params, x))


def test_mlp_backward_matches_finite_differences():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((8, 4))
    params = init_stack((4, 3, 2), seed=5)
    # jittered biases keep the ReLU inputs away from the kink
    params = [p if p.ndim == 2 else p + rng.normal(0.0, 0.2, p.shape) for p in params]

    def fn(ps):
        out, cache = mlp_forward_cached(ps, x)
        loss = float((out ** 2).sum())
        grads, _ = mlp_backward(ps, cache, 2.0 * out)
        return loss, grads

    assert grad_check(fn, params) < 1e-4


def test_mlp_backward_rejects_mismatched_cache():
    params = init_stack((3, 2), seed=0)
    _, cache = mlp_forward_cached(params, np.ones((2, 3)))
    with pytest.raises(StateError):
        mlp_backward(params + params, cache, np.ones((2, 2)))


def test_init_stack_is_seed_deterministic():
    a = init_stack((5, 4, 3), seed=42)
    b = init_stack((5, 4, 3), seed=42)
    for p, q in zip(a, b):
        assert np.array_equal(p, q)
    c = init_stack((5, 4, 3), seed=43)
    assert any(not np.array_equal(p, q) for p, q in zip(a, c))


def test_init_stack_bounds_and_zero_biases():
    params = init_stack((100, 100), seed=9)
    weights, biases = params[0], params[1]
    assert weights.size == 10000
    assert np.all(np.abs(weights) <= np.sqrt(6.0 / 100))
    assert not biases.any()


def test_encoder_config_validation():
    EncoderConfig(input_dim=8, hidden_dims=(4,), bottleneck_dim=2).validate()
    with pytest.raises(ConfigError):
        EncoderConfig(input_dim=8, bottleneck_dim=1).validate()
    with pytest.raises(ConfigError):
        EncoderConfig(input_dim=8, bottleneck_dim=8).validate()
    with pytest.raises(ConfigError):
        EncoderConfig(input_dim=8, hidden_dims=(0,), bottleneck_dim=2).validate()


def test_adapter_config_validation():
    AdapterConfig(input_dim=4, num_classes=2).validate()
    with pytest.raises(ConfigError):
        AdapterConfig(input_dim=4, num_classes=1).validate()
    with pytest.raises(ConfigError):
        AdapterConfig(input_dim=0, num_classes=3).validate()


def _sample_checkpoint(with_adapter: bool) -> Checkpoint:
    enc_cfg = EncoderConfig(input_dim=6, hidden_dims=(5,), bottleneck_dim=3, seed=1)
    adp_cfg = AdapterConfig(input_dim=3, num_classes=4, hidden_dim=5, seed=2)
    return Checkpoint(
        encoder_config=enc_cfg,
        encoder_params=init_encoder(enc_cfg),
        adapter_config=adp_cfg if with_adapter else None,
        adapter_params=init_adapter(adp_cfg) if with_adapter else None,
        loss_mode="combined",
        epoch=7,
        seed=1,
    )


def test_checkpoint_round_trip_is_identity(tmp_path):
    path = tmp_path / "model.ckpt"
    original = _sample_checkpoint(with_adapter=True)
    save_checkpoint(original, path)
    loaded = load_checkpoint(path)
    assert loaded.encoder_config == original.encoder_config
    assert loaded.adapter_config == original.adapter_config
    assert loaded.loss_mode == "combined"
    assert loaded.epoch == 7 and loaded.seed == 1
    for p, q in zip(original.encoder_params, loaded.encoder_params):
        assert np.array_equal(p, q)
    for p, q in zip(original.adapter_params, loaded.adapter_params):
        assert np.array_equal(p, q)


def test_checkpoint_without_adapter_loads_empty_slot(tmp_path):
    path = tmp_path / "enc.ckpt"
    save_checkpoint(_sample_checkpoint(with_adapter=False), path)
    loaded = load_checkpoint(path)
    assert loaded.adapter_config is None
    assert loaded.adapter_params is None


def test_checkpoint_bytes_are_deterministic(tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(_sample_checkpoint(with_adapter=True), a)
    save_checkpoint(_sample_checkpoint(with_adapter=True), b)
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_rejects_half_an_adapter(tmp_path):
    ckpt = _sample_checkpoint(with_adapter=True)
    ckpt.adapter_config = None
    with pytest.raises(StateError):
        save_checkpoint(ckpt, tmp_path / "bad.ckpt")


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(_sample_checkpoint(with_adapter=False), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(ParseError) as err:
        load_checkpoint(path)
    assert err.value.offset == 0


def test_checkpoint_version_mismatch(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(_sample_checkpoint(with_adapter=False), path)
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_checkpoint_truncation_reports_offset(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(_sample_checkpoint(with_adapter=False), path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 16])
    with pytest.raises(ParseError) as err:
        load_checkpoint(path)
    assert err.value.offset is not None


def test_checkpoint_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(_sample_checkpoint(with_adapter=False), path)
    path.write_bytes(path.read_bytes() + b"\x00\x00")
    with pytest.raises(ParseError) as err:
        load_checkpoint(path)
    assert "trailing" in str(err.value)


def test_checkpoint_magic_constant_is_four_bytes():
    assert len(CHECKPOINT_MAGIC) == 4
