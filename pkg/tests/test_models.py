import numpy as np
import pytest

from advinlab import models as M
from advinlab import tensor as T


def conv_spec(**kw):
    defaults = dict(name=M.MINICONV, input_shape=(1, 16, 16), num_classes=10, width=1.0)
    defaults.update(kw)
    return M.ArchitectureSpec(**defaults)


def res_spec(**kw):
    defaults = dict(name=M.MINIRES, input_shape=(1, 16, 16), num_classes=10, width=1.0)
    defaults.update(kw)
    return M.ArchitectureSpec(**defaults)


def test_init_is_deterministic():
    a = M.init_model(conv_spec(), seed=7)
    b = M.init_model(conv_spec(), seed=7)
    assert a.params.keys() == b.params.keys()
    for name in a.params:
        assert a.params[name].tobytes() == b.params[name].tobytes()
    c = M.init_model(conv_spec(), seed=8)
    assert any(a.params[n].tobytes() != c.params[n].tobytes() for n in a.params)


def test_width_multiplier_doubles_channels():
    narrow = M.init_model(res_spec(width=1.0), seed=0)
    wide = M.init_model(res_spec(width=2.0), seed=0)
    for name, arr in narrow.params.items():
        if name.endswith(".w") and arr.ndim == 4:
            assert wide.params[name].shape[0] == 2 * arr.shape[0]


def test_init_weight_means_near_zero():
    model = M.init_model(conv_spec(), seed=3)
    for name, arr in model.params.items():
        if name.endswith(".w"):
            assert abs(float(arr.mean())) < 0.05, name


@pytest.mark.parametrize("spec_fn", [conv_spec, res_spec])
def test_zero_input_gives_finite_logits(spec_fn):
    model = M.init_model(spec_fn(), seed=1)
    out = M.logits(model, np.zeros((2, 1, 16, 16), dtype=np.float32))
    assert out.data.shape == (2, 10)
    assert np.all(np.isfinite(out.data))


@pytest.mark.parametrize("spec_fn", [conv_spec, res_spec])
def test_duplicated_rows_duplicate_logits(spec_fn):
    model = M.init_model(spec_fn(), seed=2)
    x = np.random.default_rng(0).uniform(size=(1, 1, 16, 16)).astype(np.float32)
    batch = np.concatenate([x, x], axis=0)
    out = M.logits(model, batch).data
    np.testing.assert_array_equal(out[0], out[1])


@pytest.mark.parametrize("spec_fn", [conv_spec, res_spec])
def test_batch_permutation_equivariance(spec_fn):
    model = M.init_model(spec_fn(), seed=2)
    x = np.random.default_rng(1).uniform(size=(5, 1, 16, 16)).astype(np.float32)
    perm = np.array([3, 0, 4, 1, 2])
    np.testing.assert_array_equal(M.logits(model, x).data[perm], M.logits(model, x[perm]).data)


@pytest.mark.parametrize("spec_fn", [conv_spec, res_spec])
def test_batched_matches_single_example(spec_fn):
    model = M.init_model(spec_fn(), seed=4)
    x = np.random.default_rng(2).uniform(size=(6, 1, 16, 16)).astype(np.float32)
    full = M.logits(model, x).data
    singles = np.concatenate([M.logits(model, x[i : i + 1]).data for i in range(6)])
    np.testing.assert_allclose(full, singles, atol=1e-5)


def test_residual_block_zeroed_is_identity():
    model = M.init_model(res_spec(), seed=9)
    for name in list(model.params):
        if name.startswith("block1."):
            model.params[name] = np.zeros_like(model.params[name])
    x = np.random.default_rng(3).normal(size=(2, 16, 8, 8)).astype(np.float32)
    p = {k: T.Tensor(v) for k, v in model.params.items()}
    out = M._residual_block(T.Tensor(x), p, "block1")
    np.testing.assert_array_equal(out.data, x)


def test_logits_shape_mismatch_raises():
    model = M.init_model(conv_spec(), seed=0)
    with pytest.raises(T.ShapeError):
        M.logits(model, np.zeros((2, 1, 8, 8), dtype=np.float32))


def test_spec_validation():
    with pytest.raises(ValueError):
        conv_spec(num_classes=1)
    with pytest.raises(ValueError):
        conv_spec(input_shape=(1, 12, 12))  # not divisible by 8
    with pytest.raises(ValueError):
        M.ArchitectureSpec("ResNet18", (3, 32, 32), 10)


def test_checkpoint_round_trip_preserves_logits_bitwise(tmp_path):
    model = M.init_model(res_spec(width=1.5), seed=11)
    model.metadata["note"] = "unit"
    path = tmp_path / "model.ckpt"
    M.save_checkpoint(path, model)
    back = M.load_checkpoint(path)
    assert back.seed == 11 and back.metadata == {"note": "unit"}
    x = np.random.default_rng(4).uniform(size=(3, 1, 16, 16)).astype(np.float32)
    assert M.logits(model, x).data.tobytes() == M.logits(back, x).data.tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError, match="magic"):
        M.load_checkpoint(path)


def test_predict_matches_argmax():
    model = M.init_model(conv_spec(), seed=5)
    x = np.random.default_rng(5).uniform(size=(7, 1, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(M.predict(model, x, batch_size=3),
                                  M.batched_logits(model, x).argmax(axis=1))


def test_model_gradients_match_finite_differences():
    from oracles import fd_gradient, max_relative_error

    for arch, seed in [(conv_spec, 0), (res_spec, 1)]:
        spec = arch(input_shape=(1, 8, 8) if arch is res_spec else (1, 8, 8), num_classes=3)
        model = M.init_model(spec, seed=seed)
        x = np.random.default_rng(seed).uniform(0.2, 0.8, size=(2, 1, 8, 8)).astype(np.float32)
        y = np.array([0, 2])

        def loss_value():
            return float(T.cross_entropy(M.logits(model, x), y).data)

        xt = T.Tensor(x, requires_grad=True)
        params = M.param_tensors(model)
        T.cross_entropy(M.logits(model, xt, params=params), y).backward()

        (fd_x,) = fd_gradient(loss_value, [x], h=1e-3)
        assert max_relative_error(xt.grad, fd_x) <= 1e-3
        # spot-check one conv kernel and the dense head rather than all params
        for name in [next(n for n in params if n.endswith(".w")), "fc.w", "fc.b"]:
            (fd_p,) = fd_gradient(loss_value, [model.params[name]], h=1e-3)
            assert max_relative_error(params[name].grad, fd_p) <= 1e-3, name
