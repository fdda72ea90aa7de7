import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nmc.data import InputBuilder, SplitSpec, make_split, synthetic_low_rank
from nmc.errors import BatchTooSmallError, ConfigError, CorruptionError, FormatError, ShapeError
from nmc.model import (
    BranchConfig,
    NmcModel,
    build_model,
    cosine,
    load_model,
    ml1m_config,
    netflix_config,
    save_model,
)
from nmc.nn import BatchNorm, Conv1d, Dense, Dropout, ReLU, grad_check


def small_model(m_I=20, n_I=16, r=8, dropout=0.3, seed=0):
    row = BranchConfig(m_I, (12, 10, r), ((3, 4, 2),), dropout)
    col = BranchConfig(n_I, (12, 10, r), ((2, 5, 3),), dropout)
    return build_model(row, col, seed=seed)


@pytest.fixture(scope="module")
def setup():
    data = synthetic_low_rank(40, 50, rank=3, density=0.4, seed=1)
    split = make_split(data, SplitSpec(seed=1))
    model = small_model(split.m_I, split.n_I)
    return data, split, model


# -- cosine ----------------------------------------------------------------------


def test_cosine_examples():
    assert cosine([3, 4], [3, 4]) == pytest.approx(1.0, abs=1e-15)
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([1, 0], [-2, 0]) == -1.0


def test_cosine_zero_norm_fallback():
    assert cosine([0, 0], [1, 1]) == 0.0
    assert cosine([1e-9, 0], [1, 1], norm_floor=1e-8) == 0.0


@settings(max_examples=50)
@given(arrays(np.float64, 5, elements=st.floats(-100, 100)), st.floats(1e-3, 1e3))
def test_cosine_scale_invariance(u, c):
    if np.linalg.norm(u) < 1e-3:
        return
    assert cosine(u, u) == pytest.approx(1.0, abs=1e-12)
    assert cosine(u, c * u) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50)
@given(arrays(np.float64, 4, elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, 4, elements=st.floats(-1e3, 1e3)))
def test_cosine_bounded(u, v):
    assert -1.0 <= cosine(u, v) <= 1.0


# -- architecture ----------------------------------------------------------------


def test_branch_layer_recipe():
    cfg = BranchConfig(100, (64, 32, 16), ((8, 32, 16),), 0.6)
    model = build_model(cfg, cfg)
    kinds = [type(layer) for layer in model.row_branch.layers]
    assert kinds == [Conv1d, BatchNorm, ReLU,
                     Dense, BatchNorm, ReLU, Dropout,
                     Dense, BatchNorm, ReLU,
                     Dense]
    assert model.row_branch.layers[3].n_in == 8 * 5


def test_ml1m_presets():
    row = ml1m_config(2965)
    col = ml1m_config(4832, column=True)
    assert row.summarization == ((32, 32, 16),)
    assert col.summarization == ((32, 48, 24),)
    assert row.fc_sizes == (2048, 1024, 1024) and row.latent_dim == 1024
    assert row.dropout_p == 0.6
    assert row.feature_len() == 32 * ((2965 - 32) // 16 + 1)


def test_netflix_presets():
    col = netflix_config(10_000, column=True)
    assert [s[1:] for s in col.summarization] == [(96, 48), (64, 32)]
    assert col.fc_sizes[:2] == (2048, 2048)
    assert netflix_config(10_000).summarization[0][1:] == (128, 64)


def test_config_errors():
    with pytest.raises(ConfigError):
        BranchConfig(10, (8, 4), latent_dim=8)
    with pytest.raises(ConfigError):
        BranchConfig(10, (8,), ((2, 16, 2),))
    with pytest.raises(ConfigError):
        BranchConfig(40, (8,), ((2, 8, 4), (2, 16, 2)))
    with pytest.raises(ConfigError):
        build_model(BranchConfig(10, (8,)), BranchConfig(10, (4,)))


def test_same_seed_same_parameters():
    a, b = small_model(seed=3), small_model(seed=3)
    for k, v in a.params().items():
        assert np.array_equal(v, b.params()[k])


# -- embedding ---------------------------------------------------------------------


def test_embed_zero_input_is_finite(setup):
    _, split, model = setup
    u = model.embed_rows(np.zeros((1, split.m_I)))
    v = model.embed_cols(np.zeros((1, split.n_I)))
    assert u.shape == (1, 8) and np.all(np.isfinite(u)) and np.all(np.isfinite(v))


def test_embed_shape_error(setup):
    _, split, model = setup
    with pytest.raises(ShapeError):
        model.embed_rows(np.zeros((2, split.m_I + 1)))


def test_embed_infer_is_pure(setup):
    _, split, model = setup
    x = np.random.default_rng(0).standard_normal((3, split.m_I))
    assert np.array_equal(model.embed_rows(x), model.embed_rows(x))


def test_embed_train_dropout_is_stochastic():
    model = small_model(dropout=0.5)
    x = np.random.default_rng(0).standard_normal((4, 20))
    a = model.embed_rows(x, train=True, rng=np.random.default_rng(1))
    b = model.embed_rows(x, train=True, rng=np.random.default_rng(2))
    assert not np.array_equal(a, b)


# -- prediction ------------------------------------------------------------------


def test_zero_information_predicts_midpoint(setup):
    data, split, model = setup
    zeroed = NmcModel(model.row_cfg, model.col_cfg)
    last = zeroed.row_branch.layers[-1]
    last.params["W"][...] = 0.0
    last.params["b"][...] = 0.0
    assert zeroed.predict(data, split, 0, 0) == 3.0


def test_predictions_in_bounds(setup):
    data, split, model = setup
    rows = np.repeat(np.arange(data.n_rows), data.n_cols)
    cols = np.tile(np.arange(data.n_cols), data.n_rows)
    p = model.predict_entries(data, split, rows, cols, exclude=split.heldout)
    assert np.all((p >= 1.0) & (p <= 5.0))


def test_predict_repeatable(setup):
    data, split, model = setup
    assert model.predict(data, split, 3, 4) == model.predict(data, split, 3, 4)


def test_single_and_batched_predictions_agree(setup):
    data, split, model = setup
    rows, cols = data.rows[:30], data.cols[:30]
    batch = model.predict_entries(data, split, rows, cols)
    single = [model.predict(data, split, i, j) for i, j in zip(rows, cols)]
    np.testing.assert_allclose(batch, single, rtol=0, atol=1e-12)


def test_area_iv_observations_are_ignored(setup):
    data, split, model = setup
    iv = np.flatnonzero(split.area == 3)
    assert len(iv)
    values = data.values.copy()
    values[iv] = 6.0 - values[iv]
    perturbed = data.with_values(values)
    rows = np.repeat(np.arange(data.n_rows), data.n_cols)
    cols = np.tile(np.arange(data.n_cols), data.n_rows)
    a = model.predict_entries(data, split, rows, cols, exclude=split.heldout)
    b = model.predict_entries(perturbed, split, rows, cols, exclude=split.heldout)
    assert np.array_equal(a, b)


def test_only_truncated_coordinates_matter(setup):
    data, split, model = setup
    builder = InputBuilder(data, split)
    # a column unseen in training: its rating from an unseen row must not matter
    unseen = (split.row_pos[data.rows] >= split.n_I) & (split.col_pos[data.cols] >= split.m_I)
    k = np.flatnonzero(unseen)[0]
    before = builder.cols([data.cols[k]]).copy()
    values = data.values.copy()
    values[k] = 1.0 if values[k] > 3 else 5.0
    after = InputBuilder(data.with_values(values), split).cols([data.cols[k]])
    assert np.array_equal(before, after)


# -- loss ------------------------------------------------------------------------


def test_loss_zero_for_perfect_predictions(setup):
    _, split, model = setup
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, split.m_I))
    y = rng.standard_normal((4, split.n_I))
    model_nodrop = small_model(split.m_I, split.n_I, dropout=0.0)
    u = model_nodrop.embed_rows(x, train=True)
    v = model_nodrop.embed_cols(y, train=True)
    targets = cosine(u, v)
    loss, grads = model_nodrop.loss_and_grads(x, y, targets)
    assert loss == pytest.approx(0.0, abs=1e-24)
    assert all(np.abs(g).max() < 1e-10 for g in grads.values())


def test_loss_value_for_known_residual():
    model = small_model(dropout=0.0)
    for branch in (model.row_branch, model.col_branch):
        branch.layers[-1].params["W"][...] = 0.0
        branch.layers[-1].params["b"][...] = 0.0
    rng = np.random.default_rng(0)
    loss, _ = model.loss_and_grads(rng.standard_normal((2, 20)), rng.standard_normal((2, 16)), [1.0, 1.0])
    assert loss == 1.0


def test_batch_of_one_rejected():
    model = small_model()
    with pytest.raises(BatchTooSmallError):
        model.loss_and_grads(np.zeros((1, 20)), np.zeros((1, 16)), [0.5], np.random.default_rng(0))


def model_gradcheck(model, batch=4, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, model.row_cfg.input_len))
    y = rng.standard_normal((batch, model.col_cfg.input_len))
    t = rng.uniform(-1, 1, batch)

    def loss():
        return model.loss_and_grads(x, y, t, np.random.default_rng(99))[0]

    _, analytic = model.loss_and_grads(x, y, t, np.random.default_rng(99))
    analytic = {k: g.copy() for k, g in analytic.items()}
    return grad_check(loss, model.params(), analytic)


def test_end_to_end_gradcheck():
    assert model_gradcheck(small_model(r=8, dropout=0.4)) <= 1e-4


# -- persistence -----------------------------------------------------------------


def test_save_load_roundtrip(setup, tmp_path):
    data, split, model = setup
    model.metadata["split_digest"] = split.digest()
    path = tmp_path / "m.nmc"
    save_model(model, path)
    back = load_model(path)
    assert back.row_cfg == model.row_cfg and back.col_cfg == model.col_cfg
    assert back.metadata == model.metadata
    for k, v in model.arrays().items():
        assert np.array_equal(v, back.arrays()[k]), k
    rng = np.random.default_rng(0)
    rows, cols = rng.integers(0, data.n_rows, 100), rng.integers(0, data.n_cols, 100)
    assert np.array_equal(model.predict_entries(data, split, rows, cols),
                          back.predict_entries(data, split, rows, cols))


def test_checkpoint_layout(setup, tmp_path):
    _, _, model = setup
    path = tmp_path / "m.nmc"
    save_model(model, path)
    raw = path.read_bytes()
    assert raw[:4] == b"NMC1" and raw[4] == 1
    n_cfg = int.from_bytes(raw[5:9], "little")
    assert b"row.fc_sizes=12,10,8" in raw[9:9 + n_cfg]
    n_values = sum(v.size for v in model.arrays().values())
    assert len(raw) == 9 + n_cfg + 8 * n_values + 8


def test_load_bad_magic(tmp_path):
    p = tmp_path / "bad.nmc"
    p.write_bytes(b"XXXX\x01" + b"\x00" * 20)
    with pytest.raises(FormatError):
        load_model(p)


def test_load_truncated(setup, tmp_path):
    _, _, model = setup
    path = tmp_path / "m.nmc"
    save_model(model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-100])
    with pytest.raises(CorruptionError):
        load_model(path)
    flipped = bytearray(raw)
    flipped[-50] ^= 0xFF
    path.write_bytes(bytes(flipped))
    with pytest.raises(CorruptionError):
        load_model(path)
