import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fdnet import FDNetSegmenter
from fdnet.training import NumericalError, linear_decay
from fdnet.validation import check_images, check_masks, downsample_masks

TOY = dict(main_size=32, channels=(8, 8, 8, 8), width=8, key_dim=8, batch=2)


def toy_data(n=4, size=32, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 256, size=(n, size, size, 3), dtype=np.uint8)
    y = np.zeros((n, size, size))
    for i in range(n):
        r, c = rng.integers(1, max(size // 2, 2), size=2)
        y[i, r : r + size // 3, c : c + size // 3] = 1
    return X, y


def params_of(est):
    return {k: v.copy() for k, v in est.model_.state_dict().items()}


# ---------------------------------------------------------------- sklearn contract


def test_get_params_and_clone():
    est = FDNetSegmenter(**TOY, lr=0.01, use_dam=False)
    params = est.get_params()
    assert params["lr"] == 0.01 and params["use_dam"] is False
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(epochs=3)
    assert twin.epochs == 3 and est.epochs == 1


def test_unfitted_prediction_raises():
    X, _ = toy_data(1)
    with pytest.raises(NotFittedError):
        FDNetSegmenter(**TOY).predict(X)


def test_hyperparameter_validation():
    X, y = toy_data(2)
    for bad in (dict(lr=-1.0), dict(main_size=48), dict(batch=0), dict(epochs=-1)):
        with pytest.raises(ValueError):
            FDNetSegmenter(**{**TOY, **bad}).fit(X, y)


# ---------------------------------------------------------------- input validation


def test_check_images_layouts_agree():
    X, _ = toy_data(2, 8)
    nhwc = check_images(X)
    assert nhwc.shape == (2, 3, 8, 8)
    np.testing.assert_allclose(nhwc, X.transpose(0, 3, 1, 2) / 255.0)
    np.testing.assert_array_equal(check_images(nhwc), nhwc)
    assert check_images(X[0]).shape == (1, 3, 8, 8)


@pytest.mark.parametrize("bad", [
    np.zeros((2, 8, 8)),
    np.zeros((1, 8, 6, 3)),
    np.full((1, 4, 4, 3), np.nan),
    np.full((1, 4, 4, 3), 1.5),
    np.zeros((1, 4, 4, 4)),
])
def test_check_images_rejects(bad):
    with pytest.raises(ValueError):
        check_images(bad)


def test_check_masks():
    m = np.array([[[0, 200], [128, 127]]], dtype=np.uint8)
    np.testing.assert_array_equal(check_masks(m), [[[0, 1], [1, 0]]])
    assert check_masks(np.ones((2, 1, 3, 3))).shape == (2, 3, 3)
    with pytest.raises(ValueError):
        check_masks(np.full((1, 2, 2), 0.5))
    with pytest.raises(ValueError):
        check_masks(np.ones((2, 3, 3)), n=3)
    with pytest.raises(ValueError):
        check_masks(np.ones((1, 3, 3)), size=4)


def test_downsample_masks_area_then_threshold():
    y = np.zeros((1, 4, 4))
    y[0, 0, 0] = 1                 # 1/4 of the top-left block
    y[0, 0:2, 2] = 1               # 2/4 of the top-right block
    y[0, 2:4, 0:2] = 1             # the whole bottom-left block
    out = downsample_masks(y, 2)
    np.testing.assert_array_equal(out[0, 0], [[0, 1], [1, 0]])


# ---------------------------------------------------------------- fitting


def test_predict_shapes_and_ranges():
    X, y = toy_data(3)
    est = FDNetSegmenter(**TOY, max_steps=1).fit(X, y)
    assert est.decision_function(X).shape == (3, 16, 16)
    prob = est.predict_proba(X)
    assert prob.shape == (3, 32, 32) and prob.min() >= 0 and prob.max() <= 1
    assert set(np.unique(est.predict(X))) <= {0, 1}
    X64 = np.repeat(np.repeat(X, 2, axis=1), 2, axis=2)
    assert est.predict_proba(X64).shape == (3, 64, 64)
    assert 0.0 <= est.score(X, y) <= 1.0


def test_zero_epochs_keeps_initialisation():
    X, y = toy_data(2)
    init = params_of(FDNetSegmenter(**TOY).initialize())
    est = FDNetSegmenter(**TOY, epochs=0).fit(X, y)
    assert est.n_steps_ == 0
    for k, v in init.items():
        np.testing.assert_array_equal(params_of(est)[k], v)


def test_zero_learning_rate_leaves_parameters_unchanged():
    X, y = toy_data(4)
    init = params_of(FDNetSegmenter(**TOY).initialize())
    est = FDNetSegmenter(**TOY, lr=0.0, epochs=2).fit(X, y)
    assert est.n_steps_ == 4
    for k, v in init.items():
        np.testing.assert_array_equal(params_of(est)[k], v)


def test_learning_rate_decays_linearly():
    X, y = toy_data(4)
    est = FDNetSegmenter(**TOY, epochs=3, lr=0.05).fit(X, y)
    total = len(est.loss_log_)
    assert total == 6
    for row in est.loss_log_:
        assert abs(row["lr"] - 0.05 * (1 - row["step"] / total)) <= 1e-12
    assert linear_decay(0.05, 0, 10) == 0.05 and linear_decay(0.05, 10, 10) == 0.0


def test_training_is_deterministic():
    X, y = toy_data(4)
    a = FDNetSegmenter(**TOY, epochs=2).fit(X, y)
    b = FDNetSegmenter(**TOY, epochs=2).fit(X, y)
    assert a.loss_log_ == b.loss_log_
    for k, v in params_of(a).items():
        np.testing.assert_array_equal(params_of(b)[k], v)


def test_max_steps_caps_the_run():
    X, y = toy_data(4)
    assert FDNetSegmenter(**TOY, epochs=5, max_steps=3).fit(X, y).n_steps_ == 3


def test_warm_start_continues_from_current_parameters():
    X, y = toy_data(2)
    est = FDNetSegmenter(**TOY, max_steps=1).fit(X, y)
    before = params_of(est)
    est.set_params(warm_start=True, lr=0.0).fit(X, y)
    for k, v in before.items():
        np.testing.assert_array_equal(params_of(est)[k], v)


def test_non_finite_loss_aborts():
    X, y = toy_data(2)
    est = FDNetSegmenter(**TOY, warm_start=True).initialize()
    p = est.model_.parameters()[0]
    p.data = np.full_like(p.data, np.nan)
    with pytest.raises(NumericalError):
        est.fit(X, y)


def test_dam_can_be_disabled():
    X, y = toy_data(2)
    est = FDNetSegmenter(**TOY, use_dam=False, max_steps=2).fit(X, y)
    assert all(row["l_fn"] == 0.0 and row["l_fp"] == 0.0 for row in est.loss_log_)
    assert est.predict_proba(X).shape == (2, 32, 32)


def test_batch_order_with_and_without_shuffle():
    from fdnet.training import LoopSettings, batches

    rng = np.random.default_rng(0)
    fixed = [b.tolist() for b in batches(5, LoopSettings(epochs=2, batch=2, shuffle=False), rng)]
    assert fixed == [[0, 1], [2, 3], [4], [0, 1], [2, 3], [4]]
    shuffled = [b.tolist() for b in batches(5, LoopSettings(epochs=2, batch=2), rng)]
    assert sorted(sum(shuffled[:3], [])) == list(range(5)) and sorted(sum(shuffled[3:], [])) == list(range(5))
