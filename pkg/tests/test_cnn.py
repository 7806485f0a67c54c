import math

import numpy as np
import pytest

from gesture_hci import cnn
from oracles import direct_forward, gradcheck, gradcheck_model


def random_canvases(n, seed=0, p=0.4):
    return np.random.default_rng(seed).random((n, 64, 64)) < p


def toy_dataset(n_per=100, seed=0):
    """Disks vs horizontal bars at random positions."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:64, :64]
    masks, labels = [], []
    for i in range(2 * n_per):
        cx, cy = rng.integers(20, 44, 2)
        if i % 2 == 0:
            r = rng.integers(8, 14)
            m = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        else:
            m = (abs(yy - cy) <= 3) & (abs(xx - cx) <= 18)
        masks.append(m)
        labels.append(i % 2)
    return cnn.LabeledDataset(np.array(masks), np.array(labels), ["disk", "bar"])


def test_shapes_and_uniform_output():
    m = cnn.init_model(zero_output=True)
    s = cnn.forward(m, random_canvases(1)[0])
    assert len(s.probabilities) == 16
    assert np.allclose(s.probabilities, 1 / 16, atol=1e-7)
    assert cnn.loss(s, 3) == pytest.approx(math.log(16), abs=1e-6)


def test_output_is_distribution():
    m = cnn.init_model(seed=3)
    probs = cnn.predict_proba(m, random_canvases(4, seed=1))
    assert (probs >= 0).all()
    assert np.allclose(probs.sum(axis=1), 1, atol=1e-5)


def test_forward_matches_direct_convolution():
    m = cnn.init_model(8, seed=11)
    for k, v in m.params.items():
        if k.endswith("_b"):
            v[...] = np.random.default_rng(len(k)).uniform(-0.1, 0.1, v.shape)
    x = random_canvases(2, seed=5).astype(np.float32)[:, None]
    probs, cache = cnn.forward_batch(m, x, keep_cache=True)
    ref = direct_forward(m.params, x)
    for name in ("a1", "p1", "a2", "a3", "logits"):
        assert np.abs(cache[name] - ref[name]).max() <= 1e-5, name
    assert np.abs(cache["flat"] - ref["p2"].reshape(2, -1)).max() <= 1e-5
    assert np.abs(probs - ref["probs"]).max() <= 1e-5


def test_shape_mismatch():
    with pytest.raises(ValueError):
        cnn.forward(cnn.init_model(), np.zeros((32, 32), bool))


def test_softmax_large_logits():
    p = cnn.softmax(np.array([[1e4, -1e4, 0.0, 1e4 - 1.0]]))
    assert np.isfinite(p).all() and abs(p.sum() - 1) <= 1e-5
    assert p[0, 0] > p[0, 3] > p[0, 2]


@pytest.mark.parametrize("probs,label,want", [
    ([0.0, 1.0], 1, 0.0),
    ([0.5, 0.5], 0, math.log(2)),
    ([1.0, 0.0], 1, -math.log(1e-12)),
])
def test_loss_values(probs, label, want):
    assert cnn.loss(np.array(probs), label) == pytest.approx(want, abs=1e-9)


def test_output_gradient_identity():
    m = cnn.init_model(8, seed=2).copy(np.float64)
    x = random_canvases(1, seed=9)[0]
    g = cnn.backward(m, x, 5)
    probs, cache = cnn.forward_batch(m, x[None, None].astype(np.float64), keep_cache=True)
    dlogits = probs[0].copy()
    dlogits[5] -= 1
    assert np.allclose(g["fc2_b"], dlogits, atol=1e-12)
    assert np.allclose(g["fc2_w"], np.outer(dlogits, cache["r3"][0]), atol=1e-12)


def test_zero_input_gradients():
    m = gradcheck_model(seed=1)
    g = cnn.backward(m, np.zeros((64, 64), bool), 0)
    assert not g["conv1_w"].any()
    assert np.abs(g["conv1_b"]).max() > 0


@pytest.mark.parametrize("seed", [0, 1])
def test_gradient_check(seed):
    m = gradcheck_model(seed)
    rng = np.random.default_rng(seed)
    x = (rng.random((1, 1, 64, 64)) < 0.5).astype(np.float64)
    report = gradcheck(m, x, int(rng.integers(8)), rng, per_block=6)
    for name, (err, used) in report.items():
        assert used > 0, name
        assert err <= 1e-3, (name, err)


def test_sgd_step_examples():
    m = cnn.init_model(2, seed=0).copy(np.float64)
    for v in m.params.values():
        v[...] = 1.0
    vel = cnn.zero_velocity(m)
    grads = {k: np.full_like(v, 2.0) for k, v in m.params.items()}
    cnn.sgd_step(m, grads, vel, cnn.TrainConfig(alpha=0.1, mu=0.0))
    assert np.allclose(vel["fc2_b"], -0.2) and np.allclose(m.params["fc2_b"], 0.8)
    for v in vel.values():
        v[...] = 0.5
    zero = {k: np.zeros_like(v) for k, v in m.params.items()}
    cnn.sgd_step(m, zero, vel, cnn.TrainConfig(mu=0.9))
    assert np.allclose(vel["conv1_w"], 0.45) and np.allclose(m.params["conv1_w"], 0.8 + 0.45)


def test_default_hyperparameters():
    cfg = cnn.TrainConfig()
    assert (cfg.alpha, cfg.mu) == (0.0001, 0.9)
    with pytest.raises(ValueError):
        cnn.TrainConfig(alpha=0)
    with pytest.raises(ValueError):
        cnn.TrainConfig(mu=1.0)


def test_train_two_class_toy_problem():
    ds = toy_dataset()
    cfg = cnn.TrainConfig(epochs=20, batch_size=16, seed=4)
    res = cnn.train(ds, cfg)
    assert len(res.losses) == len(res.accuracies) == 20
    assert res.accuracies[-1] >= 0.99


def test_train_is_bitwise_reproducible():
    ds = toy_dataset(30, seed=1)
    cfg = cnn.TrainConfig(epochs=2, batch_size=8, seed=9)
    a, b = cnn.train(ds, cfg), cnn.train(ds, cfg)
    assert a.losses == b.losses
    for k in cnn.PARAM_ORDER:
        assert a.model.params[k].tobytes() == b.model.params[k].tobytes()


def test_train_rejects_bad_data():
    ds = toy_dataset(5)
    with pytest.raises(ValueError):
        cnn.train(ds.subset(np.flatnonzero(ds.labels == 0)))
    with pytest.raises(ValueError):
        cnn.train(ds.subset(np.array([], dtype=int)))


def test_split_is_stratified():
    ds = toy_dataset(50)
    tr, ho = cnn.split_holdout(ds, 0.2, seed=0)
    assert np.bincount(ho.labels).tolist() == [10, 10]
    assert len(tr) + len(ho) == len(ds)


def test_evaluate_lookup_double():
    ds = toy_dataset(20)
    acc, conf = cnn.evaluate(lambda masks: ds.labels, ds)
    assert acc == 1.0 and conf.sum(axis=1).tolist() == [20, 20]


def test_evaluate_random_model_near_chance():
    rng = np.random.default_rng(0)
    n = 1600
    labels = np.arange(n) % 16
    ds = cnn.LabeledDataset(np.zeros((n, 64, 64), bool), labels, [f"c{i}" for i in range(16)])
    acc, conf = cnn.evaluate(lambda masks: rng.integers(0, 16, len(masks)), ds)
    sigma = math.sqrt((1 / 16) * (15 / 16) / n)
    assert abs(acc - 1 / 16) <= 3 * sigma
    assert conf.trace() / conf.sum() == acc
    assert conf.sum(axis=1).tolist() == [100] * 16


def test_save_load_roundtrip(tmp_path):
    m = cnn.init_model(8, seed=5, class_names=list("abcdefgh"))
    path = tmp_path / "m.gpcnn"
    cnn.save_model(m, path)
    back = cnn.load_model(path)
    assert back.class_names == m.class_names
    for k in cnn.PARAM_ORDER:
        assert back.params[k].tobytes() == m.params[k].tobytes()
    assert path.read_bytes()[:5] == b"GPCNN"


def test_load_bad_magic(tmp_path):
    path = tmp_path / "m.gpcnn"
    cnn.save_model(cnn.init_model(2), path)
    data = bytearray(path.read_bytes())
    data[0:2] = b"XX"
    path.write_bytes(bytes(data))
    with pytest.raises(cnn.ModelVersionError):
        cnn.load_model(path)


def test_load_wrong_version(tmp_path):
    path = tmp_path / "m.gpcnn"
    cnn.save_model(cnn.init_model(2), path)
    data = bytearray(path.read_bytes())
    data[5:7] = (99).to_bytes(2, "little")
    path.write_bytes(bytes(data))
    with pytest.raises(cnn.ModelVersionError):
        cnn.load_model(path)


def test_load_short_payload(tmp_path):
    path = tmp_path / "m.gpcnn"
    cnn.save_model(cnn.init_model(16), path)
    path.write_bytes(path.read_bytes()[:-40])
    with pytest.raises(cnn.ModelShapeError):
        cnn.load_model(path)


def test_load_trailing_bytes(tmp_path):
    path = tmp_path / "m.gpcnn"
    cnn.save_model(cnn.init_model(2), path)
    path.write_bytes(path.read_bytes() + b"\0\0\0\0")
    with pytest.raises(cnn.ModelShapeError):
        cnn.load_model(path)


def test_random_shift_translates_with_zero_fill():
    x = np.zeros((50, 1, 8, 8), np.float32)
    x[:, 0, 3, 4] = 1.0
    out = cnn.random_shift(x, 2, np.random.default_rng(0))
    moves = set()
    for k in range(50):
        (r,), (c,) = np.nonzero(out[k, 0])
        moves.add((int(r) - 3, int(c) - 4))
        assert out[k].sum() == 1.0
    assert moves <= {(dy, dx) for dy in range(-2, 3) for dx in range(-2, 3)}
    assert len(moves) > 10
    edge = np.ones((1, 1, 4, 4), np.float32)
    assert cnn.random_shift(edge, 1, np.random.default_rng(3)).sum() in (16, 12, 9)
    with pytest.raises(ValueError):
        cnn.TrainConfig(shift=-1)
