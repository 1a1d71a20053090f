import json
import math

import numpy as np
import pytest

from lyromel import checkpoint
from lyromel.data import AlignedSequence, DatasetSplit, NoteTriplet
from lyromel.embedding import EmbeddingTable
from lyromel.gan import (
    ATTRIBUTE_SCALE,
    Discriminator,
    Generator,
    TrainConfig,
    discriminator_forward,
    generator_forward,
    init_discriminator,
    init_generator,
    load_model,
    loss_discriminator,
    loss_discriminator_grad,
    loss_generator,
    loss_generator_grad,
    sample_noise,
    save_model,
    train,
)
from lyromel.nn import ShapeError, max_relative_error, numerical_gradient, sgd_update


def small_nets(seed=0, hidden=6):
    rng = np.random.default_rng(seed)
    return init_generator(rng, hidden, scale=0.5), init_discriminator(rng, hidden, scale=0.5), rng


def test_generator_shape_and_determinism():
    g, _, rng = small_nets()
    noise = sample_noise(rng, 1)[0]
    y = rng.normal(size=(20, 20))
    out = generator_forward(g, noise, y)
    assert out.shape == (20, 3)
    assert np.array_equal(out, generator_forward(g, noise, y))
    assert np.all((noise >= 0) & (noise <= 1))
    with pytest.raises(ShapeError):
        generator_forward(g, noise[:19], y[:19])
    with pytest.raises(ShapeError):
        generator_forward(g, noise, y[:, :19])


def test_zero_generator_outputs_zero():
    g, _, rng = small_nets()
    g = g.map_tensors(np.zeros_like)
    out = generator_forward(g, sample_noise(rng, 2), rng.normal(size=(2, 20, 20)))
    assert out.shape == (2, 20, 3) and not out.any()


def test_discriminator_range_and_zero_output_layer():
    _, d, rng = small_nets()
    x = rng.normal(size=(20, 3)) * 50
    y = rng.normal(size=(20, 20))
    p = discriminator_forward(d, x, y)
    assert 0.0 < p < 1.0
    zeroed = d.replace_tensors({**d.tensors(), "fc_out.weight": np.zeros((1, 6)), "fc_out.bias": np.zeros(1)})
    assert discriminator_forward(zeroed, x, y) == 0.5
    with pytest.raises(ShapeError):
        discriminator_forward(d, x[:, :2], y)


def test_discriminator_depends_on_step_order():
    _, d, rng = small_nets(5)
    x = rng.normal(size=(20, 3)) * 30
    y = rng.normal(size=(20, 20))
    perm = rng.permutation(20)
    assert discriminator_forward(d, x, y) != discriminator_forward(d, x[perm], y[perm])


def test_loss_examples():
    assert loss_generator([0.5, 0.5]) == pytest.approx(math.log(0.5))
    assert loss_generator([0.2, 0.8]) == pytest.approx(-0.9163, abs=1e-4)
    assert loss_generator([1e-12]) == pytest.approx(0.0, abs=1e-6)
    assert loss_discriminator([0.5], [0.5]) == pytest.approx(2 * math.log(2))
    assert loss_discriminator([0.9], [0.1]) == pytest.approx(0.2107, abs=1e-4)
    assert loss_discriminator([1 - 1e-12], [1e-12]) == pytest.approx(0.0, abs=1e-6)
    assert np.isfinite(loss_discriminator([0.0], [1.0]))
    for bad in ([1.5], [-0.1], [np.nan]):
        with pytest.raises(ValueError):
            loss_generator(bad)


def test_loss_gradients_match_finite_differences():
    s = np.array([0.3, 0.6, 0.9])
    eps = 1e-7
    num = [(loss_generator(s + eps * e) - loss_generator(s - eps * e)) / (2 * eps) for e in np.eye(3)]
    assert np.allclose(loss_generator_grad(s), num, rtol=1e-6)
    r, f = np.array([0.2, 0.7]), np.array([0.4, 0.1])
    dr, df = loss_discriminator_grad(r, f)
    num_r = [(loss_discriminator(r + eps * e, f) - loss_discriminator(r - eps * e, f)) / (2 * eps) for e in np.eye(2)]
    num_f = [(loss_discriminator(r, f + eps * e) - loss_discriminator(r, f - eps * e)) / (2 * eps) for e in np.eye(2)]
    assert np.allclose(dr, num_r, rtol=1e-6) and np.allclose(df, num_f, rtol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_adversarial_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    hidden, steps, batch = int(rng.integers(1, 9)), int(rng.integers(1, 6)), 2
    g = init_generator(rng, hidden, scale=0.5)
    d = init_discriminator(rng, hidden, scale=0.5)
    z = rng.uniform(size=(batch, steps, 30))
    y = rng.normal(size=(batch, steps, 20))
    real = rng.normal(size=(batch, steps, 3))
    fake = Generator(g).forward(z, y)

    def loss_d(dp):
        s = Discriminator(dp).forward(np.concatenate([real, fake]), np.concatenate([y, y]))
        return loss_discriminator(s[:batch], s[batch:])

    def loss_g(gp):
        return loss_generator(Discriminator(d).forward(Generator(gp).forward(z, y), y))

    disc = Discriminator(d)
    s = disc.forward(np.concatenate([real, fake]), np.concatenate([y, y]))
    grads_d, _ = disc.backward(np.concatenate(loss_discriminator_grad(s[:batch], s[batch:])))
    assert max_relative_error(grads_d, numerical_gradient(loss_d, d)) < 1e-4

    gen = Generator(g)
    out = gen.forward(z, y)
    disc = Discriminator(d)
    scores = disc.forward(out, y)
    _, dfake = disc.backward(loss_generator_grad(scores), need_param_grads=False)
    grads_g, _ = gen.backward(dfake)
    assert max_relative_error(grads_g, numerical_gradient(loss_g, g)) < 1e-4


def test_discriminator_step_decreases_its_loss():
    g, d, rng = small_nets(7, hidden=8)
    z = rng.uniform(size=(4, 20, 30))
    y = rng.normal(size=(4, 20, 20))
    real = rng.normal(size=(4, 20, 3))
    fake = Generator(g).forward(z, y)
    x, c = np.concatenate([real, fake]), np.concatenate([y, y])

    def loss(dp):
        s = Discriminator(dp).forward(x, c)
        return loss_discriminator(s[:4], s[4:])

    disc = Discriminator(d)
    s = disc.forward(x, c)
    grads, _ = disc.backward(np.concatenate(loss_discriminator_grad(s[:4], s[4:])))
    assert loss(sgd_update(d, grads, 1e-4)) < loss(d)


def test_model_file_round_trip(tmp_path):
    g, d, _ = small_nets()
    save_model(tmp_path / "m.ckpt", g, d, ATTRIBUTE_SCALE, epoch=3)
    g2, d2, meta = load_model(tmp_path / "m.ckpt")
    for a, b in ((g, g2), (d, d2)):
        ta, tb = a.tensors(), b.tensors()
        assert ta.keys() == tb.keys()
        assert all(np.array_equal(ta[k], tb[k]) for k in ta)
    assert meta["epoch"] == 3 and meta["attribute_scale"] == [127.0, 32.0, 32.0]
    first = (tmp_path / "m.ckpt").read_bytes()
    save_model(tmp_path / "m.ckpt", g2, d2, ATTRIBUTE_SCALE, epoch=3)
    assert (tmp_path / "m.ckpt").read_bytes() == first


def test_checkpoint_rejects_garbage(tmp_path):
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"not a checkpoint at all")
    blob = checkpoint.dumps({"a": np.arange(3.0)}, {"k": 1})
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(blob[:-5])
    tensors, meta = checkpoint.loads(blob)
    assert np.array_equal(tensors["a"], np.arange(3.0)) and meta == {"k": 1}


def _tiny_split(n_train=2, n_val=2):
    rng = np.random.default_rng(0)
    syl = tuple(("la", "la") for _ in range(20))

    def seq(i):
        notes = tuple(NoteTriplet(int(rng.integers(55, 75)), 1.0, 0.0) for _ in range(20))
        return AlignedSequence(syl, notes, f"s{i}")

    return DatasetSplit([seq(i) for i in range(n_train)], [seq(100 + i) for i in range(n_val)], [])


def _tables():
    vec = EmbeddingTable({"la": np.linspace(-0.5, 0.5, 10)})
    return vec, vec


def test_one_epoch_smoke(tmp_path):
    wt, st = _tables()
    res = train(_tiny_split(), wt, st, TrainConfig(epochs=1, batch=2, hidden=4), seed=1, out_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["best.ckpt", "epoch_001.ckpt", "selection.json"]
    rec = res.history[0]
    assert all(np.isfinite([rec.loss_d, rec.loss_g, rec.mmd2]))


def test_selection_is_argmin_and_deterministic(tmp_path):
    wt, st = _tables()
    cfg = TrainConfig(epochs=4, batch=2, hidden=4)
    a = train(_tiny_split(4), wt, st, cfg, seed=3, out_dir=tmp_path / "a")
    b = train(_tiny_split(4), wt, st, cfg, seed=3, out_dir=tmp_path / "b")
    mmds = [r.mmd2 for r in a.history]
    assert a.best_epoch == int(np.argmin(mmds)) + 1
    manifest = json.loads((tmp_path / "a" / "selection.json").read_text())
    assert manifest["best_epoch"] == a.best_epoch
    assert [e["mmd2"] for e in manifest["epochs"]] == mmds
    for name in ("best.ckpt", "epoch_004.ckpt", "selection.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_rejects_empty_splits():
    wt, st = _tables()
    with pytest.raises(ValueError):
        train(DatasetSplit([], [], []), wt, st, TrainConfig(epochs=1, hidden=2), seed=0)
