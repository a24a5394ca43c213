import json

import numpy as np
import pytest

from taubno import tensor as T
from taubno.config import RunConfig
from taubno.connectome import build_surrogates
from taubno.dataset import SampleSet
from taubno.model import (
    ABLATIONS,
    CheckpointError,
    OrderingMismatch,
    TauBnoConfig,
    TauBnoModel,
    directed_graph_operator,
    fuse,
    load_checkpoint,
    relative_l2_loss,
    save_checkpoint,
    with_ablations,
)
from taubno.synthetic import synthetic_connectome
from taubno.training import TrainSettings, mean_loss, model_config_from, train

V, D, K, NT = 8, 4, 3, 5


@pytest.fixture(scope="module")
def conn():
    return synthetic_connectome(V, seed=2)


@pytest.fixture(scope="module")
def graphs(conn):
    return build_surrogates(conn)


def tiny(conn, ablations=(), seed=0):
    cfg = TauBnoConfig(V, NT, hidden=D, modes=K, ablations=ablations,
                       ordering_hash=conn.ordering_hash)
    return TauBnoModel(cfg, seed=seed)


def batch(rng, b=3):
    return rng.random((b, V)), rng.random((b, 5)), rng.random((b, V, NT))


def test_forward_shapes(conn, graphs):
    rng = np.random.default_rng(0)
    u0, lam, _ = batch(rng)
    assert tiny(conn).forward(u0, lam, graphs).shape == (3, V, NT)
    assert tiny(conn).predict(u0[0], lam[0], graphs).shape == (1, V, NT)
    with pytest.raises(T.ShapeError):
        tiny(conn).forward(u0[:, :5], lam, graphs)


def test_biases_start_at_zero(conn):
    m = tiny(conn)
    for name, p in m.params.items():
        if name.endswith(".b"):
            assert np.all(p.data == 0), name
    assert all(e["init"] for e in m.manifest())


def test_fuse_identity_and_shape():
    r = np.random.default_rng(1).normal(size=(2, V, D))
    np.testing.assert_array_equal(fuse(r, np.ones_like(r)).data, r)
    with pytest.raises(T.ShapeError):
        fuse(r, np.ones((2, V, D + 1)))


def test_dgo_ordering_checked(conn, graphs):
    m = TauBnoModel(TauBnoConfig(V, NT, hidden=D, modes=K, ordering_hash="other"))
    with pytest.raises(OrderingMismatch):
        directed_graph_operator(np.zeros((1, V, D)), graphs, m)


def test_end_to_end_gradients(conn, graphs):
    rng = np.random.default_rng(3)
    u0, lam, truth = batch(rng, 2)
    m = tiny(conn)
    m.set_lambda_stats(lam.mean(0), lam.std(0) + 0.1)
    names = ["fo.lift.w", "fo.layer0.spec_re", "fo.layer1.diff", "qo.layer0.w",
             "dgo.in.layer1.w_nbr", "dgo.embed.b", "proj.fc2.w"]

    def loss():
        return relative_l2_loss(m.forward(u0, lam, graphs), truth)

    for p in m.parameters():
        p.zero_grad()
    loss().backward()
    step = 1e-6
    for name in names:
        p = m.params[name]
        for idx in list(np.ndindex(p.shape))[:4]:
            old = p.data[idx]
            p.data[idx] = old + step
            up = float(loss().data)
            p.data[idx] = old - step
            down = float(loss().data)
            p.data[idx] = old
            num = (up - down) / (2 * step)
            assert abs(num - p.grad[idx]) <= 1e-5 * max(1.0, abs(num)), (name, idx)


def test_loss_examples():
    truth = np.ones((2, 3, 4))
    assert float(relative_l2_loss(truth, truth).data) < 1e-140
    # 10% error on every entry of both samples: 0.1 each, summed
    assert float(relative_l2_loss(1.1 * truth, truth).data) == pytest.approx(0.2, rel=1e-12)
    assert float(relative_l2_loss(np.zeros((3, 4)), np.ones((3, 4))).data) == pytest.approx(1.0)
    with pytest.raises(T.ShapeError):
        relative_l2_loss(np.zeros((2, 3, 4)), np.zeros((2, 3, 5)))


def test_checkpoint_round_trip(conn, graphs, tmp_path):
    rng = np.random.default_rng(4)
    u0, lam, _ = batch(rng)
    m = tiny(conn, seed=5)
    m.set_lambda_stats(lam.mean(0), lam.std(0))
    save_checkpoint(m, tmp_path / "ck", connectome=conn, extra={"note": 1})
    back, meta = load_checkpoint(tmp_path / "ck")
    assert meta["note"] == 1 and back.config == m.config
    np.testing.assert_allclose(back.predict(u0, lam, graphs), m.predict(u0, lam, graphs),
                               rtol=1e-5, atol=1e-6)
    offsets = [e["offset"] for e in meta["parameters"]]
    assert offsets == sorted(offsets) and offsets[0] == 0
    assert (tmp_path / "ck" / "model.bin").stat().st_size == 4 * m.n_parameters()


def test_checkpoint_errors(conn, tmp_path):
    save_checkpoint(tiny(conn), tmp_path / "ck")
    blob = bytearray((tmp_path / "ck" / "model.bin").read_bytes())
    blob[0] ^= 1
    (tmp_path / "ck" / "model.bin").write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "ck")
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "none")
    save_checkpoint(tiny(conn), tmp_path / "ck2")
    meta_path = tmp_path / "ck2" / "model.meta.json"
    meta = json.loads(meta_path.read_text())
    meta["config"]["ablations"] = ["no_qo"]
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "ck2")


@pytest.mark.parametrize("toggle", ABLATIONS)
def test_ablation_manifests(conn, graphs, toggle):
    full = {e["name"] for e in tiny(conn).manifest()}
    ab = tiny(conn, (toggle,))
    names = {e["name"] for e in ab.manifest()}
    prefix = {"no_fo": "fo.layer", "no_qo": "qo.", "no_dgo": "dgo.", "no_fourier": ".spec_",
              "no_diff": ".diff"}[toggle]
    assert any(prefix in n for n in full) and not any(prefix in n for n in names)
    rng = np.random.default_rng(0)
    u0, lam, _ = batch(rng)
    assert ab.forward(u0, lam, graphs).shape == (3, V, NT)


def test_ablation_validation():
    with pytest.raises(ValueError):
        TauBnoConfig(V, NT, ablations=("no_fo", "no_qo", "no_dgo"))
    with pytest.raises(ValueError):
        TauBnoConfig(V, NT, ablations=("bogus",))
    with pytest.raises(ValueError):
        TauBnoConfig(V, NT, modes=V)
    assert with_ablations(TauBnoConfig(V, NT, modes=K), ["no_qo"]).ablations == ("no_qo",)


def fake_set(rng, n):
    u0 = rng.random((n, V))
    lam = rng.random((n, 5))
    target = np.cumsum(rng.random((n, V, NT)), axis=-1) * u0[:, :, None]
    return SampleSet(np.arange(n), np.array(["train"] * n), u0, lam, target,
                     np.arange(NT + 1.0), {})


def test_zero_lr_leaves_model_unchanged(conn):
    data = fake_set(np.random.default_rng(1), 4)
    cfg = model_config_from(RunConfig({"model.hidden": D, "model.modes": K}), V, NT,
                            conn.ordering_hash)
    res = train(data, data, conn, cfg, TrainSettings(epochs=2, lr=0.0, lr_min=0.0, seed=3))
    fresh = TauBnoModel(cfg, seed=3)
    for name, p in res.model.params.items():
        np.testing.assert_array_equal(p.data, fresh.params[name].data)


def test_overfits_one_sample(conn):
    data = fake_set(np.random.default_rng(2), 1)
    cfg = model_config_from(RunConfig({"model.hidden": 8, "model.modes": K}), V, NT,
                            conn.ordering_hash)
    graphs = build_surrogates(conn)
    start = mean_loss(TauBnoModel(cfg, seed=0), data, graphs)
    res = train(data, data, conn, cfg, TrainSettings(epochs=400, lr=3e-3, lr_min=1e-5, seed=0))
    assert res.best_val < 0.05 < start


def test_training_deterministic(conn, tmp_path):
    data = fake_set(np.random.default_rng(3), 6)
    cfg = model_config_from(RunConfig({"model.hidden": D, "model.modes": K}), V, NT,
                            conn.ordering_hash)
    s = TrainSettings(epochs=3, batch_size=4, seed=1)
    a = train(data, data, conn, cfg, s, out_dir=tmp_path / "a")
    b = train(data, data, conn, cfg, s, out_dir=tmp_path / "b")
    assert [r[:4] for r in a.log_rows] == [r[:4] for r in b.log_rows]
    blobs = [(tmp_path / d / "model.bin").read_bytes() for d in "ab"]
    assert blobs[0] == blobs[1]
