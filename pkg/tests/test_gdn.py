import numpy as np
import pytest

from abmgdn import abm
from abmgdn.encode import FeatureCodec, build_graph
from abmgdn.gdn import (
    GdnConfig,
    GdnModel,
    GraphBatch,
    MessagePassing,
    Optimizers,
    TrainConfig,
    ancestral_sample,
    cosine_beta,
    cosine_schedule,
    diffusion_loss,
    forward_noise,
    load_model,
    prepare,
    rollout,
    sample_dynamic,
    save_model,
    sinusoidal_embedding,
    train,
    train_step,
)
from abmgdn.nn import Tensor, mse_loss
from abmgdn.nn.gradcheck import gradcheck
from abmgdn.synthetic import BernoulliOracle

TINY = GdnConfig(gnn_hidden=(4, 5), embed_dim=6, cond_dim=5, time_dim=4, trunk=(4, 6, 4), tau_max=10)
SMALL = GdnConfig(gnn_hidden=(16, 16), embed_dim=32, cond_dim=32, time_dim=32, trunk=(32, 64, 32), tau_max=50)


# ---- schedule ----

def test_beta_endpoints_and_midpoint():
    assert cosine_beta(0, 100) == pytest.approx(1e-4, abs=1e-15)
    assert cosine_beta(100, 100) == pytest.approx(0.02, abs=1e-15)
    assert cosine_beta(50, 100) == pytest.approx(0.01005, abs=1e-15)


def test_schedule_monotone_and_sigma_one():
    s = cosine_schedule(100)
    assert (np.diff(s.beta[1:]) > 0).all()
    assert (np.diff(s.alpha_bar) < 0).all() and s.alpha_bar[0] == 1.0
    assert s.sigma[1] == 0.0
    assert s.beta[100] == pytest.approx(0.02)


def test_terminal_alpha_bar_true_value():
    # the schedule does not reach 0.01 at tau_max = 100; it needs ~500 steps
    assert cosine_schedule(100).alpha_bar[-1] == pytest.approx(0.35964, abs=1e-5)
    assert cosine_schedule(500).alpha_bar[-1] < 0.01


def test_sigma_beta_mode():
    s = cosine_schedule(20, sigma_mode="beta")
    np.testing.assert_allclose(s.sigma[1:], np.sqrt(s.beta[1:]))


def test_schedule_errors():
    with pytest.raises(ValueError):
        cosine_schedule(100, beta_start=0.02, beta_end=0.01)
    with pytest.raises(ValueError):
        cosine_schedule(0)


def test_forward_noise_limits():
    s = cosine_schedule(100)
    z0 = np.array([0.3, -0.7])
    np.testing.assert_array_equal(forward_noise(z0, 0, np.ones(2), s), z0)
    np.testing.assert_allclose(forward_noise(z0, 40, np.zeros(2), s), np.sqrt(s.alpha_bar[40]) * z0)
    with pytest.raises(ValueError):
        forward_noise(z0, 101, np.zeros(2), s)


def test_forward_noise_variance():
    s = cosine_schedule(100)
    eps = np.random.default_rng(0).standard_normal(100_000)
    for tau in (10, 50, 100):
        v = forward_noise(np.zeros_like(eps), tau, eps, s).var()
        assert abs(v / (1 - s.alpha_bar[tau]) - 1) < 0.02


# ---- embedding ----

def test_embedding_zero_and_bounds():
    e = sinusoidal_embedding(0, 256)
    assert (e[0::2] == 0).all() and (e[1::2] == 1).all()
    E = sinusoidal_embedding(np.arange(1, 101), 256)
    assert np.abs(E).max() <= 1.0


def test_embedding_distinct():
    E = sinusoidal_embedding(np.arange(1, 101), 256)
    d = np.linalg.norm(E[:, None] - E[None], axis=-1)
    assert d[~np.eye(100, dtype=bool)].min() > 0


def test_embedding_odd_dim():
    with pytest.raises(ValueError):
        sinusoidal_embedding(3, 255)


# ---- GNN ----

def _graph(src, dst, n):
    return GraphBatch(np.asarray(src, np.int64), np.asarray(dst, np.int64), n, np.zeros(n, np.int64))


def test_gnn_isolated_node_finite():
    gnn = MessagePassing(4, (8,), 6, "sum", np.random.default_rng(0))
    Z = np.random.default_rng(1).normal(size=(3, 4))
    g = _graph([0], [1], 3)
    out = gnn(Z, g).data
    assert np.isfinite(out).all()
    np.testing.assert_array_equal(gnn.aggregate(Z, g).data[2], 0)
    direct = gnn.mlp(Tensor(np.concatenate([Z[2:], np.zeros((1, 4))], axis=1))).data
    np.testing.assert_allclose(out[2], direct[0])


def test_gnn_permutation_invariant_exact():
    rng = np.random.default_rng(0)
    gnn = MessagePassing(4, (8,), 6, "mean", rng)
    # small-integer states keep every partial sum exact, so the check can be bitwise
    Z = rng.integers(-3, 3, size=(5, 4)).astype(float)
    src, dst = np.array([1, 2, 3, 4, 0]), np.array([0, 0, 0, 1, 1])
    ref = gnn(Z, _graph(src, dst, 5)).data
    for perm in ([2, 0, 1, 4, 3], [4, 3, 2, 1, 0]):
        np.testing.assert_array_equal(gnn(Z, _graph(src[perm], dst[perm], 5)).data, ref)


def test_sum_is_twice_mean_for_two_neighbours():
    rng = np.random.default_rng(0)
    s = MessagePassing(3, (4,), 4, "sum", rng)
    m = MessagePassing(3, (4,), 4, "mean", rng)
    Z = rng.normal(size=(3, 3))
    g = _graph([1, 2], [0, 0], 3)
    np.testing.assert_allclose(s.aggregate(Z, g).data[0], 2 * m.aggregate(Z, g).data[0])


def test_gnn_dim_mismatch():
    gnn = MessagePassing(4, (8,), 6, "sum", np.random.default_rng(0))
    with pytest.raises(ValueError):
        gnn(np.zeros((2, 3)), _graph([], [], 2))


# ---- model pieces ----

@pytest.fixture(scope="module")
def pp_state():
    eng = abm.make_engine("predprey", {"grid_size": 6, "n_agents": 16, "alive_density": 0.25})
    return eng.initial_state(np.random.default_rng(3))


def test_zero_condition_mlps(pp_state):
    codec = FeatureCodec.for_state(pp_state)
    m = GdnModel(codec, GdnConfig(**{**TINY.to_dict(), "gnn_hidden": (4, 5), "trunk": (4, 6, 4),
                                     "cond_init": "zeros"}), 0)
    prep = prepare(m, [pp_state])
    np.testing.assert_array_equal(m.condition(prep.Z, prep.graph, 3).data, 0)


def test_condition_additive(pp_state):
    codec = FeatureCodec.for_state(pp_state)
    m = GdnModel(codec, TINY, 0)
    prep = prepare(m, [pp_state])
    c = m.condition(prep.Z, prep.graph, 3).data
    parts = (m.state_mlp(Tensor(prep.Z)).data, m.context(Tensor(prep.Z), prep.graph, 1).data,
             m.time_condition(3).data)
    np.testing.assert_allclose(c - parts[2], parts[0] + parts[1])
    np.testing.assert_allclose(c, sum(parts))


@pytest.mark.parametrize("model,params,dyn", [("schelling", {"grid_size": 5}, 2),
                                              ("predprey", {"grid_size": 6, "n_agents": 16, "alive_density": 0.25}, 6)])
def test_denoiser_shapes_and_determinism(model, params, dyn):
    st = abm.make_engine(model, params).initial_state(np.random.default_rng(0))
    m = GdnModel(FeatureCodec.for_state(st), TINY, 0)
    prep = prepare(m, [st])
    x = np.random.default_rng(1).normal(size=(st.n_agents, dyn))
    c = m.condition(prep.Z, prep.graph, 4)
    a, b = m.eps(Tensor(x), c).data, m.eps(Tensor(x), c).data
    assert a.shape == x.shape
    np.testing.assert_array_equal(a, b)


def test_trunk_gradcheck(pp_state):
    m = GdnModel(FeatureCodec.for_state(pp_state), TINY, 0)
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(pp_state.n_agents, 6)), requires_grad=True)
    c = Tensor(rng.normal(size=(pp_state.n_agents, TINY.cond_dim)), requires_grad=True)
    target = Tensor(rng.normal(size=(pp_state.n_agents, 6)))
    params = list(m.denoiser.parameters().values())
    err = gradcheck(lambda: mse_loss(m.eps(x, c), target), [x, c] + params)
    assert err < 1e-5


def test_end_to_end_gradcheck(pp_state):
    m = GdnModel(FeatureCodec.for_state(pp_state), TINY, 0)
    prep = prepare(m, [pp_state])
    rng = np.random.default_rng(3)
    y = rng.normal(size=(pp_state.n_agents, 6))
    eps = rng.normal(size=y.shape)
    params = list(m.parameters().values())
    err = gradcheck(lambda: diffusion_loss(m, prep, y, 5, eps), params)
    assert err < 1e-4


def test_gradient_reaches_omega(pp_state):
    m = GdnModel(FeatureCodec.for_state(pp_state), TINY, 0)
    prep = prepare(m, [pp_state])
    rng = np.random.default_rng(4)
    y = rng.normal(size=(pp_state.n_agents, 6))
    diffusion_loss(m, prep, y, 5, rng.normal(size=y.shape)).backward()
    assert sum(np.abs(p.grad).sum() for p in m.omega().values()) > 0


# ---- training ----

class _OracleEps(GdnModel):
    injected = None

    def eps(self, latent, c):
        return Tensor(self.injected)


def test_perfect_eps_gives_zero_loss(pp_state):
    m = _OracleEps(FeatureCodec.for_state(pp_state), TINY, 0)
    prep = prepare(m, [pp_state])
    rng = np.random.default_rng(0)
    eps = rng.normal(size=(pp_state.n_agents, 6))
    m.injected = eps
    assert float(diffusion_loss(m, prep, rng.normal(size=eps.shape), 7, eps).data) == 0.0


def test_one_step_updates_both_sets(pp_state):
    m = GdnModel(FeatureCodec.for_state(pp_state), TINY, 0)
    before = m.state_dict()
    opt = Optimizers(m, TrainConfig(lr_diffusion=1e-3))
    prep = prepare(m, [pp_state])
    y = m.codec.encode(pp_state)[:, m.codec.dynamic_slice]
    train_step(m, opt, prep, y, np.random.default_rng(0))
    after = m.state_dict()
    moved = {k for k in before if not np.array_equal(before[k], after[k])}
    assert moved & set(m.omega()) and moved & set(m.phi())
    assert opt.phi.state.lr * 2 == opt.omega.state.lr


def test_loss_decreases_smoke():
    orc = BernoulliOracle(grid_size=12, clusters=(3, 3, 3))
    ds = orc.dataset(T=4, R=10, seed=0)
    m = GdnModel(FeatureCodec("schelling", 12), SMALL, 0)
    losses = train(m, ds, TrainConfig(epochs=5, lr_diffusion=1e-3, max_steps=200))
    assert len(losses) == 200
    assert np.mean(losses[-20:]) < np.mean(losses[:20])


def test_training_rejects_wrong_model():
    orc = BernoulliOracle(grid_size=12, clusters=(3, 3, 3))
    ds = orc.dataset(T=2, R=2, seed=0)
    ds.model = "predprey"
    with pytest.raises(RuntimeError):
        train(GdnModel(FeatureCodec("schelling", 12), SMALL, 0), ds, TrainConfig(epochs=1))


# ---- sampling ----

def test_telescoping_update():
    s = cosine_schedule(100)
    x = np.random.default_rng(0).normal(size=(7, 2))
    out = ancestral_sample(s, lambda z, tau: np.zeros_like(z), x, None)
    np.testing.assert_allclose(out, x / np.prod(np.sqrt(s.alpha[1:])), rtol=1e-12)


def test_final_step_noise_free():
    s = cosine_schedule(5)
    calls = []
    ancestral_sample(s, lambda z, tau: np.zeros_like(z), np.zeros((1, 2)),
                     lambda tau, shape: calls.append(tau) or np.zeros(shape))
    assert calls == [5, 4, 3, 2]


def test_degenerate_target_recovered():
    orc = BernoulliOracle(grid_size=12, clusters=(3, 3, 3), p=(1.0, 1.0, 1.0))
    ds = orc.dataset(T=6, R=5, seed=0)
    codec = FeatureCodec("schelling", 12)
    m = GdnModel(codec, SMALL, 0)
    train(m, ds, TrainConfig(epochs=1000, lr_diffusion=1e-3, max_steps=6000))
    test = orc.layout(np.random.default_rng(9))
    dyn = sample_dynamic(m, [test], [np.random.default_rng(1)], repeats=20)
    pos = codec.unscale_coord(dyn)
    assert (pos == 0).all(axis=-1).mean() >= 0.99


def test_rollout_contracts(pp_state):
    m = GdnModel(FeatureCodec.for_state(pp_state), TINY, 0)
    assert rollout(m, pp_state, 0, 2, seed=1) == [[pp_state], [pp_state]]
    a = rollout(m, pp_state, 2, 3, seed=1)
    b = rollout(m, pp_state, 2, 1, seed=1)
    assert len(a) == 3 and len(a[0]) == 3
    for x, y in zip(a[0], b[0]):
        assert np.array_equal(x.pos, y.pos) and np.array_equal(x.phase, y.phase)
    assert a[0][-1].t == 2


def test_checkpoint_round_trip(tmp_path, pp_state):
    m = GdnModel(FeatureCodec.for_state(pp_state), TINY, 7)
    save_model(m, tmp_path / "m.ckpt", train_fingerprint="abc")
    back, meta = load_model(tmp_path / "m.ckpt")
    assert meta["kind"] == "gdn" and meta["aggregation"] == "sum"
    assert meta["schedule"]["tau_max"] == 10 and meta["codec"]["model"] == "predprey"
    prep = prepare(m, [pp_state])
    x = Tensor(np.ones((pp_state.n_agents, 6)))
    np.testing.assert_array_equal(m.eps(x, m.condition(prep.Z, prep.graph, 2)).data,
                                  back.eps(x, back.condition(prep.Z, prep.graph, 2)).data)
    save_model(back, tmp_path / "m2.ckpt", train_fingerprint="abc")
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()


def test_graph_union_offsets(pp_state):
    g = build_graph(pp_state)
    u = GraphBatch.union([g, g])
    assert u.n_nodes == 2 * pp_state.n_agents and u.src.size == 2 * g.n_edges
    assert (u.src[g.n_edges:] >= pp_state.n_agents).all()
