import json

import numpy as np
import pytest
from scipy.optimize import linprog

from abmgdn import abm, ramify
from abmgdn.evaluate import (
    Ar1Model,
    DeterministicSampler,
    EmpiricalDistribution,
    EvalError,
    MacroTrajectory,
    ar1_baseline,
    ar1_fit,
    ar1_forecast,
    as_sampler,
    categorical_emd,
    emd_1d,
    emd_categorical,
    lattice_emd,
    macro_eval,
    micro_eval,
    micro_noise_floor,
    smape,
    smape_predprey,
    write_report,
)


def lp_transport(xa, pa, xb, pb):
    """Brute-force transport LP with |x - y| ground cost."""
    m, n = len(xa), len(xb)
    cost = np.abs(np.subtract.outer(xa, xb)).ravel()
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        A[m + j, j::n] = 1
    res = linprog(cost, A_eq=A, b_eq=np.concatenate([pa, pb]), bounds=(0, None), method="highs")
    assert res.success
    return res.fun


def random_dist(rng, k_max=5):
    k = int(rng.integers(1, k_max + 1))
    x = np.round(rng.normal(size=k) * 3, 3)
    w = rng.random(k) + 1e-3
    return EmpiricalDistribution.weighted(x, w)


def test_emd_trivial():
    a = EmpiricalDistribution.from_samples([0.0])
    b = EmpiricalDistribution.from_samples([3.0])
    assert emd_1d(a, a) == 0.0
    assert emd_1d(a, b) == pytest.approx(3.0, abs=0)


def test_emd_matches_lp_oracle():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        a, b = random_dist(rng), random_dist(rng)
        worst = max(worst, abs(emd_1d(a, b) - lp_transport(a.support, a.probs, b.support, b.probs)))
    assert worst < 1e-9


def test_emd_metric_properties():
    rng = np.random.default_rng(1)
    for _ in range(300):
        a, b, c = random_dist(rng), random_dist(rng), random_dist(rng)
        ab, ba = emd_1d(a, b), emd_1d(b, a)
        assert ab >= 0 and abs(ab - ba) < 1e-12
        assert emd_1d(a, c) <= ab + emd_1d(b, c) + 1e-9
        p, q, r = (rng.dirichlet(np.ones(4)) for _ in range(3))
        assert emd_categorical(p, r) <= emd_categorical(p, q) + emd_categorical(q, r) + 1e-9
        assert emd_categorical(p, q) == emd_categorical(q, p)


def test_emd_kind_mismatch():
    a = EmpiricalDistribution.from_samples([1.0, 2.0])
    c = EmpiricalDistribution.categorical([0, 1], 4)
    with pytest.raises(EvalError):
        emd_1d(a, c)
    with pytest.raises(EvalError):
        emd_categorical([1, 0], [1, 0, 0])


def test_categorical_examples_and_lp():
    assert emd_categorical([1, 0, 0, 0], [0, 1, 0, 0]) == 1.0
    assert emd_categorical([0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5]) == 1.0
    p = np.array([0.2, 0.3, 0.1, 0.4])
    assert emd_categorical(p, p) == 0.0
    rng = np.random.default_rng(2)
    unit = 1.0 - np.eye(4)
    for _ in range(50):
        p, q = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        A = np.vstack([np.kron(np.eye(4), np.ones(4)), np.kron(np.ones(4), np.eye(4))])
        lp = linprog(unit.ravel(), A_eq=A, b_eq=np.concatenate([p, q]), bounds=(0, None), method="highs").fun
        assert emd_categorical(p, q) == 0.5 * np.abs(p - q).sum()
        assert abs(emd_categorical(p, q) - lp) < 1e-9


def test_vectorised_cells_match_scalar():
    rng = np.random.default_rng(3)
    a, b = rng.integers(0, 7, size=(40, 5)), rng.integers(0, 7, size=(25, 5))
    ref = [emd_1d(EmpiricalDistribution.from_samples(a[:, j]), EmpiricalDistribution.from_samples(b[:, j]))
           for j in range(5)]
    assert np.allclose(lattice_emd(a, b, 7), ref, atol=1e-12)
    pa, pb = rng.integers(0, 4, size=(40, 5)), rng.integers(0, 4, size=(25, 5))
    ref = [emd_categorical(EmpiricalDistribution.categorical(pa[:, j], 4),
                           EmpiricalDistribution.categorical(pb[:, j], 4)) for j in range(5)]
    assert np.allclose(categorical_emd(pa, pb, 4), ref, atol=1e-12)


def test_smape_examples():
    assert smape(np.full(25, 7.0), np.full(25, 7.0)) == 0.0
    assert smape(np.full(25, 100.0), np.full(25, 300.0)) == pytest.approx(1.0)
    assert smape(np.zeros(25), np.zeros(25)) == 0.0
    with pytest.raises(EvalError):
        smape(np.ones(3), np.ones(4))
    a = MacroTrajectory.from_runs("prey_active", np.ones((3, 5)))
    assert a.values.shape == (5,) and a.n_runs == 3


def test_smape_bounds_and_scaling():
    rng = np.random.default_rng(4)
    for _ in range(100):
        a, f = rng.random(10) * 50, rng.random(10) * 50
        a[rng.random(10) < 0.2] = 0
        s = smape(a, f)
        assert 0 <= s <= 2
        assert smape(3.5 * a, 3.5 * f) == pytest.approx(s)
    assert smape(np.zeros(4), np.ones(4)) == 2.0


def test_smape_predprey():
    a = np.full(10, 100.0)
    assert smape_predprey((a, a), (a, a)) == 0.0
    prey_f = np.full(10, 100 * 1.1 / 0.9)  # prey sMAPE 0.2
    pred_f = np.full(10, 100 * 1.2 / 0.8)  # predator sMAPE 0.4
    assert smape_predprey((a, a), (prey_f, pred_f)) == pytest.approx(0.3)
    assert smape_predprey((a, a), (pred_f, prey_f)) == pytest.approx(0.3)


def test_ar1_noiseless():
    x = 5.0 * 0.9 ** np.arange(50)
    m = ar1_fit(x)
    assert m.phi == pytest.approx(0.9, abs=1e-12) and m.sigma == pytest.approx(0, abs=1e-12)
    assert np.allclose(ar1_forecast(Ar1Model(0.9, 0.0), 2.0, 4), 2.0 * 0.9 ** np.arange(1, 5))


def test_ar1_consistency():
    rng = np.random.default_rng(5)
    x = np.zeros(1000)
    for t in range(1, 1000):
        x[t] = 0.8 * x[t - 1] + 0.1 * rng.standard_normal()
    m = ar1_fit(x)
    assert 0.75 <= m.phi <= 0.85
    assert m.sigma == pytest.approx(0.1, rel=0.1)


def test_ar1_errors():
    with pytest.raises(EvalError):
        ar1_fit(np.full(10, 4.0))
    with pytest.raises(EvalError):
        ar1_fit([1.0, 2.0])
    with pytest.raises(EvalError):
        Ar1Model(0.5, -1.0)


@pytest.fixture(scope="module")
def schelling_future():
    eng = abm.make_engine("schelling", {"grid_size": 10, "density": 0.7, "tolerance": 0.75})
    train = ramify.generate(eng, 2, 2, seed=3)
    return eng, train, ramify.future_ramification(eng, train, T_eval=4, R_eval=200)


@pytest.fixture(scope="module")
def predprey_future():
    eng = abm.make_engine("predprey", {"grid_size": 10, "n_agents": 80})
    train = ramify.generate(eng, 2, 2, seed=4)
    return eng, train, ramify.future_ramification(eng, train, T_eval=4, R_eval=200)


def test_micro_self_test_schelling(schelling_future):
    eng, _, fut = schelling_future
    rep = micro_eval(fut, eng, n_samples=200, seed=9)
    floor = micro_noise_floor(fut, seed=9)
    assert rep.n_entries == fut.n_agents * 2 * 3
    assert set(np.unique(rep.feature)) == {"x", "y"}
    assert rep.mean < floor.mean


def test_micro_self_test_predprey(predprey_future):
    eng, _, fut = predprey_future
    rep = micro_eval(fut, eng, n_samples=200, seed=9)
    floor = micro_noise_floor(fut, seed=9)
    assert rep.n_entries == fut.n_agents * 3
    assert rep.mean < floor.mean


def test_micro_subsets_and_errors(schelling_future):
    eng, _, fut = schelling_future
    rep = micro_eval(fut, eng, n_samples=20, agents=[0, 5], timesteps=[1])
    assert rep.n_entries == 4 and set(rep.t) == {1}
    with pytest.raises(EvalError):
        micro_eval(fut, eng, n_samples=5, timesteps=[fut.T])


def test_macro_self_test_within_floor(predprey_future):
    eng, train, _ = predprey_future
    rep = macro_eval(eng, eng, train.main[-1], horizon=10, runs=100, seed=2)
    assert rep.truth["prey_active"].shape == (100, 10)
    assert rep.smape <= rep.noise_floor
    assert set(rep.mean_series()) == {"truth", "model"}


def test_macro_defaults():
    import inspect

    sig = inspect.signature(macro_eval)
    assert (sig.parameters["horizon"].default, sig.parameters["runs"].default) == (25, 100)


def test_ar1_baseline_and_report(predprey_future, tmp_path):
    eng, train, _ = predprey_future
    models, rep = ar1_baseline(eng, train, horizon=6, runs=10, seed=1)
    assert set(models) == {"prey_active", "predator_active"}
    assert rep.pred["prey_active"].shape == (10, 6)
    js, cs = write_report(rep, tmp_path, "ar1")
    summary = json.loads(js.read_text())
    assert summary["label"] == "ar1" and summary["runs"] == 10
    assert len(cs.read_text().splitlines()) == 1 + 2 * 2 * 10 * 6


class _Frozen:
    kind = "gnn-only"

    def predict(self, states):
        out = []
        for s in states:
            n = s.copy()
            n.t += 1
            out.append(n)
        return out


def test_deterministic_sampler(schelling_future):
    _, _, fut = schelling_future
    smp = as_sampler(_Frozen())
    assert isinstance(smp, DeterministicSampler)
    pos, phase = smp.samples(fut.main[0], 7, np.random.default_rng(0))
    assert phase is None and pos.shape == (7, fut.n_agents, 2)
    assert (pos == fut.main[0].pos).all()
    with pytest.raises(EvalError):
        as_sampler(object())


def test_diffusion_sampler_paths(predprey_future):
    from abmgdn.encode import FeatureCodec
    from abmgdn.evaluate import DiffusionSampler
    from abmgdn.gdn import GdnConfig, GdnModel

    eng, train, fut = predprey_future
    cfg = GdnConfig(gnn_hidden=(4, 5), embed_dim=6, cond_dim=5, time_dim=4, trunk=(4, 6, 4), tau_max=10)
    model = GdnModel(FeatureCodec.for_state(fut.main[0]), cfg, 0)
    smp = as_sampler(model)
    assert isinstance(smp, DiffusionSampler)
    smp.max_rows = 3 * fut.n_agents  # forces chunking
    pos, phase = smp.samples(fut.main[0], 7, np.random.default_rng(0))
    assert pos.shape == (7, fut.n_agents, 2) and phase.shape == (7, fut.n_agents)
    rep = micro_eval(fut, smp, n_samples=7, timesteps=[0])
    assert rep.n_entries == fut.n_agents and np.isfinite(rep.emd).all()
    a = macro_eval(eng, smp, train.main[-1], horizon=2, runs=5, seed=1, floor=False)
    smp.max_rows = 10 ** 6
    b = macro_eval(eng, smp, train.main[-1], horizon=2, runs=5, seed=1, floor=False)
    assert all(np.array_equal(a.pred[n], b.pred[n]) for n in a.pred)
