import numpy as np
import pytest

from sonolab.conditions import LabelVocab
from sonolab.diffusion import (Denoiser, LatentDataset, NoiseSchedule, TrainConfig, cfg_epsilon, ddpm_sample,
                               desk_schedule, load_checkpoint, loss_and_grads, make_schedule, q_sample,
                               save_checkpoint, snr_weight, timestep_embedding, train, train_step, trainable)
from sonolab.nn import Adam

from conftest import numerical_grad, rel_err


def gaussian_oracle(m, s, schedule):
    """Exact E[eps | P_n] for scalar N(m, s^2) data, applied elementwise."""
    ab = schedule.alpha_bar

    def eps(x, n, cond):
        a = ab[n - 1]
        return np.sqrt(1 - a) * (x - np.sqrt(a) * m) / (a * s * s + 1 - a)
    return eps


class TestSchedule:
    def test_products(self):
        s = NoiseSchedule(np.array([0.1, 0.2]))
        np.testing.assert_allclose(s.alpha_bar, [0.9, 0.72])
        assert make_schedule(1, 0.3, 0.5).alpha_bar[0] == pytest.approx(0.7)

    def test_default_and_desk(self):
        s = make_schedule()
        assert s.N == 1000 and s.beta[0] == 1e-4 and s.beta[-1] == pytest.approx(0.02)
        assert 1 - s.alpha_bar[-1] > 0.999
        assert np.all(np.diff(s.snr) < 0)
        d = desk_schedule(50)
        assert d.N == 50 and 1 - d.alpha_bar[-1] > 0.999

    @pytest.mark.parametrize("args", [(0,), (10, 0.02, 0.01), (10, 0.0, 0.1), (10, 0.1, 1.0)])
    def test_bounds(self, args):
        with pytest.raises(ValueError):
            make_schedule(*args)
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.2, 0.1]))


class TestForward:
    def test_plug_in(self):
        s = NoiseSchedule(np.array([0.1, 0.2]))
        assert q_sample(1.0, 2, 0.0, s) == pytest.approx(np.sqrt(0.72))
        assert q_sample(1.0, 1, 0.0, make_schedule()) == pytest.approx(1.0, abs=1e-4)
        with pytest.raises(ValueError):
            q_sample(1.0, 3, 0.0, s)

    def test_inputs_not_mutated_and_per_row_steps(self, rng):
        s = make_schedule(10, 0.01, 0.2)
        P0 = rng.standard_normal((3, 2))
        eps = rng.standard_normal((3, 2))
        keep = P0.copy(), eps.copy()
        out = q_sample(P0, np.array([1, 5, 10]), eps, s)
        np.testing.assert_array_equal(keep[0], P0)
        np.testing.assert_array_equal(keep[1], eps)
        np.testing.assert_allclose(out[1], q_sample(P0[1], 5, eps[1], s))

    def test_unit_gaussian_is_stationary(self, rng):
        s = make_schedule()
        x = rng.standard_normal(100_000)
        for n in (1, 500, 1000):
            v = q_sample(x, n, rng.standard_normal(x.size), s).var()
            assert abs(v - 1.0) <= 3 * np.sqrt(2.0 / x.size)


class TestWeights:
    def test_min_snr(self):
        s = make_schedule()
        lam = snr_weight(np.arange(1, 1001), s, 5.0)
        assert np.all((lam > 0) & (lam <= 1))
        assert np.all(np.diff(lam) >= 0)
        n = int(np.argmax(s.snr <= 5.0)) + 1
        assert lam[n - 1] == 1.0
        s2 = NoiseSchedule(np.array([1 / 11]))  # snr = 10 = 2 gamma
        assert snr_weight(1, s2, 5.0) == pytest.approx(0.5)

    def test_timestep_embedding(self):
        e = timestep_embedding([0, 3])
        assert e.shape == (2, 32)
        np.testing.assert_allclose(e[0], [0] * 16 + [1] * 16)


class TestDenoiser:
    def test_zero_weights_give_output_bias(self):
        model = Denoiser(3, 4, hidden=(8, 8, 8))
        for v in model.params.values():
            v[:] = 0
        model.params["b3"][:] = [1, 2, 3]
        np.testing.assert_array_equal(model(np.ones(3), 5, np.ones(4)), [1, 2, 3])

    def test_skip_term(self, rng):
        s = desk_schedule()
        plain = Denoiser(3, 2, hidden=(8, 8, 8), seed=4)
        skip = Denoiser(3, 2, hidden=(8, 8, 8), seed=4, schedule=s)
        x = rng.standard_normal((2, 3))
        np.testing.assert_allclose(skip(x, 7, np.zeros(2)) - plain(x, 7, np.zeros(2)),
                                   np.sqrt(1 - s.alpha_bar[6]) * x)

    def test_shape_checks(self):
        model = Denoiser(3, 4, hidden=(8, 8, 8))
        with pytest.raises(ValueError):
            model(np.ones(2), 1, np.ones(4))
        with pytest.raises(ValueError):
            model(np.ones((2, 3)), 1, np.ones((3, 4)))


@pytest.mark.parametrize("skip", [False, True])
def test_loss_gradients_cover_every_trainable(skip, rng):
    s = make_schedule(20, 0.005, 0.3)
    vocab = LabelVocab.create(["a", "b", "c"], dim=2, seed=0)
    model = Denoiser(2, 2 + 3, hidden=(4, 3, 3), seed=1, schedule=s if skip else None)
    P0 = rng.standard_normal((5, 2))
    labels = np.array([0, 2, 1, 0, 2])
    visuals = rng.standard_normal((5, 3))
    n = np.array([1, 4, 20, 9, 13])
    eps = rng.standard_normal((5, 2))
    drop = np.array([False, True, False, False, True])

    def loss():
        return loss_and_grads(model, vocab, P0, labels, visuals, n, eps, drop, s)[0]

    _, grads = loss_and_grads(model, vocab, P0, labels, visuals, n, eps, drop, s)
    for name, arr in trainable(model, vocab).items():
        assert rel_err(grads[name], numerical_grad(loss, arr)) <= 1e-4, name


def test_lr_zero_leaves_params(rng):
    s = make_schedule(20, 0.005, 0.3)
    vocab = LabelVocab.create(["a"], dim=2)
    model = Denoiser(2, 2 + 1, hidden=(4, 4, 4))
    before = {k: v.copy() for k, v in trainable(model, vocab).items()}
    cfg = TrainConfig(lr=0.0)
    loss = train_step(model, vocab, (rng.standard_normal((4, 2)), np.zeros(4, int), np.ones((4, 1))), s, cfg,
                      rng, Adam(0.0))
    assert np.isfinite(loss)
    for k, v in trainable(model, vocab).items():
        np.testing.assert_array_equal(v, before[k])


class TestCfg:
    def test_endpoints_and_affinity(self, rng):
        c, u = rng.standard_normal(4), rng.standard_normal(4)
        np.testing.assert_array_equal(cfg_epsilon(c, u, 1.0), c)
        np.testing.assert_array_equal(cfg_epsilon(c, u, 0.0), u)
        np.testing.assert_array_equal(cfg_epsilon(c, c, 3.0), c)
        mid = cfg_epsilon(c, u, 2.0)
        np.testing.assert_allclose(mid - u, 2.0 * (c - u))
        with pytest.raises(ValueError):
            cfg_epsilon(c, u, -1.0)

    def test_sampler_contract(self, rng):
        s = make_schedule(20, 0.005, 0.3)
        model = Denoiser(3, 4, hidden=(8, 8, 8), seed=2, schedule=s)
        c1, c2, null = rng.standard_normal(4), rng.standard_normal(4), np.zeros(4)
        a = ddpm_sample(model, c1, null, w=0.0, schedule=s, seed=11)
        b = ddpm_sample(model, c2, null, w=0.0, schedule=s, seed=11)
        assert a.tobytes() == b.tobytes()
        cond_only = ddpm_sample(model, c1, None, w=1.0, schedule=s, seed=11)
        assert cond_only.tobytes() == ddpm_sample(model, c1, c2, w=1.0, schedule=s, seed=11).tobytes()
        g = ddpm_sample(model, c1, null, w=2.0, schedule=s, seed=11)
        assert g.tobytes() == ddpm_sample(model, c1, null, w=2.0, schedule=s, seed=11).tobytes()
        assert not np.array_equal(g, ddpm_sample(model, c1, null, w=2.0, schedule=s, seed=12))

    def test_batch_rows_are_independent(self, rng):
        s = make_schedule(10, 0.01, 0.5)
        model = Denoiser(2, 3, hidden=(8, 8, 8))
        conds = rng.standard_normal((3, 3))
        batch = ddpm_sample(model, conds, np.zeros(3), w=2.0, schedule=s, seed=[5, 6, 7])
        np.testing.assert_allclose(batch[1], ddpm_sample(model, conds[1], np.zeros(3), w=2.0, schedule=s, seed=6))

    def test_needs_null_for_guidance(self):
        s = make_schedule(10, 0.01, 0.5)
        with pytest.raises(ValueError):
            ddpm_sample(Denoiser(2, 3, hidden=(4, 4, 4)), np.zeros(3), None, w=2.0, schedule=s)


@pytest.mark.parametrize("m,s", [(1.5, 0.5), (-0.7, 2.0)])
def test_oracle_denoiser_recovers_mean(m, s):
    sched = make_schedule()
    oracle = gaussian_oracle(m, s, sched)
    x = ddpm_sample(oracle, np.zeros(1), np.zeros(1), w=2.0, schedule=sched, seed=3, dim=10_000)
    assert abs(x.mean() - m) <= 3 * s / np.sqrt(x.size)


def test_mixture_labels_are_respected():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 2, 400)
    data = np.where(labels == 0, -2.0, 2.0)[:, None] + 0.1 * rng.standard_normal((400, 1))
    vocab = LabelVocab.create(["neg", "pos"], dim=4, seed=0)
    sched = desk_schedule(50)
    ds = LatentDataset(data, labels, np.zeros((400, 1)))
    res = train(ds, sched, TrainConfig(epochs=60, batch_size=32, lr=2e-3, seed=0), vocab, hidden=(64, 64, 64),
                gaussian_skip=True)
    null = np.concatenate([res.vocab.null, [0.0]])
    for k, target in ((0, -2.0), (1, 2.0)):
        cond = np.concatenate([res.vocab.table[k], [0.0]])
        x = ddpm_sample(res.model, np.tile(cond, (200, 1)), null, w=1.0, schedule=sched, seed=np.arange(200))
        assert abs(x.mean() - target) <= 0.3


class TestTrainLoop:
    def _data(self, n=40):
        rng = np.random.default_rng(1)
        return LatentDataset(rng.standard_normal((n, 2)), rng.integers(0, 2, n), np.zeros((n, 1)))

    def test_trace_length_and_zero_epochs(self):
        vocab = LabelVocab.create(["a", "b"], dim=2)
        ds = self._data()
        res = train(ds, make_schedule(10, 0.01, 0.5), TrainConfig(epochs=3, batch_size=16), vocab, hidden=(4, 4, 4))
        assert len(res.loss_trace) == 3 * 3
        init = Denoiser(2, 3, hidden=(4, 4, 4), seed=7)
        keep = {k: v.copy() for k, v in init.params.items()}
        res0 = train(ds, make_schedule(10, 0.01, 0.5), TrainConfig(epochs=0), vocab, model=init)
        for k, v in res0.model.params.items():
            np.testing.assert_array_equal(v, keep[k])
        np.testing.assert_array_equal(res0.vocab.table, vocab.table)

    def test_seeded_training_is_repeatable(self):
        vocab = LabelVocab.create(["a", "b"], dim=2)
        a = train(self._data(), make_schedule(10, 0.01, 0.5), TrainConfig(epochs=2, seed=5), vocab, hidden=(4, 4, 4))
        b = train(self._data(), make_schedule(10, 0.01, 0.5), TrainConfig(epochs=2, seed=5), vocab, hidden=(4, 4, 4))
        assert a.loss_trace == b.loss_trace

    def test_config_and_dataset_validation(self):
        for kw in ({"lr": -1}, {"p_uncond": 1.0}, {"guidance": -0.5}):
            with pytest.raises(ValueError):
                TrainConfig(**kw)
        with pytest.raises(ValueError):
            LatentDataset(np.zeros((0, 2)), np.zeros(0, int), np.zeros((0, 1)))

    def test_callable_visuals(self):
        ds = LatentDataset(np.zeros((4, 2)), np.zeros(4, int), lambda rng, idx: np.ones((len(idx), 3)))
        assert ds.visual_dim == 3


def test_checkpoint_round_trip(tmp_path, rng):
    s = make_schedule(10, 0.01, 0.5)
    vocab = LabelVocab.create(["a", "b"], dim=3)
    model = Denoiser(2, 5, hidden=(4, 4, 4), seed=3, schedule=s)
    save_checkpoint(tmp_path / "m.sld", model, vocab, extra={"latent_mean": np.ones(2)}, meta={"x": 1})
    m2, v2, extra, meta = load_checkpoint(tmp_path / "m.sld")
    x = rng.standard_normal((3, 2))
    np.testing.assert_array_equal(m2(x, 4, np.ones(5)), model(x, 4, np.ones(5)))
    np.testing.assert_array_equal(extra["latent_mean"], 1.0)
    assert meta["x"] == 1 and v2.labels == ("a", "b")
