"""Head-ensemble tests: sampling, fine-tuning, averaging, cost model."""

import math

import numpy as np
import pytest

import fedcal.aph as aph_mod
from fedcal.aph import (
    APHConfig,
    CostModel,
    EnsembleDivergedError,
    HeadEnsemble,
    build_ensemble,
    cost_fraction,
    default_lambda,
    lambda_grid,
    load_ensemble,
    predict_ensemble,
    sample_head_init,
    save_ensemble,
)
from fedcal.data import gen_synthetic, iid_partition
from fedcal.fed import FedConfig, run_federation, split_clients
from fedcal.metrics import predictive_entropy
from fedcal.nn import ModelSpec, TrainingDivergedError, predict_probs, sgd_epochs
from fedcal.rng import named_rng


@pytest.fixture(scope="module")
def trained():
    """A small trained federation shared by the ensemble tests."""
    ds = gen_synthetic(3, 6, 60, 3.0, seed=2)
    parts = iid_partition(ds, 2, seed=2)
    spec = ModelSpec(6, (10,), (8, 3))
    cfg = FedConfig(num_clients=2, rounds=2, local_epochs=2, lr=0.05,
                    batch_size=16, seed=2)
    res = run_federation(spec, parts, cfg)
    clients = split_clients(parts, cfg)
    return spec, res.global_params, clients[0].train


class TestAPHConfig:
    def test_defaults_valid(self):
        cfg = APHConfig()
        assert cfg.num_heads == 10
        assert cfg.average == "probs"

    def test_rejections(self):
        with pytest.raises(ValueError):
            APHConfig(num_heads=0)
        with pytest.raises(ValueError):
            APHConfig(beta_l=0.5, beta_u=0.1)
        with pytest.raises(ValueError):
            APHConfig(beta_l=0.0)
        with pytest.raises(ValueError):
            APHConfig(finetune_epochs=-1)
        with pytest.raises(ValueError):
            APHConfig(average="median")
        with pytest.raises(ValueError):
            APHConfig(lambda_=float("nan"))

    def test_dict_round_trip(self):
        cfg = APHConfig(num_heads=4, lambda_=-1.2, beta_u=0.5, seed=9)
        assert APHConfig.from_dict(cfg.to_dict()) == cfg


class TestSampleHeadInit:
    def test_vanishing_perturbation_returns_prior(self):
        prior = named_rng(0, "t").normal(size=50)  # magnitudes ~1
        out = sample_head_init(prior, -30.0, named_rng(0, "u"))
        np.testing.assert_allclose(out, prior, rtol=0, atol=1e-12)

    def test_gaussian_moment_oracle(self):
        """10k draws at lambda=-1: mean within 3 sigma/sqrt(n), std within 5%."""
        prior = np.full(10000, 0.7)
        out = sample_head_init(prior, -1.0, named_rng(3, "t"))
        delta = out - prior
        assert abs(delta.mean()) < 3 * 0.1 / math.sqrt(10000)
        assert abs(delta.std() - 0.1) < 0.05 * 0.1

    def test_same_rng_state_same_output(self):
        prior = np.linspace(-1, 1, 20)
        a = sample_head_init(prior, -0.5, named_rng(5, "t"))
        b = sample_head_init(prior, -0.5, named_rng(5, "t"))
        np.testing.assert_array_equal(a, b)

    def test_prior_unmodified(self):
        prior = np.ones(10)
        keep = prior.copy()
        sample_head_init(prior, 0.0, named_rng(0, "t"))
        np.testing.assert_array_equal(prior, keep)

    def test_rejects_nonfinite_prior(self):
        with pytest.raises(ValueError):
            sample_head_init(np.array([1.0, np.inf]), 0.0, named_rng(0, "t"))


class TestDefaultLambda:
    def test_hand_cases(self):
        assert default_lambda(np.full(8, 0.01)) == -2
        assert default_lambda(np.array([-0.01, 0.01, 0.01])) == -2
        assert default_lambda(np.full(3, 0.5)) == -1

    def test_matches_brute_force(self):
        rng = np.random.default_rng(17)
        for trial in range(50):
            prior = rng.normal(scale=10.0 ** rng.integers(-4, 4), size=30)
            want = math.floor(math.log10(np.abs(prior).mean()))
            assert default_lambda(prior) == want

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            default_lambda(np.zeros(5))
        with pytest.raises(ValueError):
            default_lambda(np.zeros(0))

    def test_grid_centered(self):
        grid = lambda_grid(np.full(4, 0.01))
        assert grid == (-2.5, -2.2, -2.0, -1.8, -1.5)


class TestBuildEnsemble:
    def test_degenerate_equals_source(self, trained):
        """M=1, lambda=-30, E_h=0 leaves the prior head untouched."""
        spec, model, batch = trained
        cfg = APHConfig(num_heads=1, lambda_=-30.0, finetune_epochs=0, seed=0)
        ens = build_ensemble(spec, model, batch, cfg)
        np.testing.assert_array_equal(ens.heads[0], model.head)
        probe = batch.inputs[:16]
        np.testing.assert_array_equal(predict_ensemble(ens, probe),
                                      predict_probs(spec, model, probe))

    def test_base_bitwise_frozen(self, trained):
        spec, model, batch = trained
        cfg = APHConfig(num_heads=3, finetune_epochs=2, seed=1, batch_size=16)
        ens = build_ensemble(spec, model, batch, cfg)
        np.testing.assert_array_equal(ens.base, model.base)

    def test_degenerate_uniform_fixes_lr(self, trained):
        spec, model, batch = trained
        cfg = APHConfig(num_heads=4, beta_l=0.01, beta_u=0.01,
                        finetune_epochs=1, seed=0, batch_size=16)
        ens = build_ensemble(spec, model, batch, cfg)
        assert ens.betas == [0.01] * 4

    def test_heads_pairwise_distinct(self, trained):
        spec, model, batch = trained
        cfg = APHConfig(num_heads=6, finetune_epochs=2, seed=3, batch_size=16)
        ens = build_ensemble(spec, model, batch, cfg)
        for a in range(6):
            for b in range(a + 1, 6):
                assert np.linalg.norm(ens.heads[a] - ens.heads[b]) > 0

    def test_deterministic_rebuild(self, trained):
        spec, model, batch = trained
        cfg = APHConfig(num_heads=5, finetune_epochs=2, seed=7, batch_size=16)
        a = build_ensemble(spec, model, batch, cfg)
        b = build_ensemble(spec, model, batch, cfg)
        assert a.betas == b.betas
        for ha, hb in zip(a.heads, b.heads):
            np.testing.assert_array_equal(ha, hb)

    def test_draw_order_is_init_then_beta(self, trained):
        """Without retries the audit betas replay the interleaved stream."""
        spec, model, batch = trained
        cfg = APHConfig(num_heads=4, finetune_epochs=1, seed=11, batch_size=16)
        ens = build_ensemble(spec, model, batch, cfg)
        rng = named_rng(cfg.seed, "aph.sample")
        want = []
        for _ in range(cfg.num_heads):
            rng.standard_normal(spec.head_size)
            want.append(float(rng.uniform(cfg.beta_l, cfg.beta_u)))
        assert ens.betas == want

    def test_retry_consumes_fresh_draws(self, trained, monkeypatch):
        """First two fine-tune attempts fail: head 0 lands on draw pair 3."""
        spec, model, batch = trained
        cfg = APHConfig(num_heads=2, finetune_epochs=1, seed=5, batch_size=16)
        calls = {"n": 0}
        real = sgd_epochs

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] <= 2:
                raise TrainingDivergedError("synthetic divergence")
            return real(*args, **kwargs)

        monkeypatch.setattr(aph_mod, "sgd_epochs", flaky)
        ens = build_ensemble(spec, model, batch, cfg)
        rng = named_rng(cfg.seed, "aph.sample")
        pairs = []
        for _ in range(4):
            rng.standard_normal(spec.head_size)
            pairs.append(float(rng.uniform(cfg.beta_l, cfg.beta_u)))
        assert ens.betas == [pairs[2], pairs[3]]
        assert calls["n"] == 4

    def test_exhausted_retries_name_the_head(self, trained, monkeypatch):
        spec, model, batch = trained
        cfg = APHConfig(num_heads=3, finetune_epochs=1, seed=5, batch_size=16)

        def always_bad(*args, **kwargs):
            raise TrainingDivergedError("synthetic divergence")

        monkeypatch.setattr(aph_mod, "sgd_epochs", always_bad)
        with pytest.raises(EnsembleDivergedError, match="head 0"):
            build_ensemble(spec, model, batch, cfg)

    def test_real_divergence_errors_out(self, trained):
        """An absurd fixed lr diverges every attempt without mocks."""
        spec, model, batch = trained
        cfg = APHConfig(num_heads=1, beta_l=1e300, beta_u=1e300,
                        finetune_epochs=1, seed=0, batch_size=16)
        with pytest.raises(EnsembleDivergedError, match="head 0"):
            build_ensemble(spec, model, batch, cfg)


class TestPredictEnsemble:
    def test_single_head_matches_model(self, trained):
        spec, model, batch = trained
        cfg = APHConfig(num_heads=1, lambda_=-30.0, finetune_epochs=0)
        ens = build_ensemble(spec, model, batch, cfg)
        probe = batch.inputs[:20]
        np.testing.assert_array_equal(predict_ensemble(ens, probe),
                                      predict_probs(spec, model, probe))

    def test_identical_heads_power_of_two_exact(self, trained):
        spec, model, batch = trained
        cfg = APHConfig(num_heads=4)
        ens = HeadEnsemble(spec, model.base.copy(),
                           [model.head.copy() for _ in range(4)],
                           [0.1] * 4, cfg)
        probe = batch.inputs[:20]
        np.testing.assert_array_equal(predict_ensemble(ens, probe),
                                      predict_probs(spec, model, probe))

    def test_identical_heads_any_count_close(self, trained):
        spec, model, batch = trained
        cfg = APHConfig(num_heads=3)
        ens = HeadEnsemble(spec, model.base.copy(),
                           [model.head.copy() for _ in range(3)],
                           [0.1] * 3, cfg)
        probe = batch.inputs[:20]
        np.testing.assert_allclose(predict_ensemble(ens, probe),
                                   predict_probs(spec, model, probe),
                                   rtol=0, atol=1e-15)

    def test_rows_sum_to_one(self, trained):
        spec, model, batch = trained
        cfg = APHConfig(num_heads=5, finetune_epochs=2, seed=2, batch_size=16)
        ens = build_ensemble(spec, model, batch, cfg)
        probs = predict_ensemble(ens, batch.inputs)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        assert (probs >= 0).all()

    def test_jensen_entropy_never_below_mean(self, trained):
        """Averaged prediction is at least as uncertain as the mean head."""
        spec, model, batch = trained
        cfg = APHConfig(num_heads=6, finetune_epochs=2, seed=4, batch_size=16)
        ens = build_ensemble(spec, model, batch, cfg)
        from fedcal.nn import extract_features, head_forward, softmax
        from fedcal.nn import ModelParams
        feats = extract_features(spec, ModelParams(ens.base, ens.heads[0]),
                                 batch.inputs)
        per_head = np.stack([predictive_entropy(softmax(head_forward(spec, h, feats)))
                             for h in ens.heads])
        mixed = predictive_entropy(predict_ensemble(ens, batch.inputs))
        assert (mixed >= per_head.mean(axis=0) - 1e-12).all()

    def test_logit_averaging_mode(self, trained):
        spec, model, batch = trained
        cfg = APHConfig(num_heads=4, finetune_epochs=1, seed=2,
                        batch_size=16, average="logits")
        ens = build_ensemble(spec, model, batch, cfg)
        probs = predict_ensemble(ens, batch.inputs[:10])
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-12)

    def test_rejects_wrong_width(self, trained):
        spec, model, batch = trained
        cfg = APHConfig(num_heads=1, finetune_epochs=0)
        ens = build_ensemble(spec, model, batch, cfg)
        with pytest.raises(Exception):
            predict_ensemble(ens, np.ones((4, spec.input_dim + 1)))


class TestCostModel:
    def test_hand_flop_count(self):
        spec = ModelSpec(4, (5,), (3, 2))
        cost = CostModel.from_model_spec(spec)
        assert cost.extractor_flops == 2 * 4 * 5 + 5
        assert cost.head_flops == (2 * 5 * 3 + 3) + (2 * 3 * 2 + 2)

    def test_single_head_costs_nothing_extra(self):
        cost = CostModel(1000, 3)
        assert cost_fraction(cost, 1) == 0.0
        assert cost_fraction(cost, 1, convention="total") == cost.head_share

    def test_affine_in_head_count(self):
        cost = CostModel(99000, 1000)
        c = cost.head_share
        for m in (1, 2, 7, 50):
            assert cost_fraction(cost, m) == pytest.approx((m - 1) * c)
            added = cost_fraction(cost, m + 1) - cost_fraction(cost, m)
            assert added == pytest.approx(c)

    def test_small_head_stays_under_thirty_percent(self):
        """head share <= 0.003: even 100 heads add less than 30%."""
        for share in (0.0005, 0.001, 0.0024745, 0.003):
            flops = 1000000
            head = int(round(share * flops))
            cost = CostModel(flops - head, head)
            assert cost.head_share <= 0.003 + 1e-12
            assert cost_fraction(cost, 100) < 0.30

    def test_rejections(self):
        with pytest.raises(ValueError):
            CostModel(0, 5)
        cost = CostModel(100, 5)
        with pytest.raises(ValueError):
            cost_fraction(cost, 0)
        with pytest.raises(ValueError):
            cost_fraction(cost, 2, convention="per_head")


class TestPersistence:
    def test_round_trip_bitwise(self, trained, tmp_path):
        spec, model, batch = trained
        cfg = APHConfig(num_heads=3, finetune_epochs=2, seed=6, batch_size=16)
        ens = build_ensemble(spec, model, batch, cfg, source_id="client-0")
        path = tmp_path / "ens.fck"
        save_ensemble(ens, path)
        back = load_ensemble(path)
        assert back.config == cfg
        assert back.source_id == "client-0"
        assert back.betas == ens.betas
        np.testing.assert_array_equal(back.base, ens.base)
        for a, b in zip(ens.heads, back.heads):
            np.testing.assert_array_equal(a, b)

    def test_rewrite_byte_identical(self, trained, tmp_path):
        spec, model, batch = trained
        cfg = APHConfig(num_heads=2, finetune_epochs=1, seed=6, batch_size=16)
        ens = build_ensemble(spec, model, batch, cfg)
        p1, p2 = tmp_path / "a.fck", tmp_path / "b.fck"
        save_ensemble(ens, p1)
        save_ensemble(ens, p2)
        assert p1.read_bytes() == p2.read_bytes()
