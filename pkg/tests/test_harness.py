"""Config schema, orchestration commands, CLI behavior."""

import json

import numpy as np
import pytest

from fedcal.cli import main
from fedcal.config import (
    ConfigError,
    ExperimentConfig,
    default_config,
    load_config,
)
from fedcal.data import PartitionPlan, load_dataset, make_partitions
from fedcal.experiments import (
    cmd_aph,
    cmd_evaluate,
    cmd_gen_data,
    cmd_suite,
    cmd_train,
    resolve_output_dir,
)
from fedcal.fed import load_federation, split_clients
from fedcal.metrics import PredictionSet, f_ece
from fedcal.nn import predict_probs

SMALL = {
    "seed": 3,
    "data": {"num_classes": 3, "dim": 6, "n_per_class": 60, "separation": 1.0,
             "alpha": 0.3, "ood": {"mode": "mean_shift", "magnitude": 20.0}},
    "model": {"extractor_layers": [10], "head_layers": [8, 3]},
    "fed": {"num_clients": 4, "rounds": 3, "local_epochs": 2, "batch_size": 16},
    "aph": {"num_heads": 3, "finetune_epochs": 2, "batch_size": 16},
}


def small_cfg(**over):
    cfg = ExperimentConfig.from_dict(SMALL)
    return cfg.replace(**over) if over else cfg


@pytest.fixture()
def run_dir(tmp_path):
    d = tmp_path / "run"
    cfg = small_cfg()
    cmd_gen_data(cfg, d)
    return cfg, d


class TestConfigSchema:
    def test_defaults_resolve(self):
        cfg = default_config()
        assert cfg.fed.rounds == 30
        assert cfg.aph.num_heads == 10
        assert cfg.metrics.num_bins == 15
        assert cfg.data.ood_mode == "mean_shift"

    def test_unknown_keys_rejected_with_path(self):
        with pytest.raises(ConfigError, match="data.alhpa"):
            ExperimentConfig.from_dict({"data": {"alhpa": 0.1}})
        with pytest.raises(ConfigError, match="fed.rnds"):
            ExperimentConfig.from_dict({"fed": {"rnds": 10}})
        with pytest.raises(ConfigError, match="^nope"):
            ExperimentConfig.from_dict({"nope": 1})

    def test_type_errors_name_the_field(self):
        with pytest.raises(ConfigError, match="fed.gamma"):
            ExperimentConfig.from_dict({"fed": {"gamma": "all"}})
        with pytest.raises(ConfigError, match="seed"):
            ExperimentConfig.from_dict({"seed": 1.5})

    def test_bool_is_not_an_int(self):
        with pytest.raises(ConfigError, match="fed.rounds"):
            ExperimentConfig.from_dict({"fed": {"rounds": True}})

    def test_skew_modes_mutually_exclusive(self):
        with pytest.raises(ConfigError, match="mutually exclusive"):
            ExperimentConfig.from_dict(
                {"data": {"alpha": 0.1,
                          "quantity_proportions": [0.5, 0.5, 0.0, 0.0,
                                                   0.0, 0.0, 0.0, 0.5]}})

    def test_nullable_sections_disable_features(self):
        assert ExperimentConfig.from_dict({"aph": None}).aph is None
        assert not ExperimentConfig.from_dict(
            {"data": {"ood": None}}).data.has_ood

    def test_head_width_must_match_classes(self):
        with pytest.raises(ConfigError, match="head_layers"):
            ExperimentConfig.from_dict(
                {"data": {"num_classes": 4},
                 "model": {"head_layers": [8, 3]}})

    def test_round_trip_and_hash_stability(self):
        cfg = small_cfg()
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg
        assert again.config_hash() == cfg.config_hash()

    def test_replace_changes_hash(self):
        cfg = small_cfg()
        other = cfg.replace(seed=99)
        assert other.seed == 99
        assert other.fed.seed == 99
        assert other.config_hash() != cfg.config_hash()

    def test_load_config_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(SMALL))
        cfg = load_config(p)
        assert cfg == small_cfg()
        cfg2 = load_config(p, overrides={"seed": 11})
        assert cfg2.seed == 11

    def test_load_config_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(p)


class TestGenData:
    def test_writes_expected_files(self, run_dir):
        cfg, d = run_dir
        for name in ("dataset.fck", "partitions.fck", "ood.fck",
                     "config.json", "manifest.json"):
            assert (d / name).exists()

    def test_byte_identical_rerun(self, tmp_path):
        cfg = small_cfg()
        a, b = tmp_path / "a", tmp_path / "b"
        cmd_gen_data(cfg, a)
        cmd_gen_data(cfg, b)
        for name in ("dataset.fck", "partitions.fck", "ood.fck", "config.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_partitions_match_direct_module_call(self, run_dir):
        cfg, d = run_dir
        from fedcal.data import load_partitions
        ds = load_dataset(d / "dataset.fck")
        parts = load_partitions(ds, d / "partitions.fck")
        direct = make_partitions(ds, PartitionPlan(4, alpha=0.3, seed=cfg.seed))
        for p, q in zip(parts, direct):
            np.testing.assert_array_equal(p.indices, q.indices)

    def test_iid_when_no_skew_configured(self, tmp_path):
        cfg = small_cfg(data={"alpha": None})
        cmd_gen_data(cfg, tmp_path / "r")
        ds = load_dataset(tmp_path / "r" / "dataset.fck")
        from fedcal.data import load_partitions
        parts = load_partitions(ds, tmp_path / "r" / "partitions.fck")
        # stratified split: every client sees every class
        for p in parts:
            assert set(np.unique(p.dataset.labels)) == {0, 1, 2}


class TestTrain:
    def test_round_log_lines(self, run_dir):
        cfg, d = run_dir
        cmd_train(cfg, d)
        lines = (d / "rounds.jsonl").read_text().splitlines()
        assert len(lines) == cfg.fed.rounds
        rec = json.loads(lines[0])
        assert rec["round"] == 0
        assert set(rec) == {"round", "participants", "accuracy", "f_ece", "nll"}

    def test_missing_partitions_is_an_error(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="gen-data"):
            cmd_train(small_cfg(), tmp_path / "empty")

    def test_fedprox_zero_matches_fedavg_files(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        avg = small_cfg()
        prox = small_cfg(fed={"method": "fedprox", "mu_prox": 0.0})
        cmd_gen_data(avg, a)
        cmd_gen_data(prox, b)
        cmd_train(avg, a)
        cmd_train(prox, b)
        assert (a / "rounds.jsonl").read_bytes() == (b / "rounds.jsonl").read_bytes()

    def test_resume_refuses_changed_config(self, run_dir):
        cfg, d = run_dir
        cmd_train(cfg, d)
        hotter = small_cfg(fed={"lr": 0.1})
        with pytest.raises(ValueError, match="different config"):
            cmd_train(hotter, d, resume=True)

    def test_resume_completed_run_is_stable(self, run_dir):
        cfg, d = run_dir
        first = cmd_train(cfg, d)
        again = cmd_train(cfg, d, resume=True)
        np.testing.assert_array_equal(first.global_params.head,
                                      again.global_params.head)


class TestAphAndEvaluate:
    def test_ensembles_written_with_audit(self, run_dir):
        cfg, d = run_dir
        cmd_train(cfg, d)
        cmd_aph(cfg, d)
        from fedcal.aph import load_ensemble
        for i in range(cfg.fed.num_clients):
            ens = load_ensemble(d / f"ensembles/client_{i}.fck")
            assert len(ens.betas) == cfg.aph.num_heads
            assert all(cfg.aph.beta_l <= b <= cfg.aph.beta_u for b in ens.betas)

    def test_clients_draw_distinct_perturbations(self, run_dir):
        cfg, d = run_dir
        cmd_train(cfg, d)
        cmd_aph(cfg, d)
        from fedcal.aph import load_ensemble
        a = load_ensemble(d / "ensembles/client_0.fck")
        b = load_ensemble(d / "ensembles/client_1.fck")
        assert a.betas != b.betas

    def test_degenerate_ensemble_matches_checkpoint(self, tmp_path):
        cfg = small_cfg(aph={"num_heads": 1, "lambda": -30.0,
                             "finetune_epochs": 0})
        d = tmp_path / "r"
        cmd_gen_data(cfg, d)
        cmd_train(cfg, d)
        cmd_aph(cfg, d)
        from fedcal.aph import load_ensemble, predict_ensemble
        result, spec, _ = load_federation(d / "federation.fck")
        ds = load_dataset(d / "dataset.fck")
        probe = ds.inputs[:16]
        ens = load_ensemble(d / "ensembles/client_0.fck")
        np.testing.assert_array_equal(predict_ensemble(ens, probe),
                                      predict_probs(spec, result.global_params,
                                                    probe))

    def test_evaluate_report_matches_direct_metrics(self, run_dir):
        cfg, d = run_dir
        cmd_train(cfg, d)
        report = cmd_evaluate(cfg, d)
        result, spec, _ = load_federation(d / "federation.fck")
        ds = load_dataset(d / "dataset.fck")
        from fedcal.data import load_partitions
        parts = load_partitions(ds, d / "partitions.fck")
        clients = split_clients(parts, cfg.fed)
        sets = [PredictionSet(predict_probs(spec, result.global_params,
                                            c.test.inputs),
                              c.test.labels, client_id=c.client_id)
                for c in clients if c.test is not None]
        assert report.f_ece == f_ece(sets, cfg.metrics.num_bins)
        payload = json.loads((d / "report.json").read_text())
        assert payload["config_hash"] == cfg.config_hash()
        assert payload["f_ece"] == report.f_ece

    def test_ood_reports_separated(self, run_dir):
        cfg, d = run_dir
        cmd_train(cfg, d)
        cmd_evaluate(cfg, d)
        assert (d / "report.json").exists()
        assert (d / "report_ood.json").exists()
        ood = json.loads((d / "report_ood.json").read_text())
        assert set(ood) == {"config_hash", "mean_entropy", "count"}

    def test_no_ood_section_no_ood_files(self, tmp_path):
        cfg = small_cfg(data={"ood": None})
        d = tmp_path / "r"
        cmd_gen_data(cfg, d)
        cmd_train(cfg, d)
        cmd_evaluate(cfg, d)
        assert not (d / "report_ood.json").exists()
        assert not (d / "ood.fck").exists()

    def test_evaluate_twice_identical_bytes(self, run_dir):
        cfg, d = run_dir
        cmd_train(cfg, d)
        cmd_evaluate(cfg, d)
        first = (d / "report.json").read_bytes()
        cmd_evaluate(cfg, d)
        assert (d / "report.json").read_bytes() == first


class TestSuites:
    def test_unknown_suite_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="unknown suite"):
            cmd_suite(small_cfg(), "wat", [0], tmp_path)

    def test_epoch_sweep_shape(self, tmp_path):
        cfg = small_cfg(fed={"rounds": 2})
        res = cmd_suite(cfg, "epoch_sweep", [0], tmp_path / "s")
        assert len(res.rows) == 4  # one row per epoch condition
        assert (tmp_path / "s" / "epoch_sweep.csv").exists()
        assert (tmp_path / "s" / "epoch_sweep_summary.csv").exists()
        verdict = json.loads(
            (tmp_path / "s" / "epoch_sweep_verdict.json").read_text())
        assert verdict["passed"] is True

    def test_aph_comparison_table_shape(self, tmp_path):
        cfg = small_cfg(fed={"rounds": 2})
        res = cmd_suite(cfg, "aph_comparison", [0, 1], tmp_path / "s")
        conditions = [r[0] for r in res.rows]
        assert conditions == ["fedavg", "finetune", "aph"] * 2

    def test_quantity_sweep_runs(self, tmp_path):
        cfg = small_cfg(fed={"rounds": 2})
        res = cmd_suite(cfg, "quantity_sweep", [0], tmp_path / "s")
        assert {r[0] for r in res.rows} == {"balanced", "ramp", "geometric"}


class TestCli:
    def test_pipeline_exit_codes(self, tmp_path):
        cfgp = tmp_path / "c.json"
        cfgp.write_text(json.dumps(SMALL))
        out = str(tmp_path / "run")
        assert main(["gen-data", "--config", str(cfgp), "--out", out]) == 0
        assert main(["train", "--config", str(cfgp), "--out", out]) == 0
        assert main(["aph", "--config", str(cfgp), "--out", out]) == 0
        assert main(["evaluate", "--config", str(cfgp), "--out", out]) == 0
        assert main(["evaluate", "--config", str(cfgp), "--out", out,
                     "--ensembles"]) == 0

    def test_train_before_gen_data_fails(self, tmp_path):
        cfgp = tmp_path / "c.json"
        cfgp.write_text(json.dumps(SMALL))
        rc = main(["train", "--config", str(cfgp),
                   "--out", str(tmp_path / "nope")])
        assert rc == 2

    def test_bad_config_reports_field(self, tmp_path, capsys):
        cfgp = tmp_path / "c.json"
        cfgp.write_text(json.dumps({"data": {"alhpa": 1}}))
        rc = main(["gen-data", "--config", str(cfgp),
                   "--out", str(tmp_path / "x")])
        assert rc == 2
        assert "alhpa" in capsys.readouterr().err

    def test_seed_flag_overrides(self, tmp_path):
        cfgp = tmp_path / "c.json"
        cfgp.write_text(json.dumps(SMALL))
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["gen-data", "--config", str(cfgp), "--out", a,
                     "--seed", "9"]) == 0
        assert main(["gen-data", "--config", str(cfgp), "--out", b]) == 0
        da = (tmp_path / "a" / "dataset.fck").read_bytes()
        db = (tmp_path / "b" / "dataset.fck").read_bytes()
        assert da != db

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FEDCAL_OUTPUT_ROOT", str(tmp_path / "root"))
        cfg = small_cfg()
        out = resolve_output_dir(cfg)
        assert str(out).startswith(str(tmp_path / "root"))
        assert cfg.config_hash()[:12] in str(out)
