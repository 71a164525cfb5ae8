"""Experiment orchestration: single runs, artifacts, comparison suites.

Every run directory is a pure function of (config, seed): dataset,
partitions, checkpoints, round logs, and reports are byte-reproducible.
Wall-clock times and other host facts go only into manifest.json so the
result files stay comparable across machines.
"""

import csv
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, backend_name
from .aph import (
    APHConfig,
    CostModel,
    build_ensemble,
    load_ensemble,
    predict_ensemble,
    save_ensemble,
)
from .config import ExperimentConfig
from .data import (
    PartitionPlan,
    gen_ood,
    gen_synthetic,
    load_cifar10_binary,
    load_dataset,
    load_partitions,
    make_partitions,
    save_dataset,
    save_partitions,
)
from .fed import (
    head_finetune_diagnostic,
    load_federation,
    run_federation,
    save_federation,
    split_clients,
)
from .metrics import (
    PredictionSet,
    bin_csv_rows,
    calibration_report,
    entropy_csv_rows,
    predictive_entropy,
    report_to_dict,
)
from .nn import predict_probs
from .rng import named_rng

SUITES = (
    "heterogeneity_sweep",
    "participation_sweep",
    "epoch_sweep",
    "quantity_sweep",
    "aph_comparison",
    "head_finetune_diagnostic",
)

OUTPUT_ROOT_ENV = "FEDCAL_OUTPUT_ROOT"

DATASET_FILE = "dataset.fck"
OOD_FILE = "ood.fck"
PARTITIONS_FILE = "partitions.fck"
FEDERATION_FILE = "federation.fck"
ROUNDS_FILE = "rounds.jsonl"
MANIFEST_FILE = "manifest.json"

FINETUNE_EPOCHS = 5  # head-only epochs in the fine-tune diagnostic


def resolve_output_dir(cfg, override=None):
    """--out flag > config output_dir > $FEDCAL_OUTPUT_ROOT/<hash> > ./runs/<hash>."""
    if override:
        return Path(override)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return Path(root) / f"run-{cfg.config_hash()[:12]}"


def _write_json(path, payload):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def _write_csv(path, header, rows):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


@dataclass
class RunManifest:
    """Host- and time-dependent facts, kept out of the result files."""

    config_hash: str
    version: str
    backend: str
    artifacts: list
    wall_seconds: float
    flops_estimate: int
    created_unix: float = field(default_factory=time.time)

    def write(self, out_dir):
        _write_json(Path(out_dir) / MANIFEST_FILE, {
            "config_hash": self.config_hash,
            "version": self.version,
            "backend": self.backend,
            "artifacts": sorted(self.artifacts),
            "wall_seconds": self.wall_seconds,
            "flops_estimate": self.flops_estimate,
            "created_unix": self.created_unix,
        })


def _check_artifacts(out_dir, artifacts):
    missing = [a for a in artifacts if not (Path(out_dir) / a).exists()]
    if missing:
        raise RuntimeError(f"manifest lists artifacts that were never "
                           f"written: {missing}")


def build_dataset(cfg: ExperimentConfig):
    """Materialize the training dataset named by the config."""
    d = cfg.data
    if d.source == "synthetic":
        return gen_synthetic(d.num_classes, d.dim, d.n_per_class,
                             d.separation, seed=cfg.seed)
    return load_cifar10_binary(d.path)


def build_partitions(cfg: ExperimentConfig, ds):
    plan = PartitionPlan(
        cfg.fed.num_clients,
        alpha=cfg.data.alpha,
        quantity_skew=(None if cfg.data.quantity_proportions is None
                       else np.asarray(cfg.data.quantity_proportions)),
        seed=cfg.seed)
    return make_partitions(ds, plan)


def build_ood(cfg: ExperimentConfig, ds):
    if not cfg.data.has_ood:
        return None
    return gen_ood(ds, cfg.data.ood_mode, cfg.data.ood_magnitude, seed=cfg.seed)


def _training_flops(cfg, result, parts):
    """Forward-equivalent FLOP estimate: 3x forward per trained sample."""
    cost = CostModel.from_model_spec(cfg.model_spec)
    per_sample = cost.extractor_flops + cost.head_flops
    sizes = {p.client_id: len(p.indices) for p in parts}
    samples = 0
    for lg in result.logs:
        for cid, traj in lg.local_losses.items():
            samples += traj.size * sizes[cid]  # epochs x client samples
    return int(3 * per_sample * samples)


def cmd_gen_data(cfg: ExperimentConfig, out_dir):
    """Write dataset, partition, and (if configured) OOD files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    ds = build_dataset(cfg)
    parts = build_partitions(cfg, ds)
    save_dataset(ds, out_dir / DATASET_FILE)
    save_partitions(parts, out_dir / PARTITIONS_FILE)
    artifacts = [DATASET_FILE, PARTITIONS_FILE]
    ood = build_ood(cfg, ds)
    if ood is not None:
        save_dataset(ood, out_dir / OOD_FILE)
        artifacts.append(OOD_FILE)
    _write_json(out_dir / "config.json", cfg.to_dict())
    artifacts.append("config.json")
    _check_artifacts(out_dir, artifacts)
    RunManifest(cfg.config_hash(), __version__, backend_name(), artifacts,
                time.time() - t0, 0).write(out_dir)
    return artifacts


def _load_run_inputs(cfg, out_dir):
    out_dir = Path(out_dir)
    ds_path = out_dir / DATASET_FILE
    parts_path = out_dir / PARTITIONS_FILE
    if not ds_path.exists() or not parts_path.exists():
        raise FileNotFoundError(
            f"{out_dir}: missing {DATASET_FILE} or {PARTITIONS_FILE}; "
            f"run gen-data with this config first")
    ds = load_dataset(ds_path)
    return ds, load_partitions(ds, parts_path)


def cmd_train(cfg: ExperimentConfig, out_dir, resume=False):
    """Run the federation over existing partitions; checkpoint each round."""
    out_dir = Path(out_dir)
    t0 = time.time()
    ds, parts = _load_run_inputs(cfg, out_dir)
    ckpt_path = out_dir / FEDERATION_FILE
    resume_state = None
    if resume and ckpt_path.exists():
        resume_state, saved_spec, saved_cfg = load_federation(ckpt_path)
        if saved_cfg != cfg.fed or saved_spec != cfg.model_spec:
            raise ValueError(f"{ckpt_path}: checkpoint was trained under a "
                             f"different config; refusing to resume")

    def checkpoint(state):
        save_federation(state, cfg.model_spec, cfg.fed, ckpt_path)
        _write_rounds(out_dir / ROUNDS_FILE, state.logs)

    result = run_federation(cfg.model_spec, parts, cfg.fed,
                            num_bins=cfg.metrics.num_bins,
                            resume_state=resume_state, on_round=checkpoint)
    save_federation(result, cfg.model_spec, cfg.fed, ckpt_path)
    _write_rounds(out_dir / ROUNDS_FILE, result.logs)
    artifacts = [FEDERATION_FILE, ROUNDS_FILE]
    _check_artifacts(out_dir, artifacts)
    RunManifest(cfg.config_hash(), __version__, backend_name(), artifacts,
                time.time() - t0,
                _training_flops(cfg, result, parts)).write(out_dir)
    return result


def _write_rounds(path, logs):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for lg in logs:
            f.write(json.dumps({
                "round": lg.round_index,
                "participants": lg.participants,
                "accuracy": lg.accuracy,
                "f_ece": lg.f_ece,
                "nll": lg.nll,
            }, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _client_aph_config(cfg, client_id):
    """Per-client ensemble settings: an independent stream-derived seed
    so clients never share perturbation draws."""
    sub = int(named_rng(cfg.seed, "aph.client", client_id).integers(0, 2 ** 62))
    d = cfg.aph.to_dict()
    d["seed"] = sub
    return APHConfig.from_dict(d)


def cmd_aph(cfg: ExperimentConfig, out_dir):
    """Build one head ensemble per client from the trained global model."""
    if cfg.aph is None:
        raise ValueError("config has the aph section disabled")
    out_dir = Path(out_dir)
    t0 = time.time()
    ds, parts = _load_run_inputs(cfg, out_dir)
    ckpt_path = out_dir / FEDERATION_FILE
    if not ckpt_path.exists():
        raise FileNotFoundError(f"{ckpt_path}: train first")
    result, spec, fed_cfg = load_federation(ckpt_path)
    clients = split_clients(parts, cfg.fed)
    ens_dir = out_dir / "ensembles"
    ens_dir.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for c in clients:
        acfg = _client_aph_config(cfg, c.client_id)
        ens = build_ensemble(spec, result.global_params, c.train, acfg,
                             source_id=f"client-{c.client_id}")
        rel = f"ensembles/client_{c.client_id}.fck"
        save_ensemble(ens, out_dir / rel)
        artifacts.append(rel)
    _check_artifacts(out_dir, artifacts)
    RunManifest(cfg.config_hash(), __version__, backend_name(), artifacts,
                time.time() - t0, 0).write(out_dir)
    return artifacts


def _model_sets(spec, params, clients):
    return [PredictionSet(predict_probs(spec, params, c.test.inputs),
                          c.test.labels, client_id=c.client_id)
            for c in clients if c.test is not None]


def _ensemble_sets(ensembles, clients):
    sets = []
    for c in clients:
        if c.test is None or c.client_id not in ensembles:
            continue
        probs = predict_ensemble(ensembles[c.client_id], c.test.inputs)
        sets.append(PredictionSet(probs, c.test.labels, client_id=c.client_id))
    return sets


def _emit_report(out_dir, stem, report, cfg):
    payload = report_to_dict(report)
    payload["config_hash"] = cfg.config_hash()
    _write_json(Path(out_dir) / f"{stem}.json", payload)
    _write_csv(Path(out_dir) / f"{stem}_bins.csv",
               ("client_id", "bin", "count", "conf", "acc"),
               bin_csv_rows(report))
    _write_csv(Path(out_dir) / f"{stem}_entropy.csv",
               ("bin_low", "bin_high", "count"),
               entropy_csv_rows(report))
    return [f"{stem}.json", f"{stem}_bins.csv", f"{stem}_entropy.csv"]


def _emit_ood_report(out_dir, stem, entropies, num_classes, cfg, entropy_bins):
    from .metrics import entropy_histogram
    counts, edges = entropy_histogram(entropies, num_classes, entropy_bins)
    _write_json(Path(out_dir) / f"{stem}.json", {
        "config_hash": cfg.config_hash(),
        "mean_entropy": float(entropies.mean()),
        "count": int(entropies.size),
    })
    _write_csv(Path(out_dir) / f"{stem}_entropy.csv",
               ("bin_low", "bin_high", "count"),
               [(float(edges[i]), float(edges[i + 1]), int(c))
                for i, c in enumerate(counts)])
    return [f"{stem}.json", f"{stem}_entropy.csv"]


def cmd_evaluate(cfg: ExperimentConfig, out_dir, use_ensembles=False):
    """Calibration report (in-domain) plus entropy report (OOD) files.

    With ``use_ensembles`` the per-client ensemble files stand in for
    the global model; OOD entropy then averages the client ensembles.
    """
    out_dir = Path(out_dir)
    t0 = time.time()
    ds, parts = _load_run_inputs(cfg, out_dir)
    result, spec, _ = load_federation(out_dir / FEDERATION_FILE)
    clients = split_clients(parts, cfg.fed)
    artifacts = []
    if use_ensembles:
        ensembles = {}
        for c in clients:
            path = out_dir / f"ensembles/client_{c.client_id}.fck"
            if not path.exists():
                raise FileNotFoundError(f"{path}: run the aph stage first")
            ensembles[c.client_id] = load_ensemble(path)
        sets = _ensemble_sets(ensembles, clients)
        stem = "report_aph"
    else:
        sets = _model_sets(spec, result.global_params, clients)
        stem = "report"
    report = calibration_report(sets, num_bins=cfg.metrics.num_bins,
                                entropy_bins=cfg.metrics.entropy_bins)
    artifacts += _emit_report(out_dir, stem, report, cfg)

    ood = build_ood(cfg, ds)
    if ood is not None:
        if use_ensembles:
            ent = np.concatenate([
                predictive_entropy(predict_ensemble(ensembles[c.client_id],
                                                    ood.inputs))
                for c in clients if c.client_id in ensembles])
        else:
            ent = predictive_entropy(predict_probs(spec, result.global_params,
                                                   ood.inputs))
        artifacts += _emit_ood_report(out_dir, f"{stem}_ood", ent,
                                      ds.num_classes, cfg,
                                      cfg.metrics.entropy_bins)
    _check_artifacts(out_dir, artifacts)
    RunManifest(cfg.config_hash(), __version__, backend_name(), artifacts,
                time.time() - t0, 0).write(out_dir)
    return report


def _train_condition(cfg):
    """In-memory dataset -> partitions -> federation for suite cells."""
    ds = build_dataset(cfg)
    parts = build_partitions(cfg, ds)
    result = run_federation(cfg.model_spec, parts, cfg.fed,
                            num_bins=cfg.metrics.num_bins)
    return ds, parts, result


def _final_row(result):
    lg = result.logs[-1]
    return lg.accuracy, lg.f_ece, lg.nll


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


@dataclass
class SuiteResult:
    name: str
    header: tuple
    rows: list
    summary: list
    passed: bool
    notes: str = ""

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(out_dir / f"{self.name}.csv", self.header, self.rows)
        _write_csv(out_dir / f"{self.name}_summary.csv",
                   ("condition", "metric", "mean", "std"), self.summary)
        _write_json(out_dir / f"{self.name}_verdict.json", {
            "suite": self.name,
            "passed": self.passed,
            "notes": self.notes,
        })


def _sweep(base_cfg, seeds, conditions):
    """Train each (condition, seed) cell; collect final-round metrics."""
    rows = []
    cells = {}
    for label, overrides in conditions:
        for seed in seeds:
            cfg = base_cfg.replace(seed=seed, **overrides)
            _, _, result = _train_condition(cfg)
            acc, fece, nl = _final_row(result)
            rows.append((label, seed, acc, fece, nl))
            cells[(label, seed)] = (acc, fece, nl)
    return rows, cells


def _summarize(rows, labels):
    summary = []
    for label in labels:
        for j, metric in ((2, "accuracy"), (3, "f_ece"), (4, "nll")):
            vals = [r[j] for r in rows if r[0] == label]
            m, s = _mean_std(vals)
            summary.append((label, metric, m, s))
    return summary


def suite_heterogeneity(base_cfg, seeds):
    """Label-skew severity sweep; checks the non-IID miscalibration gap."""
    conditions = [
        ("alpha_0.05", {"data": {"alpha": 0.05}}),
        ("alpha_0.1", {"data": {"alpha": 0.1}}),
        ("alpha_0.5", {"data": {"alpha": 0.5}}),
        ("iid", {"data": {"alpha": None}}),
    ]
    rows, cells = _sweep(base_cfg, seeds, conditions)
    wins = sum(1 for s in seeds
               if cells[("alpha_0.1", s)][1] > cells[("iid", s)][1])
    passed = wins >= max(1, int(np.ceil(0.8 * len(seeds))))
    notes = (f"alpha=0.1 final F-ECE exceeds IID in {wins}/{len(seeds)} seeds")
    return SuiteResult("heterogeneity_sweep",
                       ("condition", "seed", "accuracy", "f_ece", "nll"),
                       rows, _summarize(rows, [c[0] for c in conditions]),
                       passed, notes)


PARTICIPATION_ROUNDS = 50  # extra rounds so every gamma converges


def suite_participation(base_cfg, seeds):
    """IID participation sweep; F-ECE must not depend on gamma."""
    conditions = [
        ("gamma_0.25", {"data": {"alpha": None},
                        "fed": {"gamma": 0.25, "rounds": PARTICIPATION_ROUNDS}}),
        ("gamma_0.5", {"data": {"alpha": None},
                       "fed": {"gamma": 0.5, "rounds": PARTICIPATION_ROUNDS}}),
        ("gamma_1.0", {"data": {"alpha": None},
                       "fed": {"gamma": 1.0, "rounds": PARTICIPATION_ROUNDS}}),
    ]
    rows, cells = _sweep(base_cfg, seeds, conditions)
    labels = [c[0] for c in conditions]
    means, stds = {}, {}
    for label in labels:
        means[label], stds[label] = _mean_std([cells[(label, s)][1] for s in seeds])
    spread = max(means.values()) - min(means.values())
    band = 2 * float(np.mean(list(stds.values())))
    passed = spread <= band
    notes = (f"F-ECE spread across gamma {spread:.4f} vs 2x mean seed std "
             f"{band:.4f}")
    return SuiteResult("participation_sweep",
                       ("condition", "seed", "accuracy", "f_ece", "nll"),
                       rows, _summarize(rows, labels), passed, notes)


def suite_epoch(base_cfg, seeds):
    """Local-epoch sweep under label skew; report-only."""
    conditions = [(f"epochs_{e}", {"data": {"alpha": 0.1},
                                   "fed": {"local_epochs": e}})
                  for e in (1, 5, 10, 20)]
    rows, _ = _sweep(base_cfg, seeds, conditions)
    return SuiteResult("epoch_sweep",
                       ("condition", "seed", "accuracy", "f_ece", "nll"),
                       rows, _summarize(rows, [c[0] for c in conditions]),
                       True, "report-only sweep")


def suite_quantity(base_cfg, seeds):
    """Quantity-skew sweep (balanced vs ramp vs geometric); report-only."""
    n = base_cfg.fed.num_clients
    ramp = np.arange(1, n + 1, dtype=np.float64)
    geo = 0.5 ** np.arange(n, dtype=np.float64)
    conditions = [
        ("balanced", {"data": {"alpha": None, "quantity_proportions": None}}),
        ("ramp", {"data": {"alpha": None,
                           "quantity_proportions": list(ramp / ramp.sum())}}),
        ("geometric", {"data": {"alpha": None,
                                "quantity_proportions": list(geo / geo.sum())}}),
    ]
    rows, _ = _sweep(base_cfg, seeds, conditions)
    return SuiteResult("quantity_sweep",
                       ("condition", "seed", "accuracy", "f_ece", "nll"),
                       rows, _summarize(rows, [c[0] for c in conditions]),
                       True, "report-only sweep")


def _aph_cells(cfg, parts, result):
    """Per-client ensembles for one trained run; returns prediction sets."""
    clients = split_clients(parts, cfg.fed)
    ensembles = {}
    for c in clients:
        acfg = _client_aph_config(cfg, c.client_id)
        ensembles[c.client_id] = build_ensemble(
            cfg.model_spec, result.global_params, c.train, acfg,
            source_id=f"client-{c.client_id}")
    return clients, ensembles


def suite_aph_comparison(base_cfg, seeds):
    """Plain vs head-fine-tuned vs assembled heads under alpha=0.1."""
    if base_cfg.aph is None:
        raise ValueError("aph_comparison needs the aph config section")
    rows = []
    wins = 0
    for seed in seeds:
        cfg = base_cfg.replace(seed=seed, data={"alpha": 0.1})
        ds, parts, result = _train_condition(cfg)
        clients = split_clients(parts, cfg.fed)

        plain_sets = _model_sets(cfg.model_spec, result.global_params, clients)
        plain = calibration_report(plain_sets, cfg.metrics.num_bins)
        rows.append(("fedavg", seed, plain.accuracy, plain.f_ece, plain.nll))

        diag = head_finetune_diagnostic(cfg.model_spec, result, parts, cfg.fed,
                                        rounds=FINETUNE_EPOCHS,
                                        num_bins=cfg.metrics.num_bins)
        rows.append(("finetune", seed, diag.after.accuracy, diag.after.f_ece,
                     diag.after.nll))

        _, ensembles = _aph_cells(cfg, parts, result)
        aph_sets = _ensemble_sets(ensembles, clients)
        aph = calibration_report(aph_sets, cfg.metrics.num_bins)
        rows.append(("aph", seed, aph.accuracy, aph.f_ece, aph.nll))

        if aph.f_ece < plain.f_ece and aph.accuracy >= plain.accuracy - 0.02:
            wins += 1
    passed = wins >= max(1, int(np.ceil(0.8 * len(seeds))))
    notes = (f"APH lowers F-ECE without losing accuracy in "
             f"{wins}/{len(seeds)} seeds")
    return SuiteResult("aph_comparison",
                       ("condition", "seed", "accuracy", "f_ece", "nll"),
                       rows, _summarize(rows, ["fedavg", "finetune", "aph"]),
                       passed, notes)


def suite_head_finetune(base_cfg, seeds):
    """Fine-tune reliability gain vs OOD-uncertainty stability, plus the
    ensemble's OOD entropy against the plain model's."""
    if not base_cfg.data.has_ood:
        raise ValueError("head_finetune_diagnostic needs the data.ood section")
    rows = []
    ft_wins = shift_ok = aph_wins = 0
    for seed in seeds:
        cfg = base_cfg.replace(seed=seed, data={"alpha": 0.1})
        ds, parts, result = _train_condition(cfg)
        ood = build_ood(cfg, ds)
        diag = head_finetune_diagnostic(cfg.model_spec, result, parts, cfg.fed,
                                        rounds=FINETUNE_EPOCHS,
                                        ood_inputs=ood.inputs,
                                        num_bins=cfg.metrics.num_bins)
        clients, ensembles = _aph_cells(cfg, parts, result)
        ents = [predictive_entropy(predict_ensemble(e, ood.inputs)).mean()
                for e in ensembles.values()]
        aph_ent = float(np.mean(ents))
        shift = abs(diag.ood_entropy_after - diag.ood_entropy_before)
        rows.append((seed, diag.before.f_ece, diag.after.f_ece,
                     diag.ood_entropy_before, diag.ood_entropy_after,
                     aph_ent))
        ft_wins += diag.after.f_ece < diag.before.f_ece
        shift_ok += shift < 0.1
        aph_wins += aph_ent > diag.ood_entropy_before
    need = max(1, int(np.ceil(0.8 * len(seeds))))
    passed = (ft_wins >= need and shift_ok == len(seeds) and aph_wins >= need)
    notes = (f"fine-tune lowers F-ECE {ft_wins}/{len(seeds)}; "
             f"OOD shift < 0.1 nats {shift_ok}/{len(seeds)}; "
             f"ensemble OOD entropy above plain {aph_wins}/{len(seeds)}")
    summary = []
    arr = np.asarray(rows, dtype=np.float64)
    for j, metric in ((1, "f_ece_before"), (2, "f_ece_after"),
                      (3, "ood_entropy_before"), (4, "ood_entropy_after"),
                      (5, "aph_ood_entropy")):
        m, s = _mean_std(arr[:, j])
        summary.append(("alpha_0.1", metric, m, s))
    return SuiteResult("head_finetune_diagnostic",
                       ("seed", "f_ece_before", "f_ece_after",
                        "ood_entropy_before", "ood_entropy_after",
                        "aph_ood_entropy"),
                       rows, summary, passed, notes)


_SUITE_FUNCS = {
    "heterogeneity_sweep": suite_heterogeneity,
    "participation_sweep": suite_participation,
    "epoch_sweep": suite_epoch,
    "quantity_sweep": suite_quantity,
    "aph_comparison": suite_aph_comparison,
    "head_finetune_diagnostic": suite_head_finetune,
}


def cmd_suite(cfg: ExperimentConfig, name, seeds, out_dir):
    """Run one named comparison suite; write its tables and verdict."""
    if name not in _SUITE_FUNCS:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
    if not seeds:
        raise ValueError("need at least one seed")
    t0 = time.time()
    result = _SUITE_FUNCS[name](cfg, list(seeds))
    out_dir = Path(out_dir)
    result.write(out_dir)
    artifacts = [f"{name}.csv", f"{name}_summary.csv", f"{name}_verdict.json"]
    _check_artifacts(out_dir, artifacts)
    RunManifest(cfg.config_hash(), __version__, backend_name(), artifacts,
                time.time() - t0, 0).write(out_dir)
    return result
