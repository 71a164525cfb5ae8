"""Federated protocol engine: round loop, selection, aggregation.

One communication round selects ceil(gamma * N) clients uniformly
without replacement, trains each from a copy of the current global
model for E local epochs (FedAvg plain, FedProx with a proximal anchor
at the distributed model), then replaces the global model with the
data-size-weighted mean of the returned parameters.

Two exactness guarantees shape the implementation. First, aggregation
runs in exact rational arithmetic per coordinate, so it is truly
permutation-invariant and maps all-equal inputs to that exact input
(a naive float weighted mean does neither). Second, every random draw
comes from a stream named by (seed, purpose, round, client), so a
resumed run replays bit-identically and FedProx with mu=0 follows the
FedAvg trajectory bitwise.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .checkpoint import load_container, save_container
from .data import train_test_split
from .metrics import PredictionSet, calibration_report
from .nn import Batch, ModelParams, TrainingDivergedError, init_params, predict_probs, sgd_epochs
from .rng import named_rng

CEIL_GUARD = 1e-9

METHODS = ("fedavg", "fedprox")


class FederationDivergedError(RuntimeError):
    """A client's local training went non-finite; names round and client."""


@dataclass
class FedConfig:
    """Protocol hyperparameters."""

    num_clients: int
    rounds: int
    local_epochs: int
    gamma: float = 1.0
    lr: float = 0.05
    batch_size: int = 64
    method: str = "fedavg"
    mu_prox: float = 0.01
    seed: int = 0
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError(f"num_clients must be >= 1, got {self.num_clients}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method == "fedprox" and self.mu_prox < 0:
            raise ValueError(f"mu_prox must be >= 0, got {self.mu_prox}")

    def to_dict(self):
        return {
            "num_clients": self.num_clients, "rounds": self.rounds,
            "local_epochs": self.local_epochs, "gamma": self.gamma,
            "lr": self.lr, "batch_size": self.batch_size, "method": self.method,
            "mu_prox": self.mu_prox, "seed": self.seed,
            "test_fraction": self.test_fraction,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class RoundLog:
    """What one communication round produced."""

    round_index: int
    participants: list
    accuracy: float
    f_ece: float
    nll: float
    local_losses: dict  # client id -> per-epoch mean loss array


@dataclass
class FederationResult:
    global_params: ModelParams
    local_params: dict  # client id -> last local update that client produced
    logs: list

    @property
    def rounds_completed(self):
        return len(self.logs)


def participant_count(num_clients, gamma):
    """ceil(gamma * N) with a guard against float dust just above an integer.

    gamma * N can land epsilon above the exact product (0.1 * 30 is
    3.0000000000000004); fractional parts at or below 1e-9 count as
    exact so the ceiling does not overshoot.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    x = gamma * num_clients
    floor = math.floor(x)
    count = floor if x - floor <= CEIL_GUARD else floor + 1
    return max(1, min(count, num_clients))


def select_participants(num_clients, gamma, rng):
    """Uniform without-replacement draw of ceil(gamma * N) client ids, sorted."""
    count = participant_count(num_clients, gamma)
    ids = rng.choice(num_clients, size=count, replace=False)
    return np.sort(ids).astype(np.int64)


def _exact_weighted_mean(vectors, weights):
    """Per-coordinate weighted mean in exact rational arithmetic.

    Floats convert to rationals losslessly, the weighted sum is exact,
    and only the final value rounds back to float64. This makes the
    mean independent of summation order and an exact fixed point on
    all-equal inputs.
    """
    total = sum(weights, Fraction(0))
    if total <= 0:
        raise ValueError("total aggregation weight must be positive")
    out = np.empty(vectors[0].shape[0])
    cols = [v.tolist() for v in vectors]
    for j in range(out.shape[0]):
        acc = Fraction(0)
        for w, col in zip(weights, cols):
            acc += w * Fraction(col[j])
        out[j] = float(acc / total)
    return out


def aggregate(updates):
    """Data-size-weighted parameter mean: sum_i (n_i / sum n) * theta_i."""
    updates = list(updates)
    if not updates:
        raise ValueError("aggregate needs at least one update")
    shapes = {(p.base.shape[0], p.head.shape[0]) for p, _ in updates}
    if len(shapes) != 1:
        raise ValueError(f"updates disagree on parameter shapes: {sorted(shapes)}")
    weights = [Fraction(w) for _, w in updates]
    if any(w < 0 for w in weights):
        raise ValueError("aggregation weights must be nonnegative")
    base = _exact_weighted_mean([p.base for p, _ in updates], weights)
    head = _exact_weighted_mean([p.head for p, _ in updates], weights)
    return ModelParams(base, head)


def local_update(model_spec, global_params, train_batch, cfg, rng,
                 epochs_override=None):
    """One client's local training pass, starting from a copy of the
    global model. FedProx anchors the objective at the distributed
    parameters; mu_prox=0 skips the anchor entirely and is bitwise
    FedAvg. ``epochs_override`` exists for diagnostics (0 returns the
    global model unchanged)."""
    epochs = cfg.local_epochs if epochs_override is None else epochs_override
    anchor = None
    if cfg.method == "fedprox" and cfg.mu_prox != 0.0:
        anchor = (global_params, cfg.mu_prox)
    updated, losses = sgd_epochs(
        model_spec, global_params, train_batch, epochs, cfg.lr,
        scope="all", anchor=anchor, batch_size=cfg.batch_size, rng=rng)
    return updated, losses


@dataclass
class ClientData:
    """A client's fixed train/test material for the whole federation."""

    client_id: int
    train: Batch
    test: Batch | None


def split_clients(partitions, cfg):
    """Freeze each client's stratified train/test split for the run."""
    out = []
    for part in partitions:
        train, test = train_test_split(part.dataset, cfg.test_fraction,
                                       seed=cfg.seed, salt=part.client_id)
        out.append(ClientData(
            part.client_id,
            Batch(train.inputs, train.labels),
            Batch(test.inputs, test.labels) if test is not None else None,
        ))
    return out


def evaluate_global(model_spec, params, clients, num_bins=15):
    """Global-model reliability over the union of per-client test sets."""
    sets = []
    for c in clients:
        if c.test is None:
            continue
        probs = predict_probs(model_spec, params, c.test.inputs)
        sets.append(PredictionSet(probs, c.test.labels, client_id=c.client_id))
    if not sets:
        raise ValueError("no client has a test split; nothing to evaluate")
    return calibration_report(sets, num_bins=num_bins)


def run_federation(model_spec, partitions, cfg, num_bins=15,
                   resume_state=None, on_round=None, epochs_override=None):
    """Run R communication rounds; deterministic per (spec, partitions, cfg).

    ``resume_state`` is a FederationResult from an interrupted run;
    training continues after its last completed round and reproduces
    the uninterrupted trajectory bit-exactly (all randomness is keyed
    by round, not by call order). ``on_round`` is called with the
    in-progress FederationResult after each round (for persistence).
    """
    if len(partitions) != cfg.num_clients:
        raise ValueError(
            f"config says {cfg.num_clients} clients, got {len(partitions)} partitions")
    clients = split_clients(partitions, cfg)
    sizes = {c.client_id: len(c.train) for c in clients}

    if resume_state is None:
        global_params = init_params(model_spec, named_rng(cfg.seed, "fed.init"))
        local_params = {}
        logs = []
    else:
        global_params = resume_state.global_params.copy()
        local_params = {i: p.copy() for i, p in resume_state.local_params.items()}
        logs = list(resume_state.logs)

    for r in range(len(logs), cfg.rounds):
        chosen = select_participants(cfg.num_clients, cfg.gamma,
                                     named_rng(cfg.seed, "fed.select", r))
        updates = []
        losses = {}
        for i in chosen:
            i = int(i)
            rng = named_rng(cfg.seed, "fed.shuffle", r, i)
            try:
                theta, traj = local_update(model_spec, global_params,
                                           clients[i].train, cfg, rng,
                                           epochs_override=epochs_override)
            except TrainingDivergedError as e:
                raise FederationDivergedError(
                    f"round {r}, client {i}: {e}") from e
            updates.append((theta, sizes[i]))
            losses[i] = traj
            local_params[i] = theta
        global_params = aggregate(updates)
        report = evaluate_global(model_spec, global_params, clients, num_bins)
        logs.append(RoundLog(r, [int(i) for i in chosen], report.accuracy,
                             report.f_ece, report.nll, losses))
        if on_round is not None:
            # detached snapshot: the loop keeps mutating logs/local_params
            on_round(FederationResult(
                global_params.copy(),
                {i: p.copy() for i, p in local_params.items()},
                list(logs)))
    return FederationResult(global_params, local_params, logs)


def save_federation(result, model_spec, cfg, path):
    """Persist a (possibly partial) federation run for resume/reuse."""
    logs = result.logs
    arrays = {
        "global_base": result.global_params.base,
        "global_head": result.global_params.head,
    }
    if logs:
        arrays["participants"] = np.array([lg.participants for lg in logs],
                                          dtype=np.int64)
        arrays["metrics"] = np.array(
            [[lg.accuracy, lg.f_ece, lg.nll] for lg in logs])
        arrays["losses"] = np.array([
            [lg.local_losses[i] for i in lg.participants] for lg in logs])
    for i in sorted(result.local_params):
        arrays[f"local_{i}_base"] = result.local_params[i].base
        arrays[f"local_{i}_head"] = result.local_params[i].head
    save_container(path, "federation", {
        "config": cfg.to_dict(),
        "model_spec": model_spec.to_dict(),
        "rounds_completed": len(logs),
        "local_ids": sorted(result.local_params),
    }, arrays)


def load_federation(path):
    """Load a saved run: (FederationResult, ModelSpec, FedConfig)."""
    from .nn import ModelSpec

    _, meta, arrays = load_container(path, expect_kind="federation")
    cfg = FedConfig.from_dict(meta["config"])
    model_spec = ModelSpec.from_dict(meta["model_spec"])
    logs = []
    for r in range(meta["rounds_completed"]):
        participants = [int(i) for i in arrays["participants"][r]]
        acc, fe, nl = arrays["metrics"][r]
        losses = {i: arrays["losses"][r, s].copy()
                  for s, i in enumerate(participants)}
        logs.append(RoundLog(r, participants, float(acc), float(fe), float(nl),
                             losses))
    local = {i: ModelParams(arrays[f"local_{i}_base"], arrays[f"local_{i}_head"])
             for i in meta["local_ids"]}
    result = FederationResult(
        ModelParams(arrays["global_base"], arrays["global_head"]), local, logs)
    return result, model_spec, cfg


@dataclass
class FinetuneDiagnostic:
    """Before/after comparison for local head fine-tuning from the
    global model (frozen extractor)."""

    client_params: dict
    before: object  # CalibrationReport of the global model
    after: object   # CalibrationReport of per-client fine-tuned models
    ood_entropy_before: float | None = None
    ood_entropy_after: float | None = None


def head_finetune_diagnostic(model_spec, result, partitions, cfg, rounds,
                             scope="head_only", lr=None, ood_inputs=None,
                             num_bins=15):
    """Each client fine-tunes the global model's head on its own data.

    ``rounds`` counts head-scope epochs; the extractor stays bit-frozen.
    The before report evaluates the global model on every client's test
    set; the after report evaluates each client's fine-tuned model on
    that client's own test set. With an OOD input matrix, both mean
    predictive entropies (averaged over clients) come back for the
    does-fine-tuning-move-uncertainty comparison.
    """
    from .metrics import predictive_entropy

    if scope not in ("head_only", "last_layer_only"):
        raise ValueError(f"scope must be head_only or last_layer_only, got {scope!r}")
    if rounds < 0:
        raise ValueError(f"rounds must be >= 0, got {rounds}")
    lr = cfg.lr if lr is None else lr
    clients = split_clients(partitions, cfg)
    before = evaluate_global(model_spec, result.global_params, clients, num_bins)

    client_params = {}
    sets = []
    ood_before, ood_after = [], []
    for c in clients:
        rng = named_rng(cfg.seed, "finetune.shuffle", c.client_id)
        if rounds == 0:
            tuned = result.global_params.copy()
        else:
            tuned, _ = sgd_epochs(model_spec, result.global_params, c.train,
                                  rounds, lr, scope=scope,
                                  batch_size=cfg.batch_size, rng=rng)
        client_params[c.client_id] = tuned
        if c.test is not None:
            probs = predict_probs(model_spec, tuned, c.test.inputs)
            sets.append(PredictionSet(probs, c.test.labels, client_id=c.client_id))
        if ood_inputs is not None:
            ood_before.append(predictive_entropy(
                predict_probs(model_spec, result.global_params, ood_inputs)).mean())
            ood_after.append(predictive_entropy(
                predict_probs(model_spec, tuned, ood_inputs)).mean())
    after = calibration_report(sets, num_bins=num_bins)
    return FinetuneDiagnostic(
        client_params, before, after,
        float(np.mean(ood_before)) if ood_before else None,
        float(np.mean(ood_after)) if ood_after else None,
    )
