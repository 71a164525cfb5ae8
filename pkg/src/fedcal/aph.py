"""Assembled projection heads: perturbed-prior head ensembles.

A trained model's head is treated as the mean of a Gaussian prior.  M
perturbed copies are drawn, each fine-tuned on local data at its own
uniformly drawn learning rate while the feature extractor stays frozen,
and predictions average the M heads.  A small FLOP model quantifies the
inference overhead of carrying the extra heads.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .checkpoint import load_container, save_container
from .nn import (
    Batch,
    ModelParams,
    ModelSpec,
    TrainingDivergedError,
    extract_features,
    head_forward,
    sgd_epochs,
    softmax,
)
from .rng import named_rng

MAX_HEAD_RETRIES = 3
AVERAGING_MODES = ("probs", "logits")
COST_CONVENTIONS = ("extra", "total")


class EnsembleDivergedError(RuntimeError):
    """A head kept diverging after exhausting its retry budget."""


@dataclass
class APHConfig:
    """Ensemble construction settings.

    ``lambda_`` is the base-10 exponent of the perturbation scale; None
    means derive it from the prior head via default_lambda at build
    time.  ``average`` picks the combination space for predictions.
    """

    num_heads: int = 10
    lambda_: Optional[float] = None
    beta_l: float = 0.001
    beta_u: float = 1.0
    finetune_epochs: int = 5
    seed: int = 0
    average: str = "probs"
    batch_size: int = 64

    def __post_init__(self):
        if self.num_heads < 1:
            raise ValueError(f"num_heads must be >= 1, got {self.num_heads}")
        if not (0.0 < self.beta_l <= self.beta_u):
            raise ValueError(
                f"need 0 < beta_l <= beta_u, got [{self.beta_l}, {self.beta_u}]")
        if self.finetune_epochs < 0:
            raise ValueError(
                f"finetune_epochs must be >= 0, got {self.finetune_epochs}")
        if self.average not in AVERAGING_MODES:
            raise ValueError(f"average must be one of {AVERAGING_MODES}, "
                             f"got {self.average!r}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lambda_ is not None and not math.isfinite(self.lambda_):
            raise ValueError(f"lambda_ must be finite, got {self.lambda_}")

    def to_dict(self):
        return {
            "num_heads": self.num_heads,
            "lambda": self.lambda_,
            "beta_l": self.beta_l,
            "beta_u": self.beta_u,
            "finetune_epochs": self.finetune_epochs,
            "seed": self.seed,
            "average": self.average,
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["lambda_"] = d.pop("lambda")
        return cls(**d)


@dataclass
class HeadEnsemble:
    """Frozen extractor plus M fine-tuned heads and their audit trail."""

    spec: ModelSpec
    base: np.ndarray
    heads: list
    betas: list
    config: APHConfig
    source_id: Optional[str] = None

    def __post_init__(self):
        if len(self.heads) != self.config.num_heads:
            raise ValueError(f"expected {self.config.num_heads} heads, "
                             f"got {len(self.heads)}")
        if len(self.betas) != len(self.heads):
            raise ValueError("betas and heads must pair up")
        if self.base.shape != (self.spec.base_size,):
            raise ValueError("base does not match spec")
        for m, h in enumerate(self.heads):
            if h.shape != (self.spec.head_size,):
                raise ValueError(f"head {m} does not match spec")

    @property
    def num_heads(self):
        return len(self.heads)


@dataclass(frozen=True)
class CostModel:
    """Per-sample forward FLOP counts for the two model stages."""

    extractor_flops: int
    head_flops: int

    def __post_init__(self):
        if self.extractor_flops <= 0 or self.head_flops <= 0:
            raise ValueError("flop counts must be positive")

    @classmethod
    def from_model_spec(cls, spec: ModelSpec):
        """Dense forward cost: 2*in*out multiply-adds + out bias adds."""
        def dense(widths):
            return sum(2 * widths[i] * widths[i + 1] + widths[i + 1]
                       for i in range(len(widths) - 1))
        return cls(dense(spec.extractor_dims), dense(spec.head_dims))

    @property
    def head_share(self):
        """Head cost as a fraction of one full forward pass."""
        return self.head_flops / (self.extractor_flops + self.head_flops)


def sample_head_init(prior: np.ndarray, lambda_: float, rng) -> np.ndarray:
    """Draw prior + 10^lambda * sigma with sigma i.i.d. standard normal."""
    prior = np.asarray(prior, dtype=np.float64)
    if not np.isfinite(prior).all():
        raise ValueError("prior head contains non-finite values")
    return prior + 10.0 ** lambda_ * rng.standard_normal(prior.shape)


def default_lambda(prior: np.ndarray) -> int:
    """Order of magnitude of the mean absolute head coordinate."""
    prior = np.asarray(prior, dtype=np.float64)
    if prior.size == 0:
        raise ValueError("prior head is empty")
    mean_abs = float(np.mean(np.abs(prior)))
    if mean_abs == 0.0:
        raise ValueError("all-zero prior has no magnitude scale")
    return math.floor(math.log10(mean_abs))


def lambda_grid(prior: np.ndarray):
    """Five-point sweep grid centered on the default exponent."""
    mu = default_lambda(prior)
    return (mu - 0.5, mu - 0.2, float(mu), mu + 0.2, mu + 0.5)


def build_ensemble(model_spec: ModelSpec, model: ModelParams, batch: Batch,
                   cfg: APHConfig, source_id: Optional[str] = None) -> HeadEnsemble:
    """Sample, fine-tune, and assemble M heads around the model's head.

    Draws are interleaved on one stream (init_m then beta_m) so the
    ensemble is a deterministic function of (model, data, config).  A
    head whose fine-tune diverges is redrawn from the same stream, at
    most MAX_HEAD_RETRIES times, so retries stay reproducible too.
    """
    if len(batch) == 0:
        raise ValueError("ensemble fine-tuning needs nonempty local data")
    lam = cfg.lambda_ if cfg.lambda_ is not None else default_lambda(model.head)
    sample_rng = named_rng(cfg.seed, "aph.sample")
    heads = []
    betas = []
    for m in range(cfg.num_heads):
        for attempt in range(1 + MAX_HEAD_RETRIES):
            init = sample_head_init(model.head, lam, sample_rng)
            beta = float(sample_rng.uniform(cfg.beta_l, cfg.beta_u))
            candidate = ModelParams(model.base.copy(), init)
            try:
                tuned, _ = sgd_epochs(
                    model_spec, candidate, batch, cfg.finetune_epochs, beta,
                    scope="head_only", batch_size=cfg.batch_size,
                    rng=named_rng(cfg.seed, "aph.shuffle", m, attempt))
            except TrainingDivergedError:
                continue
            heads.append(tuned.head)
            betas.append(beta)
            break
        else:
            raise EnsembleDivergedError(
                f"head {m} diverged on all {1 + MAX_HEAD_RETRIES} attempts "
                f"(lambda={lam}, beta range [{cfg.beta_l}, {cfg.beta_u}])")
    return HeadEnsemble(model_spec, model.base.copy(), heads, betas, cfg,
                        source_id)


def predict_ensemble(ensemble: HeadEnsemble, inputs: np.ndarray) -> np.ndarray:
    """Average the M head predictions over shared extracted features."""
    spec = ensemble.spec
    feats = extract_features(spec, ModelParams(ensemble.base, ensemble.heads[0]),
                             inputs)
    if ensemble.config.average == "logits":
        stack = np.stack([head_forward(spec, h, feats) for h in ensemble.heads])
        return softmax(stack.mean(axis=0))
    stack = np.stack([softmax(head_forward(spec, h, feats))
                      for h in ensemble.heads])
    return stack.mean(axis=0)


def cost_fraction(cost: CostModel, num_heads: int,
                  convention: str = "extra") -> float:
    """Inference overhead of an M-head ensemble relative to one model.

    "extra" counts only the added heads, (M-1)*c with c the head share
    of a single forward pass; "total" counts all M head passes, M*c.
    """
    if num_heads < 1:
        raise ValueError(f"num_heads must be >= 1, got {num_heads}")
    if convention not in COST_CONVENTIONS:
        raise ValueError(f"convention must be one of {COST_CONVENTIONS}, "
                         f"got {convention!r}")
    c = cost.head_share
    if convention == "extra":
        return (num_heads - 1) * c
    return num_heads * c


def save_ensemble(ensemble: HeadEnsemble, path):
    """Write an ensemble container with the beta audit trail in the header."""
    meta = {
        "config": ensemble.config.to_dict(),
        "model_spec": ensemble.spec.to_dict(),
        "source_id": ensemble.source_id,
        "betas": [float(b) for b in ensemble.betas],
    }
    arrays = {"base": ensemble.base}
    for m, h in enumerate(ensemble.heads):
        arrays[f"head_{m}"] = h
    save_container(path, "ensemble", meta, arrays)


def load_ensemble(path) -> HeadEnsemble:
    _, meta, arrays = load_container(path, expect_kind="ensemble")
    cfg = APHConfig.from_dict(meta["config"])
    spec = ModelSpec.from_dict(meta["model_spec"])
    heads = [arrays[f"head_{m}"] for m in range(cfg.num_heads)]
    return HeadEnsemble(spec, arrays["base"], heads, list(meta["betas"]), cfg,
                        meta["source_id"])
