"""Experiment configuration: schema, defaults, validation, hashing.

Config files are JSON with five sections (data, model, fed, aph,
metrics) plus a root seed and an output directory.  Files may give any
subset of keys; the rest fill from DEFAULT_CONFIG.  Unknown keys are
hard errors naming the offending path, so a typo can never silently
fall back to a default mid-comparison.
"""

import copy
import hashlib
import json
from dataclasses import dataclass
from typing import Optional

from .aph import APHConfig
from .fed import FedConfig
from .nn import ModelSpec

OOD_MODES = ("mean_shift", "fresh_classes")
DATA_SOURCES = ("synthetic", "cifar10")


class ConfigError(ValueError):
    """Schema violation; message carries the dotted field path."""


# Scale chosen so every experiment suite finishes in minutes on one
# core while the heterogeneity effects stay clearly visible.
DEFAULT_CONFIG = {
    "seed": 0,
    "output_dir": None,
    "data": {
        "source": "synthetic",
        "path": None,
        "num_classes": 4,
        "dim": 16,
        "n_per_class": 500,
        "separation": 1.0,
        "alpha": None,
        "quantity_proportions": None,
        "ood": {
            "mode": "mean_shift",
            "magnitude": 50.0,
        },
    },
    "model": {
        "extractor_layers": [32],
        "head_layers": [16, 4],
    },
    "fed": {
        "num_clients": 8,
        "rounds": 30,
        "local_epochs": 10,
        "gamma": 1.0,
        "lr": 0.05,
        "batch_size": 64,
        "method": "fedavg",
        "mu_prox": 0.01,
        "test_fraction": 0.2,
    },
    "aph": {
        "num_heads": 10,
        "lambda": None,
        "beta_l": 0.001,
        "beta_u": 1.0,
        "finetune_epochs": 5,
        "average": "probs",
        "batch_size": 64,
    },
    "metrics": {
        "num_bins": 15,
        "entropy_bins": 30,
    },
}

# Leaf type constraints; None in a schema tuple admits JSON null.
_SCHEMA = {
    "seed": (int,),
    "output_dir": (str, None),
    "data": {
        "source": (str,),
        "path": (str, None),
        "num_classes": (int,),
        "dim": (int,),
        "n_per_class": (int,),
        "separation": (float, int),
        "alpha": (float, int, None),
        "quantity_proportions": (list, None),
        "ood": {
            "mode": (str,),
            "magnitude": (float, int),
        },
    },
    "model": {
        "extractor_layers": (list,),
        "head_layers": (list,),
    },
    "fed": {
        "num_clients": (int,),
        "rounds": (int,),
        "local_epochs": (int,),
        "gamma": (float, int),
        "lr": (float, int),
        "batch_size": (int,),
        "method": (str,),
        "mu_prox": (float, int),
        "test_fraction": (float, int),
    },
    "aph": {
        "num_heads": (int,),
        "lambda": (float, int, None),
        "beta_l": (float, int),
        "beta_u": (float, int),
        "finetune_epochs": (int,),
        "average": (str,),
        "batch_size": (int,),
    },
    "metrics": {
        "num_bins": (int,),
        "entropy_bins": (int,),
    },
}


# sections that may be JSON null, meaning "feature disabled"
_NULLABLE_SECTIONS = frozenset({"aph", "data.ood"})


def _check_node(node, schema, path):
    if not isinstance(node, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping, "
                          f"got {type(node).__name__}")
    for key, value in node.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"{here}: unknown key")
        expected = schema[key]
        if isinstance(expected, dict):
            if value is None and here in _NULLABLE_SECTIONS:
                continue
            _check_node(value, expected, here)
            continue
        if value is None:
            if None not in expected:
                raise ConfigError(f"{here}: null is not allowed")
            continue
        types = tuple(t for t in expected if t is not None)
        # bool passes isinstance(int) checks; it is never a valid value
        if isinstance(value, bool) or not isinstance(value, types):
            names = "/".join(t.__name__ for t in types)
            raise ConfigError(f"{here}: expected {names}, "
                              f"got {type(value).__name__}")


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class DataSection:
    source: str
    path: Optional[str]
    num_classes: int
    dim: int
    n_per_class: int
    separation: float
    alpha: Optional[float]
    quantity_proportions: Optional[tuple]
    ood_mode: Optional[str]
    ood_magnitude: Optional[float]

    def __post_init__(self):
        if self.source not in DATA_SOURCES:
            raise ConfigError(f"data.source: must be one of {DATA_SOURCES}, "
                              f"got {self.source!r}")
        if self.source == "cifar10" and not self.path:
            raise ConfigError("data.path: required when source is cifar10")
        if self.num_classes < 2:
            raise ConfigError(f"data.num_classes: must be >= 2, got {self.num_classes}")
        if self.dim < 1:
            raise ConfigError(f"data.dim: must be >= 1, got {self.dim}")
        if self.n_per_class < 1:
            raise ConfigError(f"data.n_per_class: must be >= 1, got {self.n_per_class}")
        if self.separation < 0:
            raise ConfigError(f"data.separation: must be >= 0, got {self.separation}")
        if self.alpha is not None and self.quantity_proportions is not None:
            raise ConfigError("data.alpha: mutually exclusive with "
                              "data.quantity_proportions")
        if self.alpha is not None and self.alpha <= 0:
            raise ConfigError(f"data.alpha: must be > 0, got {self.alpha}")
        if (self.ood_mode is None) != (self.ood_magnitude is None):
            raise ConfigError("data.ood: mode and magnitude go together")
        if self.ood_mode is not None and self.ood_mode not in OOD_MODES:
            raise ConfigError(f"data.ood.mode: must be one of {OOD_MODES}, "
                              f"got {self.ood_mode!r}")
        if self.ood_magnitude is not None and self.ood_magnitude < 0:
            raise ConfigError(f"data.ood.magnitude: must be >= 0, "
                              f"got {self.ood_magnitude}")

    @property
    def has_ood(self):
        return self.ood_mode is not None


@dataclass(frozen=True)
class MetricsSection:
    num_bins: int
    entropy_bins: int

    def __post_init__(self):
        if self.num_bins < 1:
            raise ConfigError(f"metrics.num_bins: must be >= 1, got {self.num_bins}")
        if self.entropy_bins < 1:
            raise ConfigError(f"metrics.entropy_bins: must be >= 1, "
                              f"got {self.entropy_bins}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, fully resolved settings for one experiment."""

    seed: int
    output_dir: Optional[str]
    data: DataSection
    model_spec: ModelSpec
    fed: FedConfig
    aph: Optional[APHConfig]
    metrics: MetricsSection

    @classmethod
    def from_dict(cls, raw):
        """Merge over defaults, validate the schema, build the sections.

        The root seed feeds both FedConfig and APHConfig; config files
        carry a single seed so paired runs stay paired.  "aph": null
        disables the ensemble stage, "data": {"ood": null} the OOD one.
        """
        merged = _merge(DEFAULT_CONFIG, raw)
        _check_node(merged, _SCHEMA, "")
        d = merged["data"]
        ood = d["ood"]
        data = DataSection(
            source=d["source"],
            path=d["path"],
            num_classes=d["num_classes"],
            dim=d["dim"],
            n_per_class=d["n_per_class"],
            separation=float(d["separation"]),
            alpha=None if d["alpha"] is None else float(d["alpha"]),
            quantity_proportions=(None if d["quantity_proportions"] is None
                                  else tuple(float(p) for p in d["quantity_proportions"])),
            ood_mode=None if ood is None else ood["mode"],
            ood_magnitude=None if ood is None else float(ood["magnitude"]),
        )
        m = merged["model"]
        try:
            spec = ModelSpec(data.dim, tuple(m["extractor_layers"]),
                             tuple(m["head_layers"]))
        except ValueError as e:
            raise ConfigError(f"model: {e}") from e
        if spec.num_classes != data.num_classes:
            raise ConfigError(
                f"model.head_layers: last width {spec.num_classes} must equal "
                f"data.num_classes {data.num_classes}")
        f = merged["fed"]
        try:
            fed = FedConfig(
                num_clients=f["num_clients"], rounds=f["rounds"],
                local_epochs=f["local_epochs"], gamma=float(f["gamma"]),
                lr=float(f["lr"]), batch_size=f["batch_size"],
                method=f["method"], mu_prox=float(f["mu_prox"]),
                seed=merged["seed"], test_fraction=float(f["test_fraction"]))
        except ValueError as e:
            raise ConfigError(f"fed: {e}") from e
        aph = None
        if merged["aph"] is not None:
            a = merged["aph"]
            try:
                aph = APHConfig(
                    num_heads=a["num_heads"],
                    lambda_=None if a["lambda"] is None else float(a["lambda"]),
                    beta_l=float(a["beta_l"]), beta_u=float(a["beta_u"]),
                    finetune_epochs=a["finetune_epochs"], seed=merged["seed"],
                    average=a["average"], batch_size=a["batch_size"])
            except ValueError as e:
                raise ConfigError(f"aph: {e}") from e
        return cls(seed=merged["seed"], output_dir=merged["output_dir"],
                   data=data, model_spec=spec, fed=fed, aph=aph,
                   metrics=MetricsSection(merged["metrics"]["num_bins"],
                                          merged["metrics"]["entropy_bins"]))

    def to_dict(self):
        """Canonical full-form dict; from_dict round-trips it."""
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "data": {
                "source": self.data.source,
                "path": self.data.path,
                "num_classes": self.data.num_classes,
                "dim": self.data.dim,
                "n_per_class": self.data.n_per_class,
                "separation": self.data.separation,
                "alpha": self.data.alpha,
                "quantity_proportions": (None if self.data.quantity_proportions is None
                                         else list(self.data.quantity_proportions)),
                "ood": None if self.data.ood_mode is None else {
                    "mode": self.data.ood_mode,
                    "magnitude": self.data.ood_magnitude,
                },
            },
            "model": {
                "extractor_layers": list(self.model_spec.extractor_layers),
                "head_layers": list(self.model_spec.head_layers),
            },
            "fed": {
                "num_clients": self.fed.num_clients,
                "rounds": self.fed.rounds,
                "local_epochs": self.fed.local_epochs,
                "gamma": self.fed.gamma,
                "lr": self.fed.lr,
                "batch_size": self.fed.batch_size,
                "method": self.fed.method,
                "mu_prox": self.fed.mu_prox,
                "test_fraction": self.fed.test_fraction,
            },
            "aph": None if self.aph is None else {
                "num_heads": self.aph.num_heads,
                "lambda": self.aph.lambda_,
                "beta_l": self.aph.beta_l,
                "beta_u": self.aph.beta_u,
                "finetune_epochs": self.aph.finetune_epochs,
                "average": self.aph.average,
                "batch_size": self.aph.batch_size,
            },
            "metrics": {
                "num_bins": self.metrics.num_bins,
                "entropy_bins": self.metrics.entropy_bins,
            },
        }

    def config_hash(self):
        """sha256 over the canonical JSON form; embedded in every report."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def replace(self, **section_overrides):
        """New config with nested-dict overrides applied (suite helper)."""
        return ExperimentConfig.from_dict(
            _merge(self.to_dict(), section_overrides))


def load_config(path, overrides=None):
    """Read a JSON config file and resolve it against the defaults."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from e
    if overrides:
        raw = _merge(raw, overrides)
    return ExperimentConfig.from_dict(raw)


def default_config():
    return ExperimentConfig.from_dict({})
