"""Experiment orchestration: strict config parsing, the evaluator, the
ablation modes, and the end-to-end runner.

The evaluator is the only code in the package that reads a target
dataset's hidden labels.
"""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .adaptation import AdaptConfig, adapt
from .datasets import (Dataset, SyntheticSpec, generate_synthetic,
                       read_feature_file, write_feature_file)
from .errors import ConfigError, EvaluationUnavailableError
from .model import Encoder, PrototypeMatrix, classify, save_checkpoint
from .source_trainer import SourcePhaseConfig, train_source

ABLATION_MODES = ("full", "no_EL", "no_TSCS", "no_CLS", "no_DO")
SEED_ENV_VAR = "PDA_SEED"


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple[int, ...] = (64, 64)
    d_z: int = 32
    activation: str = "tanh"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    out_dir: str
    synthetic: SyntheticSpec | None = None
    source_file: str | None = None
    target_file: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    source: SourcePhaseConfig = field(default_factory=SourcePhaseConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)

    def __post_init__(self):
        file_pair = self.source_file is not None and self.target_file is not None
        if (self.synthetic is None) == (not file_pair):
            raise ConfigError("config needs either a synthetic spec or both "
                              "source and target file paths")


def _strict_kwargs(section: str, raw: dict, allowed: set[str]) -> dict:
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")
    return raw


def load_config(path) -> ExperimentConfig:
    """Parse a JSON experiment config, rejecting unknown keys.

    The PDA_SEED environment variable, when set, overrides the seed.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    _strict_kwargs("config", raw, {"seed", "out_dir", "data", "model", "source", "adapt"})
    if "seed" not in raw or "out_dir" not in raw or "data" not in raw:
        raise ConfigError("config requires 'seed', 'out_dir', and 'data'")

    seed = int(raw["seed"])
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from exc

    # Phase seeds not given explicitly derive from the master seed.
    derived = [int(s) for s in np.random.SeedSequence(seed).generate_state(4)]
    data_seed, _, source_seed, adapt_seed = derived

    data = _strict_kwargs("data", dict(raw["data"]),
                          {"synthetic", "source_file", "target_file"})
    synthetic = None
    if "synthetic" in data:
        syn = _strict_kwargs("data.synthetic", dict(data["synthetic"]),
                             {"k_s", "k_t", "d_x", "source_per_class",
                              "target_per_class", "cluster_std",
                              "rotation_angle", "translation", "seed"})
        syn.setdefault("seed", data_seed)
        if "translation" in syn:
            syn["translation"] = tuple(syn["translation"])
        synthetic = SyntheticSpec(**syn)

    model_raw = _strict_kwargs("model", dict(raw.get("model", {})),
                               {"hidden", "d_z", "activation"})
    if "hidden" in model_raw:
        model_raw["hidden"] = tuple(model_raw["hidden"])
    model = ModelConfig(**model_raw)

    source_raw = _strict_kwargs("source", dict(raw.get("source", {})),
                                {"eta", "epochs", "lr0", "batch_size", "seed"})
    source_raw.setdefault("seed", source_seed)
    source = SourcePhaseConfig(**source_raw)

    adapt_raw = _strict_kwargs("adapt", dict(raw.get("adapt", {})),
                               {"n_a", "n_e", "n_cl", "alpha", "beta", "epochs",
                                "warmup_epochs", "switch_epoch", "lr0",
                                "batch_size", "seed", "use_confident_subset",
                                "share_complement_set"})
    adapt_raw.setdefault("seed", adapt_seed)
    adapt_cfg = AdaptConfig(**adapt_raw)

    return ExperimentConfig(seed=seed, out_dir=str(raw["out_dir"]),
                            synthetic=synthetic,
                            source_file=data.get("source_file"),
                            target_file=data.get("target_file"),
                            model=model, source=source, adapt=adapt_cfg)


@dataclass
class EvalResult:
    accuracy: float
    per_class: dict[int, float]
    negative_transfer: float | None
    predictions: np.ndarray


def evaluate(encoder: Encoder, weights: np.ndarray, dataset: Dataset) -> EvalResult:
    """Classification accuracy against the dataset's evaluation labels.

    For target data these are the hidden labels; the negative-transfer
    indicator is the fraction of samples predicted into classes absent
    from the target label space.
    """
    labels = dataset.hidden_labels if dataset.role == "target" else dataset.labels
    if labels is None:
        raise EvaluationUnavailableError("dataset carries no evaluation labels")
    out = classify(weights, encoder.forward(dataset.features).z_l2)
    preds = out.logits.argmax(axis=1)
    accuracy = float((preds == labels).mean())
    per_class = {int(c): float((preds[labels == c] == c).mean())
                 for c in np.unique(labels)}
    negative_transfer = None
    if dataset.role == "target":
        shared = np.unique(labels)
        negative_transfer = float((~np.isin(preds, shared)).mean())
    return EvalResult(accuracy, per_class, negative_transfer, preds)


def apply_ablation(cfg: ExperimentConfig, mode: str) -> ExperimentConfig:
    """Return a config with exactly one component disabled.

    no_EL shrinks the ensemble to one classifier; no_TSCS feeds every
    target sample to the geometry/supervision terms; no_CLS shares a
    single one-element complementary set across members; no_DO zeroes
    both geometry coefficients.
    """
    if mode not in ABLATION_MODES:
        raise ConfigError(f"unknown ablation mode {mode!r}")
    a = cfg.adapt
    if mode == "no_EL":
        a = replace(a, n_e=1)
    elif mode == "no_TSCS":
        a = replace(a, use_confident_subset=False)
    elif mode == "no_CLS":
        a = replace(a, n_cl=1, share_complement_set=True)
    elif mode == "no_DO":
        a = replace(a, alpha=0.0, beta=0.0)
    return replace(cfg, adapt=a)


@contextmanager
def _phase(name: str):
    try:
        yield
    except Exception as exc:
        try:
            wrapped = type(exc)(f"[{name}] {exc}")
        except Exception:
            raise
        raise wrapped from exc


def _eval_summary(result: EvalResult) -> dict:
    return {"accuracy": result.accuracy,
            "negative_transfer": result.negative_transfer,
            "per_class": {str(k): v for k, v in sorted(result.per_class.items())}}


def load_experiment_data(cfg: ExperimentConfig, out: Path | None = None
                         ) -> tuple[Dataset, Dataset]:
    """Materialize the source/target pair. Synthetic data is written to
    disk and read back so every run trains on exactly what the files hold."""
    if cfg.synthetic is not None:
        source, target = generate_synthetic(cfg.synthetic)
        if out is not None:
            write_feature_file(source, out / "source.features")
            write_feature_file(target, out / "target.features")
            source = read_feature_file(out / "source.features")
            target = read_feature_file(out / "target.features")
        return source, target
    return read_feature_file(cfg.source_file), read_feature_file(cfg.target_file)


def run_experiment(cfg: ExperimentConfig) -> dict:
    """generate/load -> train source -> adapt -> evaluate, fully seeded.

    Writes metric CSVs, checkpoints, and summary.json into the output
    directory and returns the summary.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with _phase("data"):
        source, target = load_experiment_data(cfg, out)

    derived = [int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(4)]
    _, model_seed, _, _ = derived
    encoder = Encoder(source.d_x, list(cfg.model.hidden), cfg.model.d_z,
                      cfg.model.activation, seed=model_seed)
    prototypes = PrototypeMatrix.random(cfg.model.d_z, source.k_s,
                                        seed=model_seed + 1)

    with _phase("train-source"):
        train_source(encoder, prototypes, source, cfg.source,
                     log_path=out / "source_metrics.csv")
        save_checkpoint(out / "source.ckpt", encoder, prototypes)

    with _phase("evaluate"):
        baseline = evaluate(encoder, prototypes.weights, target)

    hook = None
    if target.hidden_labels is not None:
        def hook(epoch, enc, ensemble):
            return evaluate(enc, ensemble.weights[0], target).accuracy

    with _phase("adapt"):
        result = adapt(encoder, prototypes, target, cfg.adapt,
                       epoch_hook=hook, log_path=out / "adapt_metrics.csv")
        save_checkpoint(out / "adapted.ckpt", encoder, prototypes,
                        result.ensemble.weights)

    with _phase("evaluate"):
        adapted = evaluate(encoder, result.ensemble.weights[0], target)

    summary = {"seed": cfg.seed,
               "baseline": _eval_summary(baseline),
               "adapted": _eval_summary(adapted)}
    with open(out / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
