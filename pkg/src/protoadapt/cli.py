"""Command-line surface.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adaptation import adapt
from .datasets import SyntheticSpec, generate_synthetic, read_feature_file, write_feature_file
from .errors import ConfigError, DataFormatError, NumericError
from .gradcheck import TOLERANCE, run_suite
from .harness import (ABLATION_MODES, apply_ablation, evaluate, load_config,
                      run_experiment)
from .model import Encoder, PrototypeMatrix, load_checkpoint, save_checkpoint
from .source_trainer import train_source


def _load_synthetic_spec(path) -> SyntheticSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    allowed = {"k_s", "k_t", "d_x", "source_per_class", "target_per_class",
               "cluster_std", "rotation_angle", "translation", "seed"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in synthetic spec: {sorted(unknown)}")
    if "translation" in raw:
        raw["translation"] = tuple(raw["translation"])
    return SyntheticSpec(**raw)


def _cmd_gen(args) -> int:
    spec = _load_synthetic_spec(args.spec)
    source, target = generate_synthetic(spec)
    write_feature_file(source, args.out_source)
    write_feature_file(target, args.out_target)
    print(f"wrote {source.n} source samples to {args.out_source}")
    print(f"wrote {target.n} target samples to {args.out_target}")
    return 0


def _cmd_train_source(args) -> int:
    cfg = load_config(args.config)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.synthetic is not None:
        source, _ = generate_synthetic(cfg.synthetic)
    else:
        source = read_feature_file(cfg.source_file)
    model_seed = int(np.random.SeedSequence(cfg.seed).generate_state(4)[1])
    encoder = Encoder(source.d_x, list(cfg.model.hidden), cfg.model.d_z,
                      cfg.model.activation, seed=model_seed)
    prototypes = PrototypeMatrix.random(cfg.model.d_z, source.k_s, seed=model_seed + 1)
    history = train_source(encoder, prototypes, source, cfg.source,
                           log_path=out / "source_metrics.csv")
    save_checkpoint(args.out, encoder, prototypes)
    final = history[-1].source_acc if history else float("nan")
    print(f"source training done: {len(history)} epochs, accuracy {final:.4f}")
    print(f"checkpoint: {args.out}")
    return 0


def _cmd_adapt(args) -> int:
    cfg = load_config(args.config)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.synthetic is not None:
        _, target = generate_synthetic(cfg.synthetic)
    else:
        target = read_feature_file(cfg.target_file)
    encoder, prototypes, _ = load_checkpoint(args.source_ckpt)
    hook = None
    if target.hidden_labels is not None:
        def hook(epoch, enc, ensemble):
            return evaluate(enc, ensemble.weights[0], target).accuracy
    result = adapt(encoder, prototypes, target, cfg.adapt,
                   epoch_hook=hook, log_path=out / "adapt_metrics.csv")
    save_checkpoint(args.out, encoder, prototypes, result.ensemble.weights)
    print(f"adaptation done: {len(result.history)} epochs")
    if result.history and result.history[-1].target_acc is not None:
        print(f"final target accuracy {result.history[-1].target_acc:.4f}")
    print(f"checkpoint: {args.out}")
    return 0


def _cmd_eval(args) -> int:
    encoder, prototypes, ensemble = load_checkpoint(args.ckpt)
    weights = ensemble[0] if ensemble else prototypes.weights
    dataset = read_feature_file(args.data)
    result = evaluate(encoder, weights, dataset)
    print(f"accuracy {result.accuracy:.6f}")
    if result.negative_transfer is not None:
        print(f"negative_transfer {result.negative_transfer:.6f}")
    for c, acc in sorted(result.per_class.items()):
        print(f"class {c} {acc:.6f}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    cfg = apply_ablation(cfg, args.mode)
    cfg = replace(cfg, out_dir=str(Path(cfg.out_dir) / args.mode))
    summary = run_experiment(cfg)
    print(f"mode {args.mode}")
    print(f"baseline accuracy {summary['baseline']['accuracy']:.6f}")
    print(f"adapted accuracy {summary['adapted']['accuracy']:.6f}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed)
    ok = True
    for name, err in results.items():
        status = "ok" if err < TOLERANCE else "FAIL"
        ok = ok and err < TOLERANCE
        print(f"{name} max_rel_err {err:.3e} {status}")
    return 0 if ok else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protoadapt")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic source/target pair")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-source", required=True)
    p.add_argument("--out-target", required=True)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("train-source", help="phase 1: learn prototypes")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train_source)

    p = sub.add_parser("adapt", help="phase 2: adapt to the target domain")
    p.add_argument("--config", required=True)
    p.add_argument("--source-ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_adapt)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a feature file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="run one ablation mode end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", required=True, choices=ABLATION_MODES)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
