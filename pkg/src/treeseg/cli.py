"""Command-line harness.

Subcommands: synth-gen, train-policy, train-value, run, ablate, eval and
serve. Every subcommand is deterministic given its inputs and seed; reports
embed the resolved configuration for provenance. Exit codes: 0 success,
1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .core import EngineConfig, LabeledSequence
from .fileio import (
    read_checkpoint,
    read_labels,
    read_sequence,
    write_checkpoint,
    write_labels,
    write_report,
    write_sequence,
)
from .gateway import build_report, run_corpus
from .lang_model import fit
from .metrics import aggregate_reports, report
from .policy import PolicyModel, PolicyTrainerConfig, train_policy
from .synth import SynthConfig, generate_corpus, preset_by_name
from .value import (
    RecurrentValueModel,
    ValueTrainerConfig,
    build_value_dataset,
    train_value,
)

REFERENCE_NOTE = (
    "Reference operating point (documentation only): on the original "
    "robot-surgery gesture benchmark the combined policy+value method reports "
    "Acc 81.67, Edit 88.53 and F1@{10,25,50} = 92.68/90.99/83.15. Those "
    "numbers require that benchmark's extracted features and are not "
    "reproducible from the synthetic presets."
)

OUTPUT_ENV_VAR = "TREESEG_OUT"


def _default_out(subdir: str) -> Path:
    return Path(os.environ.get(OUTPUT_ENV_VAR, "out")) / subdir


def _add_engine_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("engine configuration")
    group.add_argument("--config", type=Path, help="JSON file with engine-config fields")
    group.add_argument("--num-classes", type=int)
    group.add_argument("--feature-dim", type=int)
    group.add_argument("--small-step", type=int)
    group.add_argument("--large-step", type=int)
    group.add_argument("--alpha", type=float)
    group.add_argument("--threshold", type=float, dest="confidence_threshold")
    group.add_argument("--c-puct", type=float, dest="c_puct")
    group.add_argument("--search-times", type=int, dest="num_simulations")
    group.add_argument("--seed", type=int, dest="rng_seed")


_ENGINE_FIELDS = (
    "num_classes",
    "feature_dim",
    "small_step",
    "large_step",
    "alpha",
    "confidence_threshold",
    "c_puct",
    "num_simulations",
    "rng_seed",
)


def _engine_config(args, manifest: Optional[dict] = None) -> EngineConfig:
    """Precedence: flags over config file over manifest-derived defaults."""
    values: dict = {}
    if manifest is not None:
        values["num_classes"] = manifest["num_classes"]
        values["feature_dim"] = manifest["feature_dim"]
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(_ENGINE_FIELDS)
        if unknown:
            raise ValueError(f"unknown engine-config fields in {args.config}: {sorted(unknown)}")
        values.update(file_values)
    for field in _ENGINE_FIELDS:
        flag = getattr(args, field, None)
        if flag is not None:
            values[field] = flag
    return EngineConfig(**values)


def _load_manifest(data_dir: Path) -> dict:
    path = data_dir / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json under {data_dir}")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _load_split(
    data_dir: Path,
    split: str,
    exclude_group: Optional[str] = None,
) -> tuple[list[str], list[LabeledSequence], dict]:
    manifest = _load_manifest(data_dir)
    if split == "all":
        names = list(manifest["files"])
    elif split in ("train", "test"):
        names = list(manifest[split])
    elif split.startswith("group:"):
        wanted = split.split(":", 1)[1]
        names = list(manifest["files"])
    else:
        raise ValueError(f"unknown split {split!r} (use train, test, all or group:<id>)")
    sequences = [read_sequence(data_dir / name) for name in names]
    if split.startswith("group:"):
        keep = [i for i, s in enumerate(sequences) if s.group_id == wanted]
        names = [names[i] for i in keep]
        sequences = [sequences[i] for i in keep]
    if exclude_group is not None:
        keep = [i for i, s in enumerate(sequences) if s.group_id != exclude_group]
        names = [names[i] for i in keep]
        sequences = [sequences[i] for i in keep]
    if not sequences:
        raise ValueError(f"split {split!r} selected no sequences")
    return names, sequences, manifest


def _load_models(models_dir: Path, cfg: EngineConfig):
    policy_model = read_checkpoint(models_dir / "policy.ckpt", "policy", cfg)
    value_model = read_checkpoint(models_dir / "value.ckpt", "value", cfg)
    table = read_checkpoint(models_dir / "lang_model.ckpt", "lang_model", cfg)
    return policy_model, value_model, table


def _read_engine_json(models_dir: Path) -> dict:
    with open(models_dir / "engine.json", "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# synth-gen
# ---------------------------------------------------------------------------


def cmd_synth_gen(args) -> int:
    out_dir = args.out if args.out is not None else _default_out("corpus")
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.preset is not None:
        preset = preset_by_name(args.preset)
        corpus = preset.train + preset.test
        synth_cfg = preset.config
        train_count = len(preset.train)
    else:
        synth_cfg = SynthConfig(
            num_classes=args.classes,
            feature_dim=args.features,
            length_range=(args.length_min, args.length_max),
            noise_scale=args.sigma,
            num_sequences=args.num_sequences,
            seed=args.gen_seed,
            mean_segment_length=args.mean_segment,
        )
        corpus = generate_corpus(synth_cfg)
        train_count = int(round(len(corpus) * args.train_fraction))
    names = [f"seq_{i:03d}.seq" for i in range(len(corpus))]
    for name, seq in zip(names, corpus):
        write_sequence(out_dir / name, seq)
    manifest = {
        "files": names,
        "train": names[:train_count],
        "test": names[train_count:],
        "groups": {name: seq.group_id for name, seq in zip(names, corpus)},
        "num_classes": synth_cfg.num_classes,
        "feature_dim": synth_cfg.feature_dim,
        "preset": args.preset,
        "seed": synth_cfg.seed,
        "noise_scale": synth_cfg.noise_scale,
        "length_range": list(synth_cfg.length_range),
        "mean_segment_length": synth_cfg.mean_segment_length,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(names)} sequences to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# train-policy / train-value
# ---------------------------------------------------------------------------


def _write_engine_json(models_dir: Path, cfg: EngineConfig) -> None:
    with open(models_dir / "engine.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(cfg.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train_policy(args) -> int:
    _, corpus, manifest = _load_split(args.data, args.split, args.exclude_group)
    cfg = _engine_config(args, manifest)
    rng = np.random.default_rng(cfg.rng_seed)
    table = fit([seq.labels for seq in corpus], cfg.num_classes)
    model = PolicyModel.create(3 * cfg.feature_dim + cfg.num_actions, cfg.num_actions, rng=rng)
    trainer = PolicyTrainerConfig(
        iterations=args.iterations,
        episodes_per_iteration=args.episodes_per_iteration,
        learning_rate=args.learning_rate,
    )
    log = train_policy(model, corpus, table, cfg, trainer, rng)
    for i, mean_return in enumerate(log.mean_returns):
        if i % args.log_every == 0 or i == len(log.mean_returns) - 1:
            print(f"iteration {i}: mean_return={mean_return:.3f}")
    args.models.mkdir(parents=True, exist_ok=True)
    write_checkpoint(args.models / "policy.ckpt", model, seed=cfg.rng_seed, config=cfg)
    write_checkpoint(args.models / "lang_model.ckpt", table, seed=cfg.rng_seed, config=cfg)
    _write_engine_json(args.models, cfg)
    print(f"wrote policy and transition-table checkpoints to {args.models}")
    return 0


def cmd_train_value(args) -> int:
    _, corpus, manifest = _load_split(args.data, args.split, args.exclude_group)
    cfg = _engine_config(args, manifest)
    rng = np.random.default_rng(cfg.rng_seed)
    samples = build_value_dataset(corpus, cfg, rng, random_fraction=args.random_fraction)
    model = RecurrentValueModel.create(cfg.feature_dim + cfg.num_classes, rng=rng)
    trainer = ValueTrainerConfig(
        steps_per_stage=args.steps_per_stage,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
    )
    log = train_value(model, samples, trainer, rng)
    for K, loss in sorted(log.stage_losses.items()):
        print(f"stage K={K}: loss={loss:.5f}")
    final = log.final_loss
    print(f"final_mse={final:.5f}" if final is not None else "final_mse=nan")
    args.models.mkdir(parents=True, exist_ok=True)
    write_checkpoint(args.models / "value.ckpt", model, seed=cfg.rng_seed, config=cfg)
    _write_engine_json(args.models, cfg)
    print(f"wrote value checkpoint to {args.models}")
    return 0


# ---------------------------------------------------------------------------
# run / ablate
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    names, corpus, manifest = _load_split(args.data, args.split, args.exclude_group)
    cfg = _engine_config(args, manifest)
    policy_model, value_model, table = _load_models(args.models, cfg)
    out_dir = args.out if args.out is not None else _default_out("run")
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_corpus(
        corpus,
        policy_model,
        value_model,
        table,
        cfg,
        jobs=args.jobs,
        prior_search=args.priors,
    )
    body = build_report(
        corpus,
        names,
        result,
        cfg,
        extra={"artifact_version": __version__, "split": args.split, "data": str(args.data)},
    )
    write_report(out_dir / "report.json", body)
    predictions_dir = out_dir / "predictions"
    predictions_dir.mkdir(exist_ok=True)
    for name, episode in zip(names, result.episodes):
        write_labels(predictions_dir / f"{Path(name).stem}.pred.csv", episode.predicted_labels)
    agg = result.aggregate
    print(
        f"sequences={len(corpus)} accuracy={agg.accuracy:.2f} edit={agg.edit_score:.2f} "
        f"f1@10={agg.f1_10:.2f} f1@25={agg.f1_25:.2f} f1@50={agg.f1_50:.2f} "
        f"searched_decisions={result.mean_searched_fraction:.3f} "
        f"searched_frames={result.mean_searched_frame_fraction:.3f}"
    )
    print(f"report written to {out_dir / 'report.json'}")
    return 0


def _metric_cell(report_dict: Optional[dict]) -> str:
    if report_dict is None:
        return "   -      -  "
    return f"{report_dict['accuracy']:6.2f} {report_dict['edit_score']:6.2f}"


def cmd_ablate(args) -> int:
    names, corpus, manifest = _load_split(args.data, args.split, args.exclude_group)
    cfg = _engine_config(args, manifest)
    policy_model, value_model, table = _load_models(args.models, cfg)
    search_times = [int(v) for v in args.search_times.split(",")]
    out_dir = args.out if args.out is not None else _default_out("ablate")
    out_dir.mkdir(parents=True, exist_ok=True)

    def _metrics(threshold, sims, priors):
        result = run_corpus(
            corpus,
            policy_model,
            value_model,
            table,
            cfg,
            jobs=args.jobs,
            threshold=threshold,
            num_simulations=sims,
            prior_search=priors,
        )
        return result.aggregate.as_dict()

    pure_policy = _metrics(threshold=0.0, sims=0, priors="policy")
    rows = []
    for n in search_times:
        rows.append(
            {
                "search_times": n,
                "policy": pure_policy if n == 0 else None,
                "value": _metrics(threshold=1.01, sims=n, priors="uniform"),
                "combined": _metrics(threshold=None, sims=n, priors="policy"),
            }
        )
    table_body = {
        "engine_config": cfg.as_dict(),
        "artifact_version": __version__,
        "split": args.split,
        "rows": rows,
    }
    with open(out_dir / "ablation.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(table_body, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print("search   policy         value          policy+value")
    print(" times   acc    edit    acc    edit    acc    edit")
    for row in rows:
        print(
            f"{row['search_times']:6d}  "
            f"{_metric_cell(row['policy'])}  {_metric_cell(row['value'])}  "
            f"{_metric_cell(row['combined'])}"
        )
    print(f"ablation table written to {out_dir / 'ablation.json'}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _label_files(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".csv", ".seq"))
        if not files:
            raise ValueError(f"no label files under {path}")
        return files
    return [path]


def cmd_eval(args) -> int:
    pred_files = _label_files(args.pred)
    gt_files = _label_files(args.gt)
    if len(pred_files) != len(gt_files):
        raise ValueError(
            f"{len(pred_files)} prediction files vs {len(gt_files)} ground-truth files"
        )
    reports = []
    for p, g in zip(pred_files, gt_files):
        reports.append(report(read_labels(p), read_labels(g)))
    aggregate = aggregate_reports(reports)
    payload = {
        "pairs": [
            {"pred": str(p), "gt": str(g), "metrics": r.as_dict()}
            for p, g, r in zip(pred_files, gt_files, reports)
        ],
        "aggregate": aggregate.as_dict(),
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app, load_bundle

    app = create_app(load_bundle(args.models))
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treeseg",
        description="Sequence segmentation with a policy network, value network and tree search.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic corpus")
    p.add_argument("--preset", choices=("easy", "hard"))
    p.add_argument("--out", type=Path)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--features", type=int, default=16)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--num-sequences", type=int, default=39)
    p.add_argument("--length-min", type=int, default=140)
    p.add_argument("--length-max", type=int, default=260)
    p.add_argument("--mean-segment", type=float, default=40.0)
    p.add_argument("--train-fraction", type=float, default=30 / 39)
    p.add_argument("--gen-seed", type=int, default=0, help="corpus generation seed")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("train-policy", help="train the policy network")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--exclude-group")
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--episodes-per-iteration", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=3e-3)
    p.add_argument("--log-every", type=int, default=20)
    _add_engine_flags(p)
    p.set_defaults(func=cmd_train_policy)

    p = sub.add_parser("train-value", help="train the value network")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--exclude-group")
    p.add_argument("--steps-per-stage", type=int, default=80)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--random-fraction", type=float, default=0.5)
    _add_engine_flags(p)
    p.set_defaults(func=cmd_train_value)

    p = sub.add_parser("run", help="segment a corpus and write the report")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("--split", default="test")
    p.add_argument("--exclude-group")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--priors", choices=("policy", "uniform"), default="policy")
    _add_engine_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="sweep tree-search times")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("--split", default="test")
    p.add_argument("--exclude-group")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--search-times", default="0,10,20,30,40")
    _add_engine_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="score predictions against ground truth", epilog=REFERENCE_NOTE)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve segmentation over HTTP")
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures exit 1, usage errors exit 2 via argparse
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
