"""Command-line entry point: simulate, train, sample, evaluate.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
Every command is deterministic given its inputs and seed; output files carry
no timestamps, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import sys

from . import autodiff, checkpoint as ckpt_mod, config as config_mod
from . import data as data_mod
from . import hawkes as hawkes_mod
from . import metrics as metrics_mod
from . import sampling as sampling_mod
from . import training as training_mod
from .errors import ConfigError, NumericError
from .model import Model


def _common_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--profile", help=f"named profile: {', '.join(sorted(config_mod.PROFILES))}")
    sub.add_argument("--seed", type=int, help="master seed (feeds per-section seeds)")


def _resolve(args, extra: dict | None = None) -> config_mod.RunConfig:
    overrides = dict(extra or {})
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return config_mod.resolve(profile=getattr(args, "profile", None),
                              config_path=getattr(args, "config", None),
                              overrides=overrides)


def cmd_simulate(args) -> int:
    params = hawkes_mod.load_params(args.params)
    params.require_stationary()
    dataset = hawkes_mod.simulate_dataset(params, args.t_max, args.count,
                                          args.seed if args.seed is not None else 0)
    data_mod.write_sequences(args.out, dataset)
    num_types, num_events, avg_len = data_mod.dataset_stats(dataset)
    print(f"sequences={len(dataset)} num_types={num_types} "
          f"num_events={num_events} avg_length={avg_len:.2f}")
    return 0


def _load_splits(cfg: config_mod.RunConfig):
    if cfg["data.train"]:
        train = data_mod.load_sequences(cfg["data.train"], "train")
        dev = data_mod.load_sequences(cfg["data.dev"], "dev") if cfg["data.dev"] else \
            data_mod.Dataset((), train.num_types, "dev")
        test = data_mod.load_sequences(cfg["data.test"], "test") if cfg["data.test"] else \
            data_mod.Dataset((), train.num_types, "test")
        return train, dev, test
    if not cfg["data.path"]:
        raise ConfigError("no data: set data.path (or --data) or data.train")
    full = data_mod.load_sequences(cfg["data.path"])
    ratios = (cfg["data.split_train"], cfg["data.split_dev"], cfg["data.split_test"])
    return data_mod.split(full, ratios, cfg["data.split_seed"])


def cmd_train(args) -> int:
    extra = {}
    if args.data:
        extra["data.path"] = args.data
    if args.epochs is not None:
        extra["train.epochs"] = args.epochs
    cfg = _resolve(args, extra)
    train_split, dev_split, _ = _load_splits(cfg)
    num_types = cfg["model.num_types"] or train_split.num_types
    model_config = cfg.model_config(num_types=num_types)
    train_config = cfg.train_config()
    print(config_mod.format_config(cfg), end="")

    normalizer = data_mod.fit_normalizer(train_split, cfg["data.normalizer"],
                                         cfg["data.scale_kind"])
    train_seqs = [normalizer.apply_sequence(s) for s in train_split.sequences]
    dev_seqs = [normalizer.apply_sequence(s) for s in dev_split.sequences]
    model = Model.create(model_config, seed=train_config.seed)

    log_path = str(args.out) + ".log"
    log_fh = open(log_path, "w", encoding="utf-8", newline="\n")

    def save(result: training_mod.TrainResult) -> None:
        ckpt_mod.save_checkpoint(args.out, ckpt_mod.Checkpoint(
            model_config=model_config, params=model.params, normalizer=normalizer,
            train_config=train_config, epoch=result.epoch,
            prior_max=result.prior_max, adam=result.adam))

    def on_epoch(result: training_mod.TrainResult, train_loss: float, dev_loss: float) -> None:
        line = f"epoch {result.epoch} train={train_loss:.6f} dev={dev_loss:.6f}"
        log_fh.write(line + "\n")
        log_fh.flush()
        print(line)
        save(result)

    try:
        result = training_mod.train(model, train_seqs, dev_seqs, train_config,
                                    on_epoch=on_epoch)
        if result.epoch == 0:
            save(result)
    finally:
        log_fh.close()
    print(f"checkpoint written to {args.out}")
    return 0


def cmd_sample(args) -> int:
    extra = {}
    if args.algorithm:
        extra["sample.algorithm"] = args.algorithm
    if args.num_samples is not None:
        extra["sample.num_samples"] = args.num_samples
    if args.threads is not None:
        extra["sample.threads"] = args.threads
    cfg = _resolve(args, extra)
    ck = ckpt_mod.load_checkpoint(args.checkpoint)
    for key in cfg.explicit:
        if key.startswith("model."):
            echoed = getattr(ck.model_config, key.split(".", 1)[1])
            if cfg[key] != echoed:
                raise ConfigError(f"{key}={cfg[key]} conflicts with checkpoint echo {echoed}")
    model = ck.to_model()
    sampler_config = cfg.sampler_config(prior_max=ck.prior_max,
                                        sigma=ck.train_config.sigma)
    dataset = data_mod.load_sequences(args.data, "test")
    if dataset.num_types > ck.model_config.num_types:
        raise ConfigError(f"data declares {dataset.num_types} types, checkpoint "
                          f"model has {ck.model_config.num_types}")
    records, diag = sampling_mod.sample_dataset(model, ck.normalizer, dataset, sampler_config)
    sampling_mod.write_samples(args.out, records)
    print(f"events={diag.num_records} samples_per_event={sampler_config.num_samples} "
          f"clamped={diag.num_clamped}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve(args)
    records = sampling_mod.read_samples(args.samples)
    truths, samples, true_types, sampled_types = sampling_mod.records_to_arrays(records)
    report = metrics_mod.compute_report(truths, samples, true_types, sampled_types,
                                        grid=cfg.quantile_grid())
    report_text = metrics_mod.format_report(report)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report_text)
    curves_path = str(args.out) + ".curves.csv"
    with open(curves_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(metrics_mod.format_curves(report))
    print(report_text, end="")
    print(f"curves written to {curves_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smtpp",
        description="Score-matching training, Langevin sampling, and calibration "
                    "metrics for transformer Hawkes processes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a Hawkes corpus (sequence file)")
    p.add_argument("--params", required=True, help="Hawkes parameter file (JSON: mu, alpha, beta)")
    p.add_argument("--t-max", type=float, required=True, help="horizon per sequence")
    p.add_argument("--count", type=int, required=True, help="number of sequences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output sequence file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a model, writing a checkpoint per epoch")
    _common_config_flags(p)
    p.add_argument("--data", help="sequence file (split per data.split_* ratios)")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--out", required=True, help="checkpoint path (+ .log loss log)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw arrival-time samples for every event")
    _common_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="sequence file with true histories")
    p.add_argument("--algorithm", choices=sampling_mod.ALGORITHMS)
    p.add_argument("--num-samples", type=int, help="samples per event (U)")
    p.add_argument("--threads", type=int, help="worker threads over sequences")
    p.add_argument("--out", required=True, help="output sample file")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="compute calibration metrics from a sample file")
    _common_config_flags(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True, help="report path (+ .curves.csv)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:       # argparse usage errors exit with 2
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, autodiff.GraphError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
