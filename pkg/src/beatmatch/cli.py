"""Command-line entry point: ``beatmatch <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable audio,
manifest or checkpoint), 3 numeric failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import checkpoint
from .attention import CapacityError
from .audio import (DEFAULT_UNIT_SECONDS, AudioError, cut_times_to_labels, load_audio, read_manifest,
                    resolve_wav, split_time_units)
from .features import SOURCES, extract_inputs
from .metrics import evaluate, threshold_predictions
from .models import ModelConfig, build, desk_config, load_model, full_config, save_model
from .scope import DEFAULT_SIGMA, SIGMA_GRID, estimate_sigma, pn_table
from .synth import SynthSpec, generate_dataset
from .train import (NonFiniteLossError, TrainConfig, benchmark_throughput, desk_train_config, flops_estimate,
                    load_dataset, rows_to_csv, rows_to_text, run_ablation, split_dataset, train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("beatmatch")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class PredictionRecord:
    id: str
    unit_seconds: float
    probs: list
    cuts_s: list

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "unit_seconds": self.unit_seconds,
                           "probs": self.probs, "cuts_s": self.cuts_s})


def prediction_record(entry_id: str, probs: np.ndarray, unit_seconds: float, tau: float = 0.5) -> PredictionRecord:
    """Cut times are the start of each unit whose probability exceeds ``tau``.

    That is the time ``cut_times_to_labels`` maps back to the same unit, so
    the record round-trips to the thresholded labels exactly.
    """
    idx = np.flatnonzero(threshold_predictions(probs, tau))
    probs = np.asarray(probs, dtype=np.float64)
    return PredictionRecord(entry_id, unit_seconds, [float(p) for p in probs],
                            [round(float(i) * unit_seconds, 9) for i in idx])


def _write_text(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _model_config(args, kind=None) -> ModelConfig:
    preset = desk_config if args.preset == "desk" else full_config
    over = {"seed": args.seed}
    if getattr(args, "sources", None):
        over["sources"] = tuple(args.sources)
    if getattr(args, "k", None) is not None:
        over["k"] = args.k
    return preset(kind or args.kind, **over)


def _train_config(args) -> TrainConfig:
    base = desk_train_config() if args.preset == "desk" else TrainConfig()
    over = {"seed": args.seed}
    if args.config:
        blob = json.loads(Path(args.config).read_text())
        known = {f.name for f in fields(TrainConfig)}
        over.update({k: v for k, v in blob.items() if k in known})
    for flag, name in (("epochs", "epochs"), ("lr0", "lr0"), ("lr_period", "lr_period"),
                       ("batch_size", "batch_size"), ("sigma", "sigma_hat"), ("val_fraction", "val_fraction"),
                       ("tau", "tau"), ("weight_decay", "weight_decay")):
        value = getattr(args, flag)
        if value is not None:
            over[name] = value
    if args.no_scope:
        over["use_scope"] = False
    cfg = replace(base, **over)
    cfg.validate()
    return cfg


def _manifest_labels(manifest, unit_seconds: float) -> list[np.ndarray]:
    labels = []
    for e in read_manifest(manifest):
        seq = split_time_units(load_audio(resolve_wav(manifest, e)), unit_seconds)
        labels.append(cut_times_to_labels(e.cuts_s, seq))
    return labels


# ---------------------------------------------------------------- subcommands


def cmd_synth(args) -> int:
    spec = SynthSpec(n_audios=args.n, duration_range=(args.min_duration, args.max_duration),
                     tempo_range=(args.min_tempo, args.max_tempo), beats_per_bar=args.beats_per_bar,
                     cut_fraction=args.cut_fraction, max_cuts=args.max_cuts, noise_level=args.noise,
                     gain_range=(args.min_gain, args.max_gain), accent=args.accent, phase_s=args.phase,
                     seed=args.seed)
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(generate_dataset(spec, args.out))
    return EXIT_OK


def cmd_featurize(args) -> int:
    tensors = {}
    if args.wav:
        seq = split_time_units(load_audio(args.wav), args.unit_seconds)
        feats = extract_inputs(seq)
        tensors.update(mel=feats.mel, energy=feats.energy, raw=feats.raw)
    else:
        for e in read_manifest(args.manifest):
            seq = split_time_units(load_audio(resolve_wav(args.manifest, e)), args.unit_seconds)
            feats = extract_inputs(seq)
            for name in SOURCES:
                tensors[f"{e.id}/{name}"] = getattr(feats, name)
    checkpoint.save(args.out, tensors)
    print(args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    mcfg = _model_config(args)
    tcfg = _train_config(args)
    data = load_dataset(args.manifest, mcfg)
    if args.val_manifest:
        train_set, val_set = data, load_dataset(args.val_manifest, mcfg)
    else:
        train_set, val_set = split_dataset(data, tcfg.val_fraction, tcfg.seed)
    model = build(mcfg)
    _, history = train(model, train_set, val_set, tcfg)
    save_model(model, args.out)
    _write_text(args.history or f"{args.out}.history.jsonl", history.to_jsonl())
    print(args.out)
    return EXIT_OK


def _read_predictions(path) -> dict[str, np.ndarray]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["id"]] = np.asarray(rec["probs"], dtype=np.float64)
    return out


def cmd_eval(args) -> int:
    entries = read_manifest(args.manifest)
    if args.predictions:
        preds = _read_predictions(args.predictions)
        unit_seconds = args.unit_seconds
    else:
        model = load_model(args.checkpoint)
        unit_seconds = model.config.unit_seconds
        preds = {}
        for e in entries:
            preds[e.id] = model.predict(split_time_units(load_audio(resolve_wav(args.manifest, e)), unit_seconds))
    labels, probs = [], []
    for e in entries:
        if e.id not in preds:
            raise ValueError(f"no prediction for audio {e.id!r}")
        seq = split_time_units(load_audio(resolve_wav(args.manifest, e)), unit_seconds)
        y = cut_times_to_labels(e.cuts_s, seq)
        if len(preds[e.id]) != len(y):
            raise ValueError(f"audio {e.id!r}: {len(preds[e.id])} probabilities for {len(y)} units")
        labels.append(y)
        probs.append(preds[e.id])
    report = evaluate(labels, probs, args.tau)
    if args.out:
        _write_text(args.out, json.dumps(report.to_dict(), sort_keys=True) + "\n")
    sys.stdout.write(report.table(args.name) + "\n")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.checkpoint)
    u = model.config.unit_seconds
    if args.wav:
        items = [(Path(args.wav).stem, Path(args.wav))]
    else:
        items = [(e.id, resolve_wav(args.manifest, e)) for e in read_manifest(args.manifest)]
    lines = []
    for aid, path in items:
        probs = model.predict(split_time_units(load_audio(path, model.config.sample_rate), u))
        lines.append(prediction_record(aid, probs, u, args.tau).to_json())
    _write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_pn_ratio(args) -> int:
    labels = _manifest_labels(args.manifest, args.unit_seconds)
    rows = pn_table(labels, SIGMA_GRID)
    print(f"{'sigma':>6}  {'PN':>8}")
    for sigma, ratio in rows:
        print(f"{sigma:>6.1f}  {ratio:>8.4f}")
    print(f"estimated sigma: {estimate_sigma(labels, SIGMA_GRID):.1f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    print(f"{'depth':>5}  {'units/s':>10}")
    for depth in args.depths:
        cfg = replace(_model_config(args, "beatx"), lcg_layers=depth)
        speed = benchmark_throughput(build(cfg), [args.units], args.repeats)[args.units]
        print(f"{depth:>5}  {speed:>10.2f}")
    base = _model_config(args, "beatx")
    print(f"{'k':>5}  {'GFLOPs':>10}")
    for k in args.ks:
        print(f"{k:>5}  {flops_estimate(base, args.units, k):>10.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    try:
        grid = json.loads(args.grid)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--grid is not valid JSON: {exc}") from exc
    if not isinstance(grid, dict):
        raise UsageError("--grid must be a JSON object of lists")
    mcfg = _model_config(args)
    tcfg = _train_config(args)
    train_set, val_set = split_dataset(load_dataset(args.manifest, mcfg), tcfg.val_fraction, tcfg.seed)
    rows = run_ablation(grid, mcfg, tcfg, train_set, val_set)
    if args.csv:
        _write_text(args.csv, rows_to_csv(rows))
    sys.stdout.write(rows_to_text(rows))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_model_flags(p, kind=True):
    p.add_argument("--preset", choices=("desk", "full"), default="desk", help="model and schedule sizes")
    if kind:
        p.add_argument("--kind", choices=("beatx", "linear", "cnn1d", "encoder"), default="beatx")
    p.add_argument("--sources", nargs="+", choices=SOURCES, help="active feature sources")
    p.add_argument("--k", type=int, help="local context radius")
    p.add_argument("--seed", type=int, default=0)


def _add_train_flags(p):
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--lr-period", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--sigma", type=float, help=f"label scope radius (default {DEFAULT_SIGMA})")
    p.add_argument("--no-scope", action="store_true", help="plain mean BCE")
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--tau", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="beatmatch", description="Cut-point prediction for background music.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    d = SynthSpec()
    p = sub.add_parser("synth", help="generate a synthetic labelled click-track dataset")
    p.add_argument("--n", type=int, default=d.n_audios, help="number of audios")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--min-duration", type=float, default=d.duration_range[0])
    p.add_argument("--max-duration", type=float, default=d.duration_range[1])
    p.add_argument("--min-tempo", type=float, default=d.tempo_range[0])
    p.add_argument("--max-tempo", type=float, default=d.tempo_range[1])
    p.add_argument("--beats-per-bar", type=int, default=d.beats_per_bar)
    p.add_argument("--cut-fraction", type=float, default=d.cut_fraction)
    p.add_argument("--max-cuts", type=int, default=d.max_cuts)
    p.add_argument("--noise", type=float, default=d.noise_level)
    p.add_argument("--min-gain", type=float, default=d.gain_range[0])
    p.add_argument("--max-gain", type=float, default=d.gain_range[1])
    p.add_argument("--accent", type=float, default=d.accent)
    p.add_argument("--phase", type=float, default=None, help="first downbeat time in seconds (default random)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="write per-unit descriptors to a tensor container")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--wav")
    src.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--unit-seconds", type=float, default=DEFAULT_UNIT_SECONDS)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest", help="separate validation set (default: split --manifest)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="history JSON-lines path (default <out>.history.jsonl)")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions against a manifest")
    p.add_argument("--manifest", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--predictions", help="JSON-lines with id and probs")
    src.add_argument("--checkpoint")
    p.add_argument("--unit-seconds", type=float, default=DEFAULT_UNIT_SECONDS)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--name", default="model", help="row label in the table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="per-unit probabilities and cut times")
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--wav")
    src.add_argument("--manifest")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--out", default="-", help="JSON-lines output (default stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("pn-ratio", help="mean PN ratio over the sigma grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--unit-seconds", type=float, default=DEFAULT_UNIT_SECONDS)
    p.set_defaults(func=cmd_pn_ratio)

    p = sub.add_parser("bench", help="throughput by attention depth and GFLOPs by k")
    _add_model_flags(p, kind=False)
    p.add_argument("--depths", type=int, nargs="+", default=[2, 4, 8])
    p.add_argument("--ks", type=int, nargs="+", default=[1, 3, 5, 7, 9])
    p.add_argument("--units", type=int, default=600)
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="train one model per grid point")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", required=True, help='JSON object, e.g. \'{"use_scope": [true, false]}\'')
    p.add_argument("--csv", help="also write the table as CSV")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"beatmatch {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLossError, FloatingPointError) as exc:
        print(f"beatmatch {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (AudioError, checkpoint.CheckpointError, CapacityError, OSError, ValueError, KeyError) as exc:
        print(f"beatmatch {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
