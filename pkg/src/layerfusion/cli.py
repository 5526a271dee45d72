"""Command-line interface.

Exit codes: 0 success, 2 invalid arguments or inputs, 3 unreadable files.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, container, report as reporting
from .data import load_csv_dataset, synth_dataset
from .errors import FormatError, ValidationError
from .fusion import STRATEGIES, fuse, select_top_k
from .metrics import METRICS, MODES, SimilarityReport, pairwise_distances
from .net import accuracy, init_model
from .retrain import COMPRESSORS, SCHEDULE_MODES, TrainReport, compress_retrain, make_schedule
from .training import fit

EXIT_OK, EXIT_VALIDATION, EXIT_FORMAT = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _fraction(text):
    value = float(text)
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1)")
    return value


def _probability(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return value


def _hidden(text):
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad layer widths {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError(f"bad layer widths {text!r}")
    return sizes


def _add_data_args(p):
    p.add_argument("--data", default="blobs", help="blobs, rings or csv:PATH")
    p.add_argument("--n-per-class", type=int, default=50)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--data-noise", type=float, default=0.1)
    p.add_argument("--data-seed", type=int, default=0)


def _load_data(args):
    if args.data.startswith("csv:"):
        path = args.data[4:]
        if not Path(path).exists():
            raise FormatError(f"no such dataset file: {path}")
        return load_csv_dataset(path)
    return synth_dataset(args.data, args.n_per_class, args.classes, args.data_noise,
                         args.data_seed)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="layerfusion", description=__doc__.splitlines()[0])
    parser.add_argument("--no-figures", action="store_true",
                        help="skip the PNG figures written next to reports")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("similarity", help="pairwise layer distances as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--metric", choices=METRICS, default="bures_ws2")
    p.add_argument("--mode", choices=MODES, default="global")
    p.add_argument("--order", type=float, default=1.0, help="Wasserstein order for exact_ws")
    p.add_argument("--ridge", type=float, default=1e-4, help="CCA ridge")
    p.add_argument("--fusable-only", action="store_true")
    p.add_argument("--include-io", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("fuse", help="merge the most similar layers")
    p.add_argument("--model", required=True)
    p.add_argument("--metric", choices=METRICS, default="bures_ws2")
    p.add_argument("--mode", choices=MODES, default="global")
    p.add_argument("--fraction", type=_fraction, required=True)
    p.add_argument("--strategy", choices=STRATEGIES, default="mean")
    p.add_argument("--mix-probability", type=_probability, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--include-io", action="store_true")
    p.add_argument("--plan", help="also write the fusion plan as JSON")
    p.add_argument("--out", required=True)

    p = sub.add_parser("prune", help="magnitude pruning")
    p.add_argument("--model", required=True)
    p.add_argument("--scope", choices=("layer", "global"), default="layer")
    p.add_argument("--fraction", type=_fraction, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("quantize", help="k-means weight sharing")
    p.add_argument("--model", required=True)
    p.add_argument("--fraction", type=_probability, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--out", required=True)

    p = sub.add_parser("svd", help="randomised truncated SVD of every layer")
    p.add_argument("--model", required=True)
    p.add_argument("--rank-fraction", type=_probability, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oversample", type=int, default=8)
    p.add_argument("--rollout", action="store_true",
                   help="refit layers bottom-to-top on --data activations")
    _add_data_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("dae", help="denoising-autoencoder student rollout")
    p.add_argument("--model", required=True)
    p.add_argument("--hidden-fraction", type=_probability, required=True)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    _add_data_args(p)
    p.add_argument("--out", required=True)

    for name in ("train", "compress-retrain"):
        p = sub.add_parser(name, help="train a model" if name == "train"
                           else "iterative compression with retraining")
        p.add_argument("--model", help="starting model (default: fresh random init)")
        p.add_argument("--hidden", type=_hidden, default=[32, 32, 32, 32])
        p.add_argument("--activation", choices=("tanh", "relu"), default="tanh")
        p.add_argument("--epochs", type=int, default=200 if name == "train" else 20)
        p.add_argument("--lr", type=float, default=0.05)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--seed", type=int, default=0)
        _add_data_args(p)
        p.add_argument("--out", required=True)
        p.add_argument("--report", help="CSV report path; JSON and PNG are written alongside")
        if name == "compress-retrain":
            p.add_argument("--compressor", choices=COMPRESSORS, required=True)
            p.add_argument("--schedule", choices=SCHEDULE_MODES, default="uniform")
            p.add_argument("--total-fraction", type=_fraction, required=True)
            p.add_argument("--steps", type=int, default=1)
            p.add_argument("--metric", choices=METRICS, default="bures_ws2")
            p.add_argument("--mode", choices=MODES, default="global")
            p.add_argument("--include-io", action="store_true")

    p = sub.add_parser("report", help="heatmap JSON (and PNG) from a similarity CSV")
    p.add_argument("--heatmap", required=True, help="similarity CSV")
    p.add_argument("--n-layers", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--out", required=True)
    return parser


def _read_model(path):
    return container.load_model(path)


def _weight_dtype(path):
    entries, _ = container.load_container(path)
    return next((e.dtype for e in entries if e.role == "weight"), "f64")


def _sibling(path, suffix):
    return Path(path).with_suffix(suffix)


def cmd_similarity(args):
    model = _read_model(args.model)
    rep = pairwise_distances(model, args.metric, args.mode, fusable_only=args.fusable_only,
                             include_io=args.include_io, p=args.order, ridge=args.ridge)
    container.atomic_write(args.out, rep.to_csv())


def cmd_fuse(args):
    raw = Path(args.model).read_bytes()
    entries, loss = container.decode(raw)
    model = container.entries_to_model(entries, loss)
    rep = pairwise_distances(model, args.metric, args.mode, fusable_only=True,
                             include_io=args.include_io)
    if args.fraction == 0.0 or not rep.pairs():
        plan = None
        out_bytes = raw
    else:
        plan = select_top_k(rep, args.fraction, model=model, strategy=args.strategy,
                            seed=args.seed, mix_probability=args.mix_probability)
        fused = fuse(model, plan).model
        out_bytes = container.encode(container.model_entries(fused, _weight_dtype(args.model)),
                                     fused.loss)
    plan_text = None
    if args.plan:
        plan_text = plan.to_json() if plan else json.dumps(
            {"strategy": args.strategy, "fraction": args.fraction, "seed": args.seed,
             "pairs": []}, indent=2) + "\n"
    container.atomic_write(args.out, out_bytes)
    if plan_text is not None:
        container.atomic_write(args.plan, plan_text)
    _info(f"{len(model)} -> {len(container.entries_to_model(*container.decode(out_bytes)))} layers")


def cmd_prune(args):
    model = _read_model(args.model)
    pruned, mask = baselines.prune(model, args.scope, args.fraction)
    container.save_model(pruned, args.out, _weight_dtype(args.model), masks=mask.as_dict())
    _info(f"sparsity {mask.sparsity():.4f}")


def cmd_quantize(args):
    model = _read_model(args.model)
    if args.fraction == 0.0:
        raise ValidationError("quantization fraction must be positive")
    quant, book = baselines.kmeans_quantize(model, args.fraction, args.seed, args.max_iters)
    container.save_model(quant, args.out, _weight_dtype(args.model),
                         codebooks=dict(enumerate(book.centroids)))
    _info("clusters per layer: " + ",".join(str(c.size) for c in book.centroids))


def cmd_svd(args):
    model = _read_model(args.model)
    data = _load_data(args) if args.rollout else None
    out, factors = baselines.truncated_svd_compress(model, args.rank_fraction, args.seed,
                                                    args.oversample, data=data)
    container.save_model(out, args.out, _weight_dtype(args.model))
    ranks = [str(f.rank) if f is not None else "-" for f in factors]
    _info(f"ranks: {','.join(ranks)}; params {model.n_params} -> {out.n_params}")


def cmd_dae(args):
    model = _read_model(args.model)
    data = _load_data(args)
    student, rollout = baselines.dae_rollout(model, data, args.hidden_fraction, args.epochs,
                                             args.noise, args.seed, args.lr)
    container.save_model(student, args.out, _weight_dtype(args.model))
    _info(f"output MSE teacher vs student: {rollout.output_mse:.6g}")


def _start_model(args, data):
    if args.model:
        return _read_model(args.model)
    sizes = [data.inputs.shape[1], *args.hidden, data.targets.shape[1]]
    return init_model(sizes, args.activation, seed=args.seed)


def _write_report(args, rep: TrainReport):
    if not args.report:
        return
    outputs = [(args.report, rep.to_csv()), (_sibling(args.report, ".json"), rep.to_json())]
    for path, text in outputs:
        container.atomic_write(path, text)
    if not args.no_figures:
        reporting.plot_training(rep, _sibling(args.report, ".png"))


def cmd_train(args):
    data = _load_data(args)
    model = _start_model(args, data)
    schedule = make_schedule(0.0, 1, "uniform", args.epochs)
    trained, rep = compress_retrain(model, data, "prune-layer", schedule, args.seed,
                                    lr=args.lr, batch_size=args.batch_size)
    rep.compressor = "none"
    container.save_model(trained, args.out)
    _write_report(args, rep)
    if data.labels is not None:
        _info(f"train accuracy {accuracy(trained, data):.4f}")


def cmd_compress_retrain(args):
    data = _load_data(args)
    model = _start_model(args, data)
    schedule = make_schedule(args.total_fraction, args.steps, args.schedule, args.epochs)
    out, rep = compress_retrain(model, data, args.compressor, schedule, args.seed,
                                lr=args.lr, metric=args.metric, mode=args.mode,
                                include_io=args.include_io, batch_size=args.batch_size)
    container.save_model(out, args.out)
    _write_report(args, rep)
    fractions = ",".join(f"{f:.4f}" for f in schedule.fractions)
    _info(f"step fractions {fractions}; final accuracy {rep.final_accuracy:.4f}")


def cmd_report(args):
    text = Path(args.heatmap).read_text()
    rep = SimilarityReport.from_csv(text, args.n_layers, args.mode)
    container.atomic_write(args.out, reporting.heatmap_json(rep))
    if not args.no_figures:
        reporting.plot_heatmap(rep, _sibling(args.out, ".png"))


def _info(message):
    print(message, file=sys.stderr)


COMMANDS = {
    "similarity": cmd_similarity,
    "fuse": cmd_fuse,
    "prune": cmd_prune,
    "quantize": cmd_quantize,
    "svd": cmd_svd,
    "dae": cmd_dae,
    "train": cmd_train,
    "compress-retrain": cmd_compress_retrain,
    "report": cmd_report,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    return EXIT_OK


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
