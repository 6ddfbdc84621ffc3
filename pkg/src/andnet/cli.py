"""Command-line interface.

Subcommands: ``train``, ``eval``, ``attack``, ``export-features`` and
``diagnose``.  Options can come from an INI-style config file
(``--config``); explicit command-line flags override file values, and
the fully resolved configuration is echoed before work starts.

Exit codes: 0 success, 1 usage error (bad flags, unknown config keys),
2 data error (missing or malformed data/checkpoint files), 3 training
diverged.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys

import numpy as np

from . import attacks, dataset, measures, network, pgm, scramble, training
from .numerics import RngStream

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse reports usage problems with exit code 2; we reserve that
    for data errors, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# Recognized config-file keys per section, with parsers.
def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text):
    return tuple(int(p) for p in text.replace(",", " ").split())


def _parse_float_list(text):
    return tuple(float(p) for p in text.replace(",", " ").split())


CONFIG_SCHEMA = {
    "train": {
        "epochs": int,
        "batch_size": int,
        "learning_rate": float,
        "lambda_mix": float,
        "seed": int,
        "defense": _parse_bool,
        "layer_sizes": _parse_int_list,
        "filter_center": float,
        "sds_examples": int,
        "checkpoint_every": int,
    },
    "data": {"data_dir": str},
    "attack": {
        "attack": str,
        "epsilons": _parse_float_list,
        "steps": int,
        "step_size": float,
    },
    "output": {"out_dir": str, "checkpoint": str},
}


def load_config_file(path):
    """Parse an INI config file against the known schema."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise UsageError(f"malformed config file {path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in CONFIG_SCHEMA:
            raise UsageError(
                f"{path}: unknown section [{section}] "
                f"(known: {', '.join(sorted(CONFIG_SCHEMA))})"
            )
        for key, raw in parser.items(section):
            if key not in CONFIG_SCHEMA[section]:
                raise UsageError(
                    f"{path}: unknown key {key!r} in [{section}] "
                    f"(known: {', '.join(sorted(CONFIG_SCHEMA[section]))})"
                )
            try:
                values[key] = CONFIG_SCHEMA[section][key](raw)
            except ValueError as exc:
                raise UsageError(f"{path}: bad value for {key!r}: {exc}") from exc
    return values


def _resolve(args, file_values, key, default):
    """Explicit flag > config file > default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_values:
        return file_values[key]
    return default


def _echo_config(name, pairs):
    print(f"[{name}]")
    for key, value in pairs:
        print(f"  {key} = {value}")


def build_parser():
    parser = _Parser(prog="andnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--data-dir", dest="data_dir", help="directory of IDX files")
    common.add_argument("--out", dest="out_dir", help="output directory")

    p_train = sub.add_parser("train", parents=[common], help="train a network")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--lr", dest="learning_rate", type=float)
    p_train.add_argument("--lambda-mix", dest="lambda_mix", type=float)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--defense", choices=["on", "off"])
    p_train.add_argument(
        "--layer-sizes",
        dest="layer_sizes",
        help="comma-separated sizes, input first (default 784,512,384,256,10)",
    )
    p_train.add_argument("--filter-center", dest="filter_center", type=float)
    p_train.add_argument("--sds-examples", dest="sds_examples", type=int)
    p_train.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)

    p_eval = sub.add_parser("eval", parents=[common], help="clean test accuracy")
    p_eval.add_argument("--checkpoint", help="checkpoint file (.npz)")
    p_eval.add_argument("--split", choices=["train", "test"], default="test")

    p_attack = sub.add_parser(
        "attack", parents=[common], help="accuracy under FGSM/PGD"
    )
    p_attack.add_argument("--checkpoint", help="checkpoint file (.npz)")
    p_attack.add_argument("--attack", choices=list(attacks.ATTACK_KINDS))
    p_attack.add_argument(
        "--epsilons", help="comma-separated budgets (default 0.05..0.30)"
    )
    p_attack.add_argument("--steps", type=int)
    p_attack.add_argument("--step-size", dest="step_size", type=float)
    p_attack.add_argument(
        "--dump-flips",
        dest="dump_flips",
        type=int,
        default=0,
        help="export up to N flipped examples per epsilon as PGM",
    )
    p_attack.add_argument(
        "--limit", type=int, default=0, help="attack only the first N examples"
    )

    p_export = sub.add_parser(
        "export-features", parents=[common], help="neuron weight images + measures"
    )
    p_export.add_argument("--checkpoint", help="checkpoint file (.npz)")
    p_export.add_argument(
        "--layer", type=int, default=1, help="hidden layer to export (1-based)"
    )
    p_export.add_argument(
        "--allow-strips",
        dest="allow_strips",
        action="store_true",
        help="permit layers beyond 1 (weights exported as 1-pixel-high strips "
        "when the fan-in is not square)",
    )
    p_export.add_argument(
        "--batch-size",
        dest="batch_size",
        type=int,
        default=100,
        help="examples used for the measures",
    )
    p_export.add_argument("--seed", type=int, default=0)

    p_diag = sub.add_parser(
        "diagnose", parents=[common], help="contribution histograms, real vs scrambled"
    )
    p_diag.add_argument("--checkpoint", help="checkpoint file (.npz)")
    p_diag.add_argument("--bins", type=int, default=40)
    p_diag.add_argument(
        "--batch-size",
        dest="batch_size",
        type=int,
        default=0,
        help="examples used for the histograms (0 = whole test set)",
    )
    p_diag.add_argument("--seed", type=int, default=0)

    return parser


def _require_data_dir(args, file_values):
    data_dir = _resolve(args, file_values, "data_dir", None)
    if not data_dir:
        raise UsageError("no data directory: pass --data-dir or set [data] data_dir")
    return data_dir


def _require_checkpoint(args, file_values):
    path = getattr(args, "checkpoint", None) or file_values.get("checkpoint")
    if not path:
        raise UsageError("no checkpoint: pass --checkpoint or set [output] checkpoint")
    return path


def cmd_train(args, file_values):
    data_dir = _require_data_dir(args, file_values)
    out_dir = _resolve(args, file_values, "out_dir", ".")
    layer_sizes = _resolve(args, file_values, "layer_sizes", None)
    if isinstance(layer_sizes, str):
        layer_sizes = _parse_int_list(layer_sizes)
    defense = _resolve(args, file_values, "defense", True)
    if isinstance(defense, str):
        defense = defense == "on"
    overrides = {}
    for key in (
        "epochs",
        "batch_size",
        "learning_rate",
        "lambda_mix",
        "filter_center",
        "sds_examples",
        "seed",
        "checkpoint_every",
    ):
        value = _resolve(args, file_values, key, None)
        if value is not None:
            overrides[key] = value
    if defense and "learning_rate" not in overrides:
        # Defended runs need a larger step than the plain-SGD default;
        # the user can still pin one via --lr or the config file.
        overrides["learning_rate"] = training.DEFENDED_LEARNING_RATE
    config = training.TrainConfig(
        layer_sizes=layer_sizes or network.DEFAULT_LAYER_SIZES, **overrides
    )
    if not defense:
        config = config.defense_off()
    _echo_config(
        "train",
        [
            ("data_dir", data_dir),
            ("out_dir", out_dir),
            ("defense", "on" if defense else "off"),
        ]
        + sorted(vars(config).items()),
    )
    train_set = dataset.load_mnist(data_dir, "train")
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    checkpoint_path = os.path.join(out_dir, "model.npz")

    def on_epoch(m):
        print(
            f"epoch {m.epoch:4d}  ce {m.ce_loss:.4f}  loss2 {m.loss2:.4f}  "
            f"hysp {m.mean_hysp:.4f}  sat {m.mean_sat:.4f}  "
            f"acc {m.train_accuracy:.4f}"
        )

    params, _ = training.train(
        config,
        train_set,
        metrics_path=metrics_path,
        checkpoint_path=checkpoint_path,
        on_epoch=on_epoch,
    )
    print(f"checkpoint written to {checkpoint_path}")
    print(f"metrics written to {metrics_path}")
    return EXIT_OK


def cmd_eval(args, file_values):
    data_dir = _require_data_dir(args, file_values)
    ckpt = _require_checkpoint(args, file_values)
    out_dir = _resolve(args, file_values, "out_dir", ".")
    params, meta = network.load_checkpoint(ckpt)
    _echo_config(
        "eval",
        [
            ("checkpoint", ckpt),
            ("config_hash", meta["config_hash"]),
            ("data_dir", data_dir),
            ("split", args.split),
        ],
    )
    data = dataset.load_mnist(data_dir, args.split)
    pred = network.predict(params, data.images)
    n_correct = int((pred == data.labels).sum())
    accuracy = n_correct / data.n
    print(f"{args.split} accuracy: {accuracy:.4f} ({n_correct}/{data.n})")
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "eval.csv")
    with open(out_path, "w", newline="") as fh:
        fh.write("# andnet eval v1\n")
        fh.write("split,n_examples,n_correct,accuracy\n")
        fh.write(f"{args.split},{data.n},{n_correct},{accuracy:.9g}\n")
    print(f"report written to {out_path}")
    return EXIT_OK


def cmd_attack(args, file_values):
    data_dir = _require_data_dir(args, file_values)
    ckpt = _require_checkpoint(args, file_values)
    out_dir = _resolve(args, file_values, "out_dir", ".")
    kind = _resolve(args, file_values, "attack", "fgsm")
    epsilons = _resolve(args, file_values, "epsilons", None)
    if isinstance(epsilons, str):
        epsilons = _parse_float_list(epsilons)
    if epsilons is None:
        epsilons = attacks.DEFAULT_EPSILONS
    steps = _resolve(args, file_values, "steps", 40)
    step_size = _resolve(args, file_values, "step_size", None)
    if kind not in attacks.ATTACK_KINDS:
        raise UsageError(f"unknown attack {kind!r}; choose from {attacks.ATTACK_KINDS}")
    # Always include the clean baseline, once, in ascending order.
    grid = sorted(set([0.0] + [float(e) for e in epsilons]))
    params, meta = network.load_checkpoint(ckpt)
    _echo_config(
        "attack",
        [
            ("checkpoint", ckpt),
            ("config_hash", meta["config_hash"]),
            ("data_dir", data_dir),
            ("attack", kind),
            ("epsilons", ",".join(f"{e:g}" for e in grid)),
            ("steps", steps),
            ("step_size", step_size if step_size is not None else "2.5*eps/steps"),
        ],
    )
    data = dataset.load_mnist(data_dir, "test")
    if args.limit:
        data = data.subset(slice(0, args.limit))
    report = attacks.attack_sweep(
        params,
        data,
        kind,
        grid,
        steps=steps,
        step_size=step_size,
        max_flips=args.dump_flips,
    )
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "robustness.csv")
    report.write_csv(out_path)
    for row in report.rows:
        print(
            f"{row.attack}  eps={row.epsilon:<5g} accuracy {row.accuracy:.4f} "
            f"({row.n_correct}/{row.n_examples})"
        )
    print(f"report written to {out_path}")
    side = int(math.isqrt(data.images.shape[1]))
    for flip in report.flips:
        name = (
            f"flip_{flip.attack}_eps{flip.epsilon:g}_idx{flip.index}"
            f"_{flip.true_label}to{flip.adversarial_label}.pgm"
        )
        pgm.write_pgm(
            os.path.join(out_dir, name),
            flip.adversarial_image.reshape(side, side),
        )
    if report.flips:
        print(f"wrote {len(report.flips)} flipped examples to {out_dir}")
    return EXIT_OK


def _scaled_image(vector, side):
    """Min-max scale a weight vector onto [0, 1] for image export.

    ``side`` of None keeps the flat vector (caller reshapes); a constant
    vector degenerates to uniform mid-gray.
    """
    lo = float(vector.min())
    hi = float(vector.max())
    if hi - lo < 1e-30:
        scaled = np.full(vector.shape, 0.5)
    else:
        scaled = (vector - lo) / (hi - lo)
    return scaled if side is None else scaled.reshape(side, side)


def cmd_export_features(args, file_values):
    data_dir = _require_data_dir(args, file_values)
    ckpt = _require_checkpoint(args, file_values)
    out_dir = _resolve(args, file_values, "out_dir", ".")
    params, meta = network.load_checkpoint(ckpt)
    n_hidden = params.n_layers - 1
    if not 1 <= args.layer <= n_hidden:
        raise UsageError(f"--layer must be in 1..{n_hidden}, got {args.layer}")
    if args.layer != 1 and not args.allow_strips:
        raise UsageError(
            f"--layer {args.layer} exports non-image weight vectors; "
            f"pass --allow-strips to confirm"
        )
    _echo_config(
        "export-features",
        [
            ("checkpoint", ckpt),
            ("config_hash", meta["config_hash"]),
            ("data_dir", data_dir),
            ("layer", args.layer),
            ("batch_size", args.batch_size),
            ("seed", args.seed),
        ],
    )
    data = dataset.load_mnist(data_dir, "test")
    batch = data.images[: args.batch_size]
    labels = data.labels[: args.batch_size]
    trace = network.forward(params, batch)
    sds = scramble.sds_type_b(params, trace, len(batch), RngStream(args.seed))
    _, out_grad = network.classification_loss(trace, labels)
    bp = network.backward(params, trace, out_grad)
    meas = measures.batch_measures(params, trace, sds, bp.hidden_grads)
    os.makedirs(out_dir, exist_ok=True)
    measures.write_measures_csv(os.path.join(out_dir, "measures.csv"), meas)

    li = args.layer - 1
    weights = params.layers[li].weights
    fan_in = weights.shape[0]
    side = int(math.isqrt(fan_in))
    if side * side != fan_in:
        side = None  # not a square image; fall back to a 1-pixel-high strip
    score = (meas.hysp[li] + meas.sat[li]) / 2.0
    for ni in range(weights.shape[1]):
        column = weights[:, ni]
        if side is None:
            img = _scaled_image(column, None).reshape(1, fan_in)
        else:
            img = _scaled_image(column, side)
        name = f"layer{args.layer}_n{ni:04d}_hs{score[ni]:.4f}.pgm"
        pgm.write_pgm(os.path.join(out_dir, name), img)
    print(f"wrote {weights.shape[1]} feature images and measures.csv to {out_dir}")
    return EXIT_OK


def cmd_diagnose(args, file_values):
    data_dir = _require_data_dir(args, file_values)
    ckpt = _require_checkpoint(args, file_values)
    out_dir = _resolve(args, file_values, "out_dir", ".")
    params, meta = network.load_checkpoint(ckpt)
    # Contribution histograms require the L1 budget; project a copy (a
    # no-op for checkpoints trained with normalization on).
    params = network.normalize_network(params)
    _echo_config(
        "diagnose",
        [
            ("checkpoint", ckpt),
            ("config_hash", meta["config_hash"]),
            ("data_dir", data_dir),
            ("bins", args.bins),
            ("batch_size", args.batch_size),
            ("seed", args.seed),
        ],
    )
    if args.bins < 1:
        raise UsageError(f"--bins must be >= 1, got {args.bins}")
    data = dataset.load_mnist(data_dir, "test")
    batch = data.images[: args.batch_size] if args.batch_size else data.images
    trace = network.forward(params, batch)
    sds = scramble.sds_type_b(params, trace, len(batch), RngStream(args.seed))
    hists = measures.ncf_histograms(params, trace, sds, args.bins)
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "ncf_histograms.csv")
    with open(out_path, "w", newline="") as fh:
        fh.write("# andnet ncf-histograms v1\n")
        fh.write("layer,neuron,condition,bin,bin_lo,bin_hi,count\n")
        for li, (real_counts, scr_counts, edges) in enumerate(hists, start=1):
            for label, counts in (("real", real_counts), ("scrambled", scr_counts)):
                for ni in range(counts.shape[0]):
                    for b in range(counts.shape[1]):
                        fh.write(
                            f"{li},{ni},{label},{b},{edges[b]:.6g},"
                            f"{edges[b + 1]:.6g},{counts[ni, b]}\n"
                        )
    print(f"histograms written to {out_path}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "attack": cmd_attack,
    "export-features": cmd_export_features,
    "diagnose": cmd_diagnose,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        file_values = load_config_file(args.config) if args.config else {}
        return COMMANDS[args.command](args, file_values)
    except UsageError as exc:
        print(f"andnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (dataset.IdxFormatError, network.CheckpointError, FileNotFoundError) as exc:
        print(f"andnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except training.DivergenceError as exc:
        print(f"andnet: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        # Domain validation (e.g. epochs < 1) raises ValueError; at the
        # CLI boundary that is a usage problem.
        print(f"andnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
