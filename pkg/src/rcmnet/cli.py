"""Command-line entry point: ``rcmnet {train,eval,transfer,gradcam,augment,synth}``.

Options may also come from ``--config FILE`` holding ``key = value`` lines
(``#`` starts a comment). Precedence is flag, then file, then default.
Failures print one line ``error[<category>]: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import data as D
from .checkpoint import load_state, model_from_tensors, read_checkpoint, save_checkpoint
from .errors import ConfigError, RcmnetError
from .gradcam import compute_gradcam, export_heatmap
from .model import ARCHITECTURES, VARIANT_NOTE
from .seeding import derive_seed
from .training import TrainConfig, build_for_config, evaluate, train, transfer_learn, write_history_csv

logger = logging.getLogger("rcmnet")

REQUIRED = {
    "train": ("data", "out"),
    "eval": ("model", "data", "metrics"),
    "transfer": ("pretrained", "data", "classes", "out"),
    "gradcam": ("model", "image", "class_", "out"),
    "augment": ("in_", "out"),
    "synth": ("classes", "per_class", "out"),
}

DEFAULTS = {
    "seed": 0, "verbose": False, "no_figures": False,
    "arch": "rcmnet", "epochs": 30, "batch_size": 32, "lr": 0.01, "momentum": 0.9,
    "weight_decay": 1e-4, "side": 64, "width_div": 1, "dtype": "float32",
    "train_fraction": 0.8, "balance": False, "augment": False, "split_then_augment": False,
    "no_scale_logits": False, "log": None, "metrics": None, "layer": None, "score": "logit",
    "classes": None, "gradcam_figure": None,
}
# commands that read a checkpoint take the side from it unless --side is given
SIDE_FROM_CHECKPOINT = ("eval", "gradcam", "transfer")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="file of key = value lines")
    p.add_argument("--seed", type=int)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--no-figures", dest="no_figures", action="store_true", help="skip PNG report figures")


def _training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="directory with one subdirectory per class")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--side", type=int, help="square input side in pixels")
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--balance", action="store_true", help="truncate classes to the smallest class")
    p.add_argument("--augment", action="store_true", help="add rotations and flips (6x)")
    p.add_argument("--split-then-augment", dest="split_then_augment", action="store_true",
                   help="augment after splitting (no transform of one image spans train and test)")
    p.add_argument("--log", help="per-epoch CSV log")
    p.add_argument("--metrics", help="final metrics JSON")
    p.add_argument("--out", help="output checkpoint")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rcmnet", description="ResNet18 + CBAM + MHSA image classifier toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train a model from scratch", argument_default=argparse.SUPPRESS)
    _common(p)
    _training(p)
    p.add_argument("--arch", choices=ARCHITECTURES)
    p.add_argument("--classes", type=int, help="expected class count (checked against the data)")
    p.add_argument("--width-div", dest="width_div", type=int, help="divide all channel widths")
    p.add_argument("--no-scale-logits", dest="no_scale_logits", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint", argument_default=argparse.SUPPRESS)
    _common(p)
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--metrics")
    p.add_argument("--side", type=int)

    p = sub.add_parser("transfer", help="fine-tune the classifier of a pretrained model",
                       argument_default=argparse.SUPPRESS)
    _common(p)
    _training(p)
    p.add_argument("--pretrained")
    p.add_argument("--classes", type=int)

    p = sub.add_parser("gradcam", help="Grad-CAM heatmap for one image", argument_default=argparse.SUPPRESS)
    _common(p)
    p.add_argument("--model")
    p.add_argument("--image")
    p.add_argument("--class", dest="class_", type=int)
    p.add_argument("--layer")
    p.add_argument("--out", help="output P5 heatmap")
    p.add_argument("--side", type=int)
    p.add_argument("--score", choices=("logit", "probability"))
    p.add_argument("--figure", dest="gradcam_figure", help="PNG panel (default: next to --out)")

    p = sub.add_parser("augment", help="write the 6x rotation/flip expansion", argument_default=argparse.SUPPRESS)
    _common(p)
    p.add_argument("--in", dest="in_")
    p.add_argument("--out")

    p = sub.add_parser("synth", help="generate a synthetic dataset", argument_default=argparse.SUPPRESS)
    _common(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--side", type=int)
    p.add_argument("--out")
    return parser


def read_config_file(path: str) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _file_values(sub: argparse.ArgumentParser, raw: dict[str, str]) -> dict:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    # config keys use the flag spelling, e.g. "class" and "in"
    aliases = {"class": "class_", "in": "in_", "figure": "gradcam_figure"}
    values = {}
    for key, text in raw.items():
        dest = aliases.get(key, key)
        if dest not in actions:
            raise ConfigError(f"unknown config key {key!r}")
        act = actions[dest]
        if isinstance(act, argparse._StoreTrueAction):
            values[dest] = _bool(text)
        elif act.type is not None:
            try:
                values[dest] = act.type(text)
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
        else:
            values[dest] = text
        if act.choices is not None and values[dest] not in act.choices:
            raise ConfigError(f"config key {key!r}: {values[dest]!r} not in {list(act.choices)}")
    return values


def resolve_args(argv: Sequence[str]) -> tuple[str, dict]:
    parser = make_parser()
    ns = parser.parse_args(list(argv))
    if not ns.command:
        raise ConfigError("missing command; choose one of " + ", ".join(REQUIRED))
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    sub = parser._subparsers._group_actions[0].choices[ns.command]
    from_file = _file_values(sub, read_config_file(ns.config)) if getattr(ns, "config", None) else {}
    args = {**DEFAULTS, **from_file, **flags}
    if ns.command in SIDE_FROM_CHECKPOINT and "side" not in from_file and "side" not in flags:
        args["side"] = None
    missing = [k for k in REQUIRED[ns.command] if args.get(k) is None]
    if missing:
        flag = {"class_": "class", "in_": "in"}.get(missing[0], missing[0]).replace("_", "-")
        raise ConfigError(f"{ns.command}: --{flag} is required")
    return ns.command, args


# -- commands ---------------------------------------------------------------------
def _figures(args: dict) -> bool:
    return not args["no_figures"]


def _sibling(path: str, suffix: str) -> Path:
    p = Path(path)
    return p.with_name(p.stem + suffix)


def checkpoint_side(tensors: dict) -> int:
    """Input side matching a checkpoint's layer5 position tables (side 32k gives a k x k stage); else 64."""
    rel_h = tensors.get("layer5.mhsa.rel_h")
    if rel_h is None:
        return DEFAULTS["side"]
    return 32 * ((rel_h.shape[0] + 1) // 2)


def _load_for_inference(args: dict):
    arch, classes, tensors = read_checkpoint(args["model"])
    if args["side"] is None:
        args["side"] = checkpoint_side(tensors)
    model = model_from_tensors(arch, classes, tensors, args["side"])
    load_state(model, tensors)
    return model


def _prepare_splits(args: dict) -> tuple[D.LabeledDataset, D.LabeledDataset]:
    ds = D.load_dataset(args["data"])
    for path, why in ds.skipped:
        print(f"warning: skipped {path}: {why}", file=sys.stderr)
    if args["balance"]:
        ds = D.balance_classes(ds, derive_seed(args["seed"], "balance"))
    split_seed = derive_seed(args["seed"], "split")
    if args["augment"] and not args["split_then_augment"]:
        ds = D.augment(ds)
    tr, te = D.split_train_test(ds, args["train_fraction"], split_seed)
    if args["augment"] and args["split_then_augment"]:
        tr, te = D.augment(tr), D.augment(te)
    dtype = np.dtype(args["dtype"])
    return D.preprocess(tr, args["side"], dtype), D.preprocess(te, args["side"], dtype)


def _config(args: dict, num_classes: int, arch: str) -> TrainConfig:
    return TrainConfig(
        epochs=args["epochs"], batch_size=args["batch_size"], lr=args["lr"], momentum=args["momentum"],
        weight_decay=args["weight_decay"], seed=args["seed"], arch=arch, input_side=args["side"],
        num_classes=num_classes, width_div=args["width_div"], dtype=args["dtype"],
        scale_logits=not args["no_scale_logits"],
    )


def _report_training(args: dict, metrics, class_names, label: str) -> None:
    if args["log"]:
        write_history_csv(metrics.history, args["log"])
    if args["metrics"]:
        metrics.write_json(args["metrics"])
    if _figures(args):
        from .plotting import plot_confusion_matrix, plot_training_curves

        if args["log"]:
            plot_training_curves(metrics.history, _sibling(args["log"], ".png"), title=label)
        if args["metrics"]:
            plot_confusion_matrix(metrics.confusion, class_names, _sibling(args["metrics"], "_confusion.png"),
                                  title=label)
    last = metrics.history[-1]
    print(f"{label}: {len(metrics.history)} epochs, train loss {last['train_loss']:.4f}, "
          f"train top-1 {last['train_top1']:.4f}, test top-1 {metrics.top1:.4f} (top-{metrics.k} {metrics.topk:.4f})")


def cmd_train(args: dict) -> None:
    print(f"note: {VARIANT_NOTE}")
    tr, te = _prepare_splits(args)
    if args["classes"] is not None and args["classes"] != tr.num_classes:
        raise D.DataError(f"--classes {args['classes']} but the data has {tr.num_classes} classes")
    cfg = _config(args, tr.num_classes, args["arch"])
    model = build_for_config(cfg)
    model, metrics = train(model, tr, te, cfg)
    save_checkpoint(model, args["out"])
    _report_training(args, metrics, tr.class_names, f"train {cfg.arch}")


def cmd_transfer(args: dict) -> None:
    print(f"note: {VARIANT_NOTE}")
    arch, _, tensors = read_checkpoint(args["pretrained"])
    if args["side"] is None:
        args["side"] = checkpoint_side(tensors)
    tr, te = _prepare_splits(args)
    if args["classes"] != tr.num_classes:
        raise D.DataError(f"--classes {args['classes']} but the data has {tr.num_classes} classes")
    cfg = _config(args, args["classes"], arch)
    if np.dtype(args["dtype"]) != tensors["conv1.weight"].dtype:
        cfg = TrainConfig(**{**cfg.__dict__, "dtype": str(tensors["conv1.weight"].dtype)})
        tr = D.preprocess(tr, cfg.input_side, cfg.np_dtype)
        te = D.preprocess(te, cfg.input_side, cfg.np_dtype)
    model, metrics = transfer_learn((arch, None, tensors), args["classes"], tr, te, cfg)
    save_checkpoint(model, args["out"])
    _report_training(args, metrics, tr.class_names, f"transfer {arch}")


def cmd_eval(args: dict) -> None:
    model = _load_for_inference(args)
    ds = D.preprocess(D.load_dataset(args["data"]), args["side"], model.dtype)
    metrics = evaluate(model, ds)
    metrics.write_json(args["metrics"])
    if _figures(args):
        from .plotting import plot_confusion_matrix

        plot_confusion_matrix(metrics.confusion, ds.class_names, _sibling(args["metrics"], "_confusion.png"),
                              title=f"eval {model.arch}")
    print(f"eval {model.arch}: {len(ds)} samples, top-1 {metrics.top1:.4f}, top-{metrics.k} {metrics.topk:.4f}")


def cmd_gradcam(args: dict) -> None:
    model = _load_for_inference(args)
    raw = D.read_image(args["image"])
    img = D.preprocess(D.LabeledDataset(["_"], [raw], np.zeros(1), ["_"]), args["side"], model.dtype).images[0]
    result = compute_gradcam(model, img, args["class_"], args["layer"], args["score"])
    export_heatmap(result, args["out"])
    if _figures(args):
        from .plotting import plot_gradcam

        fig_path = args["gradcam_figure"] or _sibling(args["out"], ".png")
        plot_gradcam(img, result.heatmap, fig_path, title=f"class {result.target_class} @ {result.layer}")
    print(f"gradcam {model.arch}: class {result.target_class} at {result.layer}, "
          f"map {result.cam.shape[0]}x{result.cam.shape[1]}, max {result.cam.max():.6g}")


def cmd_augment(args: dict) -> None:
    ds = D.load_dataset(args["in_"])
    for path, why in ds.skipped:
        print(f"warning: skipped {path}: {why}", file=sys.stderr)
    out = D.augment(ds)
    D.export_dataset(out, args["out"])
    print(f"augment: {len(ds)} -> {len(out)} images in {args['out']}")


def cmd_synth(args: dict) -> None:
    ds = D.synth_generate(args["classes"], args["per_class"], args["side"], derive_seed(args["seed"], "synth"))
    D.export_dataset(ds, args["out"])
    print(f"synth: {len(ds)} images, {ds.num_classes} classes in {args['out']}")


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "transfer": cmd_transfer,
    "gradcam": cmd_gradcam, "augment": cmd_augment, "synth": cmd_synth,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        command, args = resolve_args(argv)
        logging.basicConfig(level=logging.INFO if args["verbose"] else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[command](args)
    except RcmnetError as exc:
        print(f"error[{exc.category}]: {_one_line(exc)}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    except OSError as exc:
        print(f"error[io]: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


def main() -> None:
    sys.exit(run())
