"""Command line front end.

Four subcommands share one flat dotted-key configuration:

    vatlab synth   --out DIR [--config FILE] [--force] [--key value ...]
    vatlab train   --out DIR ...
    vatlab eval    --out DIR ...
    vatlab perturb --out DIR ...

Values come from DEFAULTS, then the optional config file (`key = value`
lines, '#' comments), then `--key value` flags, later sources winning. The
effective configuration is echoed to `<out>/config.txt` in a form this
parser accepts, so any run can be replayed from its own echo.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings

import numpy as np

from . import data, model, train, vat
from .rng import Rng
from .tensor import Tensor

DEFAULTS: dict[str, object] = {
    "model.kind": "cnn_small",
    "model.input_channels": 1,
    "train.lr": 0.001,
    "train.batch": 32,
    "train.epochs": 100,
    "train.labeled_ratio": 0.2,
    "train.repeats": 3,
    "train.seed": 0,
    "train.use_vat": True,
    "train.vat_on_labeled": False,
    "vat.epsilon": 2.5,
    "vat.xi": 10.0,
    "vat.power_iterations": 1,
    "vat.alpha": 1.0,
    "data.format": "images",
    "data.path": "",
    "synth.kind": "moons",
    "synth.per_class": 500,
    "synth.noise": 0.1,
    "synth.side": 32,
    "synth.seed": 0,
    "eval.checkpoint": "",
    "perturb.checkpoint": "",
    "perturb.image": "",
}


def _parse_value(key: str, text: str):
    """Interpret `text` with the type of the key's default."""
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if text == "true":
            return True
        if text == "false":
            return False
        raise ValueError(f"value for {key} must be true or false, got {text!r}")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"value for {key} must be an integer, got {text!r}") from None
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"value for {key} must be a number, got {text!r}") from None
    return text


def parse_config(path: str | None, overrides=()) -> dict[str, object]:
    """Defaults, then the config file, then (key, value-text) overrides."""
    cfg = dict(DEFAULTS)
    if path:
        with open(path, "r") as f:
            for ln, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{ln}: expected 'key = value'")
                key, text = (part.strip() for part in line.split("=", 1))
                if key not in DEFAULTS:
                    raise ValueError(f"{path}:{ln}: unknown key {key!r}")
                cfg[key] = _parse_value(key, text)
    for key, text in overrides:
        if key not in DEFAULTS:
            raise ValueError(f"unknown config key {key!r} (from --{key})")
        cfg[key] = _parse_value(key, text)
    return cfg


def format_config(cfg: dict[str, object]) -> str:
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        if isinstance(v, bool):
            text = "true" if v else "false"
        elif isinstance(v, float):
            text = repr(v)
        else:
            text = str(v)
        lines.append(f"{key} = {text}\n")
    return "".join(lines)


def _prepare_out_dir(out: str, force: bool) -> None:
    if os.path.isdir(out) and os.listdir(out) and not force:
        raise ValueError(f"output directory {out!r} is not empty (pass --force to reuse it)")
    os.makedirs(out, exist_ok=True)


def _train_config(cfg: dict[str, object]) -> train.TrainConfig:
    return train.TrainConfig(
        learning_rate=cfg["train.lr"],
        batch_size=cfg["train.batch"],
        epochs=cfg["train.epochs"],
        labeled_ratio=cfg["train.labeled_ratio"],
        repeats=cfg["train.repeats"],
        seed=cfg["train.seed"],
        use_vat=cfg["train.use_vat"],
        vat_on_labeled=cfg["train.vat_on_labeled"],
        vat=vat.VatConfig(
            epsilon=cfg["vat.epsilon"],
            xi=cfg["vat.xi"],
            power_iterations=cfg["vat.power_iterations"],
            alpha=cfg["vat.alpha"],
        ),
        model_kind=cfg["model.kind"],
        input_channels=cfg["model.input_channels"],
    )


def _load_dataset(cfg: dict[str, object]) -> data.Dataset:
    fmt = cfg["data.format"]
    path = cfg["data.path"]
    if fmt not in ("images", "points"):
        raise ValueError(f"data.format must be 'images' or 'points', got {fmt!r}")
    if not path:
        raise ValueError("data.path is required for this command")
    if fmt == "points":
        return data.load_points(path)
    return data.load_image_dataset(path)


def _restore_model(cfg: dict[str, object], checkpoint_path: str):
    tc = _train_config(cfg)
    spec = train.spec_for(tc)
    pset = model.init_params(spec, Rng(0))
    pset.restore(model.load_checkpoint(checkpoint_path))
    return spec, pset


def cmd_synth(cfg: dict[str, object], out: str) -> None:
    spec = data.SyntheticSpec(
        kind=cfg["synth.kind"],
        per_class=cfg["synth.per_class"],
        noise=cfg["synth.noise"],
        side=cfg["synth.side"],
        seed=cfg["synth.seed"],
    )
    ds = data.generate(spec)
    n = len(ds.y)
    if spec.kind == "moons":
        table = os.path.join(out, "points.csv")
        data.save_points(table, ds)
        print(f"wrote {n} points to {table}")
    else:
        records = []
        for i in range(n):
            name = f"img_{i:04d}.pgm"
            data.write_pgm(ds.x[i], os.path.join(out, name))
            records.append(data.ManifestRecord(name, int(ds.y[i])))
        manifest = os.path.join(out, "manifest.txt")
        data.write_manifest(manifest, records)
        print(f"wrote {n} images and {manifest}")


def cmd_train(cfg: dict[str, object], out: str) -> None:
    ds = _load_dataset(cfg)
    tc = _train_config(cfg)
    summary = train.run_protocol(tc, ds)
    for r, run in enumerate(summary.runs):
        run_dir = os.path.join(out, f"run{r}")
        os.makedirs(run_dir, exist_ok=True)
        train.write_metrics(os.path.join(run_dir, "metrics.csv"), run.metrics)
        model.save_checkpoint(os.path.join(run_dir, "model.ckpt"), run.pset)
    train.write_summary(os.path.join(out, "summary.txt"), summary.mean, summary.std)
    print(f"final_acc_mean={summary.mean:.6g} final_acc_std={summary.std:.6g} "
          f"({tc.repeats} repeats)")


def cmd_eval(cfg: dict[str, object], out: str) -> None:
    ckpt = cfg["eval.checkpoint"]
    if not ckpt:
        raise ValueError("eval.checkpoint is required")
    ds = _load_dataset(cfg)
    spec, pset = _restore_model(cfg, ckpt)
    acc = train.evaluate(spec, pset, ds.x, ds.y)
    result = os.path.join(out, "accuracy.txt")
    with open(result, "w") as f:
        f.write(f"accuracy={acc:.4f}\n")
    print(f"accuracy {acc:.4f}")


def cmd_perturb(cfg: dict[str, object], out: str) -> None:
    ckpt = cfg["perturb.checkpoint"]
    image = cfg["perturb.image"]
    if not ckpt:
        raise ValueError("perturb.checkpoint is required")
    if not image:
        raise ValueError("perturb.image is required")
    if cfg["model.kind"] == "mlp":
        raise ValueError("perturb needs an image model (model.kind cnn_small or cnn_large)")
    spec, pset = _restore_model(cfg, ckpt)
    tc = _train_config(cfg)
    x = Tensor(data.read_pgm(image)[np.newaxis])
    r = vat.estimate_r_adv(spec, pset, x, tc.vat, Rng(tc.seed))
    lds = vat.lds_value(spec, pset, x, r, tc.vat).item()

    m = float(np.abs(r.data).max())
    if m <= 1e-12:
        warnings.warn("adversarial direction is numerically zero; noise image is flat gray")
        noise = np.full(x.shape, 0.5)
    else:
        noise = (r.data + m) / (2.0 * m)
    perturbed = np.clip(x.data + tc.vat.epsilon * r.data, 0.0, 1.0)

    data.write_pgm(x.data[0], os.path.join(out, "original.pgm"))
    data.write_pgm(noise[0], os.path.join(out, "noise.pgm"))
    data.write_pgm(perturbed[0], os.path.join(out, "perturbed.pgm"))
    print(f"lds {lds:.6g}")
    print(f"max_perturbation {m:.6g}")


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "perturb": cmd_perturb,
}


def _split_override_flags(extra: list[str]) -> list[tuple[str, str]]:
    """Turn trailing `--dotted.key value` pairs into (key, value) tuples."""
    pairs = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ValueError(f"unexpected argument {tok!r}; overrides look like --train.lr 0.01")
        if i + 1 >= len(extra):
            raise ValueError(f"flag --{tok[2:]} is missing a value")
        pairs.append((tok[2:], extra[i + 1]))
        i += 2
    return pairs


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vatlab",
        description="semi-supervised training with adversarial smoothness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "generate a synthetic dataset"),
        ("train", "run the training protocol"),
        ("eval", "score a checkpoint on a dataset"),
        ("perturb", "visualize the adversarial direction for one image"),
    ):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="config file of key = value lines")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--force", action="store_true",
                        help="allow writing into a non-empty output directory")
    args, extra = parser.parse_known_args(argv)
    try:
        overrides = _split_override_flags(extra)
        cfg = parse_config(args.config, overrides)
        _prepare_out_dir(args.out, args.force)
        with open(os.path.join(args.out, "config.txt"), "w") as f:
            f.write(format_config(cfg))
        COMMANDS[args.command](cfg, args.out)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
