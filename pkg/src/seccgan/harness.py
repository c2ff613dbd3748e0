"""Experiment orchestration: config files, label-budget sweeps over methods
and seeds, results tables, and synthetic image-grid export.

Config grammar is flat `key = value` text; `#` starts a comment. Method-scoped
overrides use `<method>.<key>` (e.g. `sec_cgan.iterations = 3000`). Unknown
keys are rejected with the offending line and a suggestion.
"""

import difflib
import json
import math
import os
from dataclasses import dataclass, field, fields as dataclass_fields

import numpy as np
import torch
from PIL import Image

from . import toydata
from .data import (
    AugmentPolicy,
    Dataset,
    load_idx,
    load_image_folder,
    subset_fraction,
)
from .models import NetConfig
from .rng import RngStream
from .trainer import METHODS, TrainConfig, train
from .checkpoint import load_checkpoint


class ConfigError(Exception):
    """Config file rejected; message carries the line number and key."""


PROFILES = {
    "digits32": {
        "image_size": 32, "channels": 1, "num_classes": 10, "z_dim": 100,
        "base_width": 16, "classifier_depth": 2, "source": "synthetic",
        "eta_g": 2e-4, "eta_d": 2e-4, "eta_c": 2e-4,
        "crop_padding": 4, "rotation_range": 10.0, "hflip_prob": 0.0,
    },
    "weather128": {
        "image_size": 128, "channels": 3, "num_classes": 4, "z_dim": 100,
        "base_width": 32, "classifier_depth": 2, "source": "folder",
        "eta_g": 2e-4, "eta_d": 5e-5, "eta_c": 2e-4,
        "crop_padding": 0, "rotation_range": 0.0, "hflip_prob": 0.5,
    },
}

_SOURCES = ("synthetic", "idx", "folder")


@dataclass(frozen=True)
class ExperimentSpec:
    profile: str
    source: str
    image_size: int
    channels: int
    num_classes: int
    z_dim: int
    base_width: int
    classifier_depth: int
    fractions: tuple
    methods: tuple
    seeds: tuple
    base: dict            # shared TrainConfig field values
    overrides: dict       # method -> {TrainConfig field: value}
    augment: AugmentPolicy
    dataset_args: dict    # source-specific paths/sizes
    out_dir: str = None
    checkpoint_every: int = 500

    def net_config(self):
        return NetConfig(
            z_dim=self.z_dim,
            image_size=self.image_size,
            channels=self.channels,
            num_classes=self.num_classes,
            base_width=self.base_width,
            classifier_depth=self.classifier_depth,
        )

    def train_config(self, method, seed):
        values = dict(self.base)
        values.update(self.overrides.get(method, {}))
        return TrainConfig(method=method, master_seed=seed, **values)


def _parse_bool(text):
    if text.lower() in ("true", "yes", "1"):
        return True
    if text.lower() in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _parse_list(text, item):
    return tuple(item(part.strip()) for part in text.split(",") if part.strip())


# key -> parser, over the raw value text
_SPEC_KEYS = {
    "profile": str,
    "dataset.source": str,
    "dataset.train_images": str,
    "dataset.train_labels": str,
    "dataset.test_images": str,
    "dataset.test_labels": str,
    "dataset.train_dir": str,
    "dataset.test_dir": str,
    "dataset.synthetic_train": int,
    "dataset.synthetic_test": int,
    "dataset.synthetic_seed": int,
    "image_size": int,
    "channels": int,
    "num_classes": int,
    "z_dim": int,
    "base_width": int,
    "classifier_depth": int,
    "fractions": lambda t: _parse_list(t, float),
    "methods": lambda t: _parse_list(t, str),
    "seeds": lambda t: _parse_list(t, int),
    "crop_padding": int,
    "rotation_range": float,
    "hflip_prob": float,
    "out_dir": str,
    "checkpoint_every": int,
}

# config-file name -> (TrainConfig field, parser)
_TRAIN_KEYS = {
    "lambda": ("lam", float),
    "beta": ("beta", float),
    "eta_g": ("eta_g", float),
    "eta_d": ("eta_d", float),
    "eta_c": ("eta_c", float),
    "batch_size": ("m", int),
    "synthetic_batch": ("k", int),
    "iterations": ("iterations", int),
    "eval_every": ("eval_every", int),
    "adam_beta1": ("adam_beta1", float),
    "adam_beta2": ("adam_beta2", float),
    "adam_eps": ("adam_eps", float),
    "pseudo_label_threshold": ("pseudo_label_threshold", float),
    "regenerate_synthetic": ("regenerate_synthetic", _parse_bool),
}

_ALL_KEYS = (
    set(_SPEC_KEYS)
    | set(_TRAIN_KEYS)
    | {f"{m}.{k}" for m in METHODS for k in _TRAIN_KEYS}
)


def _suggest(key):
    near = difflib.get_close_matches(key, sorted(_ALL_KEYS), n=1)
    return f" (did you mean {near[0]!r}?)" if near else ""


def parse_config(path):
    """Parse and validate a config file into an ExperimentSpec."""
    try:
        with open(path) as f:
            lines = f.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}")

    entries = {}
    for lineno, raw in enumerate(lines, 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = text.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}{_suggest(key)}")
        if key in entries:
            raise ConfigError(
                f"line {lineno}: duplicate key {key!r} (first set on line {entries[key][0]})"
            )
        if not value:
            raise ConfigError(f"line {lineno}: key {key!r} has no value")
        entries[key] = (lineno, value)

    def parsed(key, parser):
        lineno, value = entries[key]
        try:
            return parser(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}")

    if "profile" not in entries:
        raise ConfigError("missing required key 'profile' (digits32 or weather128)")
    profile = parsed("profile", str)
    if profile not in PROFILES:
        lineno = entries["profile"][0]
        raise ConfigError(
            f"line {lineno}: unknown profile {profile!r}, expected one of {sorted(PROFILES)}"
        )
    defaults = PROFILES[profile]

    for required in ("fractions", "methods", "seeds"):
        if required not in entries:
            raise ConfigError(f"missing required key {required!r}")

    fractions = parsed("fractions", _SPEC_KEYS["fractions"])
    if not fractions:
        raise ConfigError("fractions must be non-empty")
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ConfigError(f"line {entries['fractions'][0]}: fraction {f} outside (0, 1]")
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise ConfigError(
            f"line {entries['fractions'][0]}: fractions must be strictly increasing, got {fractions}"
        )

    methods = parsed("methods", _SPEC_KEYS["methods"])
    if not methods:
        raise ConfigError("methods must be non-empty")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(
                f"line {entries['methods'][0]}: unknown method {m!r}, expected from {METHODS}"
            )
    seeds = parsed("seeds", _SPEC_KEYS["seeds"])
    if not seeds:
        raise ConfigError("seeds must be non-empty")
    for s in seeds:
        if s < 0:
            raise ConfigError(f"line {entries['seeds'][0]}: seeds must be >= 0, got {s}")

    def spec_value(key, fallback):
        if key in entries:
            return parsed(key, _SPEC_KEYS[key])
        return fallback

    source = spec_value("dataset.source", defaults["source"])
    if source not in _SOURCES:
        raise ConfigError(
            f"line {entries['dataset.source'][0]}: unknown dataset.source {source!r}, "
            f"expected one of {_SOURCES}"
        )
    dataset_args = {"source": source}
    if source == "idx":
        for key in ("dataset.train_images", "dataset.train_labels",
                    "dataset.test_images", "dataset.test_labels"):
            if key not in entries:
                raise ConfigError(f"missing required key {key!r} for dataset.source = idx")
            dataset_args[key.split(".", 1)[1]] = parsed(key, str)
    elif source == "folder":
        for key in ("dataset.train_dir", "dataset.test_dir"):
            if key not in entries:
                raise ConfigError(f"missing required key {key!r} for dataset.source = folder")
            dataset_args[key.split(".", 1)[1]] = parsed(key, str)
    else:
        dataset_args["synthetic_train"] = spec_value("dataset.synthetic_train", 3000)
        dataset_args["synthetic_test"] = spec_value("dataset.synthetic_test", 1500)
        dataset_args["synthetic_seed"] = spec_value("dataset.synthetic_seed", 0)

    base = {}
    for name, (field_name, parser) in _TRAIN_KEYS.items():
        if name in entries:
            base[field_name] = parsed(name, parser)
        elif name in ("eta_g", "eta_d", "eta_c"):
            base[field_name] = defaults[name]
    overrides = {}
    for key in entries:
        if "." in key and key.split(".", 1)[0] in METHODS:
            method, name = key.split(".", 1)
            field_name, parser = _TRAIN_KEYS[name]
            overrides.setdefault(method, {})[field_name] = parsed(key, parser)

    try:
        augment = AugmentPolicy(
            crop_padding=spec_value("crop_padding", defaults["crop_padding"]),
            rotation_range=spec_value("rotation_range", defaults["rotation_range"]),
            hflip_prob=spec_value("hflip_prob", defaults["hflip_prob"]),
        )
        spec = ExperimentSpec(
            profile=profile,
            source=source,
            image_size=spec_value("image_size", defaults["image_size"]),
            channels=spec_value("channels", defaults["channels"]),
            num_classes=spec_value("num_classes", defaults["num_classes"]),
            z_dim=spec_value("z_dim", defaults["z_dim"]),
            base_width=spec_value("base_width", defaults["base_width"]),
            classifier_depth=spec_value("classifier_depth", defaults["classifier_depth"]),
            fractions=fractions,
            methods=methods,
            seeds=seeds,
            base=base,
            overrides=overrides,
            augment=augment,
            dataset_args=dataset_args,
            out_dir=spec_value("out_dir", None),
            checkpoint_every=spec_value("checkpoint_every", 500),
        )
        spec.net_config()                        # validate network geometry
        for method in methods:                   # validate every used config
            spec.train_config(method, seeds[0])
    except ValueError as exc:
        raise ConfigError(str(exc))
    return spec


def load_datasets(spec):
    """Materialize (train, test) Datasets for the spec's source."""
    args = spec.dataset_args
    if spec.source == "synthetic":
        if spec.num_classes != 10 or spec.channels != 1:
            raise ConfigError(
                "synthetic digits are 10-class single-channel; set num_classes = 10 "
                "and channels = 1 or use another dataset.source"
            )
        return toydata.make_digit_datasets(
            args["synthetic_train"], args["synthetic_test"],
            args["synthetic_seed"], spec.image_size,
        )
    if spec.source == "idx":
        train_set = load_idx(args["train_images"], args["train_labels"],
                             spec.channels, spec.image_size)
        test_set = load_idx(args["test_images"], args["test_labels"],
                            spec.channels, spec.image_size)
    else:
        train_set = load_image_folder(args["train_dir"], spec.image_size, spec.channels)
        test_set = load_image_folder(args["test_dir"], spec.image_size, spec.channels)
    out = []
    for name, ds in (("train", train_set), ("test", test_set)):
        if ds.num_classes > spec.num_classes:
            raise ConfigError(
                f"{name} set has {ds.num_classes} classes but num_classes = {spec.num_classes}"
            )
        if ds.num_classes < spec.num_classes:
            # e.g. IDX labels that never reach K-1; widen to the configured K
            ds = Dataset(ds.images, ds.labels, spec.num_classes)
        out.append(ds)
    return tuple(out)


@dataclass(frozen=True)
class RunResult:
    fraction: float
    method: str
    seed: int
    accuracy: float = None
    error: str = None


@dataclass
class ResultsTable:
    fractions: tuple
    methods: tuple
    seeds: tuple
    rows: list

    def aggregate(self, fraction, method):
        """(mean, std, n) over the successful seeds; population std (ddof=0)."""
        accs = [
            r.accuracy for r in self.rows
            if r.fraction == fraction and r.method == method and r.accuracy is not None
        ]
        if not accs:
            return None, None, 0
        mean = sum(accs) / len(accs)
        std = math.sqrt(sum((a - mean) ** 2 for a in accs) / len(accs))
        return mean, std, len(accs)


def run_dir_name(method, fraction, seed):
    return f"{method}_f{fraction:g}_s{seed}"


def run_single(spec, method, fraction, seed, subset, test_set, run_dir):
    """Train one (method, fraction, seed) cell in run_dir; resumable.

    A finished cell (result.json present) is not re-run; an interrupted cell
    resumes from its periodic checkpoint.
    """
    os.makedirs(run_dir, exist_ok=True)
    result_path = os.path.join(run_dir, "result.json")
    if os.path.exists(result_path):
        with open(result_path) as f:
            return RunResult(fraction, method, seed, accuracy=json.load(f)["accuracy"])

    ckpt_path = os.path.join(run_dir, "state.ckpt")
    cfg = spec.train_config(method, seed)
    resume = ckpt_path if os.path.exists(ckpt_path) else None
    result = train(
        cfg, subset, test_set,
        net_cfg=spec.net_config(),
        augment_policy=spec.augment,
        metrics_path=os.path.join(run_dir, "metrics.csv"),
        checkpoint_path=ckpt_path,
        checkpoint_every=spec.checkpoint_every,
        resume_from=resume,
    )
    accuracy = result.final_accuracy
    with open(result_path, "w") as f:
        json.dump(
            {"fraction": fraction, "method": method, "seed": seed, "accuracy": accuracy},
            f, sort_keys=True,
        )
        f.write("\n")
    stale = os.path.join(run_dir, "error.json")
    if os.path.exists(stale):
        os.remove(stale)
    return RunResult(fraction, method, seed, accuracy=accuracy)


def run_experiment(spec, out_dir=None, log=None):
    """Run the full fractions x seeds x methods grid.

    Within one (fraction, seed) cell every method trains on the identical
    subset. Failed runs are recorded in the table and the sweep continues.
    """
    out_dir = out_dir or spec.out_dir
    if out_dir is None:
        raise ConfigError("no output directory: pass --out or set out_dir in the config")
    train_full, test_set = load_datasets(spec)
    rows = []
    for fraction in spec.fractions:
        for seed in spec.seeds:
            subset = subset_fraction(train_full, fraction, seed)
            for method in spec.methods:
                run_dir = os.path.join(out_dir, "runs", run_dir_name(method, fraction, seed))
                if log:
                    log(f"[{run_dir_name(method, fraction, seed)}] starting")
                try:
                    row = run_single(spec, method, fraction, seed, subset, test_set, run_dir)
                except Exception as exc:
                    row = RunResult(
                        fraction, method, seed, error=f"{type(exc).__name__}: {exc}"
                    )
                    try:
                        os.makedirs(run_dir, exist_ok=True)
                        with open(os.path.join(run_dir, "error.json"), "w") as f:
                            json.dump({"fraction": fraction, "method": method,
                                       "seed": seed, "error": row.error}, f, sort_keys=True)
                            f.write("\n")
                    except OSError:
                        pass
                if log:
                    outcome = (
                        f"accuracy {row.accuracy:.4f}" if row.accuracy is not None
                        else f"FAILED: {row.error}"
                    )
                    log(f"[{run_dir_name(method, fraction, seed)}] {outcome}")
                rows.append(row)
    return ResultsTable(spec.fractions, spec.methods, spec.seeds, rows)


def read_results(out_dir):
    """Rebuild a ResultsTable from an output directory's per-run records."""
    runs_root = os.path.join(out_dir, "runs")
    if not os.path.isdir(runs_root):
        raise FileNotFoundError(f"no runs directory under {out_dir!r}")
    rows = []
    for name in sorted(os.listdir(runs_root)):
        run_dir = os.path.join(runs_root, name)
        for fname, ok in (("result.json", True), ("error.json", False)):
            path = os.path.join(run_dir, fname)
            if os.path.exists(path):
                with open(path) as f:
                    payload = json.load(f)
                rows.append(RunResult(
                    fraction=payload["fraction"], method=payload["method"],
                    seed=payload["seed"],
                    accuracy=payload.get("accuracy") if ok else None,
                    error=None if ok else payload.get("error"),
                ))
                break
    if not rows:
        raise FileNotFoundError(f"no completed runs under {runs_root!r}")
    fractions = tuple(sorted({r.fraction for r in rows}))
    methods = tuple(m for m in METHODS if any(r.method == m for r in rows))
    seeds = tuple(sorted({r.seed for r in rows}))
    return ResultsTable(fractions, methods, seeds, rows)


def _pct(x):
    # one decimal in percent; Python's float formatting rounds half-even
    return f"{x * 100:.1f}"


def emit_results_table(table, fmt):
    """Render accuracies as percent to one decimal.

    markdown: fractions as rows, methods as columns, cell mean+-std.
    csv: one row per (fraction, method) with mean and std columns.
    """
    if fmt == "markdown":
        lines = ["| fraction | " + " | ".join(table.methods) + " |"]
        lines.append("|" + "---|" * (len(table.methods) + 1))
        for fraction in table.fractions:
            cells = []
            for method in table.methods:
                mean, std, n = table.aggregate(fraction, method)
                cells.append("failed" if n == 0 else f"{_pct(mean)}±{_pct(std)}")
            lines.append(f"| {fraction * 100:g}% | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        lines = ["fraction,method,mean,std,seeds"]
        for fraction in table.fractions:
            for method in table.methods:
                mean, std, n = table.aggregate(fraction, method)
                cell = ",," if n == 0 else f"{_pct(mean)},{_pct(std)},"
                lines.append(f"{fraction:g},{method},{cell}{n}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"format must be markdown or csv, got {fmt!r}")


def export_image_grid(generator, num_per_class, path, seed=0):
    """Write a PNG grid: one class per column in index order, num_per_class
    rows, pixels mapped from (-1,1) to 8-bit. Deterministic in (params, seed)."""
    if num_per_class <= 0:
        raise ValueError(f"num_per_class must be > 0, got {num_per_class}")
    cfg = generator.cfg
    k = cfg.num_classes * num_per_class
    stream = RngStream("grid", seed)
    dtype = next(generator.parameters()).dtype
    z = torch.from_numpy(stream.normal((k, cfg.z_dim))).to(dtype)
    labels = torch.from_numpy(
        np.tile(np.arange(cfg.num_classes, dtype=np.int64), num_per_class)
    )
    was_training = generator.training
    generator.eval()
    with torch.no_grad():
        images = generator(z, labels).to(torch.float32).numpy()
    generator.train(was_training)

    s = cfg.image_size
    grid = images.reshape(num_per_class, cfg.num_classes, cfg.channels, s, s)
    grid = grid.transpose(0, 3, 1, 4, 2).reshape(
        num_per_class * s, cfg.num_classes * s, cfg.channels
    )
    pixels = np.clip(np.rint((grid + 1.0) * 127.5), 0, 255).astype(np.uint8)
    if cfg.channels == 1:
        im = Image.fromarray(pixels[:, :, 0], mode="L")
    else:
        im = Image.fromarray(pixels, mode="RGB")
    im.save(path, format="PNG")
    return path
