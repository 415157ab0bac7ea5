"""Command-line entry point: train, gradcheck, bench, robustness.

Exit codes: 0 success, 1 gradient-check failure, 2 bad config or
unreadable data, 3 training diverged.
"""
import argparse
import csv
import os
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

from . import verify
from .data import TwoViewDataset, gen_synthetic_two_view, load_csv, load_idx, occlude
from .exceptions import ConfigError, FormatError, TrainingError
from .network import Network, preset
from .optim import TrainConfig, accuracy, train
from .weights import load_weights, save_weights

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3
BENCH_BATCH_SIZES = (128, 256, 512)


@dataclass
class RunConfig:
    # training (mirrors TrainConfig)
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_initial: float = 0.05
    lr_decay_factor: float = 0.1
    lr_decay_epochs: tuple = ()
    epochs: int = 20
    lam: float = 0.0
    regularizer: str = "none"
    dropout_rate: float = 0.0
    n_reg: int = 1
    eps: float = 1e-8
    seed: int = 0
    augment_pad: int = 0
    augment_flip: float = 0.0
    cca_k: int = 0
    # network
    preset: str = "lenet_fc"
    width: int = 64
    init_seed: int = -1  # -1: use seed
    # data
    dataset: str = "synthetic"
    n_samples: int = 2000
    n_classes: int = 4
    latent_dim: int = 8
    d1: int = 32
    d2: int = 32
    noise_sigma: float = 1.0
    class_sep: float = 3.0
    data_seed: int = 0
    view_shape: tuple = ()  # per-sample reshape of both synthetic views, e.g. 1,4,8
    test_fraction: float = 0.2
    idx_images: str = ""
    idx_labels: str = ""
    csv_path: str = ""
    csv_shape: tuple = ()
    # output
    record_time: bool = False

    def train_config(self):
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in vars(self).items() if k in names})

    def validate(self):
        self.train_config()
        if self.dataset not in ("synthetic", "idx", "csv"):
            raise ConfigError(f"dataset must be synthetic, idx or csv, got {self.dataset!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.width < 2:
            raise ConfigError("width must be at least 2")
        preset(self.preset, max(self.n_classes, 2), self.width)
        if self.dataset == "idx" and not (self.idx_images and self.idx_labels):
            raise ConfigError("dataset=idx needs idx_images and idx_labels")
        if self.dataset == "csv" and not self.csv_path:
            raise ConfigError("dataset=csv needs csv_path")
        return self

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _convert(key, text):
    kind = _FIELD_TYPES[key]
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected true/false, got {text!r}")
    if kind is tuple:
        parts = [p for p in text.replace("x", ",").split(",") if p.strip()]
        return tuple(int(p) for p in parts)
    return kind(text)


def parse_config(text, source="<config>", overrides=()):
    """Parse ``key = value`` lines (``#`` starts a comment) plus ``key=value`` overrides."""
    values = {}
    items = [(f"{source}:{n}", line) for n, line in enumerate(text.splitlines(), 1)]
    items += [(f"--set {o}", o) for o in overrides]
    for where, line in items:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{where}: field {key!r}: {exc}") from None
    try:
        return RunConfig(**values).validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


# -- data and model ------------------------------------------------------------

def load_dataset(cfg):
    """Returns ``(train, test)`` for the configured source."""
    if cfg.dataset == "synthetic":
        shape = cfg.view_shape or None
        full = gen_synthetic_two_view(cfg.n_samples, cfg.n_classes, cfg.latent_dim, cfg.d1, cfg.d2,
                                      cfg.noise_sigma, cfg.data_seed, cfg.class_sep,
                                      view_shape1=shape, view_shape2=shape)
    else:
        for path in (cfg.idx_images, cfg.idx_labels) if cfg.dataset == "idx" else (cfg.csv_path,):
            if not os.path.isfile(path):
                raise ConfigError(f"dataset file not found: {path}")
        if cfg.dataset == "idx":
            full = load_idx(cfg.idx_images, cfg.idx_labels)
        else:
            full = load_csv(cfg.csv_path, cfg.csv_shape or None)
    return full.split(cfg.test_fraction, cfg.data_seed)


def build_network(cfg, dataset):
    spec = preset(cfg.preset, dataset.n_classes, cfg.width)
    shapes = [v.shape[1:] for v in dataset.views]
    seed = cfg.seed if cfg.init_seed < 0 else cfg.init_seed
    return Network(spec, shapes, seed)


def run_dir(out, seed):
    """Fresh directory ``<out>/<UTC timestamp>_seed<seed>[-k]``."""
    base = os.path.join(out, time.strftime("%Y%m%dT%H%M%SZ", time.gmtime()) + f"_seed{seed}")
    path, k = base, 0
    while os.path.exists(path):
        k += 1
        path = f"{base}-{k}"
    os.makedirs(path)
    return path


# -- commands ------------------------------------------------------------------

def cmd_train(args):
    with open(args.config) as fh:
        cfg = parse_config(fh.read(), args.config, args.set)
    tr, te = load_dataset(cfg)
    net = build_network(cfg, tr)
    out = run_dir(args.out, cfg.seed)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(cfg.to_text())

    def progress(rec):
        print(f"epoch {rec.epoch}: loss {rec.loss:.4f} train {rec.train_acc:.3f} "
              f"test {rec.test_acc:.3f} corr {rec.mean_corr:.3f}", file=sys.stderr)

    report = train(net, tr, cfg.train_config(), te, on_epoch=None if args.quiet else progress)
    report.write_csv(os.path.join(out, "metrics.csv"), cfg.record_time)
    save_weights(os.path.join(out, "weights.crwt"), {**net.get_params(), **net.buffers()}, cfg.to_text())
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(f"preset: {cfg.preset}\nregularizer: {cfg.regularizer}\nlambda: {cfg.lam}\n")
        fh.write(report.summary())
    print(out)
    return EXIT_OK


def cmd_gradcheck(args):
    reports = verify.run_gradcheck(args.scope, args.perturb, args.seed)
    out = run_dir(args.out, args.seed)
    verify.write_gradcheck_csv(os.path.join(out, "gradcheck.csv"), reports)
    failed = [r for r in reports if not r.passed]
    for r in failed:
        print(f"FAIL {r.name}: rel {r.max_rel_err:.3e} abs {r.max_abs_err:.3e} at {r.worst_coordinate}",
              file=sys.stderr)
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed; {out}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_bench(args):
    results = [verify.backward_cost_bench(m=m, repetitions=args.repetitions, seed=args.seed)
               for m in BENCH_BATCH_SIZES]
    out = run_dir(args.out, args.seed)
    verify.write_bench_csv(os.path.join(out, "bench.csv"), results)
    for r in results:
        print(f"m={r.m}: plain {r.plain_ns / 1e6:.3f} ms, corrreg {r.corrreg_ns / 1e6:.3f} ms, "
              f"ratio {r.ratio:.2f}")
    print(out)
    return EXIT_OK


def load_model(path):
    """Rebuild ``(cfg, net, train, test)`` from a weights file."""
    tensors, text = load_weights(path)
    cfg = parse_config(text, path)
    tr, te = load_dataset(cfg)
    net = build_network(cfg, tr)
    names = set(net.param_names())
    missing = names - set(tensors)
    if missing:
        raise FormatError(f"{path}: missing tensors {sorted(missing)}")
    net.set_params({k: v for k, v in tensors.items() if k in names})
    net.set_buffers({k: v for k, v in tensors.items() if k not in names})
    return cfg, net, tr, te


def occlusion_accuracy(net, dataset, size, seed):
    """Accuracy with one size x size block (clipped to the image) zeroed in every image view."""
    views = []
    for v in dataset.views:
        if v.ndim != 4:
            raise ConfigError("occlusion needs image-shaped views; set view_shape for synthetic data")
        h, w = v.shape[2:]
        views.append(occlude(v, min(size, h), min(size, w), seed))
        seed += 1
    return accuracy(net, TwoViewDataset(views[0], dataset.labels, views[1] if len(views) > 1 else None))


def cmd_robustness(args):
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    if any(s < 0 for s in sizes):
        raise ConfigError("occlusion sizes must be non-negative")
    cfg, net, _, te = load_model(args.model)
    out = run_dir(args.out, cfg.seed)
    with open(os.path.join(out, "robustness.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["size", "repeats", "mean_accuracy", "min_accuracy", "max_accuracy"])
        for size in sizes:
            accs = [occlusion_accuracy(net, te, size, 1000 * r + 2 * size) for r in range(args.repeats)]
            w.writerow([size, args.repeats, repr(float(np.mean(accs))), repr(min(accs)), repr(max(accs))])
            print(f"size {size}: accuracy {np.mean(accs):.4f}")
    print(out)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="corrnet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network from a key=value config file")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", default="runs")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    p.add_argument("--scope", choices=verify.SCOPES, default="all")
    p.add_argument("--perturb", type=float, default=0.0, help="corrupt analytic gradients (negative control)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="time plain vs CorrReg fc backward")
    p.add_argument("--repetitions", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("robustness", help="accuracy of a trained model under random occlusion")
    p.add_argument("--model", required=True)
    p.add_argument("--sizes", default="0,4,8")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_robustness)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def run():
    sys.exit(main())
