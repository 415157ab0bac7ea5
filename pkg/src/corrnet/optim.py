"""Regularized training objective, SGD with momentum, and the epoch loop."""
import csv
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import corrreg as C
from .data import augment_pad_crop_flip
from .exceptions import ConfigError, TrainingError
from .layers import FcParams, fc_backward, softmax_xent
from .regularizers import cca_projected_total, cca_reg_gradient, l2regu
from .verify import neuron_corr_probe

REGULARIZERS = ("none", "corrreg", "l2regu", "cca", "dropout")


@dataclass
class TrainConfig:
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
    eps: float = C.DEFAULT_EPS
    seed: int = 0
    augment_pad: int = 0
    augment_flip: float = 0.0
    cca_k: int = 0  # 0 means all projected dimensions

    def __post_init__(self):
        self.lr_decay_epochs = tuple(int(e) for e in self.lr_decay_epochs)
        if self.regularizer not in REGULARIZERS:
            raise ConfigError(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        if self.regularizer in ("corrreg", "l2regu", "cca") and self.batch_size < 2:
            raise ConfigError(f"{self.regularizer} needs batch_size >= 2")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0 or self.lam < 0:
            raise ConfigError("weight_decay and lambda must be non-negative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.n_reg < 1 or self.eps <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("n_reg >= 1, eps > 0, epochs >= 0 and batch_size >= 1 required")

    def lr_at(self, epoch):
        n = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.lr_initial * self.lr_decay_factor ** n


def _partitions(net, cfg):
    layer = net.reg_layer
    if layer is None:
        raise ConfigError(f"regularizer {cfg.regularizer} needs a layer flagged for CorrReg")
    p = layer.p
    n_in = p.W.shape[0] if isinstance(p, FcParams) else p.filters.shape[1]
    if n_in < 2:
        raise ConfigError(f"layer {layer.name} has {n_in} input(s); CorrReg needs at least 2")
    key = (n_in, cfg.n_reg, cfg.seed)
    cache = getattr(net, "_parts_cache", {})
    if key not in cache:
        cache[key] = C.make_partitions(n_in, cfg.n_reg, cfg.seed)
        net._parts_cache = cache
    return cache[key]


def _penalty_and_hook(net, cfg, m):
    """Penalty at the flagged layer (from its cached forward input) and its backward hook."""
    mode = cfg.regularizer
    if mode in ("none", "dropout"):
        return 0.0, None
    parts = _partitions(net, cfg)
    layer = net.reg_layer
    x, p = layer.x, layer.p
    lam = cfg.lam

    if mode == "corrreg":
        ccfg = C.CorrRegConfig(lam, cfg.eps, cfg.n_reg, cfg.seed)
        penalty = C.corrreg_penalty_total(x, p, ccfg, parts)
        if isinstance(p, FcParams):
            return penalty, lambda x, p, g: C.corrreg_fc_backward(x, p, g, ccfg, parts)
        return penalty, lambda x, p, g: C.corrreg_conv_backward(x, p, g, ccfg, parts)

    part = parts[0]
    if mode == "l2regu":
        y1, y2 = C.view_features(x, p, part)
        value, d1, d2 = l2regu(y1, y2)

        def hook(x, p, g):
            gf = g.reshape(m, -1)
            gx, gw = C.view_backward(x, p, part, gf + lam * d1, gf + lam * d2)
            return gx, gw, C.bias_grad(p, g)

        return value, hook

    # cca: weight gradient only, by finite differences on the full batch
    if not isinstance(p, FcParams):
        raise ConfigError("cca regularization is only supported on fc layers")
    s1, s2 = part.selectors()
    X1, X2 = x[:, s1].T, x[:, s2].T
    k = cfg.cca_k or None
    penalty = cca_projected_total(X1, X2, p.W[s1], p.W[s2], k)

    def hook(x, p, g):
        gx, gw, gb = fc_backward(x, p, g)
        if lam:
            dw1, dw2 = cca_reg_gradient(X1, X2, p.W[s1], p.W[s2], k)
            gw = gw.copy()
            gw[s1] -= lam * dw1
            gw[s2] -= lam * dw2
        return gx, gw, gb

    return penalty, hook


def objective_value(loss, penalty, cfg):
    """Scalar training objective: Corr/CCA are subtracted, L2Regu is added."""
    if cfg.regularizer in ("corrreg", "cca"):
        return loss - cfg.lam * penalty
    if cfg.regularizer == "l2regu":
        return loss + cfg.lam * penalty
    return loss


def _forward(net, views, cfg, train, step_seed):
    rate = cfg.dropout_rate if cfg.regularizer == "dropout" else 0.0
    return net.forward(views, train=train, dropout_rate=rate, seed=step_seed)


def assemble_objective(net, batch, cfg, step_seed=0, train=True):
    """One forward/backward pass. Returns ``(loss, penalty, grads)``.

    ``loss`` is the mean cross-entropy, ``penalty`` the raw regularizer value
    at the flagged layer, ``grads`` the gradient of ``objective_value`` for
    every parameter.
    """
    views, labels = batch
    m = len(labels)
    if cfg.regularizer in ("corrreg", "l2regu", "cca") and m < 2:
        raise ConfigError(f"{cfg.regularizer} needs a batch of at least 2")
    logits = _forward(net, views, cfg, train, step_seed)
    loss, g = softmax_xent(logits, labels)
    penalty, hook = _penalty_and_hook(net, cfg, m)
    grads = net.backward(g, hook)
    return loss, penalty, grads


def evaluate_objective(net, batch, cfg, step_seed=0, train=True):
    """Forward-only value of the training objective (for finite-difference checks)."""
    views, labels = batch
    logits = _forward(net, views, cfg, train, step_seed)
    loss, _ = softmax_xent(logits, labels)
    penalty, _ = _penalty_and_hook(net, cfg, len(labels))
    return objective_value(loss, penalty, cfg)


def sgd_step(params, grads, velocity, lr, momentum, weight_decay, decay=None):
    """Momentum SGD: v <- mu*v - lr*(g + wd*p); p <- p + v.

    ``decay`` names the parameters that get weight decay (default: all).
    Returns new ``(params, velocity)`` dicts.
    """
    new_p, new_v = {}, {}
    for name, p in params.items():
        g = grads[name]
        if weight_decay and (decay is None or name in decay):
            g = g + weight_decay * p
        v = momentum * velocity.get(name, 0.0) - lr * g
        new_v[name] = v
        new_p[name] = p + v
    return new_p, new_v


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    penalty: float
    train_acc: float
    test_acc: float
    mean_corr: float
    seconds: float


METRIC_COLUMNS = [f.name for f in fields(EpochRecord)]


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)

    def write_csv(self, path, record_time=False):
        """One row per epoch. Wall time is written only with ``record_time``,
        so default output is byte-identical across identical runs."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_COLUMNS)
            for r in self.rows:
                d = asdict(r)
                d["seconds"] = repr(r.seconds) if record_time else "NA"
                w.writerow([d[c] if isinstance(d[c], str) else repr(d[c]) for c in METRIC_COLUMNS])

    def summary(self):
        if not self.rows:
            return "no epochs run\n"
        last = self.rows[-1]
        total = sum(r.seconds for r in self.rows)
        return (
            f"epochs: {len(self.rows)}\n"
            f"final loss: {last.loss:.6f}\n"
            f"final penalty: {last.penalty:.6f}\n"
            f"final train accuracy: {last.train_acc:.4f}\n"
            f"final test accuracy: {last.test_acc:.4f}\n"
            f"final mean neuron correlation: {last.mean_corr:.4f}\n"
            f"wall time: {total:.2f} s\n"
        )


def accuracy(net, dataset):
    if dataset is None or len(dataset) == 0:
        return float("nan")
    return float(np.mean(net.predict(dataset.views) == dataset.labels))


def _step_seed(*ints):
    return int(np.random.SeedSequence(list(ints)).generate_state(1)[0])


def _augment(views, cfg, seed):
    if not (cfg.augment_pad or cfg.augment_flip):
        return views
    out = []
    for v in views:
        if v.ndim != 4:
            out.append(v)
            continue
        out.append(augment_pad_crop_flip(v, cfg.augment_pad, v.shape[2], cfg.augment_flip, seed))
    return out


def train(net, dataset, cfg, test=None, on_epoch=None):
    """Run ``cfg.epochs`` epochs of mini-batch SGD and return a ``TrainReport``.

    Shuffling, dropout masks and augmentation are all derived from
    ``cfg.seed``; the network's initial weights come from its own seed.
    """
    report = TrainReport()
    params = net.get_params()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    decay = net.decay_names()
    n = len(dataset)
    probe = net.reg_layer is not None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cfg.lr_at(epoch)
        perm = np.random.Generator(np.random.PCG64([cfg.seed, 1, epoch])).permutation(n)
        losses, penalties = [], []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            seed = _step_seed(cfg.seed, epoch, b)
            views = _augment([v[idx] for v in dataset.views], cfg, seed)
            loss, penalty, grads = assemble_objective(net, (views, dataset.labels[idx]), cfg, seed)
            if not np.isfinite(loss) or not np.isfinite(penalty):
                raise TrainingError("loss diverged", epoch)
            params, velocity = sgd_step(params, grads, velocity, lr, cfg.momentum, cfg.weight_decay, decay)
            net.set_params(params)
            losses.append(loss)
            penalties.append(penalty)
        if any(not np.all(np.isfinite(v)) for v in params.values()):
            raise TrainingError("parameters diverged", epoch)
        rec = EpochRecord(
            epoch=epoch,
            lr=lr,
            loss=float(np.mean(losses)) if losses else float("nan"),
            penalty=float(np.mean(penalties)) if penalties else 0.0,
            train_acc=accuracy(net, dataset),
            test_acc=accuracy(net, test),
            mean_corr=neuron_corr_probe(net, dataset) if probe else float("nan"),
            seconds=time.perf_counter() - t0,
        )
        report.rows.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return report
