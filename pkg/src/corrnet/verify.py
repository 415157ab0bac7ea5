"""Independent oracles, the gradient-check corpus, and the backward-cost benchmark."""
import csv
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import corrreg as C
from . import layers as L
from .exceptions import NumericError
from .regularizers import l2regu
from .tensor import rng

H_DEFAULT = 1e-5
TOL_REL = 1e-5
TOL_ABS = 1e-8


@dataclass
class GradCheckReport:
    name: str
    max_rel_err: float
    max_abs_err: float
    worst_coordinate: tuple
    n_coords: int
    passed: bool


def finite_diff(f, x, h=H_DEFAULT):
    """Central differences of scalar ``f`` at ``x``; coordinate i steps by h * max(1, |x_i|)."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        step = h * max(1.0, abs(old))
        flat[i] = old + step
        fp = f(x)
        flat[i] = old - step
        fm = f(x)
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"objective not finite around coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def compare(name, analytic, numeric, tol_rel=TOL_REL, tol_abs=TOL_ABS):
    """Coordinate-wise comparison: each coordinate passes on relative OR absolute error."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ValueError(f"{name}: shape {a.shape} vs {n.shape}")
    abs_err = np.abs(a - n)
    rel_err = abs_err / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-300)
    rel_err = np.where(abs_err == 0, 0.0, rel_err)
    ok = (rel_err <= tol_rel) | (abs_err <= tol_abs)
    bad = np.where(ok, 0.0, rel_err)
    worst = np.unravel_index(int(np.argmax(bad if not ok.all() else rel_err)), a.shape) if a.size else ()
    return GradCheckReport(name, float(rel_err.max(initial=0.0)), float(abs_err.max(initial=0.0)),
                           tuple(int(i) for i in worst), int(a.size), bool(ok.all()))


def grad_check(name, f, x, analytic, h=H_DEFAULT, tol_rel=TOL_REL, tol_abs=TOL_ABS):
    return compare(name, analytic, finite_diff(f, x, h), tol_rel, tol_abs)


def pearson(y1, y2):
    """Sample Pearson coefficient via z-scores, independent of ``corrreg``."""
    y1 = np.asarray(y1, dtype=np.float64).ravel()
    y2 = np.asarray(y2, dtype=np.float64).ravel()
    if y1.size != y2.size or y1.size < 2:
        raise ValueError("pearson needs two samples of equal length >= 2")
    m = y1.size
    m1 = sum(y1) / m
    m2 = sum(y2) / m
    sd1 = np.sqrt(sum((v - m1) ** 2 for v in y1) / m)
    sd2 = np.sqrt(sum((v - m2) ** 2 for v in y2) / m)
    if sd1 == 0 or sd2 == 0:
        raise ValueError("pearson is undefined for a constant sample")
    return float(sum(((a - m1) / sd1) * ((b - m2) / sd2) for a, b in zip(y1, y2)) / m)


def neuron_corr_stats(features, rel_tol=1e-12):
    """Mean |correlation| over all pairs of non-constant columns, and how many were dropped."""
    f = np.asarray(features, dtype=np.float64)
    f = f.reshape(len(f), -1)
    f = f - f.mean(axis=0)
    sd = np.sqrt((f * f).mean(axis=0))
    keep = sd > rel_tol * max(1.0, float(np.abs(f).max(initial=0.0)))
    n_excluded = int((~keep).sum())
    z = f[:, keep] / sd[keep]
    k = z.shape[1]
    if k < 2:
        return float("nan"), n_excluded
    corr = z.T @ z / len(z)
    iu = np.triu_indices(k, 1)
    return float(np.abs(corr[iu]).mean()), n_excluded


def neuron_corr_probe(net, dataset, layer=None):
    """Mean absolute pairwise correlation of a layer's pre-activation outputs over a dataset."""
    mean, _ = neuron_corr_stats(net.features(dataset.views, layer))
    return mean


# -- gradient-check corpus ------------------------------------------------------

def _probe_weights(g, shape):
    return g.normal(size=shape)


def _check_corr_grads(g, m, n1, n2, eps, perturb, name):
    x1, x2 = g.normal(size=(m, n1)), g.normal(size=(m, n2))
    w1, w2 = g.normal(size=n1), g.normal(size=n2)
    dw1, dw2, dx1, dx2 = C.corr_grads(x1, x2, w1, w2, eps)
    dw1 = dw1 + perturb
    out = [
        grad_check(f"{name}/w1", lambda w: C.corr(x1 @ w, x2 @ w2, eps), w1, dw1),
        grad_check(f"{name}/w2", lambda w: C.corr(x1 @ w1, x2 @ w, eps), w2, dw2),
        grad_check(f"{name}/x1", lambda x: C.corr(x @ w1, x2 @ w2, eps), x1, dx1),
        grad_check(f"{name}/x2", lambda x: C.corr(x1 @ w1, x @ w2, eps), x2, dx2),
    ]
    return out


def corrreg_checks(n=50, seed=0, perturb=0.0):
    g = rng(seed)
    out = []
    sizes = (2, 8, 32)
    for i in range(n):
        m = sizes[i % 3]
        n1, n2 = int(g.integers(3, 17)), int(g.integers(3, 17))
        out.extend(_check_corr_grads(g, m, n1, n2, C.DEFAULT_EPS, perturb, f"corr_grads[{i}] m={m}"))
    # layer-level CorrReg objectives
    for i in range(5):
        x = g.normal(size=(8, 6))
        p = L.FcParams(g.normal(size=(6, 4)), g.normal(size=4))
        probe = _probe_weights(g, (8, 4))
        cfg = C.CorrRegConfig(0.1, C.DEFAULT_EPS, 1 + 2 * (i % 2), seed + i)
        parts = C.make_partitions(6, cfg.n_reg, cfg.seed)
        gx, gw, gb = C.corrreg_fc_backward(x, p, probe, cfg, parts)

        def obj(x_, W_):
            q = L.FcParams(W_, p.b)
            return float((L.fc_forward(x_, q) * probe).sum()) - cfg.lam * C.corrreg_penalty_total(x_, q, cfg, parts)

        out.append(grad_check(f"corrreg_fc[{i}]/x", lambda v: obj(v, p.W), x, gx))
        out.append(grad_check(f"corrreg_fc[{i}]/W", lambda v: obj(x, v), p.W, gw))
    for i in range(3):
        x = g.normal(size=(4, 4, 3, 3))
        p = L.ConvParams(g.normal(size=(3, 4, 3, 3)), g.normal(size=3), 1, 1)
        probe = _probe_weights(g, (4, 3, 3, 3))
        cfg = C.CorrRegConfig(0.1, C.DEFAULT_EPS, 1, 0)
        parts = C.make_partitions(4)
        gx, gf, gb = C.corrreg_conv_backward(x, p, probe, cfg, parts)

        def objc(x_, F_):
            q = L.ConvParams(F_, p.bias, p.stride, p.padding)
            return float((L.conv2d_forward(x_, q) * probe).sum()) - cfg.lam * C.corrreg_penalty_total(x_, q, cfg, parts)

        out.append(grad_check(f"corrreg_conv[{i}]/x", lambda v: objc(v, p.filters), x, gx))
        out.append(grad_check(f"corrreg_conv[{i}]/filters", lambda v: objc(x, v), p.filters, gf))
    return out


def layer_checks(n=20, seed=1, perturb=0.0):
    g = rng(seed)
    out = []
    for i in range(n):
        x = g.normal(size=(4, 6))
        p = L.FcParams(g.normal(size=(6, 3)), g.normal(size=3))
        probe = g.normal(size=(4, 3))
        gx, gw, gb = L.fc_backward(x, p, probe)
        gw = gw + perturb
        out.append(grad_check(f"fc[{i}]/x", lambda v: float((L.fc_forward(v, p) * probe).sum()), x, gx))
        out.append(grad_check(f"fc[{i}]/W", lambda v: float((L.fc_forward(x, L.FcParams(v, p.b)) * probe).sum()), p.W, gw))
        out.append(grad_check(f"fc[{i}]/b", lambda v: float((L.fc_forward(x, L.FcParams(p.W, v)) * probe).sum()), p.b, gb))

        xc = g.normal(size=(2, 3, 5, 5))
        pc = L.ConvParams(g.normal(size=(2, 3, 3, 3)), g.normal(size=2), 1 + i % 2, i % 2)
        pr = g.normal(size=L.conv2d_forward(xc, pc).shape)
        cx, cf, cb = L.conv2d_backward(xc, pc, pr)
        conv = lambda x_, F_, b_: float((L.conv2d_forward(x_, L.ConvParams(F_, b_, pc.stride, pc.padding)) * pr).sum())  # noqa: E731
        out.append(grad_check(f"conv[{i}]/x", lambda v: conv(v, pc.filters, pc.bias), xc, cx))
        out.append(grad_check(f"conv[{i}]/filters", lambda v: conv(xc, v, pc.bias), pc.filters, cf))
        out.append(grad_check(f"conv[{i}]/bias", lambda v: conv(xc, pc.filters, v), pc.bias, cb))

        xr = g.normal(size=(3, 5))
        xr[np.abs(xr) < 1e-3] = 0.5  # keep clear of the kink
        pr2 = g.normal(size=xr.shape)
        out.append(grad_check(f"relu[{i}]", lambda v: float((L.relu(v) * pr2).sum()), xr, L.relu_backward(xr, pr2)))

        kind = "max" if i % 2 == 0 else "avg"
        xp = g.normal(size=(2, 2, 6, 6))
        yp, cache = L.pool2d_forward(xp, kind, 3, 2, 1)
        prp = g.normal(size=yp.shape)
        out.append(grad_check(f"pool_{kind}[{i}]",
                              lambda v: float((L.pool2d_forward(v, kind, 3, 2, 1)[0] * prp).sum()),
                              xp, L.pool2d_backward(prp, cache)))

        xb = g.normal(size=(6, 3, 2, 2)) if i % 2 else g.normal(size=(6, 4))
        c = xb.shape[1]
        st = L.BatchNormState(g.normal(size=c), g.normal(size=c))
        yb, cb_ = L.batchnorm_forward(xb, L.BatchNormState(st.gamma, st.beta), "train")
        prb = g.normal(size=yb.shape)
        bx, bg, bb = L.batchnorm_backward(prb, st, cb_)

        def bn(x_, gamma, beta):
            return float((L.batchnorm_forward(x_, L.BatchNormState(gamma, beta), "train")[0] * prb).sum())

        out.append(grad_check(f"batchnorm[{i}]/x", lambda v: bn(v, st.gamma, st.beta), xb, bx))
        out.append(grad_check(f"batchnorm[{i}]/gamma", lambda v: bn(xb, v, st.beta), st.gamma, bg))
        out.append(grad_check(f"batchnorm[{i}]/beta", lambda v: bn(xb, st.gamma, v), st.beta, bb))

        logits = g.normal(size=(5, 4))
        labels = g.integers(0, 4, 5)
        _, gl = L.softmax_xent(logits, labels)
        out.append(grad_check(f"softmax_xent[{i}]", lambda v: L.softmax_xent(v, labels)[0], logits, gl))
    return out


def l2regu_checks(n=20, seed=2, perturb=0.0):
    g = rng(seed)
    out = []
    for i in range(n):
        y1, y2 = g.normal(size=(5, 3)), g.normal(size=(5, 3))
        _, g1, g2 = l2regu(y1, y2)
        g1 = g1 + perturb
        out.append(grad_check(f"l2regu[{i}]/y1", lambda v: l2regu(v, y2)[0], y1, g1, tol_rel=1e-8, tol_abs=1e-8))
        out.append(grad_check(f"l2regu[{i}]/y2", lambda v: l2regu(y1, v)[0], y2, g2, tol_rel=1e-8, tol_abs=1e-8))
    return out


def network_checks(seed=3, perturb=0.0):
    """End-to-end: fc 6->4 CorrReg layer + softmax, every parameter, each regularizer mode."""
    from .network import LayerNode, Network, NetworkSpec
    from .optim import TrainConfig, assemble_objective, evaluate_objective

    g = rng(seed)
    out = []
    x = g.normal(size=(8, 6))
    y = g.integers(0, 4, 8)
    spec = NetworkSpec("toy", [LayerNode("fc", {"n_out": 4}, corrreg=True)])
    for mode in ("none", "corrreg", "l2regu"):
        net = Network(spec, [(6,)], seed=seed)
        cfg = TrainConfig(lam=0.1, regularizer=mode, batch_size=8)
        _, _, grads = assemble_objective(net, ([x], y), cfg)
        grads = {k: v + perturb for k, v in grads.items()}
        base = net.get_params()
        for name, value in base.items():
            def f(v, name=name):
                net.set_params({**base, name: v})
                return evaluate_objective(net, ([x], y), cfg)

            out.append(grad_check(f"network[{mode}]/{name}", f, value, grads[name]))
            net.set_params(base)
    return out


SCOPES = ("all", "corrreg", "layers", "l2regu")


def run_gradcheck(scope="all", perturb=0.0, seed=0):
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    out = []
    if scope in ("all", "corrreg"):
        out += corrreg_checks(seed=seed, perturb=perturb)
    if scope in ("all", "layers"):
        out += layer_checks(seed=seed + 1, perturb=perturb)
    if scope in ("all", "l2regu"):
        out += l2regu_checks(seed=seed + 2, perturb=perturb)
    if scope == "all":
        out += network_checks(seed=seed + 3, perturb=perturb)
    return out


def write_gradcheck_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "max_rel_err", "max_abs_err", "worst_coordinate", "n_coords", "passed"])
        for r in reports:
            w.writerow([r.name, repr(r.max_rel_err), repr(r.max_abs_err),
                        "/".join(map(str, r.worst_coordinate)), r.n_coords, int(r.passed)])


# -- benchmark ------------------------------------------------------------------

@dataclass
class BenchResult:
    m: int
    n_in: int
    n_out: int
    plain_ns: float
    corrreg_ns: float
    ratio: float


def _median_ns(fns, repetitions, warmup):
    """Median time per callable; calls are interleaved so drift hits all alike."""
    for _ in range(warmup):
        for fn in fns:
            fn()
    times = [[] for _ in fns]
    for _ in range(repetitions):
        for fn, t in zip(fns, times):
            t0 = time.perf_counter_ns()
            fn()
            t.append(time.perf_counter_ns() - t0)
    return [float(np.median(t)) for t in times]


def backward_cost_bench(n_in=256, n_out=64, m=128, repetitions=60, warmup=5, lam=0.1, seed=0):
    """Median wall time of plain vs CorrReg fc backward at one geometry."""
    g = rng(seed)
    x = g.normal(size=(m, n_in))
    p = L.FcParams(g.normal(0, 1 / np.sqrt(n_in), (n_in, n_out)), np.zeros(n_out))
    grad = g.normal(size=(m, n_out)) / m
    cfg = C.CorrRegConfig(lam)
    parts = C.make_partitions(n_in)
    plain, reg = _median_ns([lambda: L.fc_backward(x, p, grad),
                             lambda: C.corrreg_fc_backward(x, p, grad, cfg, parts)],
                            repetitions, warmup)
    return BenchResult(m, n_in, n_out, plain, reg, reg / plain)


def write_bench_csv(path, results):
    cols = [f.name for f in fields(BenchResult)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in results:
            d = asdict(r)
            w.writerow([d[c] for c in cols])
