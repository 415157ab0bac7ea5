"""Two-view datasets: synthetic generator, IDX/CSV loaders, augmentation, occlusion."""
import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError
from .tensor import rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class TwoViewDataset:
    view1: np.ndarray
    labels: np.ndarray
    view2: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.view1 = np.asarray(self.view1, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if len(self.view1) != n:
            raise ValueError(f"view1 has {len(self.view1)} samples, labels {n}")
        if self.view2 is not None:
            self.view2 = np.asarray(self.view2, dtype=np.float64)
            if len(self.view2) != n:
                raise ValueError(f"view2 has {len(self.view2)} samples, labels {n}")
        if n and self.labels.min() < 0:
            raise ValueError("labels must be non-negative")

    def __len__(self):
        return len(self.labels)

    @property
    def views(self):
        return [self.view1] if self.view2 is None else [self.view1, self.view2]

    @property
    def n_classes(self):
        return int(self.meta.get("K", self.labels.max() + 1 if len(self) else 0))

    def subset(self, idx):
        return TwoViewDataset(self.view1[idx], self.labels[idx],
                              None if self.view2 is None else self.view2[idx], dict(self.meta))

    def split(self, test_fraction, seed=0):
        """Seeded train/test split, stratified so each class keeps its share."""
        g = rng(seed)
        test = []
        for k in np.unique(self.labels):
            idx = np.flatnonzero(self.labels == k)
            test.append(g.permutation(idx)[: int(round(test_fraction * len(idx)))])
        mask = np.zeros(len(self), dtype=bool)
        if test:
            mask[np.concatenate(test)] = True
        return self.subset(np.flatnonzero(~mask)), self.subset(np.flatnonzero(mask))


def gen_synthetic_two_view(N, K, latent_dim, d1, d2, noise_sigma, seed=0,
                           class_sep=3.0, latent_spread=1.0, view_shape1=None, view_shape2=None):
    """Two noisy linear views of a shared class-structured latent code.

    Class means are drawn once from N(0, class_sep^2 I). Each sample's latent
    is its class mean plus Gaussian jitter (scale ``latent_spread``) whose norm
    is clipped to 0.45x the smallest distance between class means, so every
    latent falls inside its class's nearest-mean cell: with
    ``noise_sigma = 0`` both views are linearly separable. Views are
    ``z @ A_k + noise_sigma * N(0, I)`` for fixed random maps A_k. Labels are
    balanced (exactly N/K per class when K divides N). ``view_shape*``
    optionally reshapes a view per sample, e.g. ``(1, 8, 8)`` for d=64.
    """
    if K < 2 or latent_dim < 1 or latent_dim > min(d1, d2) or N < 1 or noise_sigma < 0:
        raise ValueError(f"invalid generator arguments N={N} K={K} latent={latent_dim} d1={d1} d2={d2}")
    g = rng(seed)
    means = g.normal(0.0, class_sep, (K, latent_dim))
    gaps = np.linalg.norm(means[:, None] - means[None], axis=-1)
    radius = 0.45 * gaps[~np.eye(K, dtype=bool)].min()
    A1 = g.normal(0.0, 1.0 / np.sqrt(latent_dim), (latent_dim, d1))
    A2 = g.normal(0.0, 1.0 / np.sqrt(latent_dim), (latent_dim, d2))

    labels = g.permutation(np.arange(N) % K)
    jitter = g.normal(0.0, latent_spread, (N, latent_dim))
    norms = np.linalg.norm(jitter, axis=1, keepdims=True)
    jitter *= np.minimum(1.0, radius / np.maximum(norms, 1e-300))
    z = means[labels] + jitter
    view1 = z @ A1 + noise_sigma * g.normal(size=(N, d1))
    view2 = z @ A2 + noise_sigma * g.normal(size=(N, d2))
    if view_shape1 is not None:
        view1 = view1.reshape((N,) + tuple(view_shape1))
    if view_shape2 is not None:
        view2 = view2.reshape((N,) + tuple(view_shape2))
    meta = dict(N=N, K=K, latent_dim=latent_dim, d1=d1, d2=d2, noise_sigma=noise_sigma, seed=seed,
                class_sep=class_sep, latent_spread=latent_spread)
    return TwoViewDataset(view1, labels, view2, meta)


# -- IDX ----------------------------------------------------------------------

def _read_idx(path, expected_magic, expected_ndim):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for IDX header", 0)
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise FormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    header = 4 + 4 * expected_ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension header", len(raw))
    dims = struct.unpack_from(f">{expected_ndim}I", raw, 4)
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise FormatError(f"{path}: truncated payload, need {size} bytes after header", len(raw))
    if len(raw) > header + size:
        raise FormatError(f"{path}: {len(raw) - header - size} trailing bytes", header + size)
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path):
    """Read an IDX image/label pair; pixels become float64 in [0, 1], shape (N, 1, H, W)."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels", 4)
    x = images.astype(np.float64)[:, None] / 255.0
    return TwoViewDataset(x, labels.astype(np.int64), meta={"source": "idx", "K": int(labels.max()) + 1 if len(labels) else 0})


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images (N, H, W) and labels (N,) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def load_csv(path, shape=None):
    """One row per sample: label, then the flattened values."""
    labels, rows = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            try:
                labels.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no samples")
    if len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: rows have differing lengths")
    x = np.array(rows)
    if shape is not None:
        x = x.reshape((len(rows),) + tuple(shape))
    return TwoViewDataset(x, np.array(labels), meta={"source": "csv"})


# -- augmentation and corruption ------------------------------------------------

def _per_image(x, seed, fn):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return fn(x, rng(seed))
    if x.ndim != 4:
        raise ValueError(f"expected (c, H, W) or (N, c, H, W), got {x.shape}")
    return np.stack([fn(img, rng(seed ^ i)) for i, img in enumerate(x)]) if len(x) else x.copy()


def augment_pad_crop_flip(x, pad, crop, flip_prob, seed):
    """Zero-pad, take a random ``crop`` x ``crop`` window, maybe mirror horizontally.

    Works on one image (c, H, W) or a batch; image i of a batch uses seed ^ i.
    """
    h, w = np.shape(x)[-2:]
    if pad < 0 or crop < 1 or crop > h + 2 * pad or crop > w + 2 * pad or not 0 <= flip_prob <= 1:
        raise ValueError(f"invalid augmentation pad={pad} crop={crop} flip_prob={flip_prob} for {h}x{w}")

    def one(img, g):
        padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad))) if pad else img
        top = g.integers(0, h + 2 * pad - crop + 1)
        left = g.integers(0, w + 2 * pad - crop + 1)
        out = padded[:, top:top + crop, left:left + crop]
        if g.random() < flip_prob:
            out = out[:, :, ::-1]
        return np.array(out)

    return _per_image(x, seed, one)


def occlude(x, block_h, block_w, seed):
    """Zero one block_h x block_w region at a random position, across all channels."""
    h, w = np.shape(x)[-2:]
    if block_h < 0 or block_w < 0 or block_h > h or block_w > w:
        raise ValueError(f"block {block_h}x{block_w} does not fit image {h}x{w}")

    def one(img, g):
        out = img.copy()
        if block_h and block_w:
            top = g.integers(0, h - block_h + 1)
            left = g.integers(0, w - block_w + 1)
            out[:, top:top + block_h, left:left + block_w] = 0.0
        return out

    return _per_image(x, seed, one)
