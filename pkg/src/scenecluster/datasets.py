"""Synthetic datasets and the imbalanced class subsampler."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scenecluster.errors import ClusteringError
from scenecluster.features import AudioSignal

SCENE_SAMPLE_RATE = 22050


@dataclass
class LabeledDataset:
    """Items with optional ground truth.

    ``features`` holds one row per item for vector datasets, ``signals``
    holds raw audio for scene datasets, and ``paths`` points at on-disk
    items; unused fields stay empty.
    """

    ids: list[str]
    labels: np.ndarray | None = None
    features: np.ndarray | None = None
    signals: list[AudioSignal] = field(default_factory=list)
    paths: list[str] = field(default_factory=list)
    provenance: str = "synthetic"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise ClusteringError("dataset ids are not unique")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.size != len(self.ids):
                raise ClusteringError("label count differs from item count")

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx) -> "LabeledDataset":
        idx = [int(i) for i in idx]
        return LabeledDataset(
            ids=[self.ids[i] for i in idx],
            labels=None if self.labels is None else self.labels[idx],
            features=None if self.features is None else self.features[idx],
            signals=[self.signals[i] for i in idx] if self.signals else [],
            paths=[self.paths[i] for i in idx] if self.paths else [],
            provenance=self.provenance,
            meta=dict(self.meta),
        )


def _blob_centres(rng, g, dim, separation):
    """Rejection-sample ``g`` centres with all pairwise distances >= separation."""
    side = separation * max(1.0, g ** (1.0 / dim)) * 1.5
    while True:
        centres = []
        tries = 0
        while len(centres) < g and tries < 2000:
            c = rng.uniform(0.0, side, size=dim)
            if all(np.linalg.norm(c - o) >= separation for o in centres):
                centres.append(c)
            tries += 1
        if len(centres) == g:
            return np.array(centres)
        side *= 1.25


def synth_blobs(n_clusters: int, per_cluster: int, dim: int = 2, separation: float = 10.0,
                seed: int = 0) -> LabeledDataset:
    """Isotropic unit-variance Gaussian blobs with well-separated centres."""
    if n_clusters < 2 or per_cluster < 2:
        raise ClusteringError("need at least 2 clusters of at least 2 points")
    rng = np.random.default_rng(seed)
    centres = _blob_centres(rng, n_clusters, dim, separation)
    labels = np.repeat(np.arange(n_clusters), per_cluster)
    X = centres[labels] + rng.standard_normal((labels.size, dim))
    ids = [f"b{i:05d}" for i in range(labels.size)]
    return LabeledDataset(ids, labels=labels, features=X, meta={"centres": centres.tolist()})


def _bandlimited_noise(rng, n, sr, lo, hi):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    x = np.fft.irfft(spec, n)
    return x / (np.std(x) + 1e-12)


def scene_bands(n_classes: int, fmin: float = 150.0, fmax: float = 9000.0) -> np.ndarray:
    """Disjoint dominant bands, log-spaced, one per class, with guard gaps."""
    edges = np.geomspace(fmin, fmax, n_classes + 1)
    lo = edges[:-1] * 1.08
    hi = edges[1:] / 1.08
    return np.stack([lo, hi], axis=1)


def synth_scene_signal(rng, band, sr=SCENE_SAMPLE_RATE, duration=None):
    lo, hi = band
    duration = rng.uniform(1.0, 3.0) if duration is None else duration
    n = int(round(duration * sr))
    t = np.arange(n) / sr
    x = _bandlimited_noise(rng, n, sr, lo, hi) * rng.uniform(0.6, 1.0)
    # two tones inside the band with small per-item jitter
    for frac in (0.3, 0.7):
        f = np.exp(np.log(lo) + frac * (np.log(hi) - np.log(lo))) * rng.uniform(0.97, 1.03)
        x += rng.uniform(0.8, 1.6) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    x += 0.05 * rng.standard_normal(n)
    x *= rng.uniform(0.2, 0.8) / np.max(np.abs(x))
    return AudioSignal(x, sr)


def synth_scenes(n_classes: int, per_class: int, seed: int = 0, sr: int = SCENE_SAMPLE_RATE) -> LabeledDataset:
    """Band-limited noise plus tones, one disjoint dominant band per class; 1-3 s each."""
    if n_classes < 2:
        raise ClusteringError("need at least 2 classes")
    if per_class < 1:
        raise ClusteringError("per_class must be positive")
    rng = np.random.default_rng(seed)
    bands = scene_bands(n_classes, fmax=min(9000.0, 0.45 * sr))
    labels = np.repeat(np.arange(n_classes), per_class)
    signals = [synth_scene_signal(rng, bands[c], sr) for c in labels]
    ids = [f"scene{c:02d}_{k:04d}" for k, c in enumerate(labels)]
    return LabeledDataset(ids, labels=labels, signals=signals)


def retention_sizes(class_sizes, r_min: float, order) -> np.ndarray:
    """Kept item count per class; ``order`` lists classes from r_min up to rate 1."""
    g = len(class_sizes)
    rates = np.linspace(r_min, 1.0, g) if g > 1 else np.array([1.0])
    out = np.zeros(g, dtype=np.int64)
    for rank, c in enumerate(order):
        out[c] = int(np.floor(rates[rank] * class_sizes[c] + 0.5))
    return out


def subsample_imbalanced(ds: LabeledDataset, r_min: float, seed: int = 0) -> LabeledDataset:
    """Keep class ``order[k]`` at a rate linearly ramped from ``r_min`` to 1.

    The class ordering (hence which class is first/last) is a random
    permutation drawn from ``seed``.  Items are drawn without replacement and
    returned in their original order.
    """
    if not 0 < r_min <= 1:
        raise ClusteringError("r_min must lie in (0, 1]")
    if ds.labels is None:
        raise ClusteringError("subsampling needs a labeled dataset")
    classes = np.unique(ds.labels)
    dense = np.searchsorted(classes, ds.labels)
    sizes = np.bincount(dense)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(classes))
    keep_n = retention_sizes(sizes, r_min, order)
    if np.any(keep_n < 1):
        raise ClusteringError("retention too small: a class would be emptied")
    keep = []
    for c in range(len(classes)):
        members = np.flatnonzero(dense == c)
        keep.append(rng.choice(members, size=keep_n[c], replace=False))
    return ds.subset(np.sort(np.concatenate(keep)))
