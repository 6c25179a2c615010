"""Synthetic multi-label data with controllable label co-occurrence.

Each instance belongs to one scene (a co-occurrence cluster). Scene labels
switch on independently with per-label activation probabilities. A subset of
each scene's labels are anchors: only they leave a signature in the feature
vector, via a fixed per-dataset matrix. The remaining (dependent) labels are
recoverable mainly through co-occurrence with their anchors, which is exactly
the structure a label-dependency-aware classifier should exploit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DatasetError(Exception):
    pass


@dataclass
class Scene:
    labels: list[int]
    probs: list[float]       # activation probability per member label
    anchors: list[int]       # subset of labels that are feature-visible


@dataclass
class DependencySpec:
    n_labels: int
    scenes: list[Scene]
    d: int                   # feature dimension
    noise_std: float
    anchor_fraction: float   # recorded for validation/reporting

    def validate(self) -> None:
        covered = set()
        for s in self.scenes:
            if len(s.labels) != len(s.probs):
                raise DatasetError("scene labels/probs length mismatch")
            if not set(s.anchors) <= set(s.labels):
                raise DatasetError("scene anchors must be scene members")
            if not s.anchors:
                raise DatasetError("every scene needs at least one anchor")
            if any(not (0.0 <= p <= 1.0) for p in s.probs):
                raise DatasetError("activation probabilities must lie in [0, 1]")
            if any(not (0 <= l < self.n_labels) for l in s.labels):
                raise DatasetError("scene label index out of range")
            covered.update(s.labels)
        if covered != set(range(self.n_labels)):
            raise DatasetError("every label must belong to at least one scene")
        if not (0.0 < self.anchor_fraction <= 1.0):
            raise DatasetError("anchor_fraction must lie in (0, 1]")
        if self.d <= 0 or self.noise_std < 0:
            raise DatasetError("d must be positive and noise_std non-negative")


def default_spec(n_labels: int = 12, n_scenes: int = 4,
                 labels_per_scene: int = 3, d: int = 16,
                 noise_std: float = 0.45,
                 anchor_prob: float = 0.9,
                 dependent_prob: float = 0.5) -> DependencySpec:
    """Desk-scale default: 4 scenes of 3 labels, 2 anchors + 1 dependent each.

    Dependent labels activate half the time within their scene, so a
    per-label-calibrated classifier sits at the decision boundary while
    co-occurrence with the (strong) anchors carries real signal.
    """
    if n_scenes * labels_per_scene != n_labels:
        raise DatasetError("default layout needs n_scenes * labels_per_scene == n_labels")
    n_anchors = max(1, round(labels_per_scene * 2 / 3))
    scenes = []
    for s in range(n_scenes):
        labels = list(range(s * labels_per_scene, (s + 1) * labels_per_scene))
        probs = [anchor_prob] * n_anchors + \
                [dependent_prob] * (labels_per_scene - n_anchors)
        scenes.append(Scene(labels, probs, labels[:n_anchors]))
    return DependencySpec(n_labels, scenes, d, noise_std,
                          anchor_fraction=n_anchors / labels_per_scene)


@dataclass
class Dataset:
    features: np.ndarray      # (n, d)
    labels: np.ndarray        # (n, n_labels), hard
    split: np.ndarray         # (n,) of 0 (train) / 1 (test)
    seed: int
    signature: np.ndarray     # (d, n_labels) anchor signature matrix
    spec: DependencySpec | None = None

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def indices(self, split: str) -> np.ndarray:
        tag = {"train": 0, "test": 1}[split]
        return np.nonzero(self.split == tag)[0]


def generate_dataset(spec: DependencySpec, n: int, seed: int,
                     test_fraction: float = 1 / 6) -> Dataset:
    """n instances; features carry only the anchor labels' signatures plus noise."""
    spec.validate()
    if n < 1:
        raise DatasetError("n must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    # fixed per-dataset signature matrix; non-anchor columns stay unused
    signature = rng.normal(size=(spec.d, spec.n_labels))
    signature /= np.linalg.norm(signature, axis=0, keepdims=True)
    anchor_cols = sorted({a for s in spec.scenes for a in s.anchors})
    anchor_mask = np.zeros(spec.n_labels)
    anchor_mask[anchor_cols] = 1.0

    labels = np.zeros((n, spec.n_labels))
    scene_ids = rng.integers(0, len(spec.scenes), size=n)
    for i in range(n):
        s = spec.scenes[scene_ids[i]]
        draws = rng.uniform(size=len(s.labels))
        for lbl, p, u in zip(s.labels, s.probs, draws):
            if u < p:
                labels[i, lbl] = 1.0
    y_anchor = labels * anchor_mask
    features = y_anchor @ signature.T
    features += spec.noise_std * rng.normal(size=features.shape)

    n_test = int(round(n * test_fraction))
    split = np.zeros(n, dtype=np.int64)
    split[rng.permutation(n)[:n_test]] = 1
    return Dataset(features, labels, split, seed, signature, spec)


def sample_matched(dataset: Dataset, batch_size: int,
                   rng: np.random.Generator, split: str = "train"):
    """Uniform batch without replacement from one split: (features, labels)."""
    idx = dataset.indices(split)
    if batch_size > len(idx):
        raise DatasetError(
            f"batch size {batch_size} exceeds {split} split size {len(idx)}")
    pick = rng.choice(idx, size=batch_size, replace=False)
    return dataset.features[pick], dataset.labels[pick]


def sample_mismatched(dataset: Dataset, labels: np.ndarray,
                      rng: np.random.Generator, split: str = "train",
                      max_retries: int = 1000) -> np.ndarray:
    """For each row, a label vector of a random other instance, never equal."""
    idx = dataset.indices(split)
    pool = dataset.labels[idx]
    out = np.empty_like(labels)
    for i, y in enumerate(labels):
        for _ in range(max_retries):
            donor = pool[rng.integers(0, len(pool))]
            if not np.array_equal(donor, y):
                out[i] = donor
                break
        else:
            raise DatasetError(
                "could not draw a mismatched label vector; dataset degenerate")
    return out


DATA_MAGIC = "MLGAN-DATA v1"


def save_dataset(dataset: Dataset, path) -> None:
    lines = [DATA_MAGIC]
    n, d, k = len(dataset.features), dataset.d, dataset.n_labels
    lines.append(f"{n} {k} {d} {dataset.seed}")
    for x, y in zip(dataset.features, dataset.labels):
        feats = " ".join(f"{v:.17g}" for v in x)
        labs = " ".join(str(int(v)) for v in y)
        lines.append(f"{feats} {labs}")
    lines.append(" ".join(str(int(s)) for s in dataset.split))
    for row in dataset.signature:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != DATA_MAGIC:
        raise DatasetError(f"{path}:1: bad or missing magic line")
    try:
        n, k, d, seed = (int(v) for v in lines[1].split())
    except (IndexError, ValueError):
        raise DatasetError(f"{path}:2: malformed header") from None
    expected = 2 + n + 1 + d
    if len(lines) < expected:
        raise DatasetError(
            f"{path}:{len(lines)}: truncated, expected {expected} lines")
    features = np.empty((n, d))
    labels = np.empty((n, k))
    for i in range(n):
        lineno = 3 + i
        parts = lines[2 + i].split()
        if len(parts) != d + k:
            raise DatasetError(
                f"{path}:{lineno}: expected {d + k} fields, got {len(parts)}")
        try:
            row = [float(v) for v in parts]
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: bad number") from None
        features[i] = row[:d]
        labels[i] = row[d:]
        if not np.all((labels[i] == 0) | (labels[i] == 1)):
            raise DatasetError(f"{path}:{lineno}: labels must be 0/1")
    split_line = 2 + n
    split = np.array([int(v) for v in lines[split_line].split()], dtype=np.int64)
    if len(split) != n:
        raise DatasetError(f"{path}:{split_line + 1}: split length mismatch")
    signature = np.empty((d, k))
    for r in range(d):
        lineno = split_line + 1 + r
        parts = lines[lineno].split()
        if len(parts) != k:
            raise DatasetError(f"{path}:{lineno + 1}: signature row width mismatch")
        signature[r] = [float(v) for v in parts]
    return Dataset(features, labels, split, seed, signature, None)
