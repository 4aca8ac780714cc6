"""Extended-CHSH inputs and the clustered 8-feature synthetic dataset."""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass
from math import pi
from pathlib import Path

import numpy as np

N_FEATURES = 8
N_SAMPLES = 4096
N_CLUSTERS = 64
RADIUS = pi / 4
HEADER = [f"x{i}" for i in range(1, N_FEATURES + 1)] + ["label", "cluster"]


@dataclass(frozen=True)
class CHSHInput:
    s1: int
    s2: int
    t1: int
    t2: int

    @property
    def label(self) -> int:
        return self.s2 * self.t2 * (-1) ** (self.s1 * self.t1)


def chsh_inputs() -> list[CHSHInput]:
    """All 16 inputs, s1,t1 in {0,1} and s2,t2 in {-1,1}."""
    return [CHSHInput(s1, s2, t1, t2)
            for s1, s2, t1, t2 in itertools.product((0, 1), (-1, 1), (0, 1), (-1, 1))]


def embed_chsh(inp: CHSHInput, kind: str = "optimal") -> np.ndarray:
    """Four embedding angles; the first two feed processor A."""
    if kind == "optimal":
        vals = (inp.s1, inp.s2, inp.t1, inp.t2)
    elif kind == "alternative":
        vals = (inp.s2, inp.s1, inp.t2, inp.t1)
    else:
        raise ValueError(f"unknown CHSH embedding {kind!r}")
    return pi / 2 * np.array(vals, dtype=float)


def chsh_dataset(kind: str = "optimal") -> tuple[np.ndarray, np.ndarray]:
    """(16, 4) features and (16,) labels."""
    inputs = chsh_inputs()
    return (np.stack([embed_chsh(i, kind) for i in inputs]),
            np.array([i.label for i in inputs], dtype=float))


@dataclass
class Dataset:
    features: np.ndarray          # (N, 8)
    labels: np.ndarray            # (N,) of +-1
    clusters: np.ndarray          # (N,) cluster ids
    train_idx: np.ndarray
    val_idx: np.ndarray
    shifts: np.ndarray | None = None          # (64, 8)
    cluster_labels: np.ndarray | None = None  # (64,)
    seed: int | None = None

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[self.train_idx], self.labels[self.train_idx]

    @property
    def val(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[self.val_idx], self.labels[self.val_idx]

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "n_samples": int(self.labels.size),
            "n_train": int(self.train_idx.size),
            "n_val": int(self.val_idx.size),
            "label_counts": {"+1": int((self.labels > 0).sum()), "-1": int((self.labels < 0).sum())},
            "shift_vectors": None if self.shifts is None else self.shifts.tolist(),
            "cluster_labels": None if self.cluster_labels is None else self.cluster_labels.astype(int).tolist(),
        }


def sample_ball(rng: np.random.Generator, n: int, dim: int = N_FEATURES,
                radius: float = RADIUS) -> np.ndarray:
    """Uniform points in a ``dim``-ball: Gaussian direction, radius R U^(1/dim)."""
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (radius * rng.random(n) ** (1 / dim))[:, None]


def stratified_split(labels: np.ndarray, rng: np.random.Generator,
                     train_fraction: float = 0.75) -> tuple[np.ndarray, np.ndarray]:
    train, val = [], []
    for lab in (-1, 1):
        idx = rng.permutation(np.flatnonzero(labels == lab))
        cut = int(round(train_fraction * idx.size))
        train.append(idx[:cut])
        val.append(idx[cut:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def gen_synthetic(seed: int) -> Dataset:
    """4096 points in 64 shifted clusters of 64, half the clusters per label."""
    rng = np.random.default_rng(seed)
    points = sample_ball(rng, N_SAMPLES)
    clusters = rng.permutation(np.repeat(np.arange(N_CLUSTERS), N_SAMPLES // N_CLUSTERS))
    corners = rng.choice(1 << N_FEATURES, size=N_CLUSTERS, replace=False)
    bits = (corners[:, None] >> np.arange(N_FEATURES)) & 1
    shifts = RADIUS * (1 - 2 * bits).astype(float)
    cluster_labels = rng.permutation(np.repeat([-1.0, 1.0], N_CLUSTERS // 2))
    features = points + shifts[clusters]
    labels = cluster_labels[clusters]
    train_idx, val_idx = stratified_split(labels, rng)
    return Dataset(features, labels, clusters, train_idx, val_idx, shifts, cluster_labels, seed)


def write_csv(dataset: Dataset, path, split: str = "all") -> None:
    """Write one sample per row; ``split`` selects all, train or val rows."""
    idx = {"all": np.arange(dataset.labels.size), "train": dataset.train_idx,
           "val": dataset.val_idx}[split]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for i in idx:
            w.writerow([repr(float(v)) for v in dataset.features[i]]
                       + [int(dataset.labels[i]), int(dataset.clusters[i])])


def read_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse a dataset CSV into (features, labels, clusters).

    The cluster column is optional; missing clusters read as -1.
    """
    feats, labels, clusters = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header not in (HEADER, HEADER[:-1]):
            raise ValueError(f"{path}:1: expected header {','.join(HEADER)}")
        width = len(header)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != width:
                raise ValueError(f"{path}:{line}: expected {width} fields, got {len(row)}")
            try:
                x = [float(v) for v in row[:N_FEATURES]]
                lab = int(row[N_FEATURES])
                cl = int(row[N_FEATURES + 1]) if width > N_FEATURES + 1 else -1
            except ValueError as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
            if lab not in (-1, 1):
                raise ValueError(f"{path}:{line}: label must be -1 or 1, got {lab}")
            feats.append(x)
            labels.append(lab)
            clusters.append(cl)
    return (np.array(feats, dtype=float).reshape(-1, N_FEATURES),
            np.array(labels, dtype=float), np.array(clusters, dtype=int))


def write_manifest(dataset: Dataset, path) -> None:
    Path(path).write_text(json.dumps(dataset.manifest(), indent=2) + "\n")


def save(dataset: Dataset, directory) -> None:
    """Write train.csv, val.csv and manifest.json under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_csv(dataset, directory / "train.csv", "train")
    write_csv(dataset, directory / "val.csv", "val")
    write_manifest(dataset, directory / "manifest.json")
