"""Benchmark generators, Gaussian reference sampling, CSV I/O, standardization,
splits, and inducing-point selection.

The 2D benchmark formulas follow the de-facto standard suite used throughout
the continuous normalizing-flow literature; the exact constructions are
documented in each branch of ``generate_benchmark`` and are frozen (tests
assert their support properties). Everything is seeded and deterministic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

BENCHMARKS = (
    "pinwheel",
    "two_spirals",
    "moons",
    "eight_gaussians",
    "circles",
    "swissroll",
    "checkerboard",
)

# aliases commonly used in the literature
_ALIASES = {"2spirals": "two_spirals", "8gaussians": "eight_gaussians"}


def generate_benchmark(name: str, n: int, seed: int) -> np.ndarray:
    """Draw n points in 2D from the named benchmark distribution.

    Formulas (deterministic given the seed):

    - moons: two unit semicircle arcs, upper arc (cos t, sin t) and lower
      arc (1 - cos t, 1 - sin t - 0.5) for t equispaced on [0, pi], plus
      N(0, 0.1^2) noise per coordinate, then scaled by 2 and shifted by
      (-1, -0.2).
    - circles: concentric circles of radius 1 and 0.5 (angles equispaced on
      [0, 2pi)), plus N(0, 0.08^2) noise, scaled by 3.
    - eight_gaussians: mixture of 8 equally weighted N(c_i, 0.5^2 I) with
      centers on a radius-4 ring at multiples of 45 degrees, divided by 1.414.
    - pinwheel: 5 spiral blades; radial/tangential features N(1, 0.3^2) x
      N(0, 0.1^2) rotated by angle (2 pi class/5) + 0.25 exp(radial), x2.
    - two_spirals: r = sqrt(u) * 540 degrees; arms (-cos r, sin r) * r / 3 and
      the negation, uniform jitter 0.5/3, plus N(0, 0.1^2) noise.
    - swissroll: t = 1.5 pi (1 + 2u); (t cos t, t sin t) + N(0, 1) noise,
      divided by 5.
    - checkerboard: x1 uniform on [-2, 2); x2 uniform on [0, 1) shifted down
      by 2 with probability 1/2 and up by (floor(x1) mod 2); scaled by 2.
      Occupied 2x2 cells tile [-4, 4]^2 with floor(x/2) + floor(y/2) even.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    name = _ALIASES.get(name, name)
    if name not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {name!r}; expected one of {BENCHMARKS}")
    rng = np.random.default_rng(seed)

    if name == "moons":
        n_out = n // 2
        n_in = n - n_out
        t_out = np.linspace(0, np.pi, n_out)
        t_in = np.linspace(0, np.pi, n_in)
        pts = np.concatenate(
            [
                np.stack([np.cos(t_out), np.sin(t_out)], axis=1),
                np.stack([1 - np.cos(t_in), 1 - np.sin(t_in) - 0.5], axis=1),
            ]
        )
        pts += rng.normal(0.0, 0.1, pts.shape)
        return pts * 2 + np.array([-1.0, -0.2])

    if name == "circles":
        n_out = n // 2
        n_in = n - n_out
        t_out = np.linspace(0, 2 * np.pi, n_out, endpoint=False)
        t_in = np.linspace(0, 2 * np.pi, n_in, endpoint=False)
        pts = np.concatenate(
            [
                np.stack([np.cos(t_out), np.sin(t_out)], axis=1),
                0.5 * np.stack([np.cos(t_in), np.sin(t_in)], axis=1),
            ]
        )
        pts += rng.normal(0.0, 0.08, pts.shape)
        return pts * 3

    if name == "eight_gaussians":
        s = 1.0 / np.sqrt(2)
        centers = 4.0 * np.array(
            [(1, 0), (-1, 0), (0, 1), (0, -1), (s, s), (s, -s), (-s, s), (-s, -s)]
        )
        idx = rng.integers(0, 8, n)
        return (rng.standard_normal((n, 2)) * 0.5 + centers[idx]) / 1.414

    if name == "pinwheel":
        radial_std, tangential_std, num_classes, rate = 0.3, 0.1, 5, 0.25
        rads = np.linspace(0, 2 * np.pi, num_classes, endpoint=False)
        features = rng.standard_normal((n, 2)) * np.array([radial_std, tangential_std])
        features[:, 0] += 1.0
        labels = rng.integers(0, num_classes, n)
        angles = rads[labels] + rate * np.exp(features[:, 0])
        rot = np.stack(
            [np.cos(angles), -np.sin(angles), np.sin(angles), np.cos(angles)], axis=1
        ).reshape(-1, 2, 2)
        return 2.0 * np.einsum("ti,tij->tj", features, rot)

    if name == "two_spirals":
        half = n // 2
        r = np.sqrt(rng.random((half, 1))) * 540 * (2 * np.pi) / 360
        d1x = -np.cos(r) * r + rng.random((half, 1)) * 0.5
        d1y = np.sin(r) * r + rng.random((half, 1)) * 0.5
        arm = np.hstack([d1x, d1y])
        pts = np.vstack([arm, -arm[: n - half]]) / 3
        return pts + rng.normal(0.0, 0.1, pts.shape)

    if name == "swissroll":
        t = 1.5 * np.pi * (1 + 2 * rng.random(n))
        pts = np.stack([t * np.cos(t), t * np.sin(t)], axis=1)
        pts += rng.normal(0.0, 1.0, pts.shape)
        return pts / 5.0

    # checkerboard
    x1 = rng.random(n) * 4 - 2
    x2 = rng.random(n) - rng.integers(0, 2, n) * 2 + (np.floor(x1) % 2)
    return np.stack([x1, x2], axis=1) * 2


def benchmark_split(name: str, seed: int, n_total: int = 25000):
    """Train/validation/test split for a benchmark.

    5,000 training points (10,000 for checkerboard, the hardest case); the
    remainder is split evenly into validation and test.
    """
    name = _ALIASES.get(name, name)
    pts = generate_benchmark(name, n_total, seed)
    n_train = 10000 if name == "checkerboard" else 5000
    if n_train >= n_total:
        raise ValueError(f"n_total={n_total} too small for a {n_train}-point training split")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B11]))
    perm = rng.permutation(n_total)
    pts = pts[perm]
    rest = n_total - n_train
    n_val = rest // 2
    return pts[:n_train], pts[n_train : n_train + n_val], pts[n_train + n_val :]


def sample_reference(n: int, d: int, seed) -> np.ndarray:
    """n i.i.d. standard-normal d-vectors."""
    if n < 0 or d < 1:
        raise ValueError("need n >= 0 and d >= 1")
    return np.random.default_rng(seed).standard_normal((n, d))


# ------------------------------------------------------------------
# CSV: comma-separated, '.' decimal, optional single header row, UTF-8,
# rows are samples and columns are coordinates. Floats are written with
# repr (shortest round-trip), so save -> load is value-exact.
# ------------------------------------------------------------------

def save_csv(path, X, header: list[str] | None = None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected an N x d matrix")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in X:
            w.writerow([repr(float(v)) for v in row])


def load_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")

    def parse(row, idx):
        out = []
        for cell in row:
            try:
                out.append(float(cell))
            except ValueError:
                raise ValueError(f"{path}: non-numeric cell {cell!r} in row {idx + 1}") from None
        return out

    start = 0
    try:
        first = parse(rows[0], 0)
    except ValueError:
        start = 1  # header row
        if len(rows) == 1:
            raise ValueError(f"{path}: header only, no data rows") from None
        first = parse(rows[1], 1)
    width = len(first)
    data = [first]
    for i in range(start + 1, len(rows)):
        row = parse(rows[i], i)
        if len(row) != width:
            raise ValueError(f"{path}: ragged row {i + 1} has {len(row)} cells, expected {width}")
        data.append(row)
    return np.asarray(data, dtype=np.float64)


# ------------------------------------------------------------------
# Standardization (componentwise, population std).
# ------------------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def invert(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) * self.std + self.mean


def fit_standardizer(X) -> Standardizer:
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    if np.any(std <= 0):
        bad = int(np.flatnonzero(std <= 0)[0])
        raise ValueError(f"column {bad} has zero variance; cannot standardize")
    return Standardizer(mean=mean, std=std)


# ------------------------------------------------------------------
# Inducing points: k-means++ seeding followed by 20 Lloyd iterations over
# the union of (standardized) reference and target training points.
# Hand-rolled so results are bit-deterministic regardless of thread count.
# ------------------------------------------------------------------

def _kmeans_pp(X: np.ndarray, k: int, rng) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = cdist(X, centers[:1], "sqeuclidean")[:, 0]
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i:] = X[rng.integers(n, size=k - i)]
            break
        probs = d2 / total
        centers[i] = X[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, cdist(X, centers[i : i + 1], "sqeuclidean")[:, 0])
    return centers


def _assign(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    labels = np.empty(X.shape[0], dtype=np.int64)
    for i in range(0, X.shape[0], 8192):
        labels[i : i + 8192] = cdist(X[i : i + 8192], centers, "sqeuclidean").argmin(axis=1)
    return labels


def kmeans(X, k: int, seed, iters: int = 20) -> np.ndarray:
    """k-means++ initialized Lloyd's algorithm; returns the k centers."""
    X = np.asarray(X, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > X.shape[0]:
        raise ValueError(f"k={k} exceeds the {X.shape[0]} available points")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(X, k, rng)
    for _ in range(iters):
        labels = _assign(X, centers)
        for j in range(k):
            members = X[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return centers


def select_inducing_points(train_ref, train_target, J: int, seed) -> np.ndarray:
    """Spatial inducing points covering both endpoints of the trajectories."""
    union = np.concatenate([np.asarray(train_ref, float), np.asarray(train_target, float)])
    return kmeans(union, J, seed)
