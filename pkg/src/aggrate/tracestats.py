"""Gradient statistics estimation and sample/trace file ingestion.

Feeding the planners requires two numbers per iteration: the variance of
the hidden global gradient's entries (sigma_x2) and the variance of each
worker's deviation from it (sigma_n2).  This module estimates them from
exported gradient samples, quantifies how Gaussian the samples look, and
loads the CSV/JSON file formats the CLI accepts.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import GradientTrace, LayeredGaussianSpec


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GradientSampleSet:
    """Matched draws of the global gradient and each worker's local one.

    ``global_samples`` is (samples x dimensions); each worker matrix has
    the same shape, row i of every matrix coming from the same draw.
    ``layer_sizes`` optionally partitions the dimensions into contiguous
    blocks, one per model layer.
    """

    global_samples: np.ndarray
    local_samples: tuple
    iteration: int = 0
    layer_sizes: tuple | None = None

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.global_samples, dtype=float))
        if g.shape[0] < 2:
            raise ValueError("need at least 2 samples")
        locs = []
        for k, mat in enumerate(self.local_samples):
            mat = np.atleast_2d(np.asarray(mat, dtype=float))
            if mat.shape != g.shape:
                raise ValueError(
                    f"worker {k} samples have shape {mat.shape}, "
                    f"expected {g.shape}")
            locs.append(_readonly(mat))
        if not locs:
            raise ValueError("need at least one worker matrix")
        if self.layer_sizes is not None:
            sizes = tuple(int(s) for s in self.layer_sizes)
            if any(s < 1 for s in sizes) or sum(sizes) != g.shape[1]:
                raise ValueError(
                    "layer sizes must be positive and cover every dimension")
            object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "global_samples", _readonly(g))
        object.__setattr__(self, "local_samples", tuple(locs))
        object.__setattr__(self, "iteration", int(self.iteration))

    @property
    def num_workers(self) -> int:
        return len(self.local_samples)

    @property
    def num_dims(self) -> int:
        return self.global_samples.shape[1]

    def layer_slices(self) -> list:
        sizes = self.layer_sizes or (self.num_dims,)
        edges = np.concatenate([[0], np.cumsum(sizes)])
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


@dataclass(frozen=True, eq=False)
class StatEstimates:
    sigma_x2: float
    sigma_n2: np.ndarray  # per worker

    def __post_init__(self):
        object.__setattr__(self, "sigma_n2", _readonly(np.atleast_1d(self.sigma_n2)))


@dataclass(frozen=True)
class GaussianFit:
    mean: float
    variance: float
    r_squared: float


def estimate_stats(samples: GradientSampleSet) -> StatEstimates:
    """Pooled unbiased variance estimates of the observation model.

    sigma_x2 pools every entry of the global matrix (mean subtracted, not
    assumed zero); sigma_n2[k] pools every entry of worker k's deviation
    from the global gradient.  Entries are treated as i.i.d. within the
    pool, so the standard error shrinks with samples x dimensions.
    """
    g = samples.global_samples
    sigma_x2 = float(np.var(g, ddof=1))
    sigma_n2 = np.array([float(np.var(loc - g, ddof=1))
                         for loc in samples.local_samples])
    return StatEstimates(sigma_x2=sigma_x2, sigma_n2=sigma_n2)


def spec_from_samples(samples: GradientSampleSet) -> LayeredGaussianSpec:
    """Per-layer observation model estimated from a sample set.

    Uses the layer blocks declared in the sample set (one block covering
    everything when absent).  Degenerate estimates (a worker identical to
    the global gradient) cannot form a valid model and raise.
    """
    slices = samples.layer_slices()
    g = samples.global_samples
    global_var = [float(np.var(g[:, s], ddof=1)) for s in slices]
    noise_var = [[float(np.var((loc - g)[:, s], ddof=1)) for s in slices]
                 for loc in samples.local_samples]
    return LayeredGaussianSpec(global_var=np.array(global_var),
                               noise_var=np.array(noise_var))


def pearson(a, b) -> float:
    """Sample Pearson correlation of two equal-length series."""
    x = np.asarray(a, dtype=float).ravel()
    y = np.asarray(b, dtype=float).ravel()
    if x.size != y.size or x.size < 2:
        raise ValueError("series must share a length of at least 2")
    x = x - x.mean()
    y = y - y.mean()
    vx = float(np.dot(x, x))
    vy = float(np.dot(y, y))
    if vx <= 0.0 or vy <= 0.0:
        raise ValueError("zero-variance input")
    r = float(np.dot(x, y)) / math.sqrt(vx * vy)
    return max(-1.0, min(1.0, r))


def gaussian_fit(samples, bin_count: int = 50) -> GaussianFit:
    """Moment-fit a normal density and score it against the histogram.

    r_squared is the squared correlation between the empirical bin
    densities and the fitted normal density at the bin centers; affine
    transformations of the samples leave it unchanged.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 10:
        raise ValueError("need at least 10 samples")
    bins = int(bin_count)
    if bins < 5:
        raise ValueError("bin_count must be at least 5")
    mean = float(np.mean(x))
    variance = float(np.var(x, ddof=1))
    if variance <= 0.0:
        raise ValueError("degenerate (zero-variance) samples")
    density, edges = np.histogram(x, bins=bins, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    pdf = np.exp(-0.5 * (centers - mean) ** 2 / variance) \
        / math.sqrt(2.0 * math.pi * variance)
    r = pearson(density, pdf)
    return GaussianFit(mean=mean, variance=variance, r_squared=r * r)


TRACE_HEADER = ("iteration", "sigma_x2", "sigma_n2")


def load_trace(path) -> GradientTrace:
    """Read an iteration trace from CSV with header iteration,sigma_x2,sigma_n2.

    Malformed rows, non-increasing iterations, and non-positive variances
    are rejected with the offending row number.
    """
    p = Path(path)
    iterations, sx2, sn2 = [], [], []
    with p.open(newline="") as handle:
        reader = csv.reader(handle)
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            cells = [cell.strip() for cell in row]
            if lineno == 1:
                if tuple(c.lower() for c in cells) != TRACE_HEADER:
                    raise ValueError(
                        f"{p}: row 1: expected header "
                        f"'{','.join(TRACE_HEADER)}', got '{','.join(cells)}'")
                continue
            if len(cells) != 3:
                raise ValueError(f"{p}: row {lineno}: expected 3 fields, "
                                 f"got {len(cells)}")
            try:
                t = int(cells[0])
                x2 = float(cells[1])
                n2 = float(cells[2])
            except ValueError:
                raise ValueError(
                    f"{p}: row {lineno}: could not parse "
                    f"'{','.join(cells)}'") from None
            if not (math.isfinite(x2) and x2 > 0.0) \
                    or not (math.isfinite(n2) and n2 > 0.0):
                raise ValueError(
                    f"{p}: row {lineno}: variances must be strictly positive")
            if iterations and t <= iterations[-1]:
                raise ValueError(
                    f"{p}: row {lineno}: iteration {t} does not increase "
                    f"past {iterations[-1]}")
            iterations.append(t)
            sx2.append(x2)
            sn2.append(n2)
    if not iterations:
        raise ValueError(f"{p}: empty trace")
    return GradientTrace(iterations=np.array(iterations),
                         sigma_x2=np.array(sx2), sigma_n2=np.array(sn2))


def load_samples(path) -> GradientSampleSet:
    """Read a gradient sample set described by a small JSON header.

    The header names the global-gradient CSV, one CSV per worker, and
    optionally the iteration index and per-layer dimension blocks:

        {"global": "global.csv", "workers": ["w0.csv", "w1.csv"],
         "iteration": 120, "layer_sizes": [784, 100]}

    Matrix paths are resolved relative to the header file.  Each CSV holds
    one sample per row, one dimension per column.
    """
    p = Path(path)
    try:
        header = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{p}: invalid JSON header: {exc}") from None
    for key in ("global", "workers"):
        if key not in header:
            raise ValueError(f"{p}: header is missing required key '{key}'")
    if not isinstance(header["workers"], list) or not header["workers"]:
        raise ValueError(f"{p}: 'workers' must be a non-empty list of paths")
    base = p.parent

    def load_matrix(rel):
        return np.loadtxt(base / rel, delimiter=",", ndmin=2)

    return GradientSampleSet(
        global_samples=load_matrix(header["global"]),
        local_samples=tuple(load_matrix(w) for w in header["workers"]),
        iteration=int(header.get("iteration", 0)),
        layer_sizes=header.get("layer_sizes"),
    )
