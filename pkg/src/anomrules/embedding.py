"""Diffusion-map embedding of binary feature rows.

A Gaussian kernel ``W_ij = exp(-|x_i - x_j|^2 / epsilon)`` defines a random
walk on the data.  Eigenvectors of the symmetrically normalized kernel
``D^{-1/2} W D^{-1/2}`` give coordinates in which Euclidean distance tracks
the walk's diffusion distance; the first (trivial, eigenvalue 1) component
is discarded.  The bandwidth is chosen automatically by scanning the total
kernel sum ``L(eps) = sum_ij W_ij`` across scales and taking the steepest
point of the log-log curve, and the embedding width at the largest gap in
the eigenvalue sequence.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.spatial.distance import pdist, squareform

from .features import BinaryFeatureMatrix

log = logging.getLogger(__name__)


class EmbeddingError(Exception):
    """Embedding could not be computed."""


class DegenerateDataError(EmbeddingError):
    """The data has no usable geometry (e.g. all rows identical)."""


@dataclass(frozen=True)
class DiffusionConfig:
    epsilon: float | None = None  # None = pick by scan
    dims: int | None = None  # None = pick by eigengap
    epsilon_sample_size: int = 200
    epsilon_grid: tuple[float, float, int] = (1e-4, 1e4, 41)
    n_eigenpairs: int = 30
    scaled_eigenvectors: bool = False
    seed: int = 0


@dataclass(frozen=True)
class EpsilonScan:
    epsilons: np.ndarray
    kernel_sums: np.ndarray
    chosen: float
    sample_indices: np.ndarray


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray  # (K,) descending, leading value 1
    eigenvectors: np.ndarray  # (N, K) columns aligned with eigenvalues
    degrees: np.ndarray  # (N,) kernel row sums


@dataclass(frozen=True)
class Embedding:
    coords: np.ndarray  # (N, dims)
    dims: int
    epsilon: float


@dataclass(frozen=True)
class EmbedResult:
    embedding: Embedding
    decomposition: SpectralDecomposition
    scan: EpsilonScan | None


def _as_points(X: BinaryFeatureMatrix | np.ndarray) -> np.ndarray:
    if isinstance(X, BinaryFeatureMatrix):
        return X.bits.astype(float)
    a = np.asarray(X, dtype=float)
    if a.ndim != 2:
        raise EmbeddingError("expected a 2-d array of observation rows")
    return a


def pairwise_sq_dists(X: BinaryFeatureMatrix | np.ndarray) -> np.ndarray:
    """Dense symmetric matrix of squared Euclidean distances, zero diagonal."""
    pts = _as_points(X)
    if len(pts) < 2:
        return np.zeros((len(pts), len(pts)))
    return squareform(pdist(pts, "sqeuclidean"))


def scan_epsilon(
    X: BinaryFeatureMatrix | np.ndarray, config: DiffusionConfig | None = None
) -> EpsilonScan:
    """Pick the kernel bandwidth from the log-log curve of L(eps).

    ``L`` runs from N (kernel ~ identity) to N^2 (kernel ~ all-ones); the
    chosen epsilon sits where the curve climbs fastest (central-difference
    slope, ties resolved toward the larger bandwidth).  A subsample keeps
    the scan cheap on large inputs; the grid is centred on the median
    squared distance of the sample.
    """
    cfg = config or DiffusionConfig()
    pts = _as_points(X)
    n = len(pts)
    if n < 2:
        raise EmbeddingError("bandwidth scan needs at least 2 rows")
    lo, hi, n_grid = cfg.epsilon_grid
    if int(n_grid) < 3 or lo <= 0 or hi <= lo:
        raise EmbeddingError("epsilon grid must be increasing, positive, with >= 3 points")
    size = min(int(cfg.epsilon_sample_size), n)
    rng = np.random.default_rng(cfg.seed)
    idx = np.sort(rng.choice(n, size=size, replace=False))
    d2 = pairwise_sq_dists(pts[idx])
    off = d2[np.triu_indices(size, k=1)]
    if off.size == 0 or float(off.max()) == 0.0:
        raise DegenerateDataError("sampled rows are all identical; no scale to scan")
    scale = float(np.median(off))
    if scale == 0.0:
        scale = float(np.median(off[off > 0]))
    eps = np.geomspace(lo * scale, hi * scale, int(n_grid))
    sums = np.array([float(np.exp(-d2 / e).sum()) for e in eps])
    logl, loge = np.log(sums), np.log(eps)
    slopes = (logl[2:] - logl[:-2]) / (loge[2:] - loge[:-2])
    best = max(range(len(slopes)), key=lambda i: (slopes[i], i))
    chosen = float(eps[best + 1])
    log.info("bandwidth scan picked epsilon=%g (sample of %d rows)", chosen, size)
    return EpsilonScan(eps, sums, chosen, idx)


def compute_affinity(X: BinaryFeatureMatrix | np.ndarray, epsilon: float) -> np.ndarray:
    """Gaussian affinity matrix; symmetric with unit diagonal."""
    if not np.isfinite(epsilon) or epsilon <= 0:
        raise EmbeddingError(f"epsilon must be a positive number, got {epsilon!r}")
    d2 = pairwise_sq_dists(X)
    if d2.shape[0] > 1 and float(d2.max()) == 0.0:
        raise DegenerateDataError("all rows are identical")
    np.divide(d2, -float(epsilon), out=d2)
    np.exp(d2, out=d2)
    return d2


def spectral_decompose(W: np.ndarray, n_pairs: int = 30) -> SpectralDecomposition:
    """Leading eigenpairs of D^{-1/2} W D^{-1/2}, eigenvalues descending.

    The normalized matrix is built so it is bit-exactly symmetric, and each
    eigenvector's sign is fixed by making its largest-magnitude entry
    positive.
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    if W.ndim != 2 or W.shape[1] != n:
        raise EmbeddingError("affinity matrix must be square")
    if n < 2:
        raise EmbeddingError("affinity matrix must have at least 2 rows")
    asym = float(np.abs(W - W.T).max())
    if asym > 1e-9:
        raise EmbeddingError(f"affinity matrix is not symmetric (max deviation {asym:g})")
    d = W.sum(axis=1)
    if float(d.min()) <= 0.0:
        raise EmbeddingError("affinity matrix has a non-positive row sum")
    inv_sqrt = 1.0 / np.sqrt(d)
    sym = np.outer(inv_sqrt, inv_sqrt)
    sym *= W
    k = min(int(n_pairs), n)
    if k < 2:
        raise EmbeddingError("need at least two eigenpairs")
    vals, vecs = eigh(sym, subset_by_index=(n - k, n - 1), overwrite_a=True)
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    for j in range(vecs.shape[1]):
        i = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[i, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return SpectralDecomposition(vals, vecs, d)


def select_dimension(eigenvalues: np.ndarray, requested: int | None = None) -> int:
    """Embedding width: requested (capped), else the largest eigengap.

    The gap is searched among non-trivial eigenvalues; when the whole tail
    is flat (no gap above 1e-12) every available coordinate is kept, with a
    warning.
    """
    vals = np.asarray(eigenvalues, dtype=float)
    K = len(vals)
    if K < 2:
        raise EmbeddingError("need at least two eigenpairs to pick a dimension")
    max_dim = K - 1
    if requested is not None:
        if requested < 1:
            raise EmbeddingError("dims must be at least 1")
        if requested > max_dim:
            log.warning(
                "requested %d coordinates but only %d non-trivial eigenpairs are available",
                requested,
                max_dim,
            )
        return min(requested, max_dim)
    if max_dim == 1:
        return 1
    tail = vals[1:]
    gaps = tail[:-1] - tail[1:]
    if float(gaps.max()) < 1e-12:
        log.warning("eigenvalue sequence shows no gap; keeping all %d coordinates", max_dim)
        return max_dim
    return int(np.argmax(gaps)) + 1


def diffusion_coordinates(
    decomp: SpectralDecomposition, dims: int, *, scaled: bool = False
) -> np.ndarray:
    """Coordinates lambda_k * v_k, skipping the trivial leading pair.

    With ``scaled`` the eigenvectors are renormalized by the stationary
    distribution (v_k(i)/sqrt(pi_i), pi = d/sum(d)) so that the Euclidean
    metric on the full coordinate set reproduces diffusion distance exactly.
    """
    K = len(decomp.eigenvalues)
    if not 1 <= dims <= K - 1:
        raise EmbeddingError(f"dims must be in [1, {K - 1}], got {dims}")
    vals = decomp.eigenvalues[1 : dims + 1]
    vecs = decomp.eigenvectors[:, 1 : dims + 1]
    if scaled:
        pi = decomp.degrees / decomp.degrees.sum()
        vecs = vecs / np.sqrt(pi)[:, None]
    return vals[None, :] * vecs


def embed(
    X: BinaryFeatureMatrix | np.ndarray, config: DiffusionConfig | None = None
) -> EmbedResult:
    """Full pipeline: bandwidth (scan or given) -> kernel -> eigenpairs -> coords."""
    cfg = config or DiffusionConfig()
    pts = _as_points(X)
    if len(pts) < 3:
        raise EmbeddingError("embedding needs at least 3 rows")
    scan = None
    if cfg.epsilon is None:
        scan = scan_epsilon(pts, cfg)
        epsilon = scan.chosen
    else:
        epsilon = float(cfg.epsilon)
    W = compute_affinity(pts, epsilon)
    decomp = spectral_decompose(W, cfg.n_eigenpairs)
    del W
    dims = select_dimension(decomp.eigenvalues, cfg.dims)
    coords = diffusion_coordinates(decomp, dims, scaled=cfg.scaled_eigenvectors)
    log.info("embedded %d rows into %d diffusion coordinate(s)", len(pts), dims)
    return EmbedResult(Embedding(coords, dims, epsilon), decomp, scan)
