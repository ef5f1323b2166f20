"""Spectral summary of a dataset: input second moment, whitened
cross-moment, and the singular values that drive every closed form.

Conventions: eigenvalues and singular values are stored non-increasing;
values below ``tol`` times the largest are clamped to exactly zero; the
sign of each left singular vector is fixed by making its
largest-magnitude entry positive (the matching right vector is flipped
with it), so repeated runs produce identical factors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import DegenerateInput

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class DataSpectrum:
    """Eigen/SVD data of the empirical moments.

    Attributes
    ----------
    ambient_dim : int
        Input dimension of the raw data.
    rank : int
        Number of retained (positive) eigenvalues of the input second
        moment.
    dim_y : int
        Target dimension.
    basis : (ambient_dim, rank) ndarray
        Orthonormal eigenvectors of the input second moment.
    eigenvalues : (rank,) ndarray
        Positive eigenvalues, non-increasing.
    left_vectors : (dim_y, dim_y) ndarray
    right_vectors : (rank, rank) ndarray
        Orthogonal SVD factors of the whitened cross-moment.
    singular_values : (min(rank, dim_y),) ndarray
        Non-negative, non-increasing; sub-tolerance values clamped to 0.
    effective_rank : int
        Count of strictly positive singular values.
    tol : float
        Relative cutoff used for both clamps.
    target_power : float
        Mean squared norm of the target, used to reconcile losses that
        include the part of the target no linear map can explain.
    """

    ambient_dim: int
    rank: int
    dim_y: int
    basis: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    left_vectors: np.ndarray = field(repr=False)
    right_vectors: np.ndarray = field(repr=False)
    singular_values: np.ndarray
    effective_rank: int
    tol: float
    target_power: float

    @property
    def n_modes(self) -> int:
        """min(rank, dim_y): length of the singular value vector."""
        return self.singular_values.shape[0]

    def whiten(self, x: np.ndarray) -> np.ndarray:
        """Rotate and rescale inputs so their second moment is identity."""
        return (x @ self.basis) / np.sqrt(self.eigenvalues)

    def cross_moment(self) -> np.ndarray:
        """Reassemble the whitened cross-moment from its SVD factors."""
        rect = np.zeros((self.dim_y, self.rank))
        k = self.n_modes
        rect[np.arange(k), np.arange(k)] = self.singular_values
        return self.left_vectors @ rect @ self.right_vectors.T

    def zeta_padded(self, d1: int) -> np.ndarray:
        """Singular values extended with zeros up to length ``d1``."""
        out = np.zeros(max(d1, self.n_modes))
        out[: self.n_modes] = self.singular_values
        return out[:d1]

    @classmethod
    def from_singular_values(
        cls,
        zeta,
        dim_y: int,
        target_power: float | None = None,
        tol: float = DEFAULT_TOL,
    ) -> "DataSpectrum":
        """Spectrum with prescribed singular values and identity factors.

        Stands in for a dataset whose whitened cross-moment is exactly
        ``diag(zeta)``; useful for analyzing a published or constructed
        spectrum without the underlying data.
        """
        zeta = np.asarray(zeta, dtype=np.float64).ravel()
        if zeta.size == 0:
            raise ValueError("need at least one singular value")
        if np.any(zeta < 0) or np.any(np.diff(zeta) > 0):
            raise ValueError("singular values must be non-negative, non-increasing")
        if dim_y < zeta.size:
            raise ValueError(f"dim_y={dim_y} smaller than len(zeta)={zeta.size}")
        d0 = zeta.size
        zeta = zeta.copy()
        zeta[zeta <= tol * max(zeta[0], 0.0)] = 0.0
        zeta[zeta * zeta == 0.0] = 0.0  # squares drive the theory; kill underflow
        if target_power is None:
            target_power = float(np.sum(zeta**2))
        return cls(
            ambient_dim=d0,
            rank=d0,
            dim_y=dim_y,
            basis=np.eye(d0),
            eigenvalues=np.ones(d0),
            left_vectors=np.eye(dim_y),
            right_vectors=np.eye(d0),
            singular_values=zeta,
            effective_rank=int(np.count_nonzero(zeta)),
            tol=tol,
            target_power=float(target_power),
        )

    def to_json_dict(self) -> dict:
        return {
            "ambient_dim": self.ambient_dim,
            "rank": self.rank,
            "dim_y": self.dim_y,
            "tol": self.tol,
            "eigenvalues": self.eigenvalues.tolist(),
            "singular_values": self.singular_values.tolist(),
            "effective_rank": self.effective_rank,
            "target_power": self.target_power,
            "basis": self.basis.tolist(),
            "left_vectors": self.left_vectors.tolist(),
            "right_vectors": self.right_vectors.tolist(),
        }


def _fix_signs(f: np.ndarray, g: np.ndarray, paired: int) -> tuple[np.ndarray, np.ndarray]:
    # Largest-magnitude entry of each left vector made positive; paired
    # right vectors flip along so the product is unchanged.
    f = f.copy()
    g = g.copy()
    for j in range(f.shape[1]):
        sign = 1.0 if f[np.argmax(np.abs(f[:, j])), j] >= 0 else -1.0
        f[:, j] *= sign
        if j < paired:
            g[:, j] *= sign
    for j in range(paired, g.shape[1]):
        sign = 1.0 if g[np.argmax(np.abs(g[:, j])), j] >= 0 else -1.0
        g[:, j] *= sign
    return f, g


def compute_spectrum(ds: Dataset, tol: float = DEFAULT_TOL) -> DataSpectrum:
    """Eigendecompose the input second moment and SVD the whitened
    cross-moment.

    Warns when the dataset is not centered: uncentered moments are still
    processed as-is, but they answer a different question than the
    centered (equivalently, learnable-bias) problem.
    """
    if not ds.centered:
        warnings.warn(
            "dataset is not centered; spectrum uses raw second moments",
            stacklevel=2,
        )
    n = ds.n_samples
    a = ds.x.T @ ds.x / n
    eigenvalues, vectors = np.linalg.eigh(a)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    vectors = vectors[:, order]
    top = float(eigenvalues[0]) if eigenvalues.size else 0.0
    if not top > tol:
        raise DegenerateInput("input second moment is numerically zero")
    keep = eigenvalues > tol * top
    rank = int(np.count_nonzero(keep))
    eigenvalues = eigenvalues[:rank]
    basis = vectors[:, :rank]

    whitened = (ds.x @ basis) / np.sqrt(eigenvalues)
    z = ds.y.T @ whitened / n
    f, zeta, gt = np.linalg.svd(z, full_matrices=True)
    g = gt.T
    zeta = np.clip(zeta, 0.0, None)
    if zeta.size and zeta[0] > 0:
        zeta[zeta <= tol * zeta[0]] = 0.0
    zeta[zeta * zeta == 0.0] = 0.0
    f, g = _fix_signs(f, g, paired=zeta.size)

    return DataSpectrum(
        ambient_dim=ds.dim_x,
        rank=rank,
        dim_y=ds.dim_y,
        basis=basis,
        eigenvalues=eigenvalues,
        left_vectors=f,
        right_vectors=g,
        singular_values=zeta,
        effective_rank=int(np.count_nonzero(zeta)),
        tol=tol,
        target_power=float(np.sum(ds.y**2) / n),
    )


def effective_counts(sp: DataSpectrum, d1: int) -> tuple[int, int, int]:
    """(n_modes, effective_rank, effective latent rank) for latent size d1.

    The last count is the number of strictly positive singular values
    among the first ``d1`` modes; it never exceeds the effective rank.
    """
    if d1 < 1:
        raise ValueError("d1 must be >= 1")
    d_star = sp.n_modes
    d_star_hat = sp.effective_rank
    d1_hat = int(np.count_nonzero(sp.singular_values[: min(d1, d_star)]))
    return d_star, d_star_hat, d1_hat
