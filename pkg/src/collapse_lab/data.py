"""Synthetic dataset generation, centering, and file I/O.

Datasets are plain (n, dim) float64 matrices with rows as samples. All
randomness goes through ``numpy.random.default_rng`` (PCG64), so a fixed
seed reproduces a dataset byte for byte.

File formats
------------
CSV
    Header row ``x0,...,x{dx-1},y0,...,y{dy-1}``, one sample per line,
    values written with shortest round-trip ``repr``.
binary
    16-byte header: 4-byte magic ``CLD1`` followed by little-endian
    uint32 ``n``, ``dim_x``, ``dim_y``; then the X block and the Y block
    as little-endian float64 in row-major order. Bit-exact round trip.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidSpec, ParseError

_MAGIC = b"CLD1"
_CENTER_TOL = 1e-10
_SYMMETRY_TOL = 1e-12
_EIGENVALUE_FLOOR = -1e-12


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Dataset:
    """Paired input/target sample matrices.

    ``x`` is (n, dim_x), ``y`` is (n, dim_y); row i of each is one sample.
    ``centered`` asserts that every column mean is zero within 1e-10.
    """

    x: np.ndarray
    y: np.ndarray
    centered: bool = False

    def __post_init__(self):
        object.__setattr__(self, "x", _as_matrix(self.x, "x"))
        object.__setattr__(self, "y", _as_matrix(self.y, "y"))
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]}"
            )
        if self.x.shape[0] < 1:
            raise ValueError("dataset needs at least one sample")
        if self.centered:
            worst = max(
                float(np.max(np.abs(self.x.mean(axis=0)))),
                float(np.max(np.abs(self.y.mean(axis=0)))),
            )
            if worst > _CENTER_TOL:
                raise ValueError(
                    f"centered dataset has column mean {worst:g} > {_CENTER_TOL:g}"
                )

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def dim_x(self) -> int:
        return self.x.shape[1]

    @property
    def dim_y(self) -> int:
        return self.y.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a linear-target Gaussian dataset.

    Inputs are drawn i.i.d. from N(0, ``second_moment``) and targets are
    ``y = map_matrix @ x``. Any overall signal gain is folded into the
    scale of ``map_matrix``.
    """

    dim_x: int
    dim_y: int
    n_samples: int
    second_moment: np.ndarray = field(repr=False)
    map_matrix: np.ndarray = field(repr=False)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "second_moment", _as_matrix(self.second_moment, "second_moment")
        )
        object.__setattr__(
            self, "map_matrix", _as_matrix(self.map_matrix, "map_matrix")
        )

    def validate(self) -> None:
        a = self.second_moment
        if a.shape != (self.dim_x, self.dim_x):
            raise InvalidSpec(
                f"second_moment shape {a.shape} != ({self.dim_x}, {self.dim_x})"
            )
        if self.map_matrix.shape != (self.dim_y, self.dim_x):
            raise InvalidSpec(
                f"map_matrix shape {self.map_matrix.shape} != "
                f"({self.dim_y}, {self.dim_x})"
            )
        if self.n_samples < 1:
            raise InvalidSpec("n_samples must be >= 1")
        if np.max(np.abs(a - a.T)) > _SYMMETRY_TOL:
            raise InvalidSpec("second_moment is not symmetric within 1e-12")
        eigenvalues = np.linalg.eigvalsh(a)
        if eigenvalues.min(initial=0.0) < _EIGENVALUE_FLOOR:
            raise InvalidSpec(
                f"second_moment has eigenvalue {eigenvalues.min():g} < -1e-12"
            )


def generate(spec: SyntheticSpec) -> Dataset:
    """Draw a dataset from a :class:`SyntheticSpec`.

    Sampling uses the eigen-factor of the second moment (A = P diag(phi) P^T,
    x = P phi^{1/2} g with g standard normal) so rank-deficient second
    moments are handled exactly.
    """
    spec.validate()
    eigenvalues, vectors = np.linalg.eigh(spec.second_moment)
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    factor = vectors * np.sqrt(eigenvalues)
    rng = np.random.default_rng(spec.seed)
    g = rng.standard_normal((spec.n_samples, spec.dim_x))
    x = g @ factor.T
    y = x @ spec.map_matrix.T
    return Dataset(x=x, y=y, centered=False)


def center(ds: Dataset) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Subtract column means from x and y.

    Returns the centered dataset together with the removed means, which
    are exactly the quantities needed to reconstruct the optimal encoder
    and decoder biases of the uncentered problem.
    """
    mean_x = ds.x.mean(axis=0)
    mean_y = ds.y.mean(axis=0)
    x = ds.x - mean_x
    y = ds.y - mean_y
    # one more pass kills the O(eps * scale) residual of the first
    x -= x.mean(axis=0)
    y -= y.mean(axis=0)
    return Dataset(x=x, y=y, centered=True), mean_x, mean_y


def _is_centered(x: np.ndarray, y: np.ndarray) -> bool:
    return (
        float(np.max(np.abs(x.mean(axis=0)), initial=0.0)) <= _CENTER_TOL
        and float(np.max(np.abs(y.mean(axis=0)), initial=0.0)) <= _CENTER_TOL
    )


def _format_for(path) -> str:
    return "csv" if Path(path).suffix.lower() == ".csv" else "binary"


def save(ds: Dataset, path, fmt: str | None = None) -> None:
    """Write a dataset to ``path``; format from suffix unless ``fmt`` given."""
    fmt = fmt or _format_for(path)
    if fmt == "csv":
        _save_csv(ds, path)
    elif fmt == "binary":
        _save_binary(ds, path)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def load(path, fmt: str | None = None) -> Dataset:
    """Read a dataset written by :func:`save`.

    The ``centered`` flag is recomputed from the loaded column means.
    Raises :class:`ParseError` for malformed content.
    """
    fmt = fmt or _format_for(path)
    if fmt == "csv":
        x, y = _load_csv(path)
    elif fmt == "binary":
        x, y = _load_binary(path)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return Dataset(x=x, y=y, centered=_is_centered(x, y))


def _save_csv(ds: Dataset, path) -> None:
    names = [f"x{j}" for j in range(ds.dim_x)] + [f"y{j}" for j in range(ds.dim_y)]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(ds.n_samples):
            row = [repr(float(v)) for v in ds.x[i]]
            row += [repr(float(v)) for v in ds.y[i]]
            fh.write(",".join(row) + "\n")


def _load_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"empty file: {path}")
    header = lines[0].split(",")
    dim_x = sum(1 for name in header if name.startswith("x"))
    dim_y = sum(1 for name in header if name.startswith("y"))
    if dim_x + dim_y != len(header) or dim_x == 0 or dim_y == 0:
        raise ParseError(f"bad header {lines[0]!r} in {path}")
    body = [line for line in lines[1:] if line]
    if not body:
        raise ParseError(f"no data rows in {path}")
    x = np.empty((len(body), dim_x))
    y = np.empty((len(body), dim_y))
    for i, line in enumerate(body):
        parts = line.split(",")
        if len(parts) != dim_x + dim_y:
            raise ParseError(
                f"expected {dim_x + dim_y} fields, got {len(parts)}", row=i
            )
        for j, part in enumerate(parts):
            try:
                value = float(part)
            except ValueError:
                raise ParseError(f"not a number: {part!r}", row=i, col=j) from None
            if j < dim_x:
                x[i, j] = value
            else:
                y[i, j - dim_x] = value
    return x, y


def _save_binary(ds: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", ds.n_samples, ds.dim_x, ds.dim_y))
        fh.write(np.ascontiguousarray(ds.x, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.y, dtype="<f8").tobytes())


def _load_binary(path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) == 0:
        raise ParseError(f"empty file: {path}")
    if len(raw) < 16 or raw[:4] != _MAGIC:
        raise ParseError(f"not a {_MAGIC.decode()} dataset: {path}")
    n, dim_x, dim_y = struct.unpack("<III", raw[4:16])
    expected = 16 + 8 * n * (dim_x + dim_y)
    if len(raw) != expected:
        raise ParseError(
            f"file size {len(raw)} does not match header "
            f"(n={n}, dim_x={dim_x}, dim_y={dim_y} wants {expected})"
        )
    flat = np.frombuffer(raw, dtype="<f8", offset=16)
    x = flat[: n * dim_x].reshape(n, dim_x).astype(np.float64)
    y = flat[n * dim_x :].reshape(n, dim_y).astype(np.float64)
    return x, y


def random_spec(
    dim_x: int,
    dim_y: int,
    n_samples: int,
    seed: int,
    rank: int | None = None,
    signal_scale: float = 1.0,
) -> SyntheticSpec:
    """Build a reproducible random :class:`SyntheticSpec` from one seed.

    The second moment is a random well-conditioned PSD matrix (optionally
    rank-deficient) and the map is dense Gaussian scaled by
    ``signal_scale``; both derive from the same PCG64 stream that
    :func:`generate` will later reuse with an independent seed offset.
    """
    rng = np.random.default_rng(seed)
    rank = dim_x if rank is None else rank
    q, _ = np.linalg.qr(rng.standard_normal((dim_x, dim_x)))
    eigenvalues = np.zeros(dim_x)
    eigenvalues[:rank] = np.sort(rng.uniform(0.3, 3.0, size=rank))[::-1]
    a = (q * eigenvalues) @ q.T
    a = 0.5 * (a + a.T)
    m = signal_scale * rng.standard_normal((dim_y, dim_x)) / np.sqrt(dim_x)
    return SyntheticSpec(
        dim_x=dim_x,
        dim_y=dim_y,
        n_samples=n_samples,
        second_moment=a,
        map_matrix=m,
        seed=seed + 1,
    )


def replace_targets(ds: Dataset, y: np.ndarray) -> Dataset:
    """Dataset with the same inputs but new targets."""
    return replace(ds, y=_as_matrix(y, "y"), centered=_is_centered(ds.x, y))
