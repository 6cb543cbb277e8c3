"""Periodic-box field arithmetic.

Fields live on the torus [0, L)^d (d = 2 or 3) sampled on a uniform grid.
Every operator is a Fourier multiplier, so P, Q, the Laplacian and its
inverse are exact up to rounding.

Field values always carry a leading component axis: a scalar field has
shape ``(1, N, ..., N)`` and a vector field ``(d, N, ..., N)``.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PHYSICAL = 0
FOURIER = 1
PHYSICAL_COMPLEX = 2


class StructureError(ValueError):
    """Grid, shape or layout mismatch."""


class CompatibilityError(ValueError):
    """Input violates a solvability condition (e.g. nonzero mean for an inverse Laplacian)."""


class ParameterError(ValueError):
    """Parameter outside its admissible range."""


@dataclass(frozen=True)
class SpectralGrid:
    """Uniform periodic grid plus the wavenumber tables shared by all fields.

    Args:
        dim: spatial dimension, 2 or 3.
        points: samples per axis (even).
        extent: box length per axis.
        dealias_fraction: modes with ``|j| > dealias_fraction * N / 2`` are
            removed after pointwise products.
    """

    dim: int
    points: int
    extent: float = 2.0 * math.pi
    dealias_fraction: float = 2.0 / 3.0
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise StructureError(f"dim must be 2 or 3, got {self.dim}")
        if self.points <= 0 or self.points % 2:
            raise StructureError(f"points per axis must be even and positive, got {self.points}")
        if not self.extent > 0:
            raise ParameterError(f"extent must be positive, got {self.extent}")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ParameterError(f"dealias_fraction must lie in (0, 1], got {self.dealias_fraction}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.dim

    @property
    def volume(self) -> float:
        return self.extent**self.dim

    @property
    def spacing(self) -> float:
        return self.extent / self.points

    @property
    def n_total(self) -> int:
        return self.points**self.dim

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    def coordinates(self) -> np.ndarray:
        """Physical coordinates, shape ``(d, N, ..., N)``."""
        x = np.arange(self.points) * self.spacing
        return np.array(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def _table(self, name):
        if name not in self._cache:
            self._cache[name] = self._build(name)
        return self._cache[name]

    def _build(self, name):
        n = self.points
        j1 = np.fft.fftfreq(n, 1.0 / n)
        j1[n // 2] = -n // 2  # keep the Nyquist index at -N/2
        if name == "index":
            return np.array(np.meshgrid(*([j1] * self.dim), indexing="ij"))
        if name == "k":
            return self._table("index") * (2.0 * math.pi / self.extent)
        if name == "k2":
            return np.sum(self._table("k") ** 2, axis=0)
        if name == "inv_k2":
            k2 = self._table("k2")
            out = np.zeros_like(k2)
            np.divide(1.0, k2, out=out, where=k2 > 0)
            return out
        if name == "kmag":
            return np.sqrt(self._table("k2"))
        if name == "dealias":
            cut = self.dealias_fraction * n / 2
            return np.all(np.abs(self._table("index")) <= cut, axis=0)
        if name == "khat":
            kmag = self._table("kmag")
            out = np.zeros_like(self._table("k"))
            np.divide(self._table("k"), kmag, out=out, where=kmag > 0)
            return out
        raise KeyError(name)

    @property
    def wavenumbers(self) -> np.ndarray:
        """Wavevector components ``2*pi*j/L``, shape ``(d, N, ..., N)`` in FFT order."""
        return self._table("k")

    @property
    def index(self) -> np.ndarray:
        return self._table("index")

    @property
    def k2(self) -> np.ndarray:
        return self._table("k2")

    @property
    def kmag(self) -> np.ndarray:
        return self._table("kmag")

    @property
    def inv_k2(self) -> np.ndarray:
        """``1/|k|^2`` with the zero mode mapped to 0."""
        return self._table("inv_k2")

    @property
    def khat(self) -> np.ndarray:
        return self._table("khat")

    @property
    def dealias_mask(self) -> np.ndarray:
        return self._table("dealias")

    @property
    def kmax_dealiased(self) -> float:
        """Largest wavenumber magnitude along an axis that survives dealiasing."""
        return math.floor(self.dealias_fraction * self.points / 2) * 2.0 * math.pi / self.extent

    # Array-level kernels. They act on the trailing d axes so that stacks of
    # components or time samples transform in one call.

    def fft(self, a: np.ndarray) -> np.ndarray:
        return np.fft.fftn(a, axes=self.axes)

    def ifft(self, a: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(a, axes=self.axes)

    def ifft_real(self, a: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(a, axes=self.axes).real

    def grad_hat(self, a_hat: np.ndarray) -> np.ndarray:
        """Gradient of a scalar spectrum of shape ``(..., N, ..., N)``; components go first."""
        return 1j * self.wavenumbers.reshape(self.wavenumbers.shape[:1] + (1,) * (a_hat.ndim - self.dim) + self.shape) * a_hat

    def div_hat(self, v_hat: np.ndarray) -> np.ndarray:
        """Divergence of a vector spectrum whose leading axis holds the d components."""
        k = self.wavenumbers.reshape((self.dim,) + (1,) * (v_hat.ndim - 1 - self.dim) + self.shape)
        return np.sum(1j * k * v_hat, axis=0)

    def leray_q_hat(self, v_hat: np.ndarray) -> np.ndarray:
        kh = self.khat.reshape((self.dim,) + (1,) * (v_hat.ndim - 1 - self.dim) + self.shape)
        return kh * np.sum(kh * v_hat, axis=0)

    def leray_p_hat(self, v_hat: np.ndarray) -> np.ndarray:
        return v_hat - self.leray_q_hat(v_hat)

    def compatible(self, other: "SpectralGrid") -> bool:
        return (self.dim, self.points, self.extent, self.dealias_fraction) == (
            other.dim,
            other.points,
            other.extent,
            other.dealias_fraction,
        )


@dataclass
class Field:
    """Samples of a scalar or vector field on a grid.

    ``values`` has shape ``(ncomp, N, ..., N)``. ``fourier`` marks whether the
    array holds FFT coefficients (unnormalized numpy convention) or physical
    samples.
    """

    grid: SpectralGrid
    values: np.ndarray
    fourier: bool = False

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == self.grid.dim:
            v = v[np.newaxis]
        if v.shape[1:] != self.grid.shape:
            raise StructureError(f"field shape {v.shape[1:]} does not match grid {self.grid.shape}")
        self.values = v

    @property
    def ncomp(self) -> int:
        return self.values.shape[0]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def physical(self) -> "Field":
        return transform(self) if self.fourier else self

    def spectrum(self) -> "Field":
        return self if self.fourier else transform(self)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.fourier)

    def __add__(self, other: "Field") -> "Field":
        _check_pair(self, other)
        return Field(self.grid, self.values + other.values, self.fourier)

    def __sub__(self, other: "Field") -> "Field":
        _check_pair(self, other)
        return Field(self.grid, self.values - other.values, self.fourier)

    def __mul__(self, c) -> "Field":
        return Field(self.grid, self.values * c, self.fourier)

    __rmul__ = __mul__


def scalar_field(grid: SpectralGrid, values) -> Field:
    return Field(grid, np.asarray(values)[np.newaxis])


def vector_field(grid: SpectralGrid, values) -> Field:
    v = np.asarray(values)
    if v.shape[0] != grid.dim:
        raise StructureError(f"vector field needs {grid.dim} components, got {v.shape[0]}")
    return Field(grid, v)


def _check_pair(a: Field, b: Field) -> None:
    if not a.grid.compatible(b.grid):
        raise StructureError("fields live on different grids")
    if a.values.shape != b.values.shape or a.fourier != b.fourier:
        raise StructureError("fields differ in component count or representation")


def transform(f: Field) -> Field:
    """Toggle between physical samples and Fourier coefficients.

    A real field comes back real from the inverse transform; complex physical
    fields are kept complex.
    """
    if f.values.shape[1:] != f.grid.shape:
        raise StructureError("values do not match the grid")
    if f.fourier:
        out = f.grid.ifft(f.values)
        if np.max(np.abs(out.imag), initial=0.0) <= 1e-13 * max(np.max(np.abs(out.real), initial=0.0), 1e-300):
            out = out.real
        return Field(f.grid, out, fourier=False)
    return Field(f.grid, f.grid.fft(f.values), fourier=True)


def _hat(f: Field) -> np.ndarray:
    return f.values if f.fourier else f.grid.fft(f.values)


def _like(f: Field, hat: np.ndarray, real: bool | None = None) -> Field:
    """Return a field in the same representation as ``f`` from a spectrum."""
    if f.fourier:
        return Field(f.grid, hat, fourier=True)
    real = (not f.is_complex) if real is None else real
    out = f.grid.ifft(hat)
    return Field(f.grid, out.real if real else out, fourier=False)


def _need(f: Field, ncomp: int, what: str) -> None:
    if f.ncomp != ncomp:
        raise StructureError(f"{what} expects {ncomp} component(s), got {f.ncomp}")


def grad(f: Field) -> Field:
    _need(f, 1, "grad")
    return _like(f, f.grid.grad_hat(_hat(f)[0]))


def div(v: Field) -> Field:
    _need(v, v.grid.dim, "div")
    return _like(v, v.grid.div_hat(_hat(v))[np.newaxis])


def laplacian(f: Field) -> Field:
    return _like(f, -f.grid.k2 * _hat(f))


def inv_laplacian(f: Field, tol: float = 1e-12) -> Field:
    """Apply Delta^-1 on mean-zero input; the output has mean zero."""
    hat = _hat(f)
    total = np.sum(np.abs(hat), axis=tuple(range(1, hat.ndim)))
    mode0 = np.abs(hat[(slice(None),) + (0,) * f.grid.dim])
    for c in range(f.ncomp):
        if mode0[c] > tol * max(total[c], 1e-300):
            mean = hat[(c,) + (0,) * f.grid.dim] / f.grid.n_total
            raise CompatibilityError(f"inverse Laplacian needs zero mean; residual mean is {mean.real:.3e}")
    return _like(f, -f.grid.inv_k2 * hat)


def curl_of_stream(psi: Field) -> Field:
    """2-D divergence-free field (-d2 psi, d1 psi)."""
    if psi.grid.dim != 2:
        raise StructureError("stream-function fields are 2-D only")
    g = grad(psi).values
    return Field(psi.grid, np.array([-g[1], g[0]]), psi.fourier)


def leray_P(v: Field) -> Field:
    _need(v, v.grid.dim, "leray_P")
    return _like(v, v.grid.leray_p_hat(_hat(v)))


def leray_Q(v: Field) -> Field:
    _need(v, v.grid.dim, "leray_Q")
    return _like(v, v.grid.leray_q_hat(_hat(v)))


def inner(a: Field, b: Field) -> complex:
    """L2 inner product  int a . conj(b) dx  via the trapezoid (spectrally exact) rule."""
    _check_pair(a.physical(), b.physical())
    va, vb = a.physical().values, b.physical().values
    return complex(np.sum(va * np.conj(vb)) * a.grid.volume / a.grid.n_total)


def l2_norm(f: Field) -> float:
    v = f.physical().values
    return float(np.sqrt(np.sum(np.abs(v) ** 2) * f.grid.volume / f.grid.n_total))


def sobolev_norm(f: Field, s: float, p: int = 2) -> float:
    """Bessel-potential norm with symbol (1+|k|^2)^(s/2).

    p=2 is evaluated on the spectrum; p=4 filters the field and takes the
    physical L4 norm.
    """
    hat = _hat(f)
    weight = (1.0 + f.grid.k2) ** (s / 2.0)
    if p == 2:
        # vol * sum |c_k|^2 with c_k = fft / N^d
        total = np.sum(np.abs(weight * hat) ** 2)
        return float(np.sqrt(total * f.grid.volume) / f.grid.n_total)
    if p == 4:
        filtered = f.grid.ifft(weight * hat)
        if not f.is_complex and not f.fourier:
            filtered = filtered.real
        return float((np.sum(np.abs(filtered) ** 4) * f.grid.volume / f.grid.n_total) ** 0.25)
    raise ParameterError(f"p must be 2 or 4, got {p}")


def mollifier_symbol(grid: SpectralGrid, alpha: float) -> np.ndarray:
    return np.exp(-0.5 * (alpha**2) * grid.k2)


def mollify(f: Field, alpha: float) -> Field:
    """Gaussian low-pass with width alpha."""
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    return _like(f, mollifier_symbol(f.grid, alpha) * _hat(f))


def dealias(f: Field) -> Field:
    return _like(f, f.grid.dealias_mask * _hat(f))


# ---------------------------------------------------------------- file layout

_HEADER_INT = "<q"
_HEADER_FLOAT = "<d"


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def field_to_bytes(f: Field) -> bytes:
    """Header (dim, N per axis, L per axis, representation, planes) then row-major float64.

    Complex data is written as a real plane followed by an imaginary plane per
    component, and the plane count in the header is doubled.
    """
    g = f.grid
    if f.fourier:
        rep = FOURIER
    elif f.is_complex:
        rep = PHYSICAL_COMPLEX
    else:
        rep = PHYSICAL
    if rep == PHYSICAL:
        planes = np.ascontiguousarray(f.values, dtype="<f8")
    else:
        c = np.asarray(f.values, dtype=complex)
        planes = np.ascontiguousarray(np.stack([c.real, c.imag], axis=1).reshape((-1,) + g.shape), dtype="<f8")
    head = [struct.pack(_HEADER_INT, g.dim)]
    head += [struct.pack(_HEADER_INT, g.points) for _ in range(g.dim)]
    head += [struct.pack(_HEADER_FLOAT, g.extent) for _ in range(g.dim)]
    head += [struct.pack(_HEADER_INT, rep), struct.pack(_HEADER_INT, planes.shape[0])]
    return b"".join(head) + planes.tobytes()


def field_from_bytes(data: bytes, dealias_fraction: float = 2.0 / 3.0) -> Field:
    off = 0

    def take(fmt):
        nonlocal off
        (val,) = struct.unpack_from(fmt, data, off)
        off += 8
        return val

    dim = take(_HEADER_INT)
    if dim not in (2, 3):
        raise StructureError(f"corrupt header: dim={dim}")
    ns = [take(_HEADER_INT) for _ in range(dim)]
    ls = [take(_HEADER_FLOAT) for _ in range(dim)]
    rep = take(_HEADER_INT)
    nplanes = take(_HEADER_INT)
    if len(set(ns)) != 1 or len(set(ls)) != 1:
        raise StructureError("only cubic grids are supported")
    grid = SpectralGrid(dim, ns[0], ls[0], dealias_fraction)
    expected = nplanes * grid.n_total * 8
    if len(data) - off != expected:
        raise StructureError(f"payload has {len(data) - off} bytes, header implies {expected}")
    arr = np.frombuffer(data, dtype="<f8", offset=off).reshape((nplanes,) + grid.shape).astype(float)
    if rep == PHYSICAL:
        return Field(grid, arr)
    if nplanes % 2:
        raise StructureError("complex payload needs an even plane count")
    pairs = arr.reshape((nplanes // 2, 2) + grid.shape)
    return Field(grid, pairs[:, 0] + 1j * pairs[:, 1], fourier=(rep == FOURIER))


def save_field(path: str | os.PathLike, f: Field) -> None:
    atomic_write_bytes(path, field_to_bytes(f))


def load_field(path: str | os.PathLike, dealias_fraction: float = 2.0 / 3.0) -> Field:
    return field_from_bytes(Path(path).read_bytes(), dealias_fraction)


def dump_text(path: str | os.PathLike, f: Field) -> None:
    """One value per line, row-major; complex values as 'real imag'."""
    flat = np.asarray(f.values).ravel()
    if np.iscomplexobj(flat):
        lines = [f"{z.real!r} {z.imag!r}" for z in flat.tolist()]
    else:
        lines = [repr(float(x)) for x in flat.tolist()]
    atomic_write_text(path, "\n".join(lines) + "\n")
