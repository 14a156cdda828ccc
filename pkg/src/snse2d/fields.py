"""Divergence-free spectral velocity fields on the periodic box [0, L]^2.

Coefficients are normalized so that u(x) = sum_k uhat(k) exp(i k.x); the
L^2 norm is then L^2 * sum_k |uhat(k)|^2.  ``SpectralField`` keeps the full
n x n layout for I/O, while the kernels below work on the rfft half layout
with arbitrary leading batch dimensions: shape (..., 2, n, n//2 + 1), axis -2
is k_x and axis -1 is k_y >= 0.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import ParameterError


def _workers() -> int:
    return int(os.environ.get("SNSE2D_THREADS", "1"))


@dataclass(frozen=True)
class Grid:
    n: int
    length: float = 8 * np.pi
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8 or self.n % 2:
            raise ParameterError(f"grid n must be an even integer >= 8, got {self.n!r}")
        if not self.length > 0:
            raise ParameterError(f"grid length must be positive, got {self.length!r}")
        if not 0 < self.dealias_fraction <= 1:
            raise ParameterError(
                f"dealias_fraction must lie in (0, 1], got {self.dealias_fraction!r}")

    @property
    def nh(self) -> int:
        return self.n // 2 + 1

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def k0(self) -> float:
        return 2 * np.pi / self.length

    @cached_property
    def cutoff(self) -> int:
        """Largest retained integer wavenumber per axis."""
        return min(int(np.floor(self.dealias_fraction * self.n / 2 + 1e-12)), self.n // 2 - 1)

    # half-layout wavenumbers
    @cached_property
    def kint(self) -> tuple[np.ndarray, np.ndarray]:
        kx = np.fft.fftfreq(self.n, 1.0 / self.n)[:, None]
        ky = np.arange(self.nh, dtype=float)[None, :]
        return kx, ky

    @cached_property
    def kx(self) -> np.ndarray:
        return self.k0 * self.kint[0]

    @cached_property
    def ky(self) -> np.ndarray:
        return self.k0 * self.kint[1]

    @cached_property
    def k2(self) -> np.ndarray:
        return self.kx**2 + self.ky**2

    @cached_property
    def k2_safe(self) -> np.ndarray:
        return np.where(self.k2 == 0, 1.0, self.k2)

    @cached_property
    def mask(self) -> np.ndarray:
        """Retained modes: |k_x|, |k_y| <= cutoff, mean mode excluded."""
        kx, ky = self.kint
        m = (np.abs(kx) <= self.cutoff) & (np.abs(ky) <= self.cutoff)
        m = m.copy()
        m[0, 0] = False
        return m

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each half-layout column in the full sum."""
        w = np.full(self.nh, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w

    @cached_property
    def curl_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Real weights giving curl(div(u u))/|k|^2 from the products uu, uv, vv."""
        a = self.kx * self.ky / self.k2_safe * self.mask
        b = (self.kx**2 - self.ky**2) / self.k2_safe * self.mask
        return a, b

    @cached_property
    def iky(self) -> np.ndarray:
        return 1j * self.ky

    @cached_property
    def mikx(self) -> np.ndarray:
        return -1j * self.kx

    @cached_property
    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.n) * self.dx
        return np.meshgrid(x, x, indexing="ij")


# ---------------------------------------------------------------------------
# batched kernels on half-layout arrays

def to_phys(grid: Grid, uh: np.ndarray) -> np.ndarray:
    return sfft.irfft2(uh, s=(grid.n, grid.n), norm="forward", workers=_workers())


def to_spec(grid: Grid, u: np.ndarray) -> np.ndarray:
    return sfft.rfft2(u, norm="forward", workers=_workers())


def project_h(grid: Grid, uh: np.ndarray, zero_mean: bool = True) -> np.ndarray:
    kx, ky = grid.kx, grid.ky
    kdu = (kx * uh[..., 0, :, :] + ky * uh[..., 1, :, :]) / grid.k2_safe
    out = np.empty_like(uh)
    out[..., 0, :, :] = uh[..., 0, :, :] - kx * kdu
    out[..., 1, :, :] = uh[..., 1, :, :] - ky * kdu
    if zero_mean:
        out[..., 0, 0] = 0.0
    return out


def inner_h(grid: Grid, ah: np.ndarray, bh: np.ndarray) -> np.ndarray:
    """(a, b)_H = L^2 sum_k Re(a conj b), reduced over the last three axes."""
    prod = (ah.real * bh.real + ah.imag * bh.imag) * grid.weights
    return grid.length**2 * prod.sum(axis=(-3, -2, -1))


def norm_sq_h(grid: Grid, uh: np.ndarray, m: float = 0.0) -> np.ndarray:
    a2 = (uh.real**2 + uh.imag**2) * grid.weights
    if m:
        a2 = a2 * (1.0 + grid.k2) ** m
    return grid.length**2 * a2.sum(axis=(-3, -2, -1))


def grad_sq_h(grid: Grid, uh: np.ndarray) -> np.ndarray:
    """||grad u||^2 = (Au, u)."""
    a2 = (uh.real**2 + uh.imag**2) * grid.weights * grid.k2
    return grid.length**2 * a2.sum(axis=(-3, -2, -1))


def stokes_sq_h(grid: Grid, uh: np.ndarray) -> np.ndarray:
    """||Au||^2."""
    a2 = (uh.real**2 + uh.imag**2) * grid.weights * grid.k2**2
    return grid.length**2 * a2.sum(axis=(-3, -2, -1))


def advection_h(grid: Grid, uh: np.ndarray, return_umax: bool = False):
    """B(u) = P[(u.grad)u] in divergence form, dealiased.

    For a discretely divergence-free u the forms (u.grad)u and div(u u) agree
    on every retained mode, and the divergence form needs five FFTs not eight.
    The projection is taken through the curl: in 2D, P N = (i k_y, -i k_x) c
    with c = curl(N)/|k|^2, which avoids forming N itself.
    """
    u = to_phys(grid, uh)
    ux, uy = u[..., 0, :, :], u[..., 1, :, :]
    prods = np.empty(u.shape[:-3] + (3,) + u.shape[-2:])
    np.multiply(ux, ux, out=prods[..., 0, :, :])
    np.multiply(ux, uy, out=prods[..., 1, :, :])
    np.multiply(uy, uy, out=prods[..., 2, :, :])
    ph = to_spec(grid, prods)
    a, b = grid.curl_weights
    c = a * (ph[..., 0, :, :] - ph[..., 2, :, :]) - b * ph[..., 1, :, :]
    out = np.empty(uh.shape, dtype=complex)
    np.multiply(c, grid.iky, out=out[..., 0, :, :])
    np.multiply(c, grid.mikx, out=out[..., 1, :, :])
    if return_umax:
        umax = np.sqrt((ux * ux + uy * uy).max(axis=(-2, -1)))
        return out, umax
    return out


def convect_h(grid: Grid, uh: np.ndarray, vh: np.ndarray) -> np.ndarray:
    """Dealiased (u.grad)v in advective form, not projected."""
    u = to_phys(grid, uh)
    ikx, iky = 1j * grid.kx, 1j * grid.ky
    dvx = to_phys(grid, ikx[None] * vh)  # d/dx of both components
    dvy = to_phys(grid, iky[None] * vh)
    ux = u[..., 0:1, :, :]
    uy = u[..., 1:2, :, :]
    return to_spec(grid, ux * dvx + uy * dvy) * grid.mask


def trilinear_h(grid: Grid, uh, vh, wh) -> np.ndarray:
    return inner_h(grid, convect_h(grid, uh, vh), wh)


def half_to_full(grid: Grid, uh: np.ndarray) -> np.ndarray:
    """Rebuild the n x n layout by Hermitian symmetry (exact, no FFT)."""
    n, nh = grid.n, grid.nh
    full = np.zeros(uh.shape[:-1] + (n,), dtype=complex)
    full[..., :nh] = uh
    ix = (-np.arange(n)) % n
    jy = n - np.arange(nh, n)
    full[..., nh:] = np.conj(uh[..., ix, :][..., jy])
    return full


# ---------------------------------------------------------------------------
# public field type

@dataclass(frozen=True, eq=False)
class SpectralField:
    """Velocity field given by its full-layout coefficients, shape (2, n, n)."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != (2, self.grid.n, self.grid.n):
            raise ParameterError(
                f"coeffs shape {self.coeffs.shape} does not match grid n={self.grid.n}")

    @property
    def half(self) -> np.ndarray:
        return self.coeffs[..., : self.grid.nh]

    @classmethod
    def from_half(cls, grid: Grid, uh: np.ndarray) -> "SpectralField":
        return cls(grid, half_to_full(grid, uh))

    @classmethod
    def from_physical(cls, grid: Grid, u: np.ndarray, project: bool = True) -> "SpectralField":
        uh = to_spec(grid, np.asarray(u, dtype=float))
        if project:
            uh = project_h(grid, uh) * grid.mask
        return cls.from_half(grid, uh)

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralField":
        return cls(grid, np.zeros((2, grid.n, grid.n), dtype=complex))

    def physical(self) -> np.ndarray:
        return to_phys(self.grid, self.half)

    def _check(self, other: "SpectralField"):
        if other.grid != self.grid:
            raise ParameterError("fields live on different grids")

    def __add__(self, other):
        self._check(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, c):
        return SpectralField(self.grid, self.coeffs * c)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def norm(self) -> float:
        return sobolev_norm(self, 0)

    def equals(self, other: "SpectralField") -> bool:
        return self.grid == other.grid and np.array_equal(self.coeffs, other.coeffs)


def _full_k(grid: Grid):
    k = np.fft.fftfreq(grid.n, 1.0 / grid.n) * grid.k0
    return k[:, None], k[None, :]


def divergence_residual(field: SpectralField) -> float:
    """max |k.uhat| / max |k||uhat|, the relative incompressibility defect."""
    kx, ky = _full_k(field.grid)
    c = field.coeffs
    div = np.abs(kx * c[0] + ky * c[1]).max()
    scale = (np.sqrt(kx**2 + ky**2) * np.sqrt(np.abs(c[0]) ** 2 + np.abs(c[1]) ** 2)).max()
    return float(div / scale) if scale > 0 else 0.0


def reality_residual(field: SpectralField) -> float:
    """max |uhat(-k) - conj uhat(k)|."""
    c = field.coeffs
    n = field.grid.n
    idx = (-np.arange(n)) % n
    flipped = c[:, idx][:, :, idx]
    return float(np.abs(flipped - np.conj(c)).max())


def leray_project(field: SpectralField, zero_mean: bool = True) -> SpectralField:
    """Apply P_k = I - k k^T/|k|^2 mode by mode."""
    kx, ky = _full_k(field.grid)
    k2 = kx**2 + ky**2
    c = field.coeffs
    kdu = (kx * c[0] + ky * c[1]) / np.where(k2 == 0, 1.0, k2)
    out = np.stack([c[0] - kx * kdu, c[1] - ky * kdu])
    if zero_mean:
        out[:, 0, 0] = 0.0
    return SpectralField(field.grid, out)


def stokes_apply(field: SpectralField) -> SpectralField:
    """A u = -P Laplacian u, symbol |k|^2."""
    kx, ky = _full_k(field.grid)
    return SpectralField(field.grid, field.coeffs * (kx**2 + ky**2))


def sobolev_norm(field: SpectralField, m: float = 0.0) -> float:
    """||(I + A)^{m/2} u||, so m = 0 is the H norm and m = 1 the V norm."""
    if m < 0:
        raise ParameterError(f"Sobolev index must be >= 0, got {m!r}")
    return float(np.sqrt(norm_sq_h(field.grid, field.half, m)))


def inner(a: SpectralField, b: SpectralField) -> float:
    a._check(b)
    return float(inner_h(a.grid, a.half, b.half))


def grad_norm(field: SpectralField) -> float:
    return float(np.sqrt(grad_sq_h(field.grid, field.half)))


def trilinear_b(u: SpectralField, v: SpectralField, w: SpectralField) -> float:
    """b(u, v, w) = integral of (u.grad)v . w."""
    u._check(v)
    u._check(w)
    return float(trilinear_h(u.grid, u.half, v.half, w.half))


def nonlinear_term(u: SpectralField) -> SpectralField:
    """B(u) = P[(u.grad)u]."""
    return SpectralField.from_half(u.grid, advection_h(u.grid, u.half))


def _shell_modes(cutoff: int) -> np.ndarray:
    """Half-plane representatives ordered by square shell, then (kx, ky).

    The order of shells 1..m does not depend on the cutoff, so a finer grid
    draws the same coefficients for the modes it shares with a coarser one.
    """
    out = []
    for m in range(1, cutoff + 1):
        shell = [(kx, ky) for kx in range(-m, m + 1) for ky in range(0, m + 1)
                 if max(abs(kx), ky) == m and (ky > 0 or kx > 0)]
        out.extend(sorted(shell))
    return np.array(out, dtype=int).reshape(-1, 2)


def random_divfree_field(seed: int, grid: Grid, spectrum: float = 2.0) -> SpectralField:
    """Gaussian field with coefficient amplitude |k|^-spectrum, projected."""
    if not spectrum > 1:
        raise ParameterError(f"spectrum exponent must exceed 1, got {spectrum!r}")
    modes = _shell_modes(grid.cutoff)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), 17])))
    z = rng.standard_normal((len(modes), 2, 2)) / np.sqrt(2.0)
    amp = (grid.k0 * np.hypot(modes[:, 0], modes[:, 1])) ** (-spectrum)
    vals = (z[..., 0] + 1j * z[..., 1]) * amp[:, None]
    uh = np.zeros((2, grid.n, grid.nh), dtype=complex)
    kx_idx = modes[:, 0] % grid.n
    ky_idx = modes[:, 1]
    uh[:, kx_idx, ky_idx] = vals.T
    # ky = 0 column must be Hermitian along kx
    col = uh[:, :, 0]
    neg = (-np.arange(grid.n)) % grid.n
    has = np.abs(col).sum(axis=0) > 0
    col[:, neg[has]] = np.conj(col[:, has])
    uh = project_h(grid, uh) * grid.mask
    return SpectralField.from_half(grid, uh)


def single_mode_field(grid: Grid, kint: tuple[int, int], amplitude: float = 1.0) -> SpectralField:
    """Real divergence-free field amplitude * perp(k)/|k| * cos(k.x)."""
    kx, ky = kint
    if (kx, ky) == (0, 0):
        raise ParameterError("single mode needs k != 0")
    x, y = grid.xy
    phase = grid.k0 * (kx * x + ky * y)
    kn = np.hypot(kx, ky)
    u = np.stack([-ky / kn * np.cos(phase), kx / kn * np.cos(phase)]) * amplitude
    return SpectralField.from_physical(grid, u)


def taylor_green(grid: Grid, amplitude: float = 1.0) -> SpectralField:
    """(sin x cos y, -cos x sin y) at the box fundamental wavenumber."""
    x, y = grid.xy
    k = grid.k0
    u = np.stack([np.sin(k * x) * np.cos(k * y), -np.cos(k * x) * np.sin(k * y)])
    return SpectralField.from_physical(grid, amplitude * u)


def normalized(field: SpectralField, radius: float = 1.0) -> SpectralField:
    nrm = field.norm()
    if nrm == 0:
        return field
    return field * (radius / nrm)


_FORCING_KINDS = ("zero", "fixed-field", "time-polynomial")


@dataclass(frozen=True, eq=False)
class ForcingSpec:
    """f(., t) = 0, f1, or t^p f1 (|t|^p for non-integer p)."""

    kind: str = "zero"
    base_field: SpectralField | None = None
    exponent: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in _FORCING_KINDS:
            raise ParameterError(f"forcing kind must be one of {_FORCING_KINDS}, got {self.kind!r}")
        if self.kind != "zero" and self.base_field is None:
            raise ParameterError(f"forcing kind {self.kind!r} needs a base field")
        if self.exponent < 0:
            raise ParameterError(f"forcing exponent must be >= 0, got {self.exponent!r}")
        if self.delta < 0:
            raise ParameterError(f"forcing delta must be >= 0, got {self.delta!r}")
        if self.base_field is not None:
            g = self.base_field.grid
            fh = project_h(g, self.base_field.half) * g.mask
            object.__setattr__(self, "_fh", fh)
            object.__setattr__(self, "_f1_sq", float(norm_sq_h(g, fh)))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self._f1_sq == 0.0

    def factor(self, t):
        """Scalar time profile, vectorized over t."""
        if self.kind == "time-polynomial":
            p = self.exponent
            t = np.asarray(t, dtype=float)
            return t**p if float(p).is_integer() else np.abs(t) ** p
        return np.ones_like(np.asarray(t, dtype=float))

    def half_at(self, t: float) -> np.ndarray | None:
        """Projected forcing coefficients at time t (None when f = 0)."""
        if self.is_zero:
            return None
        return float(self.factor(t)) * self._fh

    def norm_sq(self, t):
        """||f(., t)||^2, vectorized over t."""
        if self.is_zero:
            return np.zeros_like(np.asarray(t, dtype=float))
        return self.factor(t) ** 2 * self._f1_sq

    def check(self, sigma: float) -> None:
        """The growth rate delta must stay below sigma^2/2."""
        from .errors import HypothesisError

        if not self.delta < sigma**2 / 2:
            raise HypothesisError(
                f"forcing delta={self.delta!r} violates delta < sigma^2/2 = {sigma**2 / 2!r}")
