"""Two-sided Wiener paths, the shift maps theta_t and the stationary OU process.

Times live on an integer lattice t_k = k*dt.  A path stores the values of a
root path on its own window together with an integer shift, so repeated
shifts are bit-exact: shift(shift(w, s), t) and shift(w, s + t) read the very
same floats.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, RangeError

# stream keys for the counter-based generator
_FORWARD, _BACKWARD, _OU_INIT = 0, 1, 2


def _grid_index(t: float, dt: float, what: str = "time") -> int:
    """Integer k with k*dt == t, or RangeError if t is off the lattice."""
    k = int(round(t / dt))
    if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise RangeError(f"{what} {t!r} is not on the grid of step {dt!r}")
    return k


def _philox(seed: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), stream])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Sampled two-sided Brownian path with w(0) = 0.

    ``base`` holds the root path on root lattice indices ``k_min..k_max``;
    ``offset`` is the accumulated shift s/dt.  The path seen by callers is
    t -> base(t + s) - base(s).
    """

    dt: float
    seed: int
    base: np.ndarray = field(repr=False)
    base_k_min: int
    offset: int = 0
    ou_init: float = 0.0  # stationary N(0, 1/2) draw at the root left end

    @property
    def k_min(self) -> int:
        return self.base_k_min - self.offset

    @property
    def k_max(self) -> int:
        return self.base_k_min + len(self.base) - 1 - self.offset

    @property
    def t_min(self) -> float:
        return self.k_min * self.dt

    @property
    def t_max(self) -> float:
        return self.k_max * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.k_min, self.k_max + 1) * self.dt

    @property
    def values(self) -> np.ndarray:
        return self.base - self.base[self.offset - self.base_k_min]

    @property
    def increments(self) -> np.ndarray:
        """dW_k = W(t_{k+1}) - W(t_k), shift invariant by construction."""
        return np.diff(self.base)

    @property
    def path_id(self) -> str:
        return f"seed={self.seed}:dt={self.dt!r}:shift={self.offset}"

    def index(self, t: float) -> int:
        """Position of time t in ``values``."""
        k = _grid_index(t, self.dt)
        if not self.k_min <= k <= self.k_max:
            raise RangeError(f"t={t!r} outside path window [{self.t_min}, {self.t_max}]")
        return k - self.k_min

    def at(self, t: float) -> float:
        return float(self.values[self.index(t)])

    def increment_sum(self, t0: float, t1: float) -> float:
        """W(t1) - W(t0) read directly from the root data."""
        return float(self.base[self.index(t1)] - self.base[self.index(t0)])

    def same_as(self, other: "WienerPath") -> bool:
        """Equal on the common grid (bitwise)."""
        if self.dt != other.dt:
            return False
        lo, hi = max(self.k_min, other.k_min), min(self.k_max, other.k_max)
        if lo > hi:
            return False
        a = self.values[lo - self.k_min: hi - self.k_min + 1]
        b = other.values[lo - other.k_min: hi - other.k_min + 1]
        return bool(np.array_equal(a, b))

    @classmethod
    def zeros(cls, t_min: float, t_max: float, dt: float) -> "WienerPath":
        """Deterministic path w == 0 (used for y == 0 checks)."""
        k0, k1 = _check_window(t_min, t_max, dt)
        return cls(dt=float(dt), seed=-1, base=np.zeros(k1 - k0 + 1), base_k_min=k0)


def _check_window(t_min: float, t_max: float, dt: float) -> tuple[int, int]:
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt!r}")
    if t_min > 0:
        raise ParameterError(f"t_min must be <= 0, got {t_min!r}")
    if t_max < 0:
        raise ParameterError(f"t_max must be >= 0, got {t_max!r}")
    span = (t_max - t_min) / dt
    if abs(span - round(span)) > 1e-9 * max(1.0, span):
        raise ParameterError("(t_max - t_min)/dt must be a whole number")
    try:
        k0 = _grid_index(t_min, dt, "t_min")
        k1 = _grid_index(t_max, dt, "t_max")
    except RangeError as exc:
        raise ParameterError(str(exc)) from None
    return k0, k1


def sample_wiener_path(seed: int, t_min: float, t_max: float, dt: float) -> WienerPath:
    """Two-sided Brownian path on [t_min, t_max] with W(0) = 0.

    Forward and backward halves come from independent Philox sub-streams of
    the same seed, so extending one side never perturbs the other.
    """
    k0, k1 = _check_window(t_min, t_max, dt)
    sd = np.sqrt(dt)
    fwd = _philox(seed, _FORWARD).standard_normal(k1) * sd
    bwd = _philox(seed, _BACKWARD).standard_normal(-k0) * sd
    w = np.empty(k1 - k0 + 1)
    w[-k0] = 0.0
    w[-k0 + 1:] = np.cumsum(fwd)
    w[:-k0] = np.cumsum(bwd)[::-1]
    y0 = _philox(seed, _OU_INIT).standard_normal() * np.sqrt(0.5)
    return WienerPath(dt=float(dt), seed=int(seed), base=w, base_k_min=k0, ou_init=float(y0))


def shift_path(path: WienerPath, s: float) -> WienerPath:
    """theta_s w: t -> w(t + s) - w(s) on the window [t_min - s, t_max - s]."""
    ks = _grid_index(s, path.dt, "shift")
    if not path.k_min <= ks <= path.k_max:
        raise RangeError(
            f"shift s={s!r} outside stored window [{path.t_min}, {path.t_max}]")
    return WienerPath(dt=path.dt, seed=path.seed, base=path.base,
                      base_k_min=path.base_k_min, offset=path.offset + ks,
                      ou_init=path.ou_init)


@dataclass(frozen=True, eq=False)
class OUTrajectory:
    """y(theta_t w) and z(t, w) = exp(-sigma*y) on the path grid."""

    path_ref: str
    y_values: np.ndarray = field(repr=False)
    sigma: float
    z_values: np.ndarray = field(repr=False)
    dt: float
    k_min: int
    init_mode: str = "stationary-draw"

    @property
    def t_min(self) -> float:
        return self.k_min * self.dt

    @property
    def t_max(self) -> float:
        return (self.k_min + len(self.y_values) - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return (self.k_min + np.arange(len(self.y_values))) * self.dt

    def index(self, t: float) -> int:
        k = _grid_index(t, self.dt) - self.k_min
        if not 0 <= k < len(self.y_values):
            raise RangeError(f"t={t!r} outside OU window [{self.t_min}, {self.t_max}]")
        return k

    def y(self, t: float) -> float:
        return float(self.y_values[self.index(t)])

    def truncation_error(self) -> float:
        """Weight e^{t_min} left on the stationary draw at time 0."""
        return float(np.exp(min(self.t_min, 0.0)))


def _ou_root(base_increments: np.ndarray, dt: float, y0: float) -> np.ndarray:
    """Exponential-Euler recursion y_{k+1} = e^{-dt}(y_k + dW_k)."""
    a = np.exp(-dt)
    y = np.empty(len(base_increments) + 1)
    y[0] = y0
    # scipy.signal.lfilter would vectorize this, but the plain loop keeps the
    # summation order fixed and is fast enough for 1e5 samples
    acc = y0
    for k, dw in enumerate(base_increments.tolist()):
        acc = a * (acc + dw)
        y[k + 1] = acc
    return y


def ou_trajectory(path: WienerPath, sigma: float,
                  init_mode: str = "stationary-draw") -> OUTrajectory:
    """Stationary OU process driven by the increments of ``path``.

    The recursion always starts at the left end of the root data, so a
    shifted path yields exactly the shifted OU samples.
    """
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma!r}")
    if init_mode == "stationary-draw":
        y0 = path.ou_init
    elif init_mode == "zero":
        y0 = 0.0
    else:
        raise ParameterError(f"unknown init_mode {init_mode!r}")
    y = _ou_root(np.diff(path.base), path.dt, y0)
    z = np.exp(-sigma * y)
    return OUTrajectory(path_ref=path.path_id, y_values=y, sigma=float(sigma),
                        z_values=z, dt=path.dt, k_min=path.k_min, init_mode=init_mode)


def z_factor(ou: OUTrajectory, t: float) -> float:
    """z(t, w) = exp(-sigma * y(theta_t w)); t must be a grid time."""
    return float(ou.z_values[ou.index(t)])


def ou_series(path: WienerPath, sigma: float, init_mode: str = "stationary-draw"):
    """(times, W, y, z) columns for CSV export."""
    ou = ou_trajectory(path, sigma, init_mode)
    return path.times, path.values, ou.y_values, ou.z_values
