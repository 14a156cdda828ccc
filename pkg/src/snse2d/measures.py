"""Empirical invariant-measure tools: transition operator by Monte Carlo,
Cesaro averages, cylindrical functionals, the Ito balance and the
two-sided Liouville balance, plus mixing and Feller/Markov probes.

Monte Carlo tolerances follow one convention: 3 standard errors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import DataError, DivergenceError, ParameterError
from .fields import (Grid, SpectralField, convect_h, inner_h, norm_sq_h, single_mode_field)
from .integrator import (CocycleParams, cocycle_batch, em_step_h, fit_order, ou_samples,
                         path_increments, run_cnse_batch)
from .noise import WienerPath, ou_trajectory, sample_wiener_path, shift_path

MC_MULT = 3.0


# ---------------------------------------------------------------------------
# observables

@dataclass(frozen=True)
class Observable:
    """Bounded observable acting on batches of half-layout coefficients."""

    batch_fn: object
    lipschitz: float = float("nan")
    name: str = "observable"

    def batch(self, grid: Grid, vh: np.ndarray) -> np.ndarray:
        return np.asarray(self.batch_fn(grid, vh), dtype=float)

    def __call__(self, v: SpectralField) -> float:
        return float(self.batch(v.grid, v.half[None])[0])


def capped_norm(power: int = 1, cap: float = 10.0) -> Observable:
    """min(||v||^power, cap) with Lipschitz constant power * cap^((power-1)/power)."""
    if power < 1 or cap <= 0:
        raise ParameterError(f"capped norm needs power >= 1 and cap > 0, got {power!r}, {cap!r}")

    def fn(grid, vh):
        return np.minimum(norm_sq_h(grid, vh) ** (power / 2), cap)
    lip = float(power * cap ** ((power - 1) / power))
    return Observable(fn, lip, f"min(|v|^{power}, {cap:g})")


def constant_observable(c: float) -> Observable:
    return Observable(lambda grid, vh: np.full(vh.shape[0], float(c)), 0.0, f"const {c:g}")


def from_function(fn, lipschitz: float = float("nan")) -> Observable:
    """Wrap a per-field callable g(SpectralField) -> float."""
    def batch(grid, vh):
        return np.array([fn(SpectralField.from_half(grid, v)) for v in vh])
    return Observable(batch, lipschitz, getattr(fn, "__name__", "g"))


# ---------------------------------------------------------------------------
# cylindrical functionals

@dataclass(frozen=True)
class GaussianBump:
    """psi(x) = A exp(-|x - c|^2 / (2 s^2))."""

    center: tuple
    width: float = 1.0
    amplitude: float = 1.0

    @property
    def lipschitz(self) -> float:
        return abs(self.amplitude) * np.exp(-0.5) / self.width

    def derivs(self, x):
        c = np.asarray(self.center, dtype=float)
        d = x - c
        s2 = self.width**2
        val = self.amplitude * np.exp(-0.5 * (d * d).sum(-1) / s2)
        grad = -val[..., None] * d / s2
        eye = np.eye(x.shape[-1])
        hess = val[..., None, None] * (d[..., :, None] * d[..., None, :] / s2**2 - eye / s2)
        return val, grad, hess


@dataclass(frozen=True)
class PolyCutoff:
    """psi(x) = (c0 + g.x + x.H.x/2) exp(-|x|^2 / (2 s^2))."""

    c0: float
    g: tuple
    H: tuple
    width: float = 1.0

    @property
    def lipschitz(self) -> float:
        # radial majorant of |grad psi| maximized on a fine grid
        g = np.linalg.norm(self.g)
        h = np.linalg.norm(np.asarray(self.H, dtype=float), 2)
        r = np.linspace(0.0, 12.0 * self.width, 4001)
        q = abs(self.c0) + g * r + 0.5 * h * r**2
        bound = (g + h * r + q * r / self.width**2) * np.exp(-0.5 * r**2 / self.width**2)
        return float(bound.max())

    def derivs(self, x):
        gv = np.asarray(self.g, dtype=float)
        H = np.asarray(self.H, dtype=float)
        s2 = self.width**2
        e = np.exp(-0.5 * (x * x).sum(-1) / s2)
        Hx = x @ H.T
        q = self.c0 + x @ gv + 0.5 * (x * Hx).sum(-1)
        dq = gv + Hx
        val = q * e
        grad = (dq - q[..., None] * x / s2) * e[..., None]
        eye = np.eye(x.shape[-1])
        outer = dq[..., :, None] * x[..., None, :]
        hess = (H - (outer + np.swapaxes(outer, -1, -2)) / s2 - q[..., None, None] * eye / s2
                + q[..., None, None] * x[..., :, None] * x[..., None, :] / s2**2)
        return val, grad, hess * e[..., None, None]


@dataclass(frozen=True)
class ConstantPsi:
    value: float = 1.0
    lipschitz: float = 0.0

    def derivs(self, x):
        m = x.shape[-1]
        return (np.full(x.shape[:-1], float(self.value)), np.zeros(x.shape),
                np.zeros(x.shape + (m,)))


def low_modes(grid: Grid, m: int) -> list[SpectralField]:
    """First m unit-norm divergence-free single-mode fields, lowest |k| first."""
    cand = sorted({(kx, ky) for kx in range(-3, 4) for ky in range(0, 4)
                   if (ky > 0 or kx > 0)}, key=lambda k: (k[0] ** 2 + k[1] ** 2, k))
    out = []
    for k in cand[:m]:
        f = single_mode_field(grid, k)
        out.append(f * (1.0 / f.norm()))
    return out


@dataclass(frozen=True, eq=False)
class CylindricalFunctional:
    """Lambda(v) = psi((v, e_1), ..., (v, e_m))."""

    modes: tuple
    psi: object

    def __post_init__(self):
        if not self.modes:
            raise ParameterError("cylindrical functional needs at least one mode")
        g = self.modes[0].grid
        if any(e.grid != g for e in self.modes):
            raise ParameterError("cylindrical modes live on different grids")
        object.__setattr__(self, "_E", np.stack([e.half for e in self.modes]))

    @property
    def grid(self) -> Grid:
        return self.modes[0].grid

    @property
    def lipschitz(self) -> float:
        return float(self.psi.lipschitz)

    def coords(self, vh: np.ndarray) -> np.ndarray:
        return inner_h(self.grid, vh[:, None], self._E[None])

    def evaluate(self, vh: np.ndarray):
        """Lambda, Lambda' (as a field) and the Hessian of psi for a batch."""
        x = self.coords(vh)
        val, grad, hess = self.psi.derivs(x)
        if not (np.isfinite(val).all() and np.isfinite(grad).all() and np.isfinite(hess).all()):
            raise DivergenceError("cylindrical functional evaluation overflowed")
        dfield = np.tensordot(grad, self._E, axes=(1, 0))
        return val, dfield, hess

    def __call__(self, v: SpectralField) -> float:
        return float(self.evaluate(v.half[None])[0][0])

    def second(self, hess: np.ndarray, hh: np.ndarray) -> np.ndarray:
        """Lambda''(v)(h, h) = sum_ij psi_ij (h, e_i)(h, e_j)."""
        c = self.coords(hh)
        return np.einsum("bi,bij,bj->b", c, hess, c)

    def as_observable(self) -> Observable:
        return Observable(lambda grid, vh: self.evaluate(vh)[0], self.lipschitz, "Lambda")


def g_terms(Lam: CylindricalFunctional, params: CocycleParams, vh: np.ndarray, t: float):
    """G1 = <Lambda', L(v, t)>, G2 = (Lambda', sigma v), G3 = Lambda''(sigma v)(sigma v).

    G1 uses the integration-by-parts form nu (v, Lap Lambda') + b(v, Lambda', v) + (f, Lambda').
    """
    g = params.grid
    val, d, hess = Lam.evaluate(vh)
    sig = params.sigma
    g1 = -params.nu * inner_h(g, vh, g.k2 * d)
    if params.nonlinear:
        g1 = g1 + inner_h(g, convect_h(g, vh, d), vh)
    fh = params.forcing.half_at(t)
    if fh is not None:
        g1 = g1 + inner_h(g, fh[None], d)
    g2 = sig * inner_h(g, d, vh)
    g3 = Lam.second(hess, sig * vh)
    return val, g1, g2, g3


# ---------------------------------------------------------------------------
# transition operator

@dataclass
class ObservableSeries:
    times: np.ndarray
    values: np.ndarray
    n_paths: int
    stderr: np.ndarray
    n_diverged: int = 0


def _forward_ensemble(x: SpectralField, times, n_paths: int, params: CocycleParams,
                      obs_list, seeds=None, seed_base: int = 0, noise_dt: float | None = None,
                      init_mode: str = "stationary-draw"):
    """Evaluate observables on Phi(t, w_i, x) at the requested times."""
    times = np.asarray(times, dtype=float)
    t_end = float(times.max()) if len(times) else 0.0
    seeds = list(seeds) if seeds is not None else [seed_base + i for i in range(n_paths)]
    noise_dt = params.dt if noise_dt is None else noise_dt
    g = params.grid
    k_obs = {int(round(t / params.dt)): i for i, t in enumerate(times)}
    vals = np.full((len(obs_list), len(times), len(seeds)), np.nan)
    diverged: set = set()
    if t_end == 0:
        for j, ob in enumerate(obs_list):
            vals[j, :, :] = ob.batch(g, np.broadcast_to(x.half, (len(seeds),) + x.half.shape))
        return vals, diverged
    paths = [sample_wiener_path(s, 0.0, t_end, noise_dt) for s in seeds]
    ys = np.stack([ou_samples(ou_trajectory(p, params.sigma, init_mode), 0.0, t_end, params.dt)
                   for p in paths])
    z = np.exp(-params.sigma * ys)
    uh0 = z[:, 0].reshape(-1, 1, 1, 1) * np.broadcast_to(x.half, (len(seeds),) + x.half.shape)

    def obs(k, uh):
        if k in k_obs:
            vh = uh / z[:, k].reshape(-1, 1, 1, 1)
            for j, ob in enumerate(obs_list):
                vals[j, k_obs[k]] = ob.batch(g, vh)

    run_cnse_batch(params, uh0, ys, 0.0, observe=obs, diverged=diverged)
    return vals, diverged


def _mean_se(v: np.ndarray, keep: np.ndarray):
    v = v[..., keep]
    n = v.shape[-1]
    mean = v.mean(axis=-1)
    se = v.std(axis=-1, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def transition_expectation(g: Observable, t: float, x: SpectralField, n_paths: int,
                           params: CocycleParams, seeds=None, seed_base: int = 0,
                           noise_dt: float | None = None):
    """Monte Carlo T_t g(x) = E g(Phi(t, w, x)); returns (mean, stderr, n_diverged)."""
    if n_paths < 2:
        raise ParameterError("transition_expectation needs n_paths >= 2")
    if t < 0:
        raise ParameterError("t must be >= 0")
    vals, div = _forward_ensemble(x, [t], n_paths, params, [g], seeds, seed_base, noise_dt)
    n = vals.shape[-1]
    if len(div) > 0.05 * n:
        raise DivergenceError(f"{len(div)} of {n} paths diverged (> 5%)")
    keep = np.ones(n, dtype=bool)
    keep[list(div)] = False
    mean, se = _mean_se(vals[0, 0], keep)
    return float(mean), float(se), len(div)


@dataclass
class MixingReport:
    series: ObservableSeries
    envelope: np.ndarray
    deviation: np.ndarray
    status: list
    verdict: str
    psi0: float


def mixing_test(psi: Observable, v0: SpectralField, t_grid, n_paths: int,
                params: CocycleParams, seeds=None, seed_base: int = 0,
                noise_dt: float | None = None) -> MixingReport:
    """T_t psi(v0) against psi(0) +- L |v0| e^{-sigma^2 t/8} + 3 stderr.

    A grid point whose deviation exceeds the bound while 3 stderr alone
    exceeds the envelope is flagged (noise-dominated) rather than failed.
    """
    if not params.forcing.is_zero:
        raise ParameterError("mixing test requires zero forcing")
    t_grid = np.asarray(t_grid, dtype=float)
    vals, div = _forward_ensemble(v0, t_grid, n_paths, params, [psi], seeds, seed_base, noise_dt)
    n = vals.shape[-1]
    keep = np.ones(n, dtype=bool)
    keep[list(div)] = False
    mean, se = _mean_se(vals[0], keep)
    psi0 = psi(SpectralField.zeros(params.grid))
    lip = psi.lipschitz if np.isfinite(psi.lipschitz) else 0.0
    env = lip * v0.norm() * np.exp(-params.sigma**2 * t_grid / 8)
    dev = np.abs(mean - psi0)
    status = []
    for d, e, s in zip(dev, env, se):
        if d <= e + MC_MULT * s:
            status.append("pass")
        elif MC_MULT * s >= e:
            status.append("flag")
        else:
            status.append("fail")
    verdict = "fail" if "fail" in status else ("flag" if "flag" in status else "pass")
    series = ObservableSeries(t_grid, mean, int(keep.sum()), se, len(div))
    return MixingReport(series, env, dev, status, verdict, psi0)


# ---------------------------------------------------------------------------
# Cesaro averages

@dataclass
class CesaroResult:
    average: float
    stderr: float
    nodes: np.ndarray
    samples: np.ndarray


def cesaro_observable(phi: Observable, upsilon, tau: float, omega: WienerPath, T: float,
                      params: CocycleParams, n_nodes: int = 41) -> CesaroResult:
    """(1/T) int_{-T}^0 phi(Phi(-xi, tau + xi, theta_xi w, upsilon(tau + xi))) d xi.

    Every node xi starts its own trajectory; all of them ride the single
    path theta_{-tau} w and end at physical time tau, so they share one
    batch with staggered starts.  ``upsilon`` maps a time to a field.
    The stderr comes from batch means over 8 blocks of nodes.
    """
    if T <= 0:
        raise ParameterError("Cesaro window must be positive")
    g = params.grid
    h = T / (n_nodes - 1)
    stride = int(round(h / params.dt))
    if stride < 1 or abs(stride * params.dt - h) > 1e-9 * h:
        raise ParameterError("Cesaro node spacing must be a whole number of steps")
    xi = -T + np.arange(n_nodes) * h
    shifted = shift_path(omega, -tau)
    ou = ou_trajectory(shifted, params.sigma)
    ys1 = ou_samples(ou, tau - T, tau, params.dt)
    z = np.exp(-params.sigma * ys1)
    b = n_nodes
    starts = {}
    for j in range(n_nodes):
        k = j * stride
        v = upsilon(tau + xi[j])
        starts[k] = (np.array([j]), (z[k] * v.half)[None])
    uh = run_cnse_batch(params, np.zeros((b, 2, g.n, g.nh), dtype=complex),
                        np.broadcast_to(ys1, (b, len(ys1))), tau - T, starts=starts)
    samples = phi.batch(g, uh / z[-1])
    avg = float(integrate.trapezoid(samples, xi) / T)
    blocks = np.array_split(samples, min(8, n_nodes))
    bm = np.array([blk.mean() for blk in blocks])
    se = float(bm.std(ddof=1) / np.sqrt(len(bm))) if len(bm) > 1 else 0.0
    return CesaroResult(avg, se, xi, samples)


# ---------------------------------------------------------------------------
# Ito balance

def ito_residuals_batch(Lam: CylindricalFunctional, params: CocycleParams, vh0: np.ndarray,
                        dws: np.ndarray, tau: float):
    """Running residual R_k of the Ito formula along Euler-Maruyama paths.

    Returns (R, lam0, lam_end, drift_sum, ito_sum) with R of shape (B, m+1).
    """
    b, m = dws.shape
    vh = np.array(vh0, dtype=complex)
    R = np.zeros((b, m + 1))
    drift = np.zeros(b)
    stoch = np.zeros(b)
    lam0 = None
    dt = params.dt
    for k in range(m + 1):
        t = tau + k * dt
        if k == m:
            lam_end = Lam.evaluate(vh)[0]
            break
        val, g1, g2, g3 = g_terms(Lam, params, vh, t)
        if lam0 is None:
            lam0 = val
        vh = em_step_h(params, vh, dws[:, k], t)
        lam1 = Lam.evaluate(vh)[0]
        drift += (g1 + 0.5 * g3) * dt
        stoch += g2 * dws[:, k]
        R[:, k + 1] = lam1 - lam0 - drift - stoch
    if lam0 is None:
        lam0 = Lam.evaluate(vh)[0]
        lam_end = lam0
    return R, lam0, lam_end, drift, stoch


@dataclass
class ResidualSeries:
    times: np.ndarray
    residuals: np.ndarray


def ito_balance_residual(path: WienerPath, v_tau: SpectralField, Lam: CylindricalFunctional,
                         tau: float, t_end: float, params: CocycleParams) -> ResidualSeries:
    """R(t) = Lambda(v(t)) - Lambda(v(tau)) - Ito sum - drift sum along EM."""
    dws = path_increments(path, tau, t_end, params.dt)
    R = ito_residuals_batch(Lam, params, v_tau.half[None], dws[None], tau)[0]
    times = tau + np.arange(R.shape[1]) * params.dt
    return ResidualSeries(times, R[0])


def ito_order_study(Lam: CylindricalFunctional, v_tau: SpectralField, tau: float, t_end: float,
                    paths, params: CocycleParams, levels: int = 3):
    """RMS over paths of the terminal Ito residual at dt, dt/2, ...

    Returns (dts, rms, order); the increments of every level are aggregated
    from the same paths.
    """
    paths = list(paths)
    if len(paths) < 1:
        raise DataError("no sample paths given")
    dts = params.dt / 2.0 ** np.arange(levels)
    vh = np.broadcast_to(v_tau.half, (len(paths),) + v_tau.half.shape)
    rms = []
    for dtj in dts:
        pj = params.with_dt(dtj)
        dws = np.stack([path_increments(p, tau, t_end, dtj) for p in paths])
        R = ito_residuals_batch(Lam, pj, vh, dws, tau)[0]
        rms.append(float(np.sqrt(np.mean(R[:, -1] ** 2))))
    rms = np.array(rms)
    return dts, rms, fit_order(dts, rms)


# ---------------------------------------------------------------------------
# Liouville balance

@dataclass
class MeasureSampleSpec:
    """Pullback ensemble: states Phi(t_pull, tau - t_pull, theta_{-t_pull} w, v_i).

    Passing ``states`` instead skips the pullback and uses them verbatim.
    """

    initial_data: list = field(default_factory=list)
    t_pull: float = 20.0
    states: list | None = None


@dataclass
class LiouvilleReport:
    lhs: np.ndarray  # per path
    rhs: np.ndarray
    gaps: np.ndarray
    gap: float
    stderr: float
    discretization: float
    normalized_gap: float
    passed: bool
    member_residuals: list


def _measure_states(spec: MeasureSampleSpec, p_shift: WienerPath, tau: float,
                    params: CocycleParams) -> np.ndarray:
    if spec.states is not None:
        if not spec.states:
            raise DataError("empty measure ensemble")
        return np.stack([s.half for s in spec.states])
    if not spec.initial_data:
        raise DataError("empty measure ensemble")
    vh = np.stack([v.half for v in spec.initial_data])
    # p_shift already plays the role of theta_{-tau} of the sample point
    ou = ou_trajectory(p_shift, params.sigma)
    ys = ou_samples(ou, tau - spec.t_pull, tau, params.dt)
    z = np.exp(-params.sigma * ys)
    b = vh.shape[0]
    uh = run_cnse_batch(params, z[0] * vh, np.broadcast_to(ys, (b, len(ys))), tau - spec.t_pull)
    return uh / z[-1]


def liouville_balance(tau: float, t_end: float, omegas, Lam: CylindricalFunctional,
                      spec: MeasureSampleSpec, params: CocycleParams) -> LiouvilleReport:
    """Both sides of the stochastic Liouville balance on [tau, t_end].

    For each sample path w the measure at (tau, theta_{tau - t} w) is the
    pullback ensemble; its members are pushed to t_end by Euler-Maruyama on
    the increments of theta_{-t} w, the same path the pullback used.  The
    left side is the change of the ensemble mean of Lambda; the right side
    is the ensemble mean of the drift and Ito sums.  The gap is compared
    with 3 stderr over paths (over members for a single path) plus a
    Richardson estimate |gap(dt) - gap(2 dt)|.
    """
    paths = list(omegas) if isinstance(omegas, (list, tuple)) else [omegas]
    if not paths:
        raise DataError("no sample paths given")
    lhs, rhs, gaps, gaps2, members = [], [], [], [], []
    coarse = params.with_dt(2 * params.dt)
    for w in paths:
        p_shift = shift_path(w, -t_end)
        vh = _measure_states(spec, p_shift, tau, params)
        dws = path_increments(p_shift, tau, t_end, params.dt)
        B = vh.shape[0]
        R, l0, l1, dr, st = ito_residuals_batch(Lam, params, vh, np.broadcast_to(dws, (B, len(dws))), tau)
        lhs.append(float(np.mean(l1 - l0)))
        rhs.append(float(np.mean(dr + st)))
        gaps.append(float(np.mean(R[:, -1])))
        members.append(R[:, -1])
        m = len(dws)
        if m % 2 == 0 and m > 0:
            dws2 = dws[0::2] + dws[1::2]
            R2 = ito_residuals_batch(Lam, coarse, vh, np.broadcast_to(dws2, (B, len(dws2))), tau)[0]
            gaps2.append(float(np.mean(R2[:, -1])))
    gaps = np.array(gaps)
    gap = float(gaps.mean())
    if len(paths) > 1:
        se = float(gaps.std(ddof=1) / np.sqrt(len(paths)))
    else:
        r = members[0]
        se = float(r.std(ddof=1) / np.sqrt(len(r))) if len(r) > 1 else 0.0
    disc = float(abs(gap - np.mean(gaps2))) if gaps2 else 0.0
    bound = MC_MULT * se + disc
    norm_gap = abs(gap) / bound if bound > 0 else (0.0 if gap == 0 else float("inf"))
    return LiouvilleReport(np.array(lhs), np.array(rhs), gaps, gap, se, disc, norm_gap,
                           bool(abs(gap) <= bound), members)


# ---------------------------------------------------------------------------
# probes

def invariance_probe(Lam: CylindricalFunctional, tau: float, t: float, omega: WienerPath,
                     spec: MeasureSampleSpec, params: CocycleParams) -> dict:
    """Ensemble mean of Lambda at (t, w) vs the (tau, theta_{tau-t} w) ensemble
    pushed forward by Phi(t - tau, tau, theta_{tau-t} w, .).

    Both ensembles are pulled back along the same path; they differ in how
    long their members have been attracted.
    """
    if t < tau:
        raise ParameterError("invariance probe needs t >= tau")
    p_shift = shift_path(omega, -t)
    vh_tau = _measure_states(spec, p_shift, tau, params)
    pushed = cocycle_batch(t - tau, tau, shift_path(omega, tau - t), vh_tau, params)
    vh_t = _measure_states(spec, p_shift, t, params)
    a = Lam.evaluate(vh_t)[0]
    b = Lam.evaluate(pushed)[0]
    se = float(np.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))) if len(a) > 1 else 0.0
    return {"at_t": float(a.mean()), "pushed": float(b.mean()), "stderr": se,
            "gap": float(abs(a.mean() - b.mean()))}


def g_continuity_probe(Lam: CylindricalFunctional, params: CocycleParams, v: SpectralField,
                       direction: SpectralField, scales=(1e-1, 1e-2, 1e-3), t: float = 0.0):
    """|G_i(v + eps h) - G_i(v)| for each scale eps; should shrink with eps."""
    base = np.array(g_terms(Lam, params, v.half[None], t)[1:])[:, 0]
    out = []
    for eps in scales:
        pert = (v.half + eps * direction.half)[None]
        val = np.array(g_terms(Lam, params, pert, t)[1:])[:, 0]
        out.append(np.abs(val - base))
    return np.array(out), base


def feller_probe(g: Observable, x: SpectralField, params: CocycleParams, t: float,
                 perturbation: SpectralField, scales=(1e-1, 1e-2, 1e-3), n_paths: int = 32,
                 seed_base: int = 0):
    """Common-random-number differences |T_t g(x + eps d) - T_t g(x)|."""
    base, _, _ = transition_expectation(g, t, x, n_paths, params, seed_base=seed_base)
    diffs = []
    for eps in scales:
        val, _, _ = transition_expectation(g, t, x + perturbation * eps, n_paths, params,
                                           seed_base=seed_base)
        diffs.append(abs(val - base))
    return np.array(diffs)


def semigroup_probe(g: Observable, x: SpectralField, params: CocycleParams, s1: float, s2: float,
                    n_outer: int = 16, n_inner: int = 16, n_direct: int = 256,
                    seed_base: int = 0) -> dict:
    """T_{s1+s2} g(x) against T_{s1}(T_{s2} g)(x) with disjoint seed ranges."""
    direct, se_d, _ = transition_expectation(g, s1 + s2, x, n_direct, params, seed_base=seed_base)
    outer_base = seed_base + 10**6
    inner_base = seed_base + 2 * 10**6
    states = []
    for i in range(n_outer):
        p = sample_wiener_path(outer_base + i, 0.0, s1, params.dt)
        states.append(cocycle_batch(s1, 0.0, p, x.half[None], params)[0])
    inner = []
    for i, sh in enumerate(states):
        xi = SpectralField.from_half(params.grid, sh)
        m, _, _ = transition_expectation(g, s2, xi, n_inner, params,
                                         seed_base=inner_base + i * n_inner)
        inner.append(m)
    inner = np.array(inner)
    nested = float(inner.mean())
    se_n = float(inner.std(ddof=1) / np.sqrt(n_outer))
    se = float(np.hypot(se_d, se_n))
    return {"direct": direct, "nested": nested, "stderr": se,
            "passed": bool(abs(direct - nested) <= MC_MULT * se + 1e-15)}
