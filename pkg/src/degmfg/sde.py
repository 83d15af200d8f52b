"""Monte Carlo simulation of the controlled dynamics and value estimation.

Particles follow Euler-Maruyama under the optimal feedback read off a solved
value path: drift (alpha_1, alpha_2 * h(X_1)) with alpha = minus the
degenerate gradient of u, bilinear in space and linear in time; diffusion
diag(sqrt(2*eps + sigma_i^2)). Paths reflect at the box boundary, mirroring
the Neumann truncation of the PDE solvers. Randomness is counter-based:
each block of particles draws from its own Philox stream keyed by
(seed, block index), so ensembles are bit-identical regardless of scheduling,
and sums use numpy's pairwise reduction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coupling import CouplingSpec
from .dynamics import DynamicsSpec
from .errors import ConfigurationError
from .grid import DensityField, DensityPath, Grid2D, ValuePath
from .operators import degenerate_gradient

PARTICLE_BLOCK = 4096


@dataclass(frozen=True)
class EnsembleConfig:
    n_particles: int = 10_000
    seed: int = 0
    dt_sde: float = 1e-2
    store_every: int = 1  # keep every k-th time slice of positions

    def __post_init__(self):
        problems = []
        if self.n_particles < 1:
            problems.append("n_particles must be >= 1")
        if self.dt_sde <= 0:
            problems.append("dt_sde must be positive")
        if self.store_every < 1:
            problems.append("store_every must be >= 1")
        if problems:
            raise ConfigurationError(problems)


@dataclass
class ParticleEnsemble:
    times: np.ndarray      # stored time points, shape (n_stored,)
    positions: np.ndarray  # (n_stored, n_particles, 2)
    seed: int
    dt_sde: float

    @property
    def n_particles(self) -> int:
        return self.positions.shape[1]

    def final(self) -> np.ndarray:
        return self.positions[-1]


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float  # sample std / sqrt(n)
    n: int


def _block_normals(seed: int, block: int, shape):
    """Independent standard normals for one particle block, counter-based."""
    bitgen = np.random.Philox(key=(np.uint64(seed) << np.uint64(20))
                              + np.uint64(block))
    return np.random.Generator(bitgen).standard_normal(shape)


def _bilinear(grid: Grid2D, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of a grid field at points (n, 2), clamped."""
    f1 = np.clip((pts[:, 0] - grid.x1_min) / grid.dx1, 0.0, grid.n1 - 1.0)
    f2 = np.clip((pts[:, 1] - grid.x2_min) / grid.dx2, 0.0, grid.n2 - 1.0)
    i1 = np.minimum(f1.astype(int), grid.n1 - 2)
    i2 = np.minimum(f2.astype(int), grid.n2 - 2)
    t1 = f1 - i1
    t2 = f2 - i2
    v00 = values[i1, i2]
    v10 = values[i1 + 1, i2]
    v01 = values[i1, i2 + 1]
    v11 = values[i1 + 1, i2 + 1]
    return ((1 - t1) * (1 - t2) * v00 + t1 * (1 - t2) * v10
            + (1 - t1) * t2 * v01 + t1 * t2 * v11)


def _reflect(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Fold positions back into [lo, hi] by mirror reflection."""
    span = hi - lo
    y = np.mod(x - lo, 2.0 * span)
    y = np.where(y > span, 2.0 * span - y, y)
    return lo + y


class _FeedbackField:
    """alpha(x, t) = -D_G u, precomputed per slice, interpolated on demand."""

    def __init__(self, u_path: ValuePath, dyn: DynamicsSpec):
        self.grid = u_path.grid
        self.dt = u_path.dt
        self.nt = u_path.nt
        self.a1 = np.empty((u_path.nt,) + self.grid.shape)
        self.a2 = np.empty_like(self.a1)
        for k in range(u_path.nt):
            g = degenerate_gradient(u_path.slice(k), dyn)
            self.a1[k] = -g.v1
            self.a2[k] = -g.v2

    def at(self, pts: np.ndarray, t: float):
        """(alpha1, alpha2) at points, linear interpolation in time."""
        s = min(max(t / self.dt, 0.0), self.nt - 1.0)
        k = min(int(s), self.nt - 2)
        w = s - k
        a1 = ((1 - w) * _bilinear(self.grid, self.a1[k], pts)
              + w * _bilinear(self.grid, self.a1[k + 1], pts))
        a2 = ((1 - w) * _bilinear(self.grid, self.a2[k], pts)
              + w * _bilinear(self.grid, self.a2[k + 1], pts))
        return a1, a2


def _time_steps(t0: float, horizon: float, dt_sde: float):
    n = (horizon - t0) / dt_sde
    n_steps = int(round(n))
    if n_steps < 1 or abs(n - n_steps) > 1e-9:
        raise ConfigurationError(
            "dt_sde=%g must tile the interval [%g, %g] with a whole number "
            "of steps" % (dt_sde, t0, horizon))
    return n_steps


def sample_density(m: DensityField, n: int, seed: int) -> np.ndarray:
    """Draw n points from a grid density: categorical over trapezoid cells,
    uniform jitter within each cell. Returns an (n, 2) array."""
    grid = m.grid
    w = (grid.cell_weights() * m.values).ravel()
    w = np.maximum(w, 0.0)
    w /= w.sum()
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    idx = rng.choice(w.size, size=n, p=w)
    i1, i2 = np.unravel_index(idx, grid.shape)
    jitter = rng.uniform(-0.5, 0.5, size=(n, 2))
    pts = np.stack([grid.x1[i1] + jitter[:, 0] * grid.dx1,
                    grid.x2[i2] + jitter[:, 1] * grid.dx2], axis=1)
    pts[:, 0] = np.clip(pts[:, 0], grid.x1_min, grid.x1_max)
    pts[:, 1] = np.clip(pts[:, 1], grid.x2_min, grid.x2_max)
    return pts


def _initial_positions(x0, nb, lo, hi):
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        return np.tile(x0, (nb, 1))
    return x0[lo:hi].copy()


def simulate_paths(dyn: DynamicsSpec, u_path: ValuePath, x0, t0: float,
                   cfg: EnsembleConfig) -> ParticleEnsemble:
    """Euler-Maruyama under the optimal feedback; reflecting boundary.

    ``x0`` is either a single point (every particle starts there) or an
    (n_particles, 2) array of initial positions.
    """
    if not 0.0 <= t0 < u_path.horizon:
        raise ConfigurationError("t0 must lie in [0, T)")
    if cfg.dt_sde > u_path.dt + 1e-12:
        raise ConfigurationError(
            "dt_sde=%g exceeds the value-path mesh dt=%g: the feedback "
            "control would be stale" % (cfg.dt_sde, u_path.dt))
    grid = u_path.grid
    x0_arr = np.asarray(x0, dtype=float)
    if x0_arr.ndim == 2 and x0_arr.shape != (cfg.n_particles, 2):
        raise ConfigurationError(
            "array x0 must have shape (n_particles, 2)")
    n_steps = _time_steps(t0, u_path.horizon, cfg.dt_sde)
    fb = _FeedbackField(u_path, dyn)
    sq_dt = math.sqrt(cfg.dt_sde)

    stored_idx = list(range(0, n_steps + 1, cfg.store_every))
    if stored_idx[-1] != n_steps:
        stored_idx.append(n_steps)
    positions = np.empty((len(stored_idx), cfg.n_particles, 2))

    n_blocks = -(-cfg.n_particles // PARTICLE_BLOCK)
    for blk in range(n_blocks):
        lo = blk * PARTICLE_BLOCK
        hi = min(lo + PARTICLE_BLOCK, cfg.n_particles)
        nb = hi - lo
        noise = _block_normals(cfg.seed, blk, (n_steps, nb, 2))
        x = _initial_positions(x0_arr, nb, lo, hi)
        store_ptr = 0
        if stored_idx[0] == 0:
            positions[0, lo:hi] = x
            store_ptr = 1
        for step in range(n_steps):
            t = t0 + step * cfg.dt_sde
            a1, a2 = fb.at(x, t)
            hx = dyn.h_values(x[:, 0])
            s1 = np.sqrt(2.0 * dyn.epsilon
                         + dyn.sigma1_sq(x[:, 0], x[:, 1]).astype(float))
            s2 = np.sqrt(2.0 * dyn.epsilon
                         + dyn.sigma2_sq(x[:, 0], x[:, 1]).astype(float))
            x = x + np.stack([a1, a2 * hx], axis=1) * cfg.dt_sde \
                + np.stack([s1 * noise[step, :, 0],
                            s2 * noise[step, :, 1]], axis=1) * sq_dt
            x[:, 0] = _reflect(x[:, 0], grid.x1_min, grid.x1_max)
            x[:, 1] = _reflect(x[:, 1], grid.x2_min, grid.x2_max)
            if store_ptr < len(stored_idx) and stored_idx[store_ptr] == step + 1:
                positions[store_ptr, lo:hi] = x
                store_ptr += 1
    times = t0 + cfg.dt_sde * np.asarray(stored_idx, dtype=float)
    return ParticleEnsemble(times=times, positions=positions,
                            seed=cfg.seed, dt_sde=cfg.dt_sde)


def mc_value(dyn: DynamicsSpec, coupling: CouplingSpec, m_path: DensityPath,
             u_path: ValuePath, x0, t0: float, cfg: EnsembleConfig) -> McEstimate:
    """Estimate the control cost along feedback paths started at (x0, t0).

    The estimate approximates u(x0, t0): running cost 1/2 |alpha|^2 + F,
    terminal cost G, with F and G evaluated on the grid and interpolated at
    the particle positions.
    """
    if m_path.grid != u_path.grid or m_path.nt != u_path.nt:
        raise ConfigurationError("m_path and u_path must share the mesh")
    if not 0.0 <= t0 < u_path.horizon:
        raise ConfigurationError("t0 must lie in [0, T)")
    if cfg.dt_sde > u_path.dt + 1e-12:
        raise ConfigurationError(
            "dt_sde=%g exceeds the value-path mesh dt=%g: the feedback "
            "control would be stale" % (cfg.dt_sde, u_path.dt))
    grid = u_path.grid
    n_steps = _time_steps(t0, u_path.horizon, cfg.dt_sde)
    fb = _FeedbackField(u_path, dyn)
    sq_dt = math.sqrt(cfg.dt_sde)

    f_slices = np.array([coupling.running_cost(m_path.slice(k)).values
                         for k in range(m_path.nt)])
    g_vals = coupling.terminal_cost(m_path.slice(m_path.nt - 1)).values

    def f_at(pts, t):
        s = min(max(t / u_path.dt, 0.0), u_path.nt - 1.0)
        k = min(int(s), u_path.nt - 2)
        w = s - k
        return ((1 - w) * _bilinear(grid, f_slices[k], pts)
                + w * _bilinear(grid, f_slices[k + 1], pts))

    costs = np.empty(cfg.n_particles)
    n_blocks = -(-cfg.n_particles // PARTICLE_BLOCK)
    for blk in range(n_blocks):
        lo = blk * PARTICLE_BLOCK
        hi = min(lo + PARTICLE_BLOCK, cfg.n_particles)
        nb = hi - lo
        noise = _block_normals(cfg.seed, blk, (n_steps, nb, 2))
        x = np.tile(np.asarray(x0, dtype=float), (nb, 1))
        run = np.zeros(nb)
        for step in range(n_steps):
            t = t0 + step * cfg.dt_sde
            a1, a2 = fb.at(x, t)
            run += (0.5 * (a1 ** 2 + a2 ** 2) + f_at(x, t)) * cfg.dt_sde
            hx = dyn.h_values(x[:, 0])
            s1 = np.sqrt(2.0 * dyn.epsilon
                         + dyn.sigma1_sq(x[:, 0], x[:, 1]).astype(float))
            s2 = np.sqrt(2.0 * dyn.epsilon
                         + dyn.sigma2_sq(x[:, 0], x[:, 1]).astype(float))
            x = x + np.stack([a1, a2 * hx], axis=1) * cfg.dt_sde \
                + np.stack([s1 * noise[step, :, 0],
                            s2 * noise[step, :, 1]], axis=1) * sq_dt
            x[:, 0] = _reflect(x[:, 0], grid.x1_min, grid.x1_max)
            x[:, 1] = _reflect(x[:, 1], grid.x2_min, grid.x2_max)
        costs[lo:hi] = run + _bilinear(grid, g_vals, x)
    mean = float(np.mean(costs))
    std_error = float(np.std(costs, ddof=1) / math.sqrt(cfg.n_particles)) \
        if cfg.n_particles > 1 else 0.0
    return McEstimate(mean=mean, std_error=std_error, n=cfg.n_particles)


def empirical_density(ens: ParticleEnsemble, grid: Grid2D,
                      slice_index: int = -1,
                      bandwidth: float | None = None) -> DensityField:
    """Gaussian KDE of a stored particle slice, renormalized on the grid.

    Default bandwidth is Silverman's rule per axis. Returns a DensityField,
    so the usual invariants (nonnegative, unit trapezoidal mass) hold.
    """
    pts = ens.positions[slice_index]
    n = pts.shape[0]
    if n == 0:
        raise ConfigurationError("ensemble is empty")
    if bandwidth is None:
        # Silverman in 2D: h_i = sigma_i * n^(-1/6)
        sig = np.std(pts, axis=0, ddof=1) if n > 1 else np.array([0.0, 0.0])
        sig = np.maximum(sig, 1e-3 * min(grid.dx1, grid.dx2))
        bw = sig * n ** (-1.0 / 6.0)
    else:
        bw = np.array([bandwidth, bandwidth], dtype=float)
    x1g, x2g = grid.meshgrid()
    vals = np.zeros(grid.shape)
    # chunk over particles to bound memory
    chunk = 2000
    for lo in range(0, n, chunk):
        p = pts[lo:lo + chunk]
        d1 = (x1g.ravel()[:, None] - p[None, :, 0]) / bw[0]
        d2 = (x2g.ravel()[:, None] - p[None, :, 1]) / bw[1]
        vals += np.exp(-0.5 * (d1 ** 2 + d2 ** 2)).sum(axis=1).reshape(grid.shape)
    vals /= grid.integrate(vals)
    return DensityField(grid, vals)


def kde_bandwidth(ens: ParticleEnsemble, slice_index: int = -1) -> float:
    """The Silverman bandwidth scale used by empirical_density (max axis)."""
    pts = ens.positions[slice_index]
    sig = np.std(pts, axis=0, ddof=1)
    return float(np.max(sig) * pts.shape[0] ** (-1.0 / 6.0))
