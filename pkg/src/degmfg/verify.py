"""Named, runnable property checks on solved fields.

Each estimator measures a regularity constant (spatial/temporal Lipschitz,
directional semiconcavity, third differences, a.e. PDE residual) and the
suite aggregates them into a machine-readable pass/fail report against
config-visible thresholds. Sup-type estimators exclude a boundary frame
(default 10% of each axis) because artificial-boundary effects are not part
of the properties under test.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import DynamicsSpec
from .errors import ConfigurationError
from .grid import DensityPath, Direction, Grid2D, ScalarField, ValuePath

DEFAULT_BOUNDARY_FRAME = 0.1

AXES_AND_DIAGONALS = (
    Direction(1.0, 0.0),
    Direction(0.0, 1.0),
    Direction(1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0)),
    Direction(1.0 / math.sqrt(2.0), -1.0 / math.sqrt(2.0)),
)


def interior_restrict(u: ScalarField, frame: float = DEFAULT_BOUNDARY_FRAME) -> ScalarField:
    """Restrict a field to the sub-box obtained by trimming a boundary frame.

    ``frame`` is the fraction of each axis removed on each side; 0 is a
    no-op. Restriction can only shrink sup-type estimates.
    """
    if not 0.0 <= frame < 0.5:
        raise ConfigurationError("boundary frame must lie in [0, 0.5)")
    g = u.grid
    k1 = int(round(frame * g.n1))
    k2 = int(round(frame * g.n2))
    if k1 == 0 and k2 == 0:
        return u
    if g.n1 - 2 * k1 < 4 or g.n2 - 2 * k2 < 4:
        raise ConfigurationError("boundary frame leaves fewer than 4 nodes per axis")
    x1 = g.x1[k1:g.n1 - k1]
    x2 = g.x2[k2:g.n2 - k2]
    sub = Grid2D(x1[0], x1[-1], x2[0], x2[-1], len(x1), len(x2))
    return ScalarField(sub, u.values[k1:g.n1 - k1, k2:g.n2 - k2])


def lipschitz_estimate(u: ScalarField, boundary_frame: float = 0.0) -> float:
    """Max |u(x)-u(y)|/|x-y| over adjacent node pairs, axes and diagonals."""
    if boundary_frame > 0.0:
        u = interior_restrict(u, boundary_frame)
    v = u.values
    dx1, dx2 = u.grid.dx1, u.grid.dx2
    ddiag = math.hypot(dx1, dx2)
    best = 0.0
    if v.shape[0] > 1:
        best = max(best, float(np.abs(np.diff(v, axis=0)).max()) / dx1)
    if v.shape[1] > 1:
        best = max(best, float(np.abs(np.diff(v, axis=1)).max()) / dx2)
    if v.shape[0] > 1 and v.shape[1] > 1:
        best = max(best, float(np.abs(v[1:, 1:] - v[:-1, :-1]).max()) / ddiag)
        best = max(best, float(np.abs(v[1:, :-1] - v[:-1, 1:]).max()) / ddiag)
    return best


def time_lipschitz_estimate(u: ValuePath, boundary_frame: float = 0.0) -> float:
    """Max over nodes and adjacent time slices of |u_{k+1}-u_k|/dt."""
    vals = u.values
    if boundary_frame > 0.0:
        g = u.grid
        k1 = int(round(boundary_frame * g.n1))
        k2 = int(round(boundary_frame * g.n2))
        vals = vals[:, k1:g.n1 - k1 or None, k2:g.n2 - k2 or None]
    return float(np.abs(np.diff(vals, axis=0)).max()) / u.dt


def _lattice_vector(eta: Direction, grid: Grid2D):
    """Integer node offset (p, q) whose physical direction equals eta, if any.

    Axes and (on square-spacing grids) diagonals align with the lattice, so
    shifted samples are exact node values and the difference quotients carry
    no interpolation error.
    """
    for p, q in ((1, 0), (-1, 0), (0, 1), (0, -1),
                 (1, 1), (1, -1), (-1, 1), (-1, -1)):
        d = np.array([p * grid.dx1, q * grid.dx2])
        d /= np.linalg.norm(d)
        if abs(d[0] - eta.eta1) < 1e-12 and abs(d[1] - eta.eta2) < 1e-12:
            return p, q
    return None


def _lattice_samples(values: np.ndarray, p: int, q: int, j: int):
    """Exact samples u(x + k*j*(p,q)) for k = -2..2 over the valid interior."""
    n1, n2 = values.shape
    m1, m2 = 2 * j * abs(p), 2 * j * abs(q)
    if n1 - 2 * m1 < 1 or n2 - 2 * m2 < 1:
        raise ConfigurationError("grid too small for the directional stencil")
    out = []
    for k in (-2, -1, 0, 1, 2):
        o1, o2 = m1 + k * j * p, m2 + k * j * q
        out.append(values[o1:n1 - 2 * m1 + o1, o2:n2 - 2 * m2 + o2])
    return out


def _interp_samples(u: ScalarField, eta: Direction, s: float):
    """Bilinear-interpolated samples for directions off the node lattice."""
    g = u.grid
    from scipy.interpolate import RegularGridInterpolator

    interp = RegularGridInterpolator((g.x1, g.x2), u.values, method="linear")
    x1g, x2g = g.meshgrid()
    pts = np.stack([x1g.ravel(), x2g.ravel()], axis=1)
    out = []
    for k in (-2, -1, 0, 1, 2):
        shifted = pts + k * s * eta.as_array()
        inside = ((shifted[:, 0] >= g.x1_min) & (shifted[:, 0] <= g.x1_max)
                  & (shifted[:, 1] >= g.x2_min) & (shifted[:, 1] <= g.x2_max))
        out.append((shifted, inside))
    mask = np.logical_and.reduce([inside for _, inside in out])
    if not mask.any():
        raise ConfigurationError("direction stencil leaves the domain everywhere")
    return [interp(shifted[mask]) for shifted, _ in out]


def _directional_stencils(u: ScalarField, eta: Direction):
    """Yield (s, [five sample arrays]) for stencil scales j in {1, 2}."""
    lattice = _lattice_vector(eta, u.grid)
    for j in (1, 2):
        if lattice is not None:
            p, q = lattice
            s = j * math.hypot(p * u.grid.dx1, q * u.grid.dx2)
            yield s, _lattice_samples(u.values, p, q, j)
        else:
            s = j * min(u.grid.dx1, u.grid.dx2)
            yield s, _interp_samples(u, eta, s)


def semiconcavity_estimate(u: ScalarField, eta: Direction,
                           boundary_frame: float = 0.0) -> float:
    """Max centered second difference quotient along eta for s in {dx, 2dx}.

    An upper bound C here certifies the one-sided inequality
    lam*u(x) + (1-lam)*u(y) - u(lam x + (1-lam) y) <= C lam (1-lam) |x-y|^2
    along the sampled direction.
    """
    if boundary_frame > 0.0:
        u = interior_restrict(u, boundary_frame)
    best = -math.inf
    for s, (m2, m1, c, p1, p2) in _directional_stencils(u, eta):
        best = max(best, float(((p1 - 2.0 * c + m1) / s ** 2).max()))
    return best


def third_difference_estimate(u: ScalarField, eta: Direction,
                              boundary_frame: float = 0.0) -> float:
    """Max |third centered difference| along eta divided by s^3."""
    if boundary_frame > 0.0:
        u = interior_restrict(u, boundary_frame)
    best = 0.0
    for s, (m2, m1, c, p1, p2) in _directional_stencils(u, eta):
        # u(x+2s) - 2u(x+s) + 2u(x-s) - u(x-2s) over 2 s^3
        d3 = (p2 - 2.0 * p1 + 2.0 * m1 - m2) / (2.0 * s ** 3)
        best = max(best, float(np.abs(d3).max()))
    return best


@dataclass(frozen=True)
class ResidualReport:
    fraction_below_tol: float
    tol: float
    quantiles: tuple  # (50%, 90%, 99%)
    n_nodes: int


def ae_residual_report(u: ValuePath, dyn: DynamicsSpec, coupling, m_path: DensityPath,
                       tol: float | None = None,
                       boundary_frame: float = DEFAULT_BOUNDARY_FRAME) -> ResidualReport:
    """Fraction of interior space-time nodes where the HJE residual is small.

    Default tolerance is 5*(dx+dt), the first-order consistency scale of the
    scheme, so the fraction is meaningfully comparable across refinements.
    """
    from .hjb import pde_residual

    g = u.grid
    if tol is None:
        tol = 5.0 * (max(g.dx1, g.dx2) + u.dt)
    slices = pde_residual(u, dyn, coupling, m_path)
    vals = []
    for r in slices:
        vals.append(interior_restrict(r, boundary_frame).values.ravel())
    allv = np.abs(np.concatenate(vals))
    q = np.quantile(allv, [0.5, 0.9, 0.99])
    return ResidualReport(
        fraction_below_tol=float(np.mean(allv <= tol)),
        tol=float(tol),
        quantiles=(float(q[0]), float(q[1]), float(q[2])),
        n_nodes=int(allv.size),
    )


@dataclass(frozen=True)
class VerifyThresholds:
    """Pass/fail thresholds for the property suite; all config-visible."""
    lipschitz_max: float = 50.0
    time_lipschitz_max: float = 100.0
    semiconcavity_max: float = 100.0
    negativity_floor: float = -1e-12
    mass_drift_max: float = 1e-8
    second_moment_factor: float = 3.0
    residual_fraction_min: float = 0.9
    boundary_frame: float = DEFAULT_BOUNDARY_FRAME
    boundary_mass_budget: float = 1e-6


@dataclass
class PropertyResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""


def property_checks(u: ValuePath, m: DensityPath, dyn: DynamicsSpec, coupling,
                    thresholds: VerifyThresholds | None = None) -> list[PropertyResult]:
    """Run the regularity and conservation property checks on a solved pair (u, m)."""
    th = thresholds or VerifyThresholds()
    frame = th.boundary_frame
    results = []

    lip = max(lipschitz_estimate(u.slice(k), frame) for k in range(u.nt))
    results.append(PropertyResult(
        "spatial_lipschitz", lip <= th.lipschitz_max and math.isfinite(lip),
        lip, th.lipschitz_max, "max over time slices"))

    tlip = time_lipschitz_estimate(u, frame)
    results.append(PropertyResult(
        "time_lipschitz", tlip <= th.time_lipschitz_max and math.isfinite(tlip),
        tlip, th.time_lipschitz_max))

    semi = max(semiconcavity_estimate(u.slice(k), eta, frame)
               for k in range(0, u.nt, max(1, u.nt // 8))
               for eta in AXES_AND_DIAGONALS)
    results.append(PropertyResult(
        "semiconcavity", semi <= th.semiconcavity_max and math.isfinite(semi),
        semi, th.semiconcavity_max, "axes and diagonals, subsampled in time"))

    min_density = float(m.values.min())
    results.append(PropertyResult(
        "positivity", min_density >= th.negativity_floor,
        min_density, th.negativity_floor))

    w = m.grid.cell_weights()
    masses = np.array([float(np.sum(w * m.values[k])) for k in range(m.nt)])
    drift = float(np.abs(masses - 1.0).max())
    results.append(PropertyResult(
        "mass_conservation", drift <= th.mass_drift_max, drift, th.mass_drift_max))

    x1g, x2g = m.grid.meshgrid()
    sq = x1g ** 2 + x2g ** 2
    moments = np.array([float(np.sum(w * m.values[k] * sq)) for k in range(m.nt)])
    bound = th.second_moment_factor * (moments[0] + 1.0)
    results.append(PropertyResult(
        "second_moment_bound", float(moments.max()) <= bound,
        float(moments.max()), bound))

    # uniform continuity of u in t up to the horizon: ||u_t - u_T|| <= C (T - t)
    times = u.times()
    terminal = u.values[-1]
    ratios = [float(np.abs(u.values[k] - terminal).max()) / (times[-1] - times[k])
              for k in range(u.nt - 1)]
    c1 = max(ratios) if ratios else 0.0
    results.append(PropertyResult(
        "terminal_time_shift", math.isfinite(c1) and c1 <= th.time_lipschitz_max,
        c1, th.time_lipschitz_max, "sup_t ||u_t - u_T|| / (T - t)"))

    if u.nt >= 3:
        try:
            rep = ae_residual_report(u, dyn, coupling, m, boundary_frame=frame)
            results.append(PropertyResult(
                "ae_residual_fraction",
                rep.fraction_below_tol >= th.residual_fraction_min,
                rep.fraction_below_tol, th.residual_fraction_min,
                "tol=%.3g, quantiles=%s" % (rep.tol, list(rep.quantiles))))
        except (ConfigurationError,) as exc:
            # e.g. a sabotaged density path cannot even be evaluated
            results.append(PropertyResult(
                "ae_residual_fraction", False, 0.0,
                th.residual_fraction_min, "not evaluable: %s" % exc))

    bmass = max(float(np.sum((w * m.values[k])[_boundary_mask(m.grid)]))
                for k in range(m.nt))
    results.append(PropertyResult(
        "boundary_mass", bmass <= th.boundary_mass_budget,
        bmass, th.boundary_mass_budget, "max over time of mass on edge nodes"))

    return results


def _boundary_mask(grid: Grid2D):
    mask = np.zeros(grid.shape, dtype=bool)
    mask[[0, -1], :] = True
    mask[:, [0, -1]] = True
    return mask


def report_to_dict(results: list[PropertyResult]) -> dict:
    return {
        "passed": all(r.passed for r in results),
        "properties": [asdict(r) for r in results],
    }


def run_property_suite(run_dir, thresholds: VerifyThresholds | None = None) -> dict:
    """Load a finished run directory and return the machine-readable report."""
    from .io import load_run

    u, m, dyn, coupling = load_run(run_dir)
    return report_to_dict(property_checks(u, m, dyn, coupling, thresholds))
