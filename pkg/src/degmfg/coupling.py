"""Coupling functionals F(x, m) and G(x, m_T) with monotonicity metadata.

The built-in instances satisfy the standing structural constraints: bounded
with bounded derivatives uniformly over measures, Lipschitz in the measure
(d1 topology), and monotonically increasing in m when flagged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigurationError
from .grid import DensityField, Grid2D, ScalarField


@dataclass(frozen=True)
class CouplingSpec:
    """F, G take (x1 grid, x2 grid, density values) and return an array.

    The density argument is the raw value array of a DensityField on the
    same grid; couplings must be usable on any grid.
    """

    F: Callable
    G: Callable
    monotone: bool
    lipschitz_in_m: float
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def running_cost(self, m: DensityField) -> ScalarField:
        x1g, x2g = m.grid.meshgrid()
        vals = np.broadcast_to(
            np.asarray(self.F(x1g, x2g, m), dtype=float), m.grid.shape).copy()
        return ScalarField(m.grid, vals)

    def terminal_cost(self, m_T: DensityField) -> ScalarField:
        x1g, x2g = m_T.grid.meshgrid()
        vals = np.broadcast_to(
            np.asarray(self.G(x1g, x2g, m_T), dtype=float), m_T.grid.shape).copy()
        return ScalarField(m_T.grid, vals)


def smooth_measure(m: DensityField, delta: float) -> np.ndarray:
    """Gaussian-kernel smoothing (K_delta * m)(x) on the grid of m.

    Nonnegative kernel, so the map m -> K_delta * m is monotone.
    """
    grid = m.grid
    return gaussian_filter(m.values, sigma=(delta / grid.dx1, delta / grid.dx2),
                           mode="constant")


def _bowl(x1g, x2g, amp, width):
    """Smooth bounded well: 0 at origin, -> amp far away, gradients O(amp/width)."""
    return amp * (1.0 - np.exp(-(x1g ** 2 + x2g ** 2) / (2.0 * width ** 2)))


def builtin_coupling(name: str, params: dict | None = None) -> CouplingSpec:
    """Named coupling instances: nonlocal_smooth, local_power, decoupled."""
    params = dict(params or {})

    if name == "nonlocal_smooth":
        c1 = float(params.setdefault("c1", 0.5))
        cg = float(params.setdefault("c_terminal", 0.5))
        delta = float(params.setdefault("delta", 0.5))
        f_amp = float(params.setdefault("f_amp", 0.2))
        g_amp = float(params.setdefault("g_amp", 1.0))
        width = float(params.setdefault("width", 1.5))
        problems = []
        if delta <= 0:
            problems.append("kernel width delta must be > 0")
        if c1 < 0 or cg < 0:
            problems.append("monotone coupling requires c1 >= 0 and c_terminal >= 0")
        if problems:
            raise ConfigurationError(problems)

        def F(x1g, x2g, m):
            return c1 * smooth_measure(m, delta) + _bowl(x1g, x2g, f_amp, width)

        def G(x1g, x2g, m):
            return cg * smooth_measure(m, delta) + _bowl(x1g, x2g, g_amp, width)

        lip = max(c1, cg) / max(delta, 1e-12)
        return CouplingSpec(F=F, G=G, monotone=True, lipschitz_in_m=lip,
                            name=name, params=params)

    if name == "local_power":
        c1 = float(params.setdefault("c1", 0.5))
        power = float(params.setdefault("power", 1.0))
        g_amp = float(params.setdefault("g_amp", 1.0))
        width = float(params.setdefault("width", 1.5))
        if c1 < 0:
            raise ConfigurationError("local_power with c1 < 0 is not monotone")
        if power <= 0:
            raise ConfigurationError("local_power requires power > 0")

        def F(x1g, x2g, m):
            return c1 * m.values ** power

        def G(x1g, x2g, m):
            return _bowl(x1g, x2g, g_amp, width)

        return CouplingSpec(F=F, G=G, monotone=True, lipschitz_in_m=c1,
                            name=name, params=params)

    if name == "decoupled":
        f_amp = float(params.setdefault("f_amp", 0.0))
        g_amp = float(params.setdefault("g_amp", 0.0))
        width = float(params.setdefault("width", 1.5))

        def F(x1g, x2g, m):
            return _bowl(x1g, x2g, f_amp, width)

        def G(x1g, x2g, m):
            return _bowl(x1g, x2g, g_amp, width)

        return CouplingSpec(F=F, G=G, monotone=True, lipschitz_in_m=0.0,
                            name=name, params=params)

    raise ConfigurationError(
        "unknown coupling %r (known: nonlocal_smooth, local_power, decoupled)" % name)


def check_coupling(spec: CouplingSpec, grid: Grid2D, test_measures=None):
    """Numeric spot check of the structural assumptions on a grid.

    Verifies bounded values and bounded first/second finite differences
    over a set of test measures, and (for monotone couplings) that adding
    a nonnegative bump never decreases F. Returns the measured sup bound.
    """
    from .grid import truncated_gaussian, uniform_density
    from .operators import diff1, diff2

    if test_measures is None:
        test_measures = [truncated_gaussian(grid, variance=0.4),
                         truncated_gaussian(grid, center=(1.0, -0.5), variance=0.8),
                         uniform_density(grid)]
    worst = 0.0
    problems = []
    for m in test_measures:
        for fld in (spec.running_cost(m), spec.terminal_cost(m)):
            v = fld.values
            b = max(np.abs(v).max(),
                    np.abs(diff1(v, grid.dx1, 0)).max(),
                    np.abs(diff1(v, grid.dx2, 1)).max(),
                    np.abs(diff2(v, grid.dx1, 0)).max(),
                    np.abs(diff2(v, grid.dx2, 1)).max())
            worst = max(worst, b)
    if not np.isfinite(worst):
        problems.append("coupling produced non-finite values")
    if spec.monotone:
        base = test_measures[0]
        x1g, x2g = grid.meshgrid()
        bump = np.exp(-((x1g - 0.5) ** 2 + x2g ** 2) / 0.5)
        bumped_vals = base.values + bump / grid.integrate(bump)
        # renormalization suspended for the ordering check
        bumped = DensityField.__new__(DensityField)
        object.__setattr__(bumped, "grid", grid)
        object.__setattr__(bumped, "values", bumped_vals)
        if np.any(spec.F(x1g, x2g, bumped) < spec.F(x1g, x2g, base) - 1e-12):
            problems.append("coupling flagged monotone but F decreased under a "
                            "nonnegative bump")
    if problems:
        raise ConfigurationError(problems)
    return worst
