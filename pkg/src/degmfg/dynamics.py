"""Coefficient functions of the controlled dynamics.

sigma = diag(sigma1, sigma2) is the diffusion matrix, h weights the x2
direction of the degenerate gradient and may vanish to infinite order.
epsilon >= 0 is the artificial viscosity; the regularized diffusion used by
the SDE module is sqrt(2*epsilon + sigma_i^2).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .grid import Grid2D


@dataclass(frozen=True)
class DynamicsSpec:
    sigma1: Callable  # (x1, x2) -> array
    sigma2: Callable  # (x1, x2) -> array
    h: Callable       # (x1,) -> array
    epsilon: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be >= 0")

    def with_epsilon(self, epsilon: float) -> "DynamicsSpec":
        return replace(self, epsilon=epsilon)

    def sigma1_sq(self, x1g, x2g):
        return np.broadcast_to(np.asarray(self.sigma1(x1g, x2g), dtype=float) ** 2,
                               x1g.shape).copy()

    def sigma2_sq(self, x1g, x2g):
        return np.broadcast_to(np.asarray(self.sigma2(x1g, x2g), dtype=float) ** 2,
                               x1g.shape).copy()

    def h_values(self, x1):
        return np.broadcast_to(np.asarray(self.h(x1), dtype=float),
                               np.shape(x1)).copy()

    def h_grid(self, grid: Grid2D):
        """h(x1) broadcast over the full grid, shape (n1, n2)."""
        return np.repeat(self.h_values(grid.x1)[:, None], grid.n2, axis=1)

    def check_regularity(self, grid: Grid2D, bound: float = 1e6):
        """Numeric spot check of the boundedness assumptions on the box.

        Verifies that sigma1, sigma2, h and their first and second
        finite-difference quotients stay below ``bound`` on the grid.
        Returns the measured sup of all quantities.
        """
        x1g, x2g = grid.meshgrid()
        worst = 0.0
        problems = []
        h1 = self.h_values(grid.x1)
        for name, vals, dx in (
            ("sigma1", np.sqrt(self.sigma1_sq(x1g, x2g)), grid.dx1),
            ("sigma2", np.sqrt(self.sigma2_sq(x1g, x2g)), grid.dx1),
            ("h", h1, grid.dx1),
        ):
            if not np.all(np.isfinite(vals)):
                problems.append("%s is non-finite on the grid" % name)
                continue
            d1 = np.diff(vals, axis=0) / dx
            d2 = np.diff(vals, n=2, axis=0) / dx ** 2
            m = max(np.abs(vals).max(), np.abs(d1).max(), np.abs(d2).max())
            worst = max(worst, m)
            if m > bound:
                problems.append(
                    "%s violates the C2 bound: measured %g > %g" % (name, m, bound))
        if problems:
            raise ConfigurationError(problems)
        return worst


def grushin_h(x1):
    """h(x) = exp(-1/x^2) for x != 0, h(0) = 0; vanishes to any order at 0."""
    x1 = np.asarray(x1, dtype=float)
    out = np.zeros_like(x1)
    nz = x1 != 0.0
    out[nz] = np.exp(-1.0 / x1[nz] ** 2)
    return out


def _const(c):
    def f(*args):
        return np.full(np.shape(args[0]), float(c))
    return f


_PRESETS = {
    # infinitely degenerate drift direction, mild nondegenerate diffusion
    "grushin_exp": dict(
        sigma1=_const(0.5), sigma2=_const(0.5), h=grushin_h),
    # diffusion degenerates on the lines x1 = k*pi (Example-style sin field)
    "sin_sigma": dict(
        sigma1=lambda x1, x2: np.sin(x1), sigma2=_const(1.0), h=_const(1.0)),
    "nondegenerate": dict(
        sigma1=_const(1.0), sigma2=_const(1.0), h=_const(1.0)),
    # x2 direction fully dead: no drift (h=0) and no diffusion there
    "fully_degenerate_x2": dict(
        sigma1=_const(0.5), sigma2=_const(0.0), h=_const(0.0)),
    "zero": dict(
        sigma1=_const(0.0), sigma2=_const(0.0), h=_const(1.0)),
}


def dynamics_preset(name: str, epsilon: float = 0.0) -> DynamicsSpec:
    if name not in _PRESETS:
        raise ConfigurationError(
            "unknown dynamics preset %r (known: %s)" % (name, sorted(_PRESETS)))
    return DynamicsSpec(epsilon=epsilon, name=name, **_PRESETS[name])


def preset_names():
    return sorted(_PRESETS)
