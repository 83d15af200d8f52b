"""Grids, field containers and space-time paths.

All fields are vertex-centered on a uniform rectangular grid. Densities are
interpreted w.r.t. Lebesgue measure; their discrete mass is the trapezoidal
quadrature of the values, which coincides with a finite-volume sum over cells
of width dx (interior) and dx/2 (boundary).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

NEGATIVITY_TOL = 1e-12
MASS_TOL = 1e-8


@dataclass(frozen=True)
class Grid2D:
    """Uniform rectangular discretization of the truncated domain."""

    x1_min: float
    x1_max: float
    x2_min: float
    x2_max: float
    n1: int
    n2: int

    def __post_init__(self):
        problems = []
        if not self.x1_min < self.x1_max:
            problems.append("x1_min < x1_max violated")
        if not self.x2_min < self.x2_max:
            problems.append("x2_min < x2_max violated")
        if self.n1 < 4:
            problems.append("n1 >= 4 violated (got %d)" % self.n1)
        if self.n2 < 4:
            problems.append("n2 >= 4 violated (got %d)" % self.n2)
        if problems:
            raise ConfigurationError(problems)

    @property
    def dx1(self) -> float:
        return (self.x1_max - self.x1_min) / (self.n1 - 1)

    @property
    def dx2(self) -> float:
        return (self.x2_max - self.x2_min) / (self.n2 - 1)

    @property
    def x1(self) -> np.ndarray:
        return np.linspace(self.x1_min, self.x1_max, self.n1)

    @property
    def x2(self) -> np.ndarray:
        return np.linspace(self.x2_min, self.x2_max, self.n2)

    def meshgrid(self):
        """(X1, X2) arrays of shape (n1, n2), axis 0 is x1."""
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    @property
    def shape(self):
        return (self.n1, self.n2)

    @property
    def n_nodes(self) -> int:
        return self.n1 * self.n2

    def cell_weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights, shape (n1, n2)."""
        w1 = np.full(self.n1, self.dx1)
        w1[[0, -1]] = 0.5 * self.dx1
        w2 = np.full(self.n2, self.dx2)
        w2[[0, -1]] = 0.5 * self.dx2
        return np.outer(w1, w2)

    def integrate(self, values: np.ndarray) -> float:
        """Trapezoidal integral of a sampled function over the box."""
        return float(np.sum(self.cell_weights() * values))

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.x1_max - self.x1_min, self.x2_max - self.x2_min))


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise ConfigurationError("%s contains non-finite values" % what)


@dataclass(frozen=True)
class ScalarField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ConfigurationError(
                "field shape %s does not match grid %s" % (v.shape, self.grid.shape))
        _check_finite(v, "ScalarField")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class VectorField:
    grid: Grid2D
    v1: np.ndarray
    v2: np.ndarray

    def __post_init__(self):
        for name in ("v1", "v2"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != self.grid.shape:
                raise ConfigurationError(
                    "component %s shape %s does not match grid" % (name, v.shape))
            _check_finite(v, "VectorField.%s" % name)
            v = v.copy()
            v.setflags(write=False)
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class DensityField:
    """Nonnegative unit-mass grid measure (density w.r.t. Lebesgue)."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ConfigurationError(
                "density shape %s does not match grid %s" % (v.shape, self.grid.shape))
        _check_finite(v, "DensityField")
        if v.min() < -NEGATIVITY_TOL:
            raise ConfigurationError(
                "density has negativity %g below the -1e-12 tolerance" % v.min())
        v = np.clip(v, 0.0, None)
        mass = self.grid.integrate(v)
        if abs(mass - 1.0) > MASS_TOL:
            raise ConfigurationError(
                "density mass %.12g differs from 1 beyond 1e-8" % mass)
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def mass(self) -> float:
        return self.grid.integrate(self.values)

    def second_moment(self) -> float:
        x1g, x2g = self.grid.meshgrid()
        return self.grid.integrate((x1g ** 2 + x2g ** 2) * self.values)

    def boundary_mass(self) -> float:
        """Mass carried by the outermost node layer (truncation diagnostic)."""
        w = self.grid.cell_weights() * self.values
        interior = w[1:-1, 1:-1].sum()
        return float(w.sum() - interior)


@dataclass(frozen=True)
class Direction:
    eta1: float
    eta2: float

    def __post_init__(self):
        norm2 = self.eta1 ** 2 + self.eta2 ** 2
        if abs(norm2 - 1.0) > 1e-12:
            raise ConfigurationError(
                "direction (%g, %g) is not unit length" % (self.eta1, self.eta2))

    def as_array(self):
        return np.array([self.eta1, self.eta2])


@dataclass(frozen=True)
class ValuePath:
    """Time-stacked scalar field u(., t_k), t_k = k*dt, t_{nt-1} = T."""

    grid: Grid2D
    dt: float
    values: np.ndarray  # (nt, n1, n2)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1:] != self.grid.shape:
            raise ConfigurationError("ValuePath values must be (nt, n1, n2)")
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        _check_finite(v, "ValuePath")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def nt(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> float:
        return self.dt * (self.nt - 1)

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt)

    def slice(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.values[k])


@dataclass(frozen=True)
class DensityPath:
    """Time-stacked density m(., t_k); every slice is a valid DensityField."""

    grid: Grid2D
    dt: float
    values: np.ndarray  # (nt, n1, n2)
    validate_slices: bool = field(default=True, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1:] != self.grid.shape:
            raise ConfigurationError("DensityPath values must be (nt, n1, n2)")
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        _check_finite(v, "DensityPath")
        if self.validate_slices:
            for k in range(v.shape[0]):
                DensityField(self.grid, v[k])  # raises on violation
            v = np.clip(v, 0.0, None)
        else:
            v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def nt(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> float:
        return self.dt * (self.nt - 1)

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt)

    def slice(self, k: int) -> DensityField:
        return DensityField(self.grid, self.values[k])


def default_grid(box_half_width: float = 5.0, n1: int = 64, n2: int = 64) -> Grid2D:
    return Grid2D(-box_half_width, box_half_width,
                  -box_half_width, box_half_width, n1, n2)


def truncated_gaussian(grid: Grid2D, center=(0.0, 0.0), variance=0.25) -> DensityField:
    """Gaussian density truncated to the box and renormalized (default m0)."""
    x1g, x2g = grid.meshgrid()
    v = np.exp(-((x1g - center[0]) ** 2 + (x2g - center[1]) ** 2) / (2.0 * variance))
    v /= grid.integrate(v)
    return DensityField(grid, v)


def uniform_density(grid: Grid2D) -> DensityField:
    v = np.ones(grid.shape)
    v /= grid.integrate(v)
    return DensityField(grid, v)
