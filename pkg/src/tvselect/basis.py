"""Centered B-spline basis and curvature penalty matrix.

The time-varying deviation of each coefficient is expanded in a clamped
B-spline basis on [0, 1] whose functions are centered by their integral,
so any spanned function integrates to zero.  The curvature penalty is the
Gram matrix of second derivatives, assembled by exact per-interval
Gauss-Legendre quadrature (the integrands are piecewise polynomials).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import splev

from .errors import ConfigurationError, DegenerateDesignError, DimensionError, DomainError

EQUALLY_SPACED = "equal"
TIME_QUANTILES = "quantile"


@dataclass(frozen=True)
class SplineConfig:
    """Basis configuration: q = num_internal_knots + degree + 1 functions."""

    degree: int = 3
    num_internal_knots: int = 4
    knot_placement: str = EQUALLY_SPACED

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 0:
            raise ConfigurationError(f"degree must be a non-negative integer, got {self.degree}")
        if int(self.num_internal_knots) != self.num_internal_knots or self.num_internal_knots < 0:
            raise ConfigurationError(
                f"num_internal_knots must be a non-negative integer, got {self.num_internal_knots}"
            )
        if self.knot_placement not in (EQUALLY_SPACED, TIME_QUANTILES):
            raise ConfigurationError(
                f"knot_placement must be '{EQUALLY_SPACED}' or '{TIME_QUANTILES}'"
            )

    @property
    def q(self) -> int:
        return self.num_internal_knots + self.degree + 1

    @classmethod
    def from_q(cls, q: int, degree: int = 3, knot_placement: str = EQUALLY_SPACED) -> "SplineConfig":
        """Configuration with a target number of basis functions."""
        if q < degree + 1:
            raise ConfigurationError(f"q={q} needs at least degree+1={degree + 1} functions")
        return cls(degree=degree, num_internal_knots=q - degree - 1, knot_placement=knot_placement)


def _interior_knots(config: SplineConfig, observed_times) -> np.ndarray:
    K = config.num_internal_knots
    if K == 0:
        return np.empty(0)
    if config.knot_placement == EQUALLY_SPACED:
        return np.linspace(0.0, 1.0, K + 2)[1:-1]
    times = np.asarray(observed_times, dtype=float)
    if times.size == 0:
        raise DegenerateDesignError("quantile knot placement needs observed times")
    probs = np.arange(1, K + 1) / (K + 1)
    knots = np.quantile(times, probs)
    knots = np.clip(knots, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    if np.unique(knots).size < K:
        raise DegenerateDesignError(
            f"observed times yield only {np.unique(knots).size} distinct quantile knots, need {K}"
        )
    return knots


@dataclass(frozen=True)
class RoughnessMatrix:
    """Symmetric PSD Gram matrix of second derivatives of the basis."""

    omega: np.ndarray

    def quadratic_form(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.omega.shape[0],):
            raise DimensionError(f"expected vector of length {self.omega.shape[0]}, got shape {v.shape}")
        return float(v @ self.omega @ v)


@dataclass(frozen=True)
class CenteredSplineBasis:
    """B-spline basis on [0,1] with integral-centered functions.

    Immutable after construction; safe to share across workers.
    """

    config: SplineConfig
    full_knot_vector: np.ndarray
    basis_means: np.ndarray
    roughness: RoughnessMatrix
    _tck: tuple = field(repr=False, default=None)

    @property
    def q(self) -> int:
        return self.config.q

    @property
    def interior_knots(self) -> np.ndarray:
        d = self.config.degree
        return self.full_knot_vector[d + 1:-(d + 1)] if self.config.num_internal_knots else np.empty(0)

    def eval_raw(self, t) -> np.ndarray:
        """B(t): rows of non-negative basis values summing to 1."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
            raise DomainError(f"evaluation points must lie in [0,1], got range "
                              f"[{t_arr.min()}, {t_arr.max()}]")
        vals = np.array(splev(t_arr, self._tck)).T
        return vals if np.ndim(t) else vals[0]

    def eval_centered(self, t) -> np.ndarray:
        """B(t) - basis_means, entrywise; rows sum to 0."""
        return self.eval_raw(t) - self.basis_means

    def eval_second_derivative(self, t) -> np.ndarray:
        """Second derivative of the basis (centering shifts by constants only)."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
            raise DomainError("evaluation points must lie in [0,1]")
        vals = np.array(splev(t_arr, self._tck, der=2)).T
        return vals if np.ndim(t) else vals[0]

    def curve(self, coefs: np.ndarray, t) -> np.ndarray:
        """Evaluate t -> centered_basis(t)' coefs."""
        return self.eval_centered(t) @ np.asarray(coefs, dtype=float)


def roughness_quadratic_form(basis: CenteredSplineBasis, v: np.ndarray) -> float:
    """Integrated squared second derivative of t -> centered_basis(t)' v."""
    return basis.roughness.quadratic_form(v)


def _gauss_legendre_panels(breakpts: np.ndarray, nodes_per_interval: int):
    """Quadrature nodes/weights over consecutive [a,b] panels."""
    x_ref, w_ref = np.polynomial.legendre.leggauss(nodes_per_interval)
    xs, ws = [], []
    for a, b in zip(breakpts[:-1], breakpts[1:]):
        xs.append(0.5 * (b - a) * x_ref + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * w_ref)
    return np.concatenate(xs), np.concatenate(ws)


def build_basis(config: SplineConfig, observed_times=None,
                quadrature_nodes: int | None = None) -> CenteredSplineBasis:
    """Construct the centered basis, its means, and the curvature matrix.

    Basis-function means are exact: each function is piecewise polynomial
    of degree d, and per-interval Gauss-Legendre with d+1 nodes integrates
    degree <= 2d+1 exactly.  The same rule is exact for products of second
    derivatives (degree 2d-4).
    """
    interior = _interior_knots(config, observed_times)
    return build_basis_from_interior(config, interior, quadrature_nodes)


def build_basis_from_interior(config: SplineConfig, interior_knots,
                              quadrature_nodes: int | None = None) -> CenteredSplineBasis:
    """Assemble a basis around explicitly given interior knots."""
    d = config.degree
    interior = np.asarray(interior_knots, dtype=float)
    if interior.size != config.num_internal_knots:
        raise ConfigurationError(
            f"expected {config.num_internal_knots} interior knots, got {interior.size}")
    if interior.size and (np.any(np.diff(interior) <= 0)
                          or interior[0] <= 0.0 or interior[-1] >= 1.0):
        raise ConfigurationError("interior knots must be strictly increasing inside (0,1)")
    knots = np.concatenate([np.zeros(d + 1), interior, np.ones(d + 1)])
    q = config.q
    tck = (knots, np.eye(q), d)

    breakpts = np.unique(knots)
    n_nodes = quadrature_nodes if quadrature_nodes is not None else d + 1
    if n_nodes < 1:
        raise ConfigurationError("quadrature_nodes must be >= 1")
    x, w = _gauss_legendre_panels(breakpts, n_nodes)

    vals = np.array(splev(x, tck)).T          # (len(x), q)
    means = w @ vals

    if d >= 2:
        d2 = np.array(splev(x, tck, der=2)).T
        omega = (d2 * w[:, None]).T @ d2
        omega = 0.5 * (omega + omega.T)
    else:
        omega = np.zeros((q, q))

    means.setflags(write=False)
    omega.setflags(write=False)
    knots.setflags(write=False)
    return CenteredSplineBasis(
        config=config,
        full_knot_vector=knots,
        basis_means=means,
        roughness=RoughnessMatrix(omega=omega),
        _tck=tck,
    )
