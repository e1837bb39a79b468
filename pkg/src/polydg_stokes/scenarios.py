"""PDE data bundles for the pseudo-stress Stokes problem.

All data callables are vectorized over point arrays ``x, y`` of shape (n,):
tensor data return (n, 2, 2), vector data return (n, 2).  The traction
datum additionally receives the outward unit normals (n, 2).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .mesh import BoundaryClassifier, Circle, Domain, FaceKind, Segment, UNIT_SQUARE

D, N = FaceKind.DIRICHLET, FaceKind.NEUMANN


def tensor(a11, a12, a21, a22) -> np.ndarray:
    a11, a12, a21, a22 = np.broadcast_arrays(a11, a12, a21, a22)
    return np.stack([np.stack([a11, a12], -1), np.stack([a21, a22], -1)], -2)


def vector(a1, a2) -> np.ndarray:
    a1, a2 = np.broadcast_arrays(a1, a2)
    return np.stack([a1, a2], -1)


def _zero_tensor(x, y, t=0.0):
    return np.zeros(np.shape(x) + (2, 2))


def _zero_vector(x, y, t=0.0, *_):
    return np.zeros(np.shape(x) + (2,))


@dataclass(frozen=True)
class Scenario:
    """Physical data for one run.

    ``source`` is the tensor right-hand side of the pseudo-stress equation,
    ``dirichlet`` prescribes the row-wise divergence of sigma on the
    Dirichlet part and ``traction`` prescribes ``sigma n`` on the Neumann
    part.  The velocity-related fields are only used for recovery.
    """

    name: str
    mu: float
    classifier: BoundaryClassifier
    domain: Domain = UNIT_SQUARE
    source: Callable = _zero_tensor
    dirichlet: Callable = _zero_vector
    traction: Callable = _zero_vector
    initial: Callable = _zero_tensor
    sigma_exact: Optional[Callable] = None
    sigma_exact_dt: Optional[Callable] = None
    div_exact: Optional[Callable] = None
    velocity_source: Callable = _zero_vector
    velocity_initial: Callable = _zero_vector
    velocity_exact: Optional[Callable] = None
    pressure_exact: Optional[Callable] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("viscosity mu must be positive")

    @property
    def has_exact(self) -> bool:
        return self.sigma_exact is not None and self.div_exact is not None


def _traction_from(sigma):
    def traction(x, y, t, n):
        return np.einsum("...ij,...j->...i", sigma(x, y, t), n)
    return traction


# --------------------------------------------------------------------------
# smooth manufactured solution on the unit square

def manufactured_sine(mu: float = 1.0) -> Scenario:
    """sigma = sin(2t) sin(pi x) sin(pi y) diag(1, -1); traceless.

    Dirichlet on the top and right edges, Neumann on bottom and left.
    """
    pi = np.pi

    def s(x, y):
        return np.sin(pi * x) * np.sin(pi * y)

    def sigma(x, y, t):
        v = np.sin(2 * t) * s(x, y)
        return tensor(v, 0.0 * v, 0.0 * v, -v)

    def sigma_dt(x, y, t):
        v = 2 * np.cos(2 * t) * s(x, y)
        return tensor(v, 0.0 * v, 0.0 * v, -v)

    def div(x, y, t):
        return np.sin(2 * t) * pi * vector(np.cos(pi * x) * np.sin(pi * y),
                                           -np.sin(pi * x) * np.cos(pi * y))

    def source(x, y, t):
        # mu^-1 dev(d sigma/dt) - grad(div sigma); sigma is already traceless
        sv = s(x, y)
        cv = np.cos(pi * x) * np.cos(pi * y)
        a = 2 * np.cos(2 * t) * sv / mu
        b = pi ** 2 * np.sin(2 * t)
        return tensor(a + b * sv, -b * cv, b * cv, -a - b * sv)

    classifier = BoundaryClassifier((
        (Segment("y", 1.0), D), (Segment("x", 1.0), D),
        (Segment("y", 0.0), N), (Segment("x", 0.0), N),
    ))
    return Scenario("manufactured_sine", mu, classifier, UNIT_SQUARE,
                    source=source, dirichlet=div, traction=_traction_from(sigma),
                    initial=lambda x, y: sigma(x, y, 0.0),
                    sigma_exact=sigma, sigma_exact_dt=sigma_dt, div_exact=div)


# --------------------------------------------------------------------------
# polynomial solution used for pressure/velocity recovery

def recovery_poly(mu: float = 1.0) -> Scenario:
    """u = t^2 ((1-x) y, y^2/2), p = -mu t^2 on the unit square.

    Neumann on the right edge, Dirichlet elsewhere.
    """

    def sigma(x, y, t):
        c = mu * t ** 2
        return c * tensor(1 - y, 1 - x, 0.0 * x, 1 + y)

    def sigma_dt(x, y, t):
        return 2 * mu * t * tensor(1 - y, 1 - x, 0.0 * x, 1 + y)

    def div(x, y, t):
        return mu * t ** 2 * vector(0.0 * x, 1.0 + 0.0 * x)

    def source(x, y, t):
        return 2 * t * tensor(-y, 1 - x, 0.0 * x, y)

    def velocity(x, y, t):
        return t ** 2 * vector((1 - x) * y, 0.5 * y ** 2)

    def velocity_source(x, y, t):
        return 2 * t * vector((1 - x) * y, 0.5 * y ** 2) - mu * t ** 2 * vector(0.0 * x, 1.0 + 0.0 * x)

    classifier = BoundaryClassifier((
        (Segment("x", 1.0), N),
        (Segment("x", 0.0), D), (Segment("y", 0.0), D), (Segment("y", 1.0), D),
    ))
    return Scenario("recovery_poly", mu, classifier, UNIT_SQUARE,
                    source=source, dirichlet=div, traction=_traction_from(sigma),
                    initial=lambda x, y: sigma(x, y, 0.0),
                    sigma_exact=sigma, sigma_exact_dt=sigma_dt, div_exact=div,
                    velocity_source=velocity_source,
                    velocity_initial=lambda x, y, t=0.0: velocity(x, y, 0.0),
                    velocity_exact=velocity,
                    pressure_exact=lambda x, y, t: -mu * t ** 2 + 0.0 * x)


# --------------------------------------------------------------------------
# flow around a cylinder

CYLINDER_DOMAIN = Domain(-1.0, 4.0, -1.0, 1.0, hole_center=(0.0, 0.0), hole_radius=0.2)


def cylinder(mu: float = 2.0) -> Scenario:
    """Start-up flow past a disk; parabolic inflow acceleration at x = -1."""
    dom = CYLINDER_DOMAIN
    inflow_tol = 1e-9 * dom.diameter

    def dirichlet(x, y, t):
        on_inflow = np.abs(np.asarray(x) - dom.xmin) <= inflow_tol
        return vector(np.where(on_inflow, 1.0 - y ** 2, 0.0), 0.0 * x)

    # midpoints of the 64-gon edges sit at r cos(pi/64) from the center
    circle_tol = 1.01 * dom.hole_radius * (1 - np.cos(np.pi / 64))
    classifier = BoundaryClassifier((
        (Segment("x", dom.xmax), N),
        (Segment("x", dom.xmin), D), (Segment("y", dom.ymin), D), (Segment("y", dom.ymax), D),
        (Circle(dom.hole_center, dom.hole_radius, tol=circle_tol), D),
    ))
    return Scenario("cylinder", mu, classifier, dom, dirichlet=dirichlet)


# --------------------------------------------------------------------------
# user data as polynomial coefficients

@dataclass(frozen=True)
class Polynomial:
    """Sum of terms ``coef * x**i * y**j * t**k``."""

    terms: tuple[tuple[float, int, int, int], ...] = ()

    def __call__(self, x, y, t=0.0):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c, i, j, k in self.terms:
            out = out + c * x ** i * y ** j * t ** k
        return out

    @classmethod
    def parse(cls, text: str) -> "Polynomial":
        """Parse ``"c i j k; c i j k; ..."``."""
        terms = []
        for chunk in text.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            parts = chunk.split()
            if len(parts) != 4:
                raise ValueError(f"polynomial term needs 'coef i j k', got {chunk!r}")
            c, i, j, k = float(parts[0]), int(parts[1]), int(parts[2]), int(parts[3])
            if min(i, j, k) < 0:
                raise ValueError(f"negative exponent in {chunk!r}")
            terms.append((c, i, j, k))
        return cls(tuple(terms))


def custom(mu: float, classifier: BoundaryClassifier, domain: Domain = UNIT_SQUARE,
           source: Sequence[Polynomial] = (), dirichlet: Sequence[Polynomial] = (),
           traction: Sequence[Polynomial] = (), initial: Sequence[Polynomial] = (),
           velocity_source: Sequence[Polynomial] = ()) -> Scenario:
    """Scenario whose data components are polynomials in (x, y, t).

    Missing components are zero.  The traction components give ``sigma n``
    directly.
    """
    def pad(seq, n):
        seq = list(seq) + [Polynomial()] * (n - len(seq))
        if len(seq) != n:
            raise ValueError(f"expected at most {n} components")
        return seq

    S, G, T, I, F = pad(source, 4), pad(dirichlet, 2), pad(traction, 2), pad(initial, 4), pad(velocity_source, 2)
    return Scenario(
        "custom", mu, classifier, domain,
        source=lambda x, y, t: tensor(*(p(x, y, t) for p in S)),
        dirichlet=lambda x, y, t: vector(*(p(x, y, t) for p in G)),
        traction=lambda x, y, t, n: vector(*(p(x, y, t) for p in T)),
        initial=lambda x, y: tensor(*(p(x, y, 0.0) for p in I)),
        velocity_source=lambda x, y, t: vector(*(p(x, y, t) for p in F)),
    )


BUILTIN = {
    "manufactured_sine": manufactured_sine,
    "recovery_poly": recovery_poly,
    "cylinder": cylinder,
}
