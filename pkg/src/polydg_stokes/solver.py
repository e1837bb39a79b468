"""theta-method time integration of ``M x' + A x = f``.

``M`` is singular on isotropic fields, so the semi-discrete system is a
DAE; for ``theta > 0`` only ``M + theta dt A`` is ever inverted and that
matrix is positive definite once ``A`` is coercive.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import PenaltyParams, RhsAssembler, assemble_mass, assemble_stiffness
from .scenarios import Scenario
from .space import DgSpace

log = logging.getLogger(__name__)

VALIDATED_THETAS = (0.5, 1.0)


class SolverError(RuntimeError):
    """Linear solve failure; ``step`` is the failing time step when known."""

    def __init__(self, message: str, step: int | None = None, residual: float | None = None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step
        self.residual = residual


@dataclass(frozen=True)
class TimeIntegrator:
    """Uniform time grid ``t_n = n dt``, ``n = 0..N_T`` with ``N_T dt = T``."""

    theta: float
    dt: float
    T: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        n = round(self.T / self.dt)
        if n < 1 or abs(n * self.dt - self.T) > 1e-12 * self.T:
            raise ValueError(f"T not an integer multiple of dt (T={self.T}, dt={self.dt})")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def t(self, n: int) -> float:
        return n * self.dt

    @property
    def validated(self) -> bool:
        return self.theta in VALIDATED_THETAS


@dataclass(frozen=True)
class SolveOptions:
    """Linear solver choice.

    ``cg`` is Jacobi-preconditioned conjugate gradients with a relative
    residual tolerance; ``cholesky`` factors a dense copy once (small
    systems only); ``lu`` factors the sparse matrix once with SuperLU,
    using a fill-reducing ordering of whole element blocks when one is
    supplied.
    """

    method: str = "cg"
    tol: float = 1e-10
    max_iters: int = 20000
    dense_limit: int = 5000

    def __post_init__(self):
        if self.method not in ("cg", "cholesky", "lu"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def pcg(A: sp.spmatrix, b: np.ndarray, x0: np.ndarray | None = None, tol: float = 1e-10,
        max_iters: int = 20000, inv_diag: np.ndarray | None = None):
    """Jacobi-preconditioned CG; stops at ``|r| <= tol |b|``.

    Returns ``(x, iterations, relative_residual)``.
    """
    if inv_diag is None:
        inv_diag = 1.0 / A.diagonal()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    target = tol * bnorm
    res = np.linalg.norm(r)
    it = 0
    while res > target:
        if it >= max_iters:
            raise SolverError(f"CG did not converge in {max_iters} iterations "
                              f"(relative residual {res / bnorm:.3e})", residual=res / bnorm)
        Ap = A @ p
        a = rz / (p @ Ap)
        x += a * p
        r -= a * Ap
        z = inv_diag * r
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
        res = np.linalg.norm(r)
        it += 1
    return x, it, res / bnorm


def element_block_ordering(space: DgSpace) -> np.ndarray:
    """Dof permutation from a minimum-degree ordering of the element graph.

    Keeping each element's dofs contiguous and ordering elements by minimum
    degree on the face-adjacency graph gives far less fill than a dof-level
    column ordering of the assembled matrix.
    """
    mesh = space.mesh
    inner = [f for f in mesh.faces if f.minus >= 0]
    r = np.array([f.plus for f in inner], dtype=int)
    c = np.array([f.minus for f in inner], dtype=int)
    ne = mesh.n_elements
    G = sp.coo_matrix((np.ones(2 * len(r)), (np.r_[r, c], np.r_[c, r])), shape=(ne, ne))
    G = (G + sp.eye(ne)).tocsc()
    perm_c = spla.splu(G, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True}).perm_c
    order = np.argsort(perm_c)
    return np.concatenate([np.arange(space.offsets[k], space.offsets[k + 1]) for k in order])


class LinearSolver:
    """Solver for one fixed symmetric positive definite matrix."""

    def __init__(self, K: sp.spmatrix, opts: SolveOptions = SolveOptions(),
                 ordering: np.ndarray | None = None):
        self.K = sp.csr_matrix(K)
        self.opts = opts
        self.ordering = ordering
        self.iterations: list[int] = []
        n = self.K.shape[0]
        if opts.method == "cholesky":
            if n > opts.dense_limit:
                raise ValueError(f"dense Cholesky limited to {opts.dense_limit} dofs, system has {n}")
            try:
                self._chol = sla.cho_factor(self.K.toarray())
            except sla.LinAlgError as exc:
                raise SolverError("Cholesky failed: system matrix is not positive definite "
                                  "(penalty alpha too small?)") from exc
        elif opts.method == "lu":
            if ordering is None:
                self._lu = spla.splu(self.K.tocsc())
            else:
                Kp = self.K[ordering][:, ordering].tocsc()
                # SPD: diagonal pivots are safe and keep the ordering intact
                self._lu = spla.splu(Kp, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                                     options={"SymmetricMode": True})
        else:
            d = self.K.diagonal()
            if np.any(d <= 0):
                raise SolverError("non-positive diagonal entry: system is not positive definite")
            self._inv_diag = 1.0 / d

    def solve(self, b: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        m = self.opts.method
        if m == "cholesky":
            x = sla.cho_solve(self._chol, b)
            self.iterations.append(0)
        elif m == "lu":
            if self.ordering is None:
                x = self._lu.solve(b)
            else:
                x = np.empty_like(b)
                x[self.ordering] = self._lu.solve(b[self.ordering])
            self.iterations.append(0)
        else:
            x, it, _ = pcg(self.K, b, x0, self.opts.tol, self.opts.max_iters, self._inv_diag)
            self.iterations.append(it)
        return x


class ThetaStepper:
    """Advances one step of the theta-method with the system matrix cached."""

    def __init__(self, M: sp.spmatrix, A: sp.spmatrix, integrator: TimeIntegrator,
                 opts: SolveOptions = SolveOptions(), ordering: np.ndarray | None = None):
        th, dt = integrator.theta, integrator.dt
        self.integrator = integrator
        self.lhs = (M + (th * dt) * A).tocsr()
        self.explicit = (M - ((1.0 - th) * dt) * A).tocsr()
        self.solver = LinearSolver(self.lhs, opts, ordering)

    def rhs(self, x: np.ndarray, f_n: np.ndarray, f_np1: np.ndarray) -> np.ndarray:
        th, dt = self.integrator.theta, self.integrator.dt
        return self.explicit @ x + dt * (th * f_np1 + (1.0 - th) * f_n)

    def step(self, x: np.ndarray, f_n: np.ndarray, f_np1: np.ndarray) -> np.ndarray:
        return self.solver.solve(self.rhs(x, f_n, f_np1), x0=x)


def theta_step(M, A, x, f_n, f_np1, integrator: TimeIntegrator,
               opts: SolveOptions = SolveOptions()) -> np.ndarray:
    """One theta-method step; builds the system afresh (see :class:`ThetaStepper`)."""
    M = sp.csr_matrix(np.atleast_2d(M)) if not sp.issparse(M) else M
    A = sp.csr_matrix(np.atleast_2d(A)) if not sp.issparse(A) else A
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return ThetaStepper(M, A, integrator, opts).step(
        x, np.atleast_1d(np.asarray(f_n, dtype=float)), np.atleast_1d(np.asarray(f_np1, dtype=float)))


def initial_state(space: DgSpace, scenario: Scenario) -> np.ndarray:
    """L2 projection of the full initial tensor."""
    return space.l2_project(scenario.initial)


Probe = Callable[[int, float, np.ndarray], None]


@dataclass
class History:
    """Stored time levels and run statistics."""

    times: np.ndarray
    states: dict[int, np.ndarray] = field(default_factory=dict)
    iterations: list[int] = field(default_factory=list)
    wall_time: float = 0.0
    setup_time: float = 0.0

    @property
    def final(self) -> np.ndarray:
        return self.states[max(self.states)]

    def stored(self) -> list[tuple[int, float, np.ndarray]]:
        return [(n, float(self.times[n]), self.states[n]) for n in sorted(self.states)]


@dataclass
class Problem:
    """Assembled operators of one space/scenario/penalty combination."""

    space: DgSpace
    scenario: Scenario
    params: PenaltyParams = field(default_factory=PenaltyParams)

    def __post_init__(self):
        self.M = assemble_mass(self.space, self.scenario.mu)
        self.A = assemble_stiffness(self.space, self.params)
        self.rhs = RhsAssembler(self.space, self.scenario, self.params)


def run(space: DgSpace, scenario: Scenario, integrator: TimeIntegrator,
        opts: SolveOptions = SolveOptions(), probes: Sequence[Probe] = (),
        params: PenaltyParams = PenaltyParams(), store: str | Iterable[int] = "final",
        problem: Problem | None = None, x0: np.ndarray | None = None) -> History:
    """Integrate from the projected initial datum to ``T``.

    Probes are called as ``probe(n, t_n, x_n)`` at ``n = 0`` and after every
    step.  ``store`` is ``"all"``, ``"final"`` or an iterable of step
    indices.
    """
    t0 = time.perf_counter()
    if problem is None:
        problem = Problem(space, scenario, params)
    ordering = element_block_ordering(space) if opts.method == "lu" else None
    stepper = ThetaStepper(problem.M, problem.A, integrator, opts, ordering)
    setup = time.perf_counter() - t0
    nt = integrator.n_steps
    if store == "all":
        keep = set(range(nt + 1))
    elif store == "final":
        keep = {nt}
    else:
        keep = set(int(n) for n in store)
        if not keep <= set(range(nt + 1)):
            raise ValueError("requested store steps outside 0..N_T")
    hist = History(times=integrator.times)

    x = initial_state(space, scenario) if x0 is None else np.asarray(x0, dtype=float).copy()
    f_n = problem.rhs(0.0)
    if 0 in keep:
        hist.states[0] = x.copy()
    for probe in probes:
        probe(0, 0.0, x)
    for n in range(nt):
        t1 = integrator.t(n + 1)
        f_np1 = problem.rhs(t1)
        try:
            x = stepper.step(x, f_n, f_np1)
        except SolverError as exc:
            raise SolverError(str(exc), step=n + 1, residual=exc.residual) from exc
        if not np.all(np.isfinite(x)):
            raise SolverError("non-finite solution", step=n + 1)
        f_n = f_np1
        if n + 1 in keep:
            hist.states[n + 1] = x.copy()
        for probe in probes:
            probe(n + 1, t1, x)
    hist.iterations = stepper.solver.iterations
    hist.setup_time = setup
    hist.wall_time = time.perf_counter() - t0
    if not integrator.validated:
        log.warning("theta=%g is outside the validated set %s", integrator.theta, VALIDATED_THETAS)
    return hist
