"""Global operators of the interior-penalty pseudo-stress discretization.

``M`` is the viscosity-weighted deviatoric mass form, ``A`` the
divergence-divergence form with symmetric interior penalty on interior and
Neumann faces, and the load vector collects the volume source, the natural
Dirichlet datum and the weakly imposed traction.

Blocks are built from scalar-dof operators (see :meth:`DgSpace.face_data`)
and scattered into the four tensor components; component ``2*i + j`` is
the (i, j) entry.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Face, FaceKind
from .scenarios import Scenario
from .space import COMPONENTS, DgSpace

IN_KINDS = (FaceKind.INTERIOR, FaceKind.NEUMANN)


def tr(m: np.ndarray) -> np.ndarray:
    return np.trace(m, axis1=-2, axis2=-1)


def dev(m: np.ndarray) -> np.ndarray:
    """Deviatoric part ``m - tr(m)/2 I`` of (stacked) 2x2 matrices."""
    m = np.asarray(m, dtype=float)
    return m - 0.5 * tr(m)[..., None, None] * np.eye(2)


@dataclass(frozen=True)
class PenaltyParams:
    alpha: float = 10.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("penalty coefficient alpha must be positive")


def penalty_gamma(face: Face, space: DgSpace, params: PenaltyParams) -> float:
    """Penalty weight of an interior or Neumann face."""
    if face.kind == FaceKind.DIRICHLET:
        raise ValueError("no penalty is defined on Dirichlet faces")
    p, h = space.degrees, space.mesh.diameters
    g = p[face.plus] ** 2 / h[face.plus]
    if not face.is_boundary:
        g = max(g, p[face.minus] ** 2 / h[face.minus])
    return params.alpha * float(g)


def _point_penalty(space: DgSpace, fd: dict, params: PenaltyParams) -> np.ndarray:
    p2h = space.degrees ** 2 / space.mesh.diameters
    g = p2h[fd["plus"]]
    inner = fd["interior"]
    g = np.where(inner, np.maximum(g, p2h[np.where(inner, fd["minus"], 0)]), g)
    return params.alpha * g


def _tensor_matrix(space: DgSpace, blocks) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for (rc, cc), block in blocks:
        r, c, v = space.scalar_to_tensor(block, rc, cc)
        rows.append(r)
        cols.append(c)
        vals.append(v)
    n = space.n_dofs
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _diag(w) -> sp.dia_matrix:
    return sp.diags(np.asarray(w, dtype=float))


# dev(s):dev(t) = s:t - tr(s) tr(t) / 2 in component coordinates
_DEV_GRAM = np.array([[0.5, 0, 0, -0.5],
                      [0, 1.0, 0, 0],
                      [0, 0, 1.0, 0],
                      [-0.5, 0, 0, 0.5]])


def assemble_mass(space: DgSpace, mu: float) -> sp.csr_matrix:
    """Matrix of ``(mu^-1 dev(sigma), dev(tau))``; element-block diagonal."""
    vd = space.volume_data
    gram = (vd["phi"].T @ _diag(vd["weights"]) @ vd["phi"]).tocsr()
    blocks = [((r, c), gram * (_DEV_GRAM[r, c] / mu))
              for r in range(4) for c in range(4) if _DEV_GRAM[r, c] != 0]
    return _tensor_matrix(space, blocks)


def _jump_and_average(fd: dict):
    if "_jump_avg" in fd:
        return fd["_jump_avg"]
    jump = (fd["tp"] - fd["tm"]).tocsr()
    half = np.where(fd["interior"], 0.5, 1.0)
    avg = [(_diag(half) @ (fd["dxp"] + fd["dxm"])).tocsr(),
           (_diag(half) @ (fd["dyp"] + fd["dym"])).tocsr()]
    fd["_jump_avg"] = (jump, avg)
    return jump, avg


def _seminorm_blocks(space: DgSpace, params: PenaltyParams):
    vd = space.volume_data
    W = _diag(vd["weights"])
    d = (vd["dx"], vd["dy"])
    blocks = []
    for j in range(2):
        for l in range(2):
            djl = (d[j].T @ W @ d[l]).tocsr()
            blocks += [((2 * i + j, 2 * i + l), djl) for i in range(2)]
    fd = space.face_data(IN_KINDS)
    if len(fd["weights"]):
        jump, _ = _jump_and_average(fd)
        gw = _point_penalty(space, fd, params) * fd["weights"]
        n = fd["normals"]
        for j in range(2):
            for l in range(2):
                pjl = (jump.T @ _diag(gw * n[:, j] * n[:, l]) @ jump).tocsr()
                blocks += [((2 * i + j, 2 * i + l), pjl) for i in range(2)]
    return blocks


def seminorm_matrix(space: DgSpace, params: PenaltyParams) -> sp.csr_matrix:
    """Gram matrix of the dG seminorm: ``x^T S x = |sigma_h|_dG^2``."""
    return _tensor_matrix(space, _seminorm_blocks(space, params))


def assemble_stiffness(space: DgSpace, params: PenaltyParams) -> sp.csr_matrix:
    """Symmetric interior-penalty matrix of the div-div form.

    Face terms act on interior and Neumann faces only; on Neumann faces the
    jump is ``tau n`` and the average is the one-sided trace.
    """
    blocks = _seminorm_blocks(space, params)
    fd = space.face_data(IN_KINDS)
    if len(fd["weights"]):
        jump, avg = _jump_and_average(fd)
        w, n = fd["weights"], fd["normals"]
        for j in range(2):
            for l in range(2):
                # -<{div sigma}_i, [tau n]_i>: sigma comp (i,j), tau comp (i,l)
                c = -(jump.T @ _diag(w * n[:, l]) @ avg[j]).tocsr()
                for i in range(2):
                    blocks.append(((2 * i + l, 2 * i + j), c))
                    blocks.append(((2 * i + j, 2 * i + l), c.T.tocsr()))
    return _tensor_matrix(space, blocks)


class RhsAssembler:
    """Load vector ``F(tau)`` at arbitrary times with operators cached.

    The traction enters as ``<g_N, gamma tau n - div tau>``, which is what
    makes the scheme consistent with the symmetric face terms of ``A``.
    """

    def __init__(self, space: DgSpace, scenario: Scenario, params: PenaltyParams):
        self.space = space
        self.scenario = scenario
        self.params = params
        vd = space.volume_data
        self._vol = (vd["phi"].T @ _diag(vd["weights"])).tocsr()
        self._xv = vd["points"]
        self._dir = space.face_data((FaceKind.DIRICHLET,))
        self._neu = space.face_data((FaceKind.NEUMANN,))
        fd = self._dir
        self._dir_op = (fd["tp"].T @ _diag(fd["weights"])).tocsr()
        fd = self._neu
        g = _point_penalty(space, fd, params) if len(fd["weights"]) else np.zeros(0)
        self._neu_pen = (fd["tp"].T @ _diag(fd["weights"] * g)).tocsr()
        self._neu_div = [(fd["dxp"].T @ _diag(fd["weights"])).tocsr(),
                         (fd["dyp"].T @ _diag(fd["weights"])).tocsr()]

    def volume_source_values(self, t: float) -> np.ndarray:
        X = self._xv
        return np.asarray(self.scenario.source(X[:, 0], X[:, 1], t)).reshape(len(X), 2, 2)

    def __call__(self, t: float) -> np.ndarray:
        comps = np.zeros((4, self.space.n_scalar))
        F = self.volume_source_values(t)
        for c, (i, j) in enumerate(COMPONENTS):
            comps[c] += self._vol @ F[:, i, j]
        fd = self._dir
        if len(fd["weights"]):
            X, n = fd["points"], fd["normals"]
            g = np.asarray(self.scenario.dirichlet(X[:, 0], X[:, 1], t)).reshape(len(X), 2)
            for c, (i, j) in enumerate(COMPONENTS):
                comps[c] += self._dir_op @ (n[:, j] * g[:, i])
        fd = self._neu
        if len(fd["weights"]):
            X, n = fd["points"], fd["normals"]
            g = np.asarray(self.scenario.traction(X[:, 0], X[:, 1], t, n)).reshape(len(X), 2)
            for c, (i, j) in enumerate(COMPONENTS):
                comps[c] += self._neu_pen @ (n[:, j] * g[:, i]) - self._neu_div[j] @ g[:, i]
        return self.space.from_components(comps)


def assemble_rhs(space: DgSpace, scenario: Scenario, t: float,
                 params: PenaltyParams = PenaltyParams()) -> np.ndarray:
    return RhsAssembler(space, scenario, params)(t)


def dg_seminorm(space: DgSpace, x: np.ndarray, params: PenaltyParams) -> float:
    """``|sigma_h|_dG`` of a discrete field."""
    pieces = error_pieces(space, params, x)
    return float(np.sqrt(pieces["div"] + pieces["jump"]))


def error_pieces(space: DgSpace, params: PenaltyParams, x: np.ndarray | None = None,
                 field=None, div=None) -> dict:
    """Squared pieces of the dG norms of ``e = field - sigma_h(x)``.

    ``field(x, y)`` and ``div(x, y)`` describe a smooth (globally
    continuous) tensor field; its interior jumps are taken as zero and on
    Neumann faces its trace ``field n`` is used.  Either part may be
    omitted.  Returns ``div`` (volume divergence), ``jump`` (penalty
    weighted normal jumps) and ``avg`` (inverse-penalty weighted averages of
    the divergence), all over interior and Neumann faces.
    """
    vd = space.volume_data
    fd = space.face_data(IN_KINDS)
    X, w = vd["points"], vd["weights"]
    ediv = np.zeros((len(w), 2))
    nf = len(fd["weights"])
    ejump = np.zeros((nf, 2))
    eavg = np.zeros((nf, 2))
    Xf, n = fd["points"], fd["normals"]
    if field is not None:
        ediv += np.asarray(div(X[:, 0], X[:, 1])).reshape(-1, 2)
        if nf:
            bnd = ~fd["interior"]
            vals = np.asarray(field(Xf[:, 0], Xf[:, 1])).reshape(-1, 2, 2)
            ejump[bnd] += np.einsum("nij,nj->ni", vals[bnd], n[bnd])
            eavg += np.asarray(div(Xf[:, 0], Xf[:, 1])).reshape(-1, 2)
    if x is not None:
        comps = space.components(x)
        for i in range(2):
            ediv[:, i] -= vd["dx"] @ comps[2 * i] + vd["dy"] @ comps[2 * i + 1]
        if nf:
            jump, avg = _jump_and_average(fd)
            for i in range(2):
                for j in range(2):
                    ejump[:, i] -= n[:, j] * (jump @ comps[2 * i + j])
                    eavg[:, i] -= avg[j] @ comps[2 * i + j]
    out = {"div": float(w @ (ediv ** 2).sum(1))}
    if nf:
        g = _point_penalty(space, fd, params)
        wf = fd["weights"]
        out["jump"] = float((wf * g) @ (ejump ** 2).sum(1))
        out["avg"] = float((wf / g) @ (eavg ** 2).sum(1))
    else:
        out["jump"] = out["avg"] = 0.0
    return out


def triple_norm(space: DgSpace, params: PenaltyParams, x: np.ndarray | None = None,
                field=None, div=None) -> float:
    """Extended dG norm of ``field - sigma_h(x)`` including face averages."""
    p = error_pieces(space, params, x, field, div)
    return float(np.sqrt(p["div"] + p["jump"] + p["avg"]))
