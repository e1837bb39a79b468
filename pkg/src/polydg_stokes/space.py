"""Discontinuous tensor-valued polynomial space on a polygonal mesh.

Each element carries total-degree-``p`` Legendre modes in the coordinates
of its bounding box, orthonormalized in L2(element) by modified
Gram-Schmidt with the element's own quadrature.  A tensor field has four
components ordered (11, 12, 21, 22); the dofs of element k are laid out as
``offsets[k] + c * n_modes[k] + a`` for component c and mode a.
"""
from __future__ import annotations

from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import FaceKind, PolyMesh
from .quadrature import line_rule, map_segment, map_triangle, triangle_rule

# component c <-> (row, col)
COMPONENTS = ((0, 0), (0, 1), (1, 0), (1, 1))


class BasisError(RuntimeError):
    pass


def n_modes(p: int) -> int:
    return (p + 1) * (p + 2) // 2


def mode_exponents(p: int) -> np.ndarray:
    """(i, j) Legendre indices ordered by total degree, hierarchical in p."""
    return np.array([(i, d - i) for d in range(p + 1) for i in range(d, -1, -1)])


def legendre_with_derivative(x: np.ndarray, p: int):
    """Legendre polynomials 0..p and their derivatives, shape (p+1, len(x))."""
    x = np.asarray(x, dtype=float)
    P = np.zeros((p + 1,) + x.shape)
    dP = np.zeros_like(P)
    P[0] = 1.0
    if p >= 1:
        P[1] = x
        dP[1] = 1.0
    for n in range(1, p):
        P[n + 1] = ((2 * n + 1) * x * P[n] - n * P[n - 1]) / (n + 1)
        dP[n + 1] = dP[n - 1] + (2 * n + 1) * P[n]
    return P, dP


class DgSpace:
    """The space of piecewise polynomial 2x2 tensor fields.

    Parameters
    ----------
    mesh : PolyMesh
    degree : int or array of int
        Polynomial degree per element (>= 1).
    quad_order : int, optional
        Algebraic order of the volume and face rules; defaults to
        ``2 * max(p) + 2``.
    """

    def __init__(self, mesh: PolyMesh, degree, quad_order: int | None = None):
        self.mesh = mesh
        deg = np.broadcast_to(np.asarray(degree, dtype=int), (mesh.n_elements,)).copy()
        if np.any(deg < 1):
            raise ValueError("polynomial degree must be >= 1")
        self.degrees = deg
        self.n_modes = np.array([n_modes(p) for p in deg])
        self.scalar_offsets = np.concatenate([[0], np.cumsum(self.n_modes)])
        self.offsets = 4 * self.scalar_offsets
        self.n_scalar = int(self.scalar_offsets[-1])
        self.n_dofs = int(self.offsets[-1])
        self.quad_order = int(quad_order if quad_order is not None else 2 * deg.max() + 2)
        self._tri_rule = triangle_rule(self.quad_order)
        self._line_rule = line_rule(self.quad_order)
        lo, hi = mesh.bboxes[:, :2], mesh.bboxes[:, 2:]
        self._center = 0.5 * (lo + hi)
        self._half = 0.5 * (hi - lo)
        self._coeffs = [self._orthonormalize(k) for k in range(mesh.n_elements)]

    # ------------------------------------------------------------------ basis

    def _raw_modes(self, k: int, pts: np.ndarray):
        p = self.degrees[k]
        xi = (pts - self._center[k]) / self._half[k]
        Px, dPx = legendre_with_derivative(xi[:, 0], p)
        Py, dPy = legendre_with_derivative(xi[:, 1], p)
        e = mode_exponents(p)
        vals = Px[e[:, 0]] * Py[e[:, 1]]
        gx = dPx[e[:, 0]] * Py[e[:, 1]] / self._half[k, 0]
        gy = Px[e[:, 0]] * dPy[e[:, 1]] / self._half[k, 1]
        return vals.T, np.stack([gx.T, gy.T], axis=-1)

    def _orthonormalize(self, k: int) -> np.ndarray:
        pts, w = self.volume_quadrature(k)
        psi, _ = self._raw_modes(k, pts)
        V = psi * np.sqrt(w)[:, None]
        nm = V.shape[1]
        Q = np.zeros_like(V)
        C = np.eye(nm)
        for a in range(nm):
            v = V[:, a].copy()
            c = C[a].copy()
            ref = np.linalg.norm(v)
            for _ in range(2):  # one reorthogonalization pass
                for b in range(a):
                    r = Q[:, b] @ v
                    v -= r * Q[:, b]
                    c -= r * C[b]
            nrm = np.linalg.norm(v)
            if nrm <= 1e-10 * ref:
                raise BasisError(f"element {k}: Gram matrix numerically singular "
                                 f"(quadrature order {self.quad_order} too low?)")
            Q[:, a] = v / nrm
            C[a] = c / nrm
        return C

    def basis_eval(self, k: int, pts):
        """Orthonormal scalar modes of element k at ``pts``.

        Returns values (n, N_p) and gradients (n, N_p, 2).
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        psi, dpsi = self._raw_modes(k, pts)
        C = self._coeffs[k]
        return psi @ C.T, np.einsum("nbd,ab->nad", dpsi, C)

    # ------------------------------------------------------------- quadrature

    def volume_quadrature(self, k: int):
        """Physical points and weights on element k (fan of sub-triangles)."""
        pts, wts = [], []
        for tri in self.mesh.subtriangles[k]:
            x, w = map_triangle(self._tri_rule, tri)
            pts.append(x)
            wts.append(w)
        return np.vstack(pts), np.concatenate(wts)

    def face_quadrature(self, f: int):
        face = self.mesh.faces[f]
        return map_segment(self._line_rule, face.a, face.b)

    # --------------------------------------------------------------- dof maps

    def element_dofs(self, k: int) -> np.ndarray:
        return np.arange(self.offsets[k], self.offsets[k + 1])

    @cached_property
    def component_dofs(self) -> np.ndarray:
        """(4, n_scalar): tensor dof of component c for every scalar dof."""
        out = np.empty((4, self.n_scalar), dtype=np.int64)
        for k in range(self.mesh.n_elements):
            nm = self.n_modes[k]
            s = slice(self.scalar_offsets[k], self.scalar_offsets[k + 1])
            for c in range(4):
                out[c, s] = self.offsets[k] + c * nm + np.arange(nm)
        return out

    def components(self, x: np.ndarray) -> np.ndarray:
        """Split a tensor dof vector into (4, n_scalar) scalar coefficients."""
        return np.asarray(x)[self.component_dofs]

    def from_components(self, comps: np.ndarray) -> np.ndarray:
        x = np.empty(self.n_dofs)
        x[self.component_dofs] = comps
        return x

    def scalar_to_tensor(self, block: sp.spmatrix, row_comp: int, col_comp: int):
        """COO triplets placing a scalar-dof operator at a component block."""
        block = block.tocoo()
        cd = self.component_dofs
        return cd[row_comp][block.row], cd[col_comp][block.col], block.data

    # ------------------------------------------------------ global operators

    def _eval_operators(self, elems: np.ndarray, pts: np.ndarray, starts: np.ndarray):
        """Sparse value/derivative matrices for points grouped by element.

        ``starts`` delimits consecutive groups of rows sharing one element;
        groups with a negative element id are left as empty rows.
        """
        rows, cols, v, gx, gy = [], [], [], [], []
        for g in range(len(starts) - 1):
            r0, r1 = starts[g], starts[g + 1]
            if r1 == r0 or elems[r0] < 0:
                continue
            k = elems[r0]
            vals, grads = self.basis_eval(k, pts[r0:r1])
            nm = vals.shape[1]
            rr = np.repeat(np.arange(r0, r1), nm)
            cc = np.tile(np.arange(self.scalar_offsets[k], self.scalar_offsets[k] + nm), r1 - r0)
            rows.append(rr)
            cols.append(cc)
            v.append(vals.ravel())
            gx.append(grads[..., 0].ravel())
            gy.append(grads[..., 1].ravel())
        n = len(pts)
        shape = (n, self.n_scalar)
        if not rows:
            z = sp.csr_matrix(shape)
            return z, z.copy(), z.copy()
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)

        def mk(d):
            return sp.csr_matrix((np.concatenate(d), (rows, cols)), shape=shape)

        return mk(v), mk(gx), mk(gy)

    @cached_property
    def volume_data(self) -> dict:
        """Stacked volume quadrature with scalar evaluation operators."""
        pts, wts, elem = [], [], []
        for k in range(self.mesh.n_elements):
            x, w = self.volume_quadrature(k)
            if np.any(w <= 0):
                raise BasisError(f"element {k}: non-positive quadrature weight")
            pts.append(x)
            wts.append(w)
            elem.append(np.full(len(w), k))
        starts = np.concatenate([[0], np.cumsum([len(w) for w in wts])])
        pts = np.vstack(pts)
        elem = np.concatenate(elem)
        phi, dx, dy = self._eval_operators(elem, pts, starts)
        return {"points": pts, "weights": np.concatenate(wts), "elements": elem,
                "phi": phi, "dx": dx, "dy": dy}

    def face_data(self, kinds: tuple[FaceKind, ...]) -> dict:
        """Stacked face quadrature on faces of the given kinds.

        ``plus``/``minus`` operators evaluate traces from either side; the
        minus operators have empty rows on boundary faces.
        """
        key = tuple(sorted(int(k) for k in kinds))
        cache = self.__dict__.setdefault("_face_cache", {})
        if key in cache:
            return cache[key]
        fids = self.mesh.faces_of_kind(*kinds)
        nq = self._line_rule.n_points
        pts = np.empty((len(fids) * nq, 2))
        wts = np.empty(len(fids) * nq)
        normals = np.empty((len(fids) * nq, 2))
        plus = np.empty(len(fids) * nq, dtype=np.int64)
        minus = np.empty(len(fids) * nq, dtype=np.int64)
        for i, f in enumerate(fids):
            face = self.mesh.faces[f]
            x, w = self.face_quadrature(f)
            s = slice(i * nq, (i + 1) * nq)
            pts[s], wts[s], normals[s] = x, w, face.normal
            plus[s], minus[s] = face.plus, face.minus
        starts = np.arange(0, len(fids) * nq + 1, nq)
        tp, dxp, dyp = self._eval_operators(plus, pts, starts)
        tm, dxm, dym = self._eval_operators(minus, pts, starts)
        data = {"faces": fids, "points": pts, "weights": wts, "normals": normals,
                "plus": plus, "minus": minus, "interior": minus >= 0,
                "face_of_point": np.repeat(fids, nq),
                "tp": tp, "dxp": dxp, "dyp": dyp, "tm": tm, "dxm": dxm, "dym": dym}
        cache[key] = data
        return data

    # ------------------------------------------------------- field handling

    def l2_project(self, f: Callable) -> np.ndarray:
        """L2 projection of a tensor function ``f(x, y) -> (n, 2, 2)``."""
        vd = self.volume_data
        X = vd["points"]
        vals = np.asarray(f(X[:, 0], X[:, 1]), dtype=float).reshape(len(X), 2, 2)
        wv = vd["weights"][:, None, None] * vals
        comps = np.stack([vd["phi"].T @ wv[:, i, j] for i, j in COMPONENTS])
        return self.from_components(comps)

    def evaluate(self, x: np.ndarray, pts, elems=None):
        """Values (n, 2, 2) and row-wise divergence (n, 2) of the field ``x``.

        ``elems`` gives the element used for each point; points are located
        in the mesh when omitted.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if elems is None:
            elems = self.mesh.locate(pts)
            if np.any(elems < 0):
                raise ValueError("point(s) outside the mesh")
        elems = np.asarray(elems)
        comps = self.components(x)
        val = np.zeros((len(pts), 2, 2))
        div = np.zeros((len(pts), 2))
        for k in np.unique(elems):
            idx = np.flatnonzero(elems == k)
            phi, grad = self.basis_eval(k, pts[idx])
            s = slice(self.scalar_offsets[k], self.scalar_offsets[k + 1])
            for c, (i, j) in enumerate(COMPONENTS):
                coef = comps[c, s]
                val[idx, i, j] = phi @ coef
                div[idx, i] += grad[..., j] @ coef
        return val, div

    def volume_values(self, x: np.ndarray):
        """Field values (nq, 2, 2) and divergence (nq, 2) at volume quadrature points."""
        vd = self.volume_data
        comps = self.components(x)
        nq = len(vd["weights"])
        val = np.empty((nq, 2, 2))
        for c, (i, j) in enumerate(COMPONENTS):
            val[:, i, j] = vd["phi"] @ comps[c]
        div = np.column_stack([vd["dx"] @ comps[2 * i] + vd["dy"] @ comps[2 * i + 1]
                               for i in range(2)])
        return val, div

    def point_operators(self, pts, elems=None):
        """Sparse value and derivative operators (n, n_scalar) at fixed points.

        Useful when the same points are sampled many times.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if elems is None:
            elems = self.mesh.locate(pts)
        elems = np.asarray(elems)
        if np.any(elems < 0):
            raise ValueError("point(s) outside the mesh")
        order = np.argsort(elems, kind="stable")
        se = elems[order]
        starts = np.concatenate([[0], np.flatnonzero(np.diff(se)) + 1, [len(se)]])
        ops = self._eval_operators(se, pts[order], starts)
        inv = np.empty_like(order)
        inv[order] = np.arange(len(order))
        return tuple(op[inv] for op in ops)

    @cached_property
    def sample_cloud(self) -> dict:
        """Sub-triangle vertices per element, used for pointwise output.

        Points are duplicated per element so discontinuous fields are kept;
        ``triangles`` indexes into ``points``.
        """
        pts, elems, tris = [], [], []
        n = 0
        for k, st in enumerate(self.mesh.subtriangles):
            loop = self.mesh.vertices[self.mesh.elements[k]]
            center = st[0, 0]
            xy = np.vstack([center[None, :], loop])
            m = len(loop)
            pts.append(xy)
            elems.append(np.full(m + 1, k))
            i = np.arange(m)
            tris.append(np.column_stack([np.full(m, n), n + 1 + i, n + 1 + (i + 1) % m]))
            n += m + 1
        return {"points": np.vstack(pts), "elements": np.concatenate(elems),
                "triangles": np.vstack(tris)}
