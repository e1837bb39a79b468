"""Polygonal meshes: generation, text I/O, faces and boundary labels.

Meshes are clipped, Lloyd-smoothed Voronoi tessellations of a rectangle,
optionally with a circular hole represented by a regular polygon.
"""
from __future__ import annotations

import dataclasses
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import Voronoi, cKDTree
from shapely.geometry import Polygon, box
from shapely.geometry.polygon import orient

logger = logging.getLogger(__name__)

HOLE_SEGMENTS = 64
MAX_RETRIES = 10


class MeshError(ValueError):
    """Raised for invalid mesh input or failed generation."""


class FaceKind(enum.IntEnum):
    UNCLASSIFIED = -1
    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2


@dataclass(frozen=True, eq=False)
class Face:
    """A straight edge of the mesh.

    ``normal`` points out of ``plus``; for interior faces it therefore
    points from ``plus`` into ``minus``.  ``minus`` is -1 on the boundary.
    """

    a: np.ndarray
    b: np.ndarray
    normal: np.ndarray
    length: float
    plus: int
    minus: int
    kind: FaceKind

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.a + self.b)

    @property
    def is_boundary(self) -> bool:
        return self.minus < 0

    def flipped(self) -> "Face":
        """Same face with the roles of plus and minus swapped."""
        if self.is_boundary:
            raise MeshError("cannot flip a boundary face")
        return dataclasses.replace(self, a=self.b, b=self.a, normal=-self.normal,
                                   plus=self.minus, minus=self.plus)


@dataclass(frozen=True)
class Domain:
    """Axis-aligned rectangle, optionally minus a disk."""

    xmin: float = 0.0
    xmax: float = 1.0
    ymin: float = 0.0
    ymax: float = 1.0
    hole_center: tuple[float, float] | None = None
    hole_radius: float = 0.0

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise MeshError("empty rectangle")
        if self.hole_center is not None:
            cx, cy = self.hole_center
            r = self.hole_radius
            if r <= 0 or cx - r <= self.xmin or cx + r >= self.xmax \
                    or cy - r <= self.ymin or cy + r >= self.ymax:
                raise MeshError("hole must lie strictly inside the rectangle")

    @property
    def has_hole(self) -> bool:
        return self.hole_center is not None

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.xmax - self.xmin, self.ymax - self.ymin))

    def hole_polygon(self) -> Polygon:
        cx, cy = self.hole_center
        t = 2.0 * np.pi * np.arange(HOLE_SEGMENTS) / HOLE_SEGMENTS
        return Polygon(np.column_stack([cx + self.hole_radius * np.cos(t),
                                        cy + self.hole_radius * np.sin(t)]))

    def polygon(self):
        rect = box(self.xmin, self.ymin, self.xmax, self.ymax)
        if self.has_hole:
            return rect.difference(self.hole_polygon())
        return rect

    @property
    def area(self) -> float:
        return float(self.polygon().area)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        inside = ((pts[:, 0] > self.xmin) & (pts[:, 0] < self.xmax)
                  & (pts[:, 1] > self.ymin) & (pts[:, 1] < self.ymax))
        if self.has_hole:
            d = np.hypot(pts[:, 0] - self.hole_center[0], pts[:, 1] - self.hole_center[1])
            inside &= d > self.hole_radius
        return inside


UNIT_SQUARE = Domain()


# --------------------------------------------------------------------------
# boundary classification

@dataclass(frozen=True)
class Segment:
    """Boundary region ``{axis = value}`` restricted to ``lo <= other <= hi``."""

    axis: str
    value: float
    lo: float = -np.inf
    hi: float = np.inf
    tol: float | None = None

    def matches(self, pt, tol: float) -> bool:
        tol = self.tol if self.tol is not None else tol
        i = 0 if self.axis == "x" else 1
        other = pt[1 - i]
        return abs(pt[i] - self.value) <= tol and self.lo - tol <= other <= self.hi + tol


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float
    tol: float | None = None

    def matches(self, pt, tol: float) -> bool:
        tol = self.tol if self.tol is not None else tol
        d = np.hypot(pt[0] - self.center[0], pt[1] - self.center[1])
        return abs(d - self.radius) <= tol


@dataclass(frozen=True)
class BoundaryClassifier:
    """Ordered (region, kind) pairs; the first matching region wins.

    ``rel_tol`` scales with the mesh bounding-box diameter and is used for
    regions that do not carry their own tolerance.
    """

    regions: tuple[tuple[Segment | Circle, FaceKind], ...]
    rel_tol: float = 1e-9

    def kind_of(self, pt, tol: float) -> FaceKind | None:
        for region, kind in self.regions:
            if region.matches(pt, tol):
                return kind
        return None


# --------------------------------------------------------------------------
# the mesh

@dataclass(frozen=True, eq=False)
class PolyMesh:
    """Immutable polygonal mesh with geometric caches.

    Elements are counter-clockwise vertex loops.  ``element_faces[k]`` lists
    the face indices of element k in loop order (edge i joins loop vertices
    i and i+1) and ``subtriangles[k][i]`` is the sub-triangle resting on
    edge i.
    """

    vertices: np.ndarray
    elements: tuple[np.ndarray, ...]
    faces: tuple[Face, ...]
    element_faces: tuple[np.ndarray, ...]
    diameters: np.ndarray
    areas: np.ndarray
    centroids: np.ndarray
    bboxes: np.ndarray
    subtriangles: tuple[np.ndarray, ...]
    domain: Domain | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    @property
    def h_mean(self) -> float:
        return float(self.diameters.mean())

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def face_kinds(self) -> np.ndarray:
        return np.array([f.kind for f in self.faces], dtype=int)

    def faces_of_kind(self, *kinds: FaceKind) -> np.ndarray:
        k = self.face_kinds()
        return np.flatnonzero(np.isin(k, [int(x) for x in kinds]))

    def locate(self, pts: np.ndarray) -> np.ndarray:
        """Index of an element containing each point, -1 if none."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.full(len(pts), -1, dtype=int)
        for k, loop in enumerate(self.elements):
            lo, hi = self.bboxes[k, :2], self.bboxes[k, 2:]
            cand = np.flatnonzero((out < 0) & np.all(pts >= lo - 1e-12, axis=1)
                                  & np.all(pts <= hi + 1e-12, axis=1))
            if len(cand) == 0:
                continue
            inside = _points_in_polygon(pts[cand], self.vertices[loop])
            out[cand[inside]] = k
        return out


def _polygon_area(xy: np.ndarray) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _polygon_centroid(xy: np.ndarray) -> np.ndarray:
    x, y = xy[:, 0], xy[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


def _points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    # even-odd rule, boundary points counted as inside
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    xa, ya = poly[:, 0][None, :], poly[:, 1][None, :]
    xb, yb = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]
    cond = (ya > y) != (yb > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = xa + (y - ya) * (xb - xa) / (yb - ya)
    crossings = np.sum(cond & (x < xint), axis=1)
    inside = crossings % 2 == 1
    # on-edge check
    ex, ey = xb - xa, yb - ya
    cross = ex * (y - ya) - ey * (x - xa)
    dot = (x - xa) * ex + (y - ya) * ey
    len2 = ex * ex + ey * ey
    scale = np.sqrt(len2)
    on_edge = (np.abs(cross) <= 1e-12 * np.maximum(scale, 1.0)) & (dot >= -1e-14) & (dot <= len2 + 1e-14)
    return inside | np.any(on_edge, axis=1)


def _is_simple(xy: np.ndarray) -> bool:
    return bool(Polygon(xy).is_valid)


def _triangulate(xy: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    """Sub-triangles of a CCW polygon, one per edge.

    The centroid fan is used when it is valid (the polygon is star-shaped
    with respect to its centroid); otherwise each edge is paired with the
    visible vertex-kernel point found by ear clipping.
    """
    n = len(xy)
    nxt = np.roll(xy, -1, axis=0)
    tris = np.stack([np.broadcast_to(centroid, xy.shape), xy, nxt], axis=1)
    ab = tris[:, 1] - tris[:, 0]
    ac = tris[:, 2] - tris[:, 0]
    det = ab[:, 0] * ac[:, 1] - ab[:, 1] * ac[:, 0]
    if np.all(det > 1e-14 * np.abs(det).max()):
        return tris
    # fall back to a fan from the point of the polygon's kernel farthest inside
    kernel = _kernel_point(xy)
    if kernel is None:
        raise MeshError("element is not star-shaped; cannot build sub-triangles")
    tris = np.stack([np.broadcast_to(kernel, xy.shape), xy, nxt], axis=1)
    return tris


def _kernel_point(xy: np.ndarray):
    # intersect the inner half-planes of all edges
    poly = Polygon(xy)
    big = box(*np.array(poly.bounds) + np.array([-1, -1, 1, 1]))
    kernel = big
    n = len(xy)
    for i in range(n):
        a, b = xy[i], xy[(i + 1) % n]
        d = b - a
        nrm = np.array([-d[1], d[0]])  # inward for CCW
        far = 1e3 * (np.abs(np.array(poly.bounds)).max() + 1.0)
        t = d / np.linalg.norm(d)
        half = Polygon([a - far * t, b + far * t, b + far * t + far * nrm / np.linalg.norm(nrm),
                        a - far * t + far * nrm / np.linalg.norm(nrm)])
        kernel = kernel.intersection(half)
        if kernel.is_empty:
            return None
    if kernel.area <= 0:
        return None
    c = np.array(kernel.centroid.coords[0])
    return c


def build_mesh(vertices: np.ndarray, elements: Sequence[Sequence[int]],
               domain: Domain | None = None, meta: dict | None = None) -> PolyMesh:
    """Assemble a :class:`PolyMesh` from raw vertex loops.

    Faces are extracted from shared edges; every face starts out either
    interior or unclassified boundary.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    loops = tuple(np.asarray(e, dtype=np.int64) for e in elements)
    ne = len(loops)
    diam = np.empty(ne)
    area = np.empty(ne)
    cent = np.empty((ne, 2))
    bbox = np.empty((ne, 4))
    subtris = []
    for k, loop in enumerate(loops):
        xy = vertices[loop]
        a = _polygon_area(xy)
        if a <= 0:
            raise MeshError(f"element {k} is not counter-clockwise")
        area[k] = a
        cent[k] = _polygon_centroid(xy)
        bbox[k] = [*xy.min(axis=0), *xy.max(axis=0)]
        d = xy[:, None, :] - xy[None, :, :]
        diam[k] = np.sqrt((d ** 2).sum(-1).max())
        subtris.append(_triangulate(xy, cent[k]))

    edge_owner: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for k, loop in enumerate(loops):
        n = len(loop)
        for i in range(n):
            key = (int(loop[i]), int(loop[(i + 1) % n]))
            edge_owner.setdefault((min(key), max(key)), []).append((k, i))

    faces = []
    elem_faces = [np.empty(len(loop), dtype=np.int64) for loop in loops]
    for key in sorted(edge_owner):
        owners = edge_owner[key]
        if len(owners) > 2:
            raise MeshError(f"edge {key} is shared by more than two elements")
        owners.sort()
        k, i = owners[0]
        loop = loops[k]
        va, vb = vertices[loop[i]], vertices[loop[(i + 1) % len(loop)]]
        d = vb - va
        length = float(np.hypot(*d))
        if length == 0.0:
            raise MeshError(f"zero-length edge in element {k}")
        normal = np.array([d[1], -d[0]]) / length
        minus = owners[1][0] if len(owners) == 2 else -1
        kind = FaceKind.INTERIOR if minus >= 0 else FaceKind.UNCLASSIFIED
        fid = len(faces)
        faces.append(Face(va.copy(), vb.copy(), normal, length, k, minus, kind))
        for kk, ii in owners:
            elem_faces[kk][ii] = fid
    return PolyMesh(vertices, loops, tuple(faces), tuple(elem_faces), diam, area, cent,
                    bbox, tuple(subtris), domain, dict(meta or {}))


# --------------------------------------------------------------------------
# Voronoi generation

def _voronoi_cells(seeds: np.ndarray, domain: Domain, region):
    xmin, xmax, ymin, ymax = domain.xmin, domain.xmax, domain.ymin, domain.ymax
    mirrored = [seeds,
                np.column_stack([2 * xmin - seeds[:, 0], seeds[:, 1]]),
                np.column_stack([2 * xmax - seeds[:, 0], seeds[:, 1]]),
                np.column_stack([seeds[:, 0], 2 * ymin - seeds[:, 1]]),
                np.column_stack([seeds[:, 0], 2 * ymax - seeds[:, 1]])]
    vor = Voronoi(np.vstack(mirrored))
    cells = []
    for i in range(len(seeds)):
        reg = vor.regions[vor.point_region[i]]
        if -1 in reg or len(reg) < 3:
            raise MeshError(f"unbounded Voronoi cell for seed {i}")
        xy = vor.vertices[reg]
        ang = np.arctan2(xy[:, 1] - seeds[i, 1], xy[:, 0] - seeds[i, 0])
        cell = Polygon(xy[np.argsort(ang)]).intersection(region)
        cells.append(cell)
    return cells


def _single_polygon(cell, i: int) -> Polygon:
    if cell.geom_type == "Polygon":
        return cell
    parts = [g for g in getattr(cell, "geoms", []) if g.geom_type == "Polygon" and g.area > 0]
    if len(parts) == 1:
        return parts[0]
    raise MeshError(f"cell {i} is split or empty after clipping")


def _sample_seeds(rng: np.random.Generator, n: int, domain: Domain) -> np.ndarray:
    out = np.empty((0, 2))
    while len(out) < n:
        cand = rng.uniform([domain.xmin, domain.ymin], [domain.xmax, domain.ymax], size=(2 * n, 2))
        out = np.vstack([out, cand[domain.contains(cand)]])
    return out[:n]


def cvt_energy(seeds: np.ndarray, cells) -> float:
    """Quantization energy ``sum_i int_{V_i} |x - z_i|^2`` of seeds and cells."""
    total = 0.0
    for z, c in zip(seeds, cells):
        xy = np.asarray(orient(c, 1.0).exterior.coords)[:-1] - z
        x, y = xy[:, 0], xy[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        total += float((cross * (x * x + x * xn + xn * xn + y * y + y * yn + yn * yn)).sum()) / 12.0
    return total


def lloyd_iterations(seeds: np.ndarray, domain: Domain, iters: int):
    """Run centroidal smoothing; returns (seeds, cells, history).

    ``history`` has the CVT energy and the sum of squared seed-to-centroid
    distances, both measured before each update.  Only the former is
    guaranteed to be non-increasing.
    """
    region = domain.polygon()
    cells = [_single_polygon(c, i) for i, c in enumerate(_voronoi_cells(seeds, domain, region))]
    history = {"cvt_energy": [], "displacement": []}
    for _ in range(iters):
        cent = np.array([c.centroid.coords[0] for c in cells])
        history["cvt_energy"].append(cvt_energy(seeds, cells))
        history["displacement"].append(float(((cent - seeds) ** 2).sum()))
        seeds = cent
        cells = [_single_polygon(c, i) for i, c in enumerate(_voronoi_cells(seeds, domain, region))]
    history["cvt_energy"].append(cvt_energy(seeds, cells))
    return seeds, cells, history


def _conforming_loops(cells: list[Polygon], tol: float):
    coords = []
    owner = []
    for k, c in enumerate(cells):
        c = orient(c, 1.0)
        if len(c.interiors):
            raise MeshError(f"cell {k} has a hole")
        xy = np.asarray(c.exterior.coords)[:-1]
        coords.append(xy)
        owner.append(np.full(len(xy), k))
    allxy = np.vstack(coords)
    # merge coincident points with a union-find over close pairs
    parent = np.arange(len(allxy))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in sorted(cKDTree(allxy).query_pairs(tol)):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(allxy))])
    uniq, inverse = np.unique(roots, return_inverse=True)
    verts = allxy[uniq]
    loops = []
    start = 0
    for xy in coords:
        idx = inverse[start:start + len(xy)]
        start += len(xy)
        keep = idx != np.roll(idx, 1)
        idx = idx[keep]
        loops.append(idx)
    # drop unused vertex ids
    used = np.unique(np.concatenate(loops))
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return verts[used], [remap[l] for l in loops]


def _check_boundary_faces(mesh: PolyMesh, domain: Domain, tol: float):
    for f in mesh.faces:
        if f.is_boundary:
            m = f.midpoint
            on_rect = (abs(m[0] - domain.xmin) <= tol or abs(m[0] - domain.xmax) <= tol
                       or abs(m[1] - domain.ymin) <= tol or abs(m[1] - domain.ymax) <= tol)
            on_hole = False
            if domain.has_hole:
                d = np.hypot(m[0] - domain.hole_center[0], m[1] - domain.hole_center[1])
                on_hole = d <= domain.hole_radius + tol
            if not (on_rect or on_hole):
                raise MeshError(f"non-conforming edge at {m} (hanging node)")


def generate_voronoi_mesh(domain: Domain = UNIT_SQUARE, n_elements: int = 100,
                          lloyd_iters: int = 50, seed: int = 0,
                          seeds: np.ndarray | None = None) -> PolyMesh:
    """Clipped, Lloyd-smoothed Voronoi mesh of ``domain``.

    Parameters
    ----------
    domain : Domain
        Rectangle, optionally with a circular hole (clipped as a 64-gon).
    n_elements : int
        Number of cells; ignored when explicit ``seeds`` are given.
    lloyd_iters : int
        Centroidal smoothing iterations.
    seed : int
        Seed of the random generator used for the initial seed points.
    seeds : array, optional
        Explicit initial seed points, shape (n, 2).

    Returns
    -------
    PolyMesh
        Deterministic for fixed inputs.
    """
    rng = np.random.default_rng(seed)
    if seeds is None:
        if n_elements < 4:
            raise MeshError("n_elements must be at least 4")
        pts = _sample_seeds(rng, n_elements, domain)
    else:
        pts = np.asarray(seeds, dtype=float)
        if len(pts) < 4:
            raise MeshError("at least 4 seeds are required")
    min_area = 1e-12 * domain.area
    tol = 1e-9 * domain.diameter
    last_error = None
    for attempt in range(MAX_RETRIES + 1):
        try:
            final_seeds, cells, history = lloyd_iterations(pts, domain, lloyd_iters)
            areas = np.array([c.area for c in cells])
            if np.any(areas < min_area):
                raise MeshError(f"degenerate cell (area {areas.min():.3e})")
            verts, loops = _conforming_loops(cells, tol)
            mesh = build_mesh(verts, loops, domain,
                              meta={"seed": seed, "lloyd_iters": lloyd_iters,
                                    "n_elements": len(loops), "attempt": attempt,
                                    "lloyd": history})
            _check_boundary_faces(mesh, domain, 1e3 * tol if domain.has_hole else tol)
            return mesh
        except MeshError as exc:
            last_error = exc
            logger.info("mesh generation attempt %d failed: %s", attempt, exc)
            scale = 1e-3 * np.sqrt(domain.area / len(pts))
            pts = pts + rng.normal(scale=scale, size=pts.shape)
            pts = np.where(domain.contains(pts)[:, None], pts, _sample_seeds(rng, len(pts), domain))
    raise MeshError(f"mesh generation failed after {MAX_RETRIES} retries: {last_error}")


def unit_square_single() -> PolyMesh:
    """The unit square as one quadrilateral element."""
    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return build_mesh(v, [[0, 1, 2, 3]], UNIT_SQUARE)


# --------------------------------------------------------------------------
# classification and diagnostics

def classify_boundary(mesh: PolyMesh, classifier: BoundaryClassifier) -> PolyMesh:
    """Return a copy of ``mesh`` with every boundary face labelled.

    Raises
    ------
    MeshError
        If a boundary face midpoint matches no region.
    """
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    tol = classifier.rel_tol * float(np.hypot(*(hi - lo)))
    faces = []
    missing = []
    for f in mesh.faces:
        if f.is_boundary:
            kind = classifier.kind_of(f.midpoint, tol)
            if kind is None:
                missing.append(tuple(f.midpoint))
                kind = FaceKind.UNCLASSIFIED
            f = dataclasses.replace(f, kind=kind)
        faces.append(f)
    if missing:
        pts = ", ".join(f"({x:.6g}, {y:.6g})" for x, y in missing[:5])
        raise MeshError(f"{len(missing)} boundary face midpoint(s) match no region: {pts}")
    return dataclasses.replace(mesh, faces=tuple(faces))


def regularity_report(mesh: PolyMesh, warn_below: float = 0.05) -> np.ndarray:
    """Per-element minimum over faces of ``2 |S_F| / (h |F|)``.

    ``S_F`` is the sub-triangle resting on face F.
    """
    ratios = np.empty(mesh.n_elements)
    for k, tris in enumerate(mesh.subtriangles):
        ab = tris[:, 1] - tris[:, 0]
        ac = tris[:, 2] - tris[:, 0]
        s = 0.5 * np.abs(ab[:, 0] * ac[:, 1] - ab[:, 1] * ac[:, 0])
        flen = np.hypot(*(tris[:, 2] - tris[:, 1]).T)
        ratios[k] = np.min(2.0 * s / (mesh.diameters[k] * flen))
    bad = np.flatnonzero(ratios < warn_below)
    if len(bad):
        logger.warning("%d element(s) below regularity ratio %.3g: %s", len(bad), warn_below,
                       bad[:10].tolist())
    return ratios


# --------------------------------------------------------------------------
# polymesh v1 text format

def save_mesh(mesh: PolyMesh, path) -> None:
    path = Path(path)
    lines = [f"polymesh 1 {len(mesh.vertices)} {mesh.n_elements}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [" ".join([str(len(e))] + [str(int(v)) for v in e]) for e in mesh.elements]
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write mesh to {path}: {exc}") from exc


def load_mesh(path, domain: Domain | None = None) -> PolyMesh:
    """Read a polymesh v1 file; errors carry the 1-based line number."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MeshError("empty mesh file, line 1")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "polymesh" or head[1] != "1":
        raise MeshError("malformed header, line 1")
    try:
        nv, ne = int(head[2]), int(head[3])
    except ValueError:
        raise MeshError("malformed header, line 1") from None
    if len(lines) < 1 + nv + ne:
        raise MeshError(f"truncated file, line {len(lines) + 1}")
    verts = np.empty((nv, 2))
    for i in range(nv):
        parts = lines[1 + i].split()
        try:
            if len(parts) != 2:
                raise ValueError
            verts[i] = float(parts[0]), float(parts[1])
        except ValueError:
            raise MeshError(f"malformed vertex, line {2 + i}") from None
    loops = []
    for j in range(ne):
        lineno = 2 + nv + j
        parts = lines[1 + nv + j].split()
        try:
            vals = [int(p) for p in parts]
        except ValueError:
            raise MeshError(f"malformed element, line {lineno}") from None
        if not vals or vals[0] < 3 or len(vals) != vals[0] + 1:
            raise MeshError(f"malformed element, line {lineno}")
        loop = vals[1:]
        if min(loop) < 0 or max(loop) >= nv:
            raise MeshError(f"vertex index out of range, line {lineno}")
        xy = verts[loop]
        if _polygon_area(xy) <= 0:
            raise MeshError(f"element not counter-clockwise, line {lineno}")
        if not _is_simple(xy):
            raise MeshError(f"element not simple, line {lineno}")
        loops.append(loop)
    if len(lines) > 1 + nv + ne and any(l.strip() for l in lines[1 + nv + ne:]):
        raise MeshError(f"trailing data, line {2 + nv + ne}")
    used = np.zeros(nv, dtype=bool)
    for l in loops:
        used[l] = True
    if not used.all():
        raise MeshError(f"dangling vertex {int(np.flatnonzero(~used)[0])}, line {2 + int(np.flatnonzero(~used)[0])}")
    return build_mesh(verts, loops, domain)
