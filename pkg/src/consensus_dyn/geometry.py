"""d-dimensional geometry kernel: hull frames, membership, exact and Monte Carlo centroids.

Degenerate (lower-dimensional) point sets are handled by projecting onto an
orthonormal basis of their affine hull, computing there, and lifting back; the
reported volume is measured in the affine dimension. Tolerances are relative
to the point set's component extent: tau_dup (vertex dedup) and tau_mem
(membership) default to 1e-9 of the extent, the affine-rank cutoff to 1e-9 of
the largest singular value with an absolute floor at the rounding noise of the
input coordinates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

logger = logging.getLogger(__name__)

DUP_TOL = 1e-9
MEM_TOL = 1e-9
RANK_TOL = 1e-9


class GeometryError(RuntimeError):
    """Internal geometric failure with diagnostic context."""


class OracleUnreliableError(GeometryError):
    """Monte Carlo acceptance rate too low for a trustworthy estimate."""


@dataclass(frozen=True)
class Polytope:
    """Convex hull of a finite point set, reduced to its frame (extreme points).

    ``origin``/``basis`` define the affine hull: basis rows are orthonormal and
    ``proj_points`` are the deduplicated input points in those coordinates.
    ``equations`` holds facet half-spaces [normal | offset] in projected
    coordinates (unit normals, inside = normal @ y + offset <= 0); present only
    when dim_affine >= 2.
    """

    vertices: np.ndarray
    dim_ambient: int
    dim_affine: int
    origin: np.ndarray
    basis: np.ndarray
    proj_points: np.ndarray
    proj_vertices: np.ndarray
    equations: Optional[np.ndarray]
    simplices: Optional[np.ndarray]
    extent: float

    def __post_init__(self):
        for name in ("vertices", "origin", "basis", "proj_points", "proj_vertices",
                     "equations", "simplices"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    @property
    def facets(self) -> Optional[np.ndarray]:
        """Facet half-spaces in ambient coordinates; None unless full-dimensional."""
        if self.equations is None or self.dim_affine != self.dim_ambient:
            return None
        normals = self.equations[:, :-1] @ self.basis
        offsets = self.equations[:, -1] - normals @ self.origin
        return np.column_stack([normals, offsets])


@dataclass(frozen=True)
class CentroidResult:
    centroid: np.ndarray
    volume: float


def _as_points(points, d: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        raise ValueError("need at least one point")
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"points must be a 2-D array, got shape {arr.shape}")
    if d is not None and arr.shape[1] != d:
        raise ValueError(f"points have dimension {arr.shape[1]}, expected {d}")
    if not np.isfinite(arr).all():
        raise ValueError("points must be finite")
    return arr


def _dedup(arr: np.ndarray, tol: float) -> np.ndarray:
    keep = [0]
    for i in range(1, len(arr)):
        if np.linalg.norm(arr[keep] - arr[i], axis=1).min() > tol:
            keep.append(i)
    return arr[keep]


def convex_hull(points, d: Optional[int] = None) -> Polytope:
    """Frame and facet structure of the convex hull of `points`.

    The returned vertices are exactly the extreme points of the input (original
    coordinates, deduplicated within tau_dup); dim_affine is the rank of the
    centered point matrix at the tau_rank cutoff.
    """
    arr = _as_points(points, d)
    dim = arr.shape[1]
    extent = float((arr.max(axis=0) - arr.min(axis=0)).max()) if len(arr) > 1 else 0.0

    unique = _dedup(arr, DUP_TOL * extent) if extent > 0 else arr[:1].copy()
    origin = unique.mean(axis=0)
    centered = unique - origin
    if len(unique) == 1:
        rank = 0
        vt = np.zeros((0, dim))
    else:
        _, svals, vt = np.linalg.svd(centered, full_matrices=False)
        # Centering alone puts ~eps * |coordinate| of rounding noise into every
        # entry, so singular values below that floor are arithmetic, not shape.
        # m points can never span more than m - 1 affine dimensions.
        floor = max(RANK_TOL * svals[0],
                    64 * np.finfo(float).eps * float(np.abs(arr).max()))
        rank = min(int((svals > floor).sum()), len(unique) - 1)

    while True:
        if rank == 0:
            basis = np.zeros((0, dim))
            return Polytope(unique[:1].copy(), dim, 0, origin, basis,
                            np.zeros((1, 0)), np.zeros((1, 0)), None, None, extent)

        if rank == dim:
            basis = np.eye(dim)
            proj = centered
        else:
            basis = vt[:rank]
            proj = centered @ basis.T

        if rank == 1:
            line = proj[:, 0]
            idx = [int(np.argmin(line)), int(np.argmax(line))]
            return Polytope(unique[idx].copy(), dim, 1, origin, basis,
                            proj, proj[idx].copy(), None, None, extent)

        try:
            hull = ConvexHull(proj)
        except QhullError:
            logger.warning("hull construction failed at dim %d; retrying with joggle", rank)
            try:
                hull = ConvexHull(proj, qhull_options="QJ")
            except QhullError:
                # Flat at Qhull's own precision even after joggling: the set's
                # numerical affine dimension is lower than the SVD cut said.
                logger.warning("joggled hull still degenerate; reducing to dim %d", rank - 1)
                rank -= 1
                continue
        idx = hull.vertices
        return Polytope(unique[idx].copy(), dim, rank, origin, basis,
                        proj, proj[idx].copy(), hull.equations.copy(),
                        hull.simplices.copy(), extent)


def _default_tol(poly: Polytope, tol: Optional[float]) -> float:
    if tol is not None:
        return tol
    return MEM_TOL * max(poly.extent, 1.0)


def _membership(poly: Polytope, pts: np.ndarray, tol: float) -> np.ndarray:
    # orthogonal residual to the affine hull, then half-space margins inside it
    diff = pts - poly.origin
    y = diff @ poly.basis.T
    res = np.linalg.norm(diff - y @ poly.basis, axis=1)
    ok = res <= tol
    if poly.dim_affine == 0:
        return ok
    if poly.dim_affine == 1:
        line = poly.proj_vertices[:, 0]
        return ok & (y[:, 0] >= line.min() - tol) & (y[:, 0] <= line.max() + tol)
    margins = y @ poly.equations[:, :-1].T + poly.equations[:, -1]
    return ok & (margins.max(axis=1) <= tol)


def contains(poly: Polytope, x, tol: Optional[float] = None) -> bool:
    """True iff x is within distance ~tol of the hull (default 1e-9 of extent)."""
    pt = np.asarray(x, dtype=float).reshape(1, -1)
    if pt.shape[1] != poly.dim_ambient:
        raise ValueError(f"point dimension {pt.shape[1]} != {poly.dim_ambient}")
    return bool(_membership(poly, pt, _default_tol(poly, tol))[0])


def centroid(poly: Polytope) -> CentroidResult:
    """Uniform-mass centroid of the hull, computed in its affine dimension.

    Full-rank case: the hull is fanned into simplices from the vertex average;
    the centroid is the volume-weighted mean of simplex centroids (each the
    arithmetic mean of its vertices), simplex volume = |det| / r!.
    """
    r = poly.dim_affine
    if r == 0:
        return CentroidResult(poly.vertices[0].copy(), 0.0)
    if r == 1:
        line = poly.proj_vertices[:, 0]
        mid = (line.min() + line.max()) / 2
        length = float(line.max() - line.min())
        return CentroidResult(poly.origin + mid * poly.basis[0], length)

    apex = poly.proj_vertices.mean(axis=0)
    total = 0.0
    acc = np.zeros(r)
    for simplex in poly.simplices:
        pts = poly.proj_points[simplex]
        vol = abs(np.linalg.det(pts - apex)) / math.factorial(r)
        total += vol
        acc += vol * (pts.sum(axis=0) + apex) / (r + 1)
    if total <= 0.0 or not np.isfinite(total):
        raise GeometryError(f"degenerate fan decomposition: volume={total!r} at rank {r}")
    return CentroidResult(poly.origin + (acc / total) @ poly.basis, total)


def centroid_oracle_mc(points, samples: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Rejection-sampling centroid estimate over the bounding box.

    Independent of the exact route: samples the box, keeps points passing the
    membership test, returns (mean, per-component standard error). Requires a
    full-dimensional hull and at least 10^4 samples; raises OracleUnreliableError
    when the acceptance rate drops below 1e-3.
    """
    arr = _as_points(points)
    if samples < 10_000:
        raise ValueError(f"need at least 10^4 samples, got {samples}")
    poly = convex_hull(arr)
    if poly.dim_affine != poly.dim_ambient:
        raise ValueError(
            f"hull is {poly.dim_affine}-dimensional in R^{poly.dim_ambient}; oracle needs full dimension")
    lo, hi = arr.min(axis=0), arr.max(axis=0)
    rng = np.random.default_rng(seed)
    accepted = []
    remaining = samples
    while remaining > 0:
        chunk = min(remaining, 20_000)
        pts = rng.uniform(lo, hi, (chunk, arr.shape[1]))
        pts = pts.reshape(chunk, arr.shape[1])
        mask = _membership(poly, pts, 0.0)
        if mask.any():
            accepted.append(pts[mask])
        remaining -= chunk
    count = sum(len(a) for a in accepted)
    if count < 1e-3 * samples or count < 2:
        raise OracleUnreliableError(
            f"acceptance rate {count / samples:.2e} below 1e-3; bounding box too loose")
    hits = np.vstack(accepted)
    return hits.mean(axis=0), hits.std(axis=0, ddof=1) / math.sqrt(count)


def component_extrema(points) -> Tuple[np.ndarray, np.ndarray]:
    """Per-component minimum and maximum over the point set."""
    arr = _as_points(points)
    return arr.min(axis=0), arr.max(axis=0)


def build_hyperpyramid(d: int, L: float, theta: float) -> Polytope:
    """Pyramid with apex at the origin over a (d-1)-cube base at x_1 = L.

    Base vertices have first coordinate L and remaining coordinates +-theta/2;
    its first centroid component sits at L*d/(d+1), the extreme case for the
    centroid's per-component safety margin.
    """
    if d < 1:
        raise ValueError(f"need d >= 1, got {d}")
    if not (L > 0) or not (theta > 0):
        raise ValueError(f"need L > 0 and theta > 0, got L={L}, theta={theta}")
    verts = [np.zeros(d)]
    for signs in np.ndindex(*(2,) * (d - 1)):
        v = np.empty(d)
        v[0] = L
        for j, s in enumerate(signs):
            v[j + 1] = (s - 0.5) * theta
        verts.append(v)
    return convex_hull(np.array(verts))


def poly_to_json(poly: Polytope) -> dict:
    return {"vertices": [list(map(float, v)) for v in poly.vertices]}


def poly_from_json(obj: dict) -> Polytope:
    if not isinstance(obj, dict) or set(obj) != {"vertices"}:
        raise ValueError("polytope literal must be {'vertices': [[...], ...]}")
    return convex_hull(obj["vertices"])
