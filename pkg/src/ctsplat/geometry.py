"""Circular cone-beam acquisition geometry.

World frame: z is the rotation axis, the source orbits in the z=0 plane at
radius ``sad`` (source-axis distance).  At gantry angle ``beta`` the source
sits at ``(-sad*cos(beta), -sad*sin(beta), 0)`` and the flat detector panel
is perpendicular to the source->isocenter direction at distance ``sdd``
(source-detector distance) from the source.

Detector coordinates are (u, v): u runs along the in-plane tangential axis,
v along +z.  All lengths are millimetres, angles radians.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class ConeBeamGeometry:
    """Static description of a circular cone-beam scan.

    Attributes
    ----------
    sad : float
        Source-axis (isocenter) distance, mm.
    sdd : float
        Source-detector distance, mm.  Must be >= sad.
    n_views : int
        Number of projections.
    detector_rows : int
        Panel rows (v direction).
    detector_cols : int
        Panel columns (u direction).
    pixel_pitch : tuple[float, float]
        (pitch_u, pitch_v) pixel spacing in mm.
    angles : np.ndarray
        Gantry angles in radians, shape (n_views,).
    detector_offset : tuple[float, float]
        (offset_u, offset_v) shift of the panel centre from the ray through
        the isocenter, mm.
    """

    sad: float
    sdd: float
    n_views: int
    detector_rows: int
    detector_cols: int
    pixel_pitch: tuple[float, float]
    angles: np.ndarray = field(repr=False)
    detector_offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (self.sad > 0.0):
            raise GeometryError(f"sad must be positive, got {self.sad}")
        if not (self.sdd >= self.sad):
            raise GeometryError(f"sdd ({self.sdd}) must be >= sad ({self.sad})")
        if self.detector_rows <= 0 or self.detector_cols <= 0:
            raise GeometryError("detector dimensions must be positive")
        if self.pixel_pitch[0] <= 0.0 or self.pixel_pitch[1] <= 0.0:
            raise GeometryError("pixel pitch must be positive")
        angles = np.atleast_1d(np.asarray(self.angles, dtype=np.float64))
        object.__setattr__(self, "angles", angles)
        if angles.ndim != 1 or angles.size != self.n_views:
            raise GeometryError(
                f"angles must be a 1-d array of length n_views={self.n_views}, "
                f"got shape {angles.shape}"
            )
        if self.n_views < 1:
            raise GeometryError("need at least one view")

    # -- per-view frames -------------------------------------------------

    def source_position(self, view: int) -> np.ndarray:
        """Source point for one view, shape (3,)."""
        b = self.angles[view]
        return np.array([-self.sad * np.cos(b), -self.sad * np.sin(b), 0.0])

    def view_basis(self, view: int):
        """Orthonormal detector frame (e_u, e_v, e_w) for one view.

        e_w points from the source towards the isocenter, e_u is the
        in-plane detector axis, e_v = +z.  The triple is right-handed:
        e_u x e_v = e_w.
        """
        b = self.angles[view]
        e_w = np.array([np.cos(b), np.sin(b), 0.0])
        e_u = np.array([-np.sin(b), np.cos(b), 0.0])
        e_v = np.array([0.0, 0.0, 1.0])
        return e_u, e_v, e_w

    def detector_center(self, view: int) -> np.ndarray:
        """World position of the panel centre (including offsets)."""
        e_u, e_v, e_w = self.view_basis(view)
        off_u, off_v = self.detector_offset
        return self.source_position(view) + self.sdd * e_w + off_u * e_u + off_v * e_v

    def pixel_coords_mm(self):
        """Detector-plane coordinates of pixel centres.

        Returns (u_mm, v_mm): 1-d arrays of length detector_cols and
        detector_rows.  Pixel (row, col) sits at
        ``center + u_mm[col]*e_u + v_mm[row]*e_v``.
        """
        pu, pv = self.pixel_pitch
        off_u, off_v = self.detector_offset
        u_mm = (np.arange(self.detector_cols) - (self.detector_cols - 1) / 2.0) * pu + off_u
        v_mm = (np.arange(self.detector_rows) - (self.detector_rows - 1) / 2.0) * pv + off_v
        return u_mm, v_mm

    def pixel_position(self, view: int, row: int, col: int) -> np.ndarray:
        """World position of one pixel centre."""
        e_u, e_v, e_w = self.view_basis(view)
        u_mm, v_mm = self.pixel_coords_mm()
        return self.source_position(view) + self.sdd * e_w + u_mm[col] * e_u + v_mm[row] * e_v

    def fan_radius(self) -> float:
        """Radius of the cylinder fully covered by every view (mm)."""
        u_mm, _ = self.pixel_coords_mm()
        half_fan = min(abs(u_mm[0]), abs(u_mm[-1]))
        return self.sad * half_fan / np.hypot(half_fan, self.sdd)

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "sad": self.sad,
            "sdd": self.sdd,
            "n_views": self.n_views,
            "detector_rows": self.detector_rows,
            "detector_cols": self.detector_cols,
            "pixel_pitch": list(self.pixel_pitch),
            "detector_offset": list(self.detector_offset),
            "angles": self.angles.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConeBeamGeometry":
        try:
            return cls(
                sad=float(d["sad"]),
                sdd=float(d["sdd"]),
                n_views=int(d["n_views"]),
                detector_rows=int(d["detector_rows"]),
                detector_cols=int(d["detector_cols"]),
                pixel_pitch=tuple(float(x) for x in d["pixel_pitch"]),
                angles=np.asarray(d["angles"], dtype=np.float64),
                detector_offset=tuple(float(x) for x in d.get("detector_offset", (0.0, 0.0))),
            )
        except KeyError as e:
            raise GeometryError(f"geometry dict missing key {e.args[0]!r}") from e


def circular_geometry(
    sad: float,
    sdd: float,
    n_views: int,
    detector_rows: int,
    detector_cols: int,
    pixel_pitch,
    detector_offset=(0.0, 0.0),
    full_circle: bool = True,
) -> ConeBeamGeometry:
    """Geometry with n_views angles uniform on [0, 2pi) (or [0, pi))."""
    span = 2.0 * np.pi if full_circle else np.pi
    angles = span * np.arange(n_views) / n_views
    if np.isscalar(pixel_pitch):
        pixel_pitch = (float(pixel_pitch), float(pixel_pitch))
    return ConeBeamGeometry(
        sad=sad,
        sdd=sdd,
        n_views=n_views,
        detector_rows=detector_rows,
        detector_cols=detector_cols,
        pixel_pitch=tuple(pixel_pitch),
        angles=angles,
        detector_offset=tuple(detector_offset),
    )


@dataclass
class Ray:
    """Half-infinite ray ``origin + t * direction`` with an active interval.

    ``direction`` is not necessarily unit length; t is in units of
    ``|direction|``.  [t_near, t_far] brackets the intersection with the
    reconstruction bounding box (t_near == t_far when the ray misses).
    """

    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def point(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


def clip_ray_to_box(origin, direction, box_lo, box_hi):
    """Slab-clip a ray against an axis-aligned box.

    Returns (t_near, t_far) with t_near <= t_far; (0.0, 0.0) on a miss.
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    t_lo, t_hi = -np.inf, np.inf
    for k in range(3):
        d = direction[k]
        if d == 0.0:
            if origin[k] < box_lo[k] or origin[k] > box_hi[k]:
                return 0.0, 0.0
            continue
        ta = (box_lo[k] - origin[k]) / d
        tb = (box_hi[k] - origin[k]) / d
        if ta > tb:
            ta, tb = tb, ta
        t_lo = max(t_lo, ta)
        t_hi = min(t_hi, tb)
    if not (t_lo < t_hi):
        return 0.0, 0.0
    return max(t_lo, 0.0), max(t_hi, 0.0)


def ray_for_pixel(geom: ConeBeamGeometry, view: int, row: int, col: int,
                  box_lo=None, box_hi=None) -> Ray:
    """Ray from the source through one detector pixel centre.

    If a bounding box is given the ray's [t_near, t_far] bracket the box
    intersection, otherwise they span [0, 1] (source to detector).
    """
    src = geom.source_position(view)
    pix = geom.pixel_position(view, row, col)
    direction = pix - src
    if box_lo is None:
        return Ray(origin=src, direction=direction, t_near=0.0, t_far=1.0)
    t0, t1 = clip_ray_to_box(src, direction, np.asarray(box_lo), np.asarray(box_hi))
    return Ray(origin=src, direction=direction, t_near=t0, t_far=t1)


def write_geometry(path, geom: ConeBeamGeometry) -> None:
    with open(path, "w") as f:
        json.dump({"format": "conebeam-geometry/v1", **geom.to_dict()}, f, indent=1)
        f.write("\n")


def read_geometry(path) -> ConeBeamGeometry:
    with open(path) as f:
        d = json.load(f)
    fmt = d.pop("format", None)
    if fmt != "conebeam-geometry/v1":
        raise GeometryError(f"{path}: unexpected format tag {fmt!r}")
    return ConeBeamGeometry.from_dict(d)
