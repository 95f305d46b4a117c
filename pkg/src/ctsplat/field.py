"""Attenuation field represented by anisotropic 3-d Gaussian primitives.

A primitive contributes ``density * exp(-0.5 * (x-c)^T Sigma^-1 (x-c))`` to
the attenuation coefficient at x; the field value is the plain sum over all
primitives of all component sets.  Covariance is parameterized as
``Sigma = R(q) diag(s^2) R(q)^T`` with a unit quaternion q (w, x, y, z
convention) and per-axis scales s.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class FieldError(ValueError):
    pass


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from quaternions, (..., 4) -> (..., 3, 3).

    Quaternions use (w, x, y, z) ordering and are normalized here, so the
    caller may pass raw (unnormalized) values.
    """
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise FieldError("zero-norm quaternion")
    w, x, y, z = np.moveaxis(q / n, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass
class GaussianPrimitive:
    """One anisotropic Gaussian blob (convenience view; storage is SoA)."""

    center: np.ndarray          # (3,) mm
    scales: np.ndarray          # (3,) mm, > 0
    rotation: np.ndarray        # (4,) quaternion (w, x, y, z)
    density: float              # peak attenuation contribution, >= 0

    def validate(self) -> None:
        if np.asarray(self.scales).min() <= 0:
            raise FieldError(f"scales must be positive, got {self.scales}")
        if self.density < 0:
            raise FieldError(f"density must be non-negative, got {self.density}")
        if np.linalg.norm(self.rotation) < 1e-12:
            raise FieldError("degenerate rotation quaternion")

    def covariance(self) -> np.ndarray:
        R = quat_to_rotmat(self.rotation)
        s2 = np.asarray(self.scales, dtype=np.float64) ** 2
        return (R * s2) @ R.T


def covariance_of(p: GaussianPrimitive) -> np.ndarray:
    return p.covariance()


@dataclass
class GaussianSet:
    """Structure-of-arrays container for one component of the field.

    ``component`` tags the role of the set ('base' for the smooth part,
    'detail' for the high-frequency residual part).
    """

    centers: np.ndarray         # (N, 3)
    scales: np.ndarray          # (N, 3)
    rotations: np.ndarray       # (N, 4), need not be unit norm
    densities: np.ndarray       # (N,)
    component: str = "base"

    def __post_init__(self):
        self.centers = np.ascontiguousarray(self.centers, dtype=np.float64).reshape(-1, 3)
        n = len(self.centers)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.densities = np.ascontiguousarray(self.densities, dtype=np.float64).reshape(n)

    def __len__(self) -> int:
        return len(self.centers)

    def validate(self) -> None:
        if self.component not in ("base", "detail"):
            raise FieldError(f"unknown component tag {self.component!r}")
        if len(self) and self.scales.min() <= 0:
            raise FieldError("all scales must be positive")
        if len(self) and self.densities.min() < 0:
            raise FieldError("all densities must be non-negative")
        if len(self) and np.linalg.norm(self.rotations, axis=1).min() < 1e-12:
            raise FieldError("degenerate rotation quaternion in set")

    def primitive(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            center=self.centers[i].copy(),
            scales=self.scales[i].copy(),
            rotation=self.rotations[i].copy(),
            density=float(self.densities[i]),
        )

    def copy(self) -> "GaussianSet":
        return GaussianSet(
            centers=self.centers.copy(),
            scales=self.scales.copy(),
            rotations=self.rotations.copy(),
            densities=self.densities.copy(),
            component=self.component,
        )

    def rotmats(self) -> np.ndarray:
        return quat_to_rotmat(self.rotations)

    def covariances(self) -> np.ndarray:
        R = self.rotmats()
        s2 = self.scales ** 2
        return np.einsum("nij,nj,nkj->nik", R, s2, R)

    def precisions(self) -> np.ndarray:
        R = self.rotmats()
        inv_s2 = 1.0 / self.scales ** 2
        return np.einsum("nij,nj,nkj->nik", R, inv_s2, R)

    @classmethod
    def from_primitives(cls, prims, component: str = "base") -> "GaussianSet":
        prims = list(prims)
        if not prims:
            return cls.empty(component)
        return cls(
            centers=np.stack([p.center for p in prims]),
            scales=np.stack([p.scales for p in prims]),
            rotations=np.stack([p.rotation for p in prims]),
            densities=np.array([p.density for p in prims], dtype=np.float64),
            component=component,
        )

    @classmethod
    def empty(cls, component: str = "base") -> "GaussianSet":
        return cls(
            centers=np.zeros((0, 3)),
            scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            densities=np.zeros((0,)),
            component=component,
        )


@dataclass
class VoxelVolume:
    """Regular voxel grid.  ``origin`` is the centre of voxel (0, 0, 0).

    ``values`` has shape dims = (nx, ny, nz) indexed [ix, iy, iz]; the centre
    of voxel (i, j, k) is ``origin + (i, j, k) * spacing``.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if any(d <= 0 for d in self.dims):
            raise FieldError(f"voxel dims must be positive, got {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise FieldError(f"voxel spacing must be positive, got {self.spacing}")
        self.values = np.asarray(self.values)
        if self.values.shape != self.dims:
            raise FieldError(
                f"values shape {self.values.shape} does not match dims {self.dims}"
            )

    @classmethod
    def zeros(cls, dims, spacing, origin, dtype=np.float64) -> "VoxelVolume":
        dims = tuple(int(d) for d in dims)
        return cls(dims=dims, spacing=tuple(spacing), origin=tuple(origin),
                   values=np.zeros(dims, dtype=dtype))

    @classmethod
    def centered(cls, dims, spacing, dtype=np.float64) -> "VoxelVolume":
        """Grid whose centre coincides with the world origin."""
        dims = tuple(int(d) for d in dims)
        if np.isscalar(spacing):
            spacing = (float(spacing),) * 3
        origin = tuple(-(d - 1) / 2.0 * s for d, s in zip(dims, spacing))
        return cls.zeros(dims, spacing, origin, dtype=dtype)

    def like(self, values: np.ndarray) -> "VoxelVolume":
        return VoxelVolume(dims=self.dims, spacing=self.spacing,
                           origin=self.origin, values=values)

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + np.arange(self.dims[axis]) * self.spacing[axis]

    def bounds(self):
        """(lo, hi) corners of the voxel-centre lattice."""
        lo = np.asarray(self.origin, dtype=np.float64)
        hi = lo + (np.asarray(self.dims) - 1) * np.asarray(self.spacing)
        return lo, hi

    def extent(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))


def evaluate_field(sets, points: np.ndarray, cutoff: float = np.inf) -> np.ndarray:
    """Field value(s) at one or more points.

    Parameters
    ----------
    sets : GaussianSet or sequence of GaussianSet
    points : (3,) or (M, 3) array, mm
    cutoff : Mahalanobis radius beyond which a primitive contributes zero.

    Returns a scalar for a single point, else an (M,) array.
    """
    if isinstance(sets, GaussianSet):
        sets = [sets]
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    out = np.zeros(len(pts))
    cut2 = cutoff * cutoff
    for gs in sets:
        if len(gs) == 0:
            continue
        W = gs.precisions()                       # (N, 3, 3)
        for start in range(0, len(pts), 4096):
            chunk = pts[start : start + 4096]      # (M, 3)
            d = chunk[:, None, :] - gs.centers[None, :, :]   # (M, N, 3)
            m2 = np.einsum("mni,nij,mnj->mn", d, W, d)
            contrib = gs.densities[None, :] * np.exp(-0.5 * m2)
            if np.isfinite(cut2):
                contrib = np.where(m2 <= cut2, contrib, 0.0)
            out[start : start + 4096] += contrib.sum(axis=1)
    return float(out[0]) if single else out


def voxelize(sets, grid: VoxelVolume, cutoff: float = 3.0) -> VoxelVolume:
    """Sample the field at all voxel centres of ``grid``.

    Scatter formulation: each primitive only touches the voxels inside its
    axis-aligned cutoff box, so cost scales with total support volume rather
    than N_voxels * N_primitives.
    """
    if isinstance(sets, GaussianSet):
        sets = [sets]
    vals = np.zeros(grid.dims, dtype=np.float64)
    xs = grid.axis_coords(0)
    ys = grid.axis_coords(1)
    zs = grid.axis_coords(2)
    lo = np.array([xs[0], ys[0], zs[0]])
    sp = np.asarray(grid.spacing)
    dims = np.asarray(grid.dims)
    cut2 = cutoff * cutoff
    for gs in sets:
        if len(gs) == 0:
            continue
        W = gs.precisions()
        # world-space half-width of the cutoff ellipsoid along each axis:
        # sqrt(diag(Sigma)) * cutoff
        Sig = gs.covariances()
        half = cutoff * np.sqrt(np.maximum(np.einsum("nii->ni", Sig), 0.0))
        i_lo = np.ceil((gs.centers - half - lo) / sp - 1e-12).astype(int)
        i_hi = np.floor((gs.centers + half - lo) / sp + 1e-12).astype(int)
        i_lo = np.clip(i_lo, 0, dims - 1)
        i_hi = np.clip(i_hi, -1, dims - 1)
        for n in range(len(gs)):
            if np.any(i_hi[n] < i_lo[n]):
                continue
            sl = tuple(slice(i_lo[n, k], i_hi[n, k] + 1) for k in range(3))
            gx = xs[sl[0]] - gs.centers[n, 0]
            gy = ys[sl[1]] - gs.centers[n, 1]
            gz = zs[sl[2]] - gs.centers[n, 2]
            w = W[n]
            # m2(x,y,z) expanded over the separable index grids
            m2 = (
                w[0, 0] * gx[:, None, None] ** 2
                + w[1, 1] * gy[None, :, None] ** 2
                + w[2, 2] * gz[None, None, :] ** 2
                + 2 * w[0, 1] * gx[:, None, None] * gy[None, :, None]
                + 2 * w[0, 2] * gx[:, None, None] * gz[None, None, :]
                + 2 * w[1, 2] * gy[None, :, None] * gz[None, None, :]
            )
            mask = m2 <= cut2
            if not mask.any():
                continue
            vals[sl] += np.where(mask, gs.densities[n] * np.exp(-0.5 * m2), 0.0)
    return replace(grid, values=vals, metadata=dict(grid.metadata))
