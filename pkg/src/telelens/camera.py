"""Pinhole camera, Brown-Conrady distortion, and remap-table machinery.

Frames are row-major RGBA8 with the origin at the top-left pixel.  All
normalized coordinates are (x/z, y/z) in the camera frame with +z forward.

The distortion polynomial maps undistorted normalized points to distorted
ones.  Inverting it per pixel needs iteration, so overlay warping instead
uses a :class:`RemapTable`: the forward map is evaluated on a coarse grid
of undistorted pixels, and each distorted target pixel recovers its source
by bilinear interpolation inside the grid cell that lands on it.  Target
pixels with no usable preimage carry a NaN sentinel and resolve to fully
transparent output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from telelens.errors import BehindCameraError, OutOfDomainError
from telelens.se3 import Pose

MIN_DEPTH = 1e-6
UNDISTORT_TOL = 1e-10
UNDISTORT_MAX_ITERS = 50


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def k_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def has_distortion(self) -> bool:
        return any(c != 0.0 for c in (self.k1, self.k2, self.k3, self.p1, self.p2))


@dataclass(frozen=True)
class StereoRig:
    left: CameraIntrinsics
    right: CameraIntrinsics
    right_from_left: Pose


@dataclass
class Frame:
    """RGBA8 image buffer stamped with its sample index."""

    pixels: np.ndarray
    timestamp: int = 0

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 4 or pixels.dtype != np.uint8:
            raise ValueError("frame buffer must be (h, w, 4) uint8")
        self.pixels = pixels

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @staticmethod
    def blank(width: int, height: int, color=(0, 0, 0, 255), timestamp: int = 0) -> "Frame":
        buf = np.empty((height, width, 4), dtype=np.uint8)
        buf[:] = np.asarray(color, dtype=np.uint8)
        return Frame(buf, timestamp)


def distort_normalized(intr: CameraIntrinsics, xy) -> np.ndarray:
    """Brown-Conrady forward model on normalized coords; (2,) or (N, 2).

    x_d = x*(1 + k1 r^2 + k2 r^4 + k3 r^6) + 2 p1 x y + p2 (r^2 + 2 x^2)
    y_d = y*(1 + k1 r^2 + k2 r^4 + k3 r^6) + p1 (r^2 + 2 y^2) + 2 p2 x y
    """
    xy = np.asarray(xy, dtype=float)
    single = xy.ndim == 1
    pts = np.atleast_2d(xy)
    x, y = pts[:, 0], pts[:, 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (intr.k1 + r2 * (intr.k2 + r2 * intr.k3))
    xd = x * radial + 2.0 * intr.p1 * x * y + intr.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + intr.p1 * (r2 + 2.0 * y * y) + 2.0 * intr.p2 * x * y
    out = np.stack([xd, yd], axis=1)
    return out[0] if single else out


def _undistort_batch(intr: CameraIntrinsics, xy_d: np.ndarray):
    """Fixed-point inversion; returns (points, converged mask)."""
    pts = np.atleast_2d(np.asarray(xy_d, dtype=float))
    x = pts[:, 0].copy()
    y = pts[:, 1].copy()
    xd, yd = pts[:, 0], pts[:, 1]
    ok = np.zeros(len(pts), dtype=bool)
    for _ in range(UNDISTORT_MAX_ITERS):
        r2 = x * x + y * y
        radial = 1.0 + r2 * (intr.k1 + r2 * (intr.k2 + r2 * intr.k3))
        dx = 2.0 * intr.p1 * x * y + intr.p2 * (r2 + 2.0 * x * x)
        dy = intr.p1 * (r2 + 2.0 * y * y) + 2.0 * intr.p2 * x * y
        x_new = (xd - dx) / radial
        y_new = (yd - dy) / radial
        x, y = x_new, y_new
        fwd = distort_normalized(intr, np.stack([x, y], axis=1))
        err = np.hypot(fwd[:, 0] - xd, fwd[:, 1] - yd)
        ok = err < UNDISTORT_TOL
        if ok.all():
            break
    bad = ~np.isfinite(x) | ~np.isfinite(y)
    ok &= ~bad
    return np.stack([x, y], axis=1), ok


def undistort_normalized(intr: CameraIntrinsics, xy_d) -> np.ndarray:
    """Invert the distortion model; raises outside the invertible region."""
    xy_d = np.asarray(xy_d, dtype=float)
    single = xy_d.ndim == 1
    out, ok = _undistort_batch(intr, xy_d)
    if not ok.all():
        raise OutOfDomainError(
            f"undistort failed to converge for {int((~ok).sum())} point(s)")
    return out[0] if single else out


def project(intr: CameraIntrinsics, points, distort: bool = True) -> np.ndarray:
    """Camera-frame point(s) to pixel coordinates; (3,) or (N, 3).

    Distortion is applied by default; pass ``distort=False`` for the ideal
    pinhole used when rendering layers that are warped afterwards.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    z = pts[:, 2]
    if np.any(z <= MIN_DEPTH):
        raise BehindCameraError(f"{int((z <= MIN_DEPTH).sum())} point(s) at or behind the camera")
    xy = pts[:, :2] / z[:, None]
    if distort and intr.has_distortion():
        xy = distort_normalized(intr, xy)
    uv = np.empty_like(xy)
    uv[:, 0] = intr.fx * xy[:, 0] + intr.cx
    uv[:, 1] = intr.fy * xy[:, 1] + intr.cy
    return uv[0] if single else uv


def pixel_to_normalized(intr: CameraIntrinsics, uv) -> np.ndarray:
    uv = np.asarray(uv, dtype=float)
    single = uv.ndim == 1
    pts = np.atleast_2d(uv)
    out = np.stack([(pts[:, 0] - intr.cx) / intr.fx, (pts[:, 1] - intr.cy) / intr.fy], axis=1)
    return out[0] if single else out


@dataclass
class RemapTable:
    """Per-pixel source coordinates, columns and rows held separately.

    ``map_x[v, u]`` / ``map_y[v, u]`` give the source pixel for target
    pixel (u, v); NaN marks targets with no valid preimage.
    """

    map_x: np.ndarray
    map_y: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.map_x = np.asarray(self.map_x, dtype=np.float32)
        self.map_y = np.asarray(self.map_y, dtype=np.float32)
        if self.map_x.shape != self.map_y.shape or self.map_x.ndim != 2:
            raise ValueError("map_x and map_y must be equal-shaped 2-D arrays")

    @property
    def width(self) -> int:
        return self.map_x.shape[1]

    @property
    def height(self) -> int:
        return self.map_x.shape[0]

    @staticmethod
    def identity(width: int, height: int) -> "RemapTable":
        u, v = np.meshgrid(np.arange(width, dtype=np.float32),
                           np.arange(height, dtype=np.float32))
        return RemapTable(u, v)

    def sentinel_fraction(self) -> float:
        return float(np.isnan(self.map_x).mean())

    def _sampler(self):
        """Cached sparse bilinear-sampling operator (dst pixels x src pixels)."""
        if "s" not in self._cache:
            from scipy import sparse

            h, w = self.map_x.shape
            mx = self.map_x.astype(np.float64)
            my = self.map_y.astype(np.float64)
            valid = np.isfinite(mx) & np.isfinite(my)
            mx = np.where(valid, mx, -10.0)
            my = np.where(valid, my, -10.0)
            x0 = np.floor(mx).astype(np.int64)
            y0 = np.floor(my).astype(np.int64)
            fx = mx - x0
            fy = my - y0
            rows = []
            cols = []
            vals = []
            dst = np.arange(h * w)
            for dy in (0, 1):
                for dx in (0, 1):
                    xs = (x0 + dx).ravel()
                    ys = (y0 + dy).ravel()
                    inside = ((xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
                              & valid.ravel())
                    wgt = ((fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)).ravel()
                    rows.append(dst[inside])
                    cols.append((ys * w + xs)[inside])
                    vals.append(wgt[inside])
            mat = sparse.csr_matrix(
                (np.concatenate(vals).astype(np.float32),
                 (np.concatenate(rows), np.concatenate(cols))),
                shape=(h * w, h * w))
            self._cache["s"] = mat
        return self._cache["s"]


def _inverse_bilinear(corners: np.ndarray, targets: np.ndarray, iterations: int = 6):
    """Solve bilinear(corners; s, t) = target for (s, t), vectorized.

    corners: (N, 4, 2) quad corners ordered (00, 10, 01, 11);
    targets: (N, 2).  Newton from the cell center.
    """
    a = corners[:, 0]
    b = corners[:, 1] - a
    c = corners[:, 2] - a
    d = corners[:, 3] - corners[:, 2] - b
    s = np.full(len(targets), 0.5)
    t = np.full(len(targets), 0.5)
    for _ in range(iterations):
        st = s * t
        fx = a[:, 0] + b[:, 0] * s + c[:, 0] * t + d[:, 0] * st - targets[:, 0]
        fy = a[:, 1] + b[:, 1] * s + c[:, 1] * t + d[:, 1] * st - targets[:, 1]
        j00 = b[:, 0] + d[:, 0] * t
        j01 = c[:, 0] + d[:, 0] * s
        j10 = b[:, 1] + d[:, 1] * t
        j11 = c[:, 1] + d[:, 1] * s
        det = j00 * j11 - j01 * j10
        det = np.where(np.abs(det) < 1e-18, np.inf, det)
        s = s - (j11 * fx - j01 * fy) / det
        t = t - (-j10 * fx + j00 * fy) / det
    return s, t


def build_distort_remap(intr: CameraIntrinsics, grid_step: int = 4) -> RemapTable:
    """Distortion map for warping rendered (undistorted) layers to the
    distorted display: evaluate the forward distortion on a grid of source
    pixels, then recover each target pixel's source by inverse bilinear
    interpolation within the covering grid cell.
    """
    if grid_step < 1:
        raise ValueError("grid_step must be >= 1")
    w, h = intr.width, intr.height
    if not intr.has_distortion():
        return RemapTable.identity(w, h)

    # Extend the source grid far enough that its forward image covers the
    # full target rectangle (barrel distortion contracts the interior).
    borders_u = np.concatenate([np.linspace(0, w - 1, 32), np.full(32, 0.0),
                                np.full(32, float(w - 1)), np.linspace(0, w - 1, 32)])
    borders_v = np.concatenate([np.full(32, 0.0), np.linspace(0, h - 1, 32),
                                np.linspace(0, h - 1, 32), np.full(32, float(h - 1))])
    xy = np.stack([(borders_u - intr.cx) / intr.fx, (borders_v - intr.cy) / intr.fy], axis=1)
    fwd = distort_normalized(intr, xy)
    shift = np.max(np.hypot((fwd[:, 0] - xy[:, 0]) * intr.fx,
                            (fwd[:, 1] - xy[:, 1]) * intr.fy))
    margin = (int(shift) // grid_step + 2) * grid_step

    us = np.arange(-margin, w + margin + grid_step, grid_step, dtype=float)
    vs = np.arange(-margin, h + margin + grid_step, grid_step, dtype=float)
    gu, gv = np.meshgrid(us, vs)
    norm = np.stack([(gu.ravel() - intr.cx) / intr.fx, (gv.ravel() - intr.cy) / intr.fy], axis=1)
    dist = distort_normalized(intr, norm)
    du = (dist[:, 0] * intr.fx + intr.cx).reshape(gu.shape)
    dv = (dist[:, 1] * intr.fy + intr.cy).reshape(gv.shape)

    map_x = np.full((h, w), np.nan, dtype=np.float64)
    map_y = np.full((h, w), np.nan, dtype=np.float64)

    rows, cols = gu.shape
    cell_i, cell_j = np.meshgrid(np.arange(cols - 1), np.arange(rows - 1))
    cell_i = cell_i.ravel()
    cell_j = cell_j.ravel()
    chunk = 65536
    eps = 1e-9
    for start in range(0, len(cell_i), chunk):
        ci = cell_i[start:start + chunk]
        cj = cell_j[start:start + chunk]
        # distorted quad corners, ordered (00, 10, 01, 11)
        qx = np.stack([du[cj, ci], du[cj, ci + 1], du[cj + 1, ci], du[cj + 1, ci + 1]], axis=1)
        qy = np.stack([dv[cj, ci], dv[cj, ci + 1], dv[cj + 1, ci], dv[cj + 1, ci + 1]], axis=1)
        lo_x = np.ceil(qx.min(axis=1)).astype(np.int64)
        hi_x = np.floor(qx.max(axis=1)).astype(np.int64)
        lo_y = np.ceil(qy.min(axis=1)).astype(np.int64)
        hi_y = np.floor(qy.max(axis=1)).astype(np.int64)
        lo_x = np.clip(lo_x, 0, w - 1)
        hi_x = np.clip(hi_x, -1, w - 1)
        lo_y = np.clip(lo_y, 0, h - 1)
        hi_y = np.clip(hi_y, -1, h - 1)
        nx = hi_x - lo_x + 1
        ny = hi_y - lo_y + 1
        keep = (nx > 0) & (ny > 0)
        if not keep.any():
            continue
        ci, cj = ci[keep], cj[keep]
        qx, qy = qx[keep], qy[keep]
        lo_x, lo_y = lo_x[keep], lo_y[keep]
        bx = int(nx[keep].max())
        by = int(ny[keep].max())
        offs_x, offs_y = np.meshgrid(np.arange(bx), np.arange(by))
        # candidate target pixels per cell, padded to the block size
        tx = lo_x[:, None] + offs_x.ravel()[None, :]
        ty = lo_y[:, None] + offs_y.ravel()[None, :]
        n_cells, n_cand = tx.shape
        corners = np.stack([
            np.stack([qx[:, 0], qy[:, 0]], axis=1),
            np.stack([qx[:, 1], qy[:, 1]], axis=1),
            np.stack([qx[:, 2], qy[:, 2]], axis=1),
            np.stack([qx[:, 3], qy[:, 3]], axis=1),
        ], axis=1)
        corners_rep = np.repeat(corners, n_cand, axis=0)
        targets = np.stack([tx.ravel(), ty.ravel()], axis=1).astype(float)
        s, t = _inverse_bilinear(corners_rep, targets)
        inside = ((s >= -eps) & (s <= 1 + eps) & (t >= -eps) & (t <= 1 + eps)
                  & (targets[:, 0] < w) & (targets[:, 1] < h))
        if not inside.any():
            continue
        s = np.clip(s[inside], 0.0, 1.0)
        t = np.clip(t[inside], 0.0, 1.0)
        tgt = targets[inside].astype(np.int64)
        src_u = us[np.repeat(ci, n_cand)[inside]] + s * grid_step
        src_v = vs[np.repeat(cj, n_cand)[inside]] + t * grid_step
        ok = (src_u >= 0) & (src_u <= w - 1) & (src_v >= 0) & (src_v <= h - 1)
        map_x[tgt[ok, 1], tgt[ok, 0]] = src_u[ok]
        map_y[tgt[ok, 1], tgt[ok, 0]] = src_v[ok]
    return RemapTable(map_x, map_y)


def remap(src: Frame, table: RemapTable) -> Frame:
    """Bilinear warp of an RGBA frame through a remap table.

    Out-of-frame neighborhoods contribute transparent black, and sentinel
    targets come out fully transparent; the alpha channel is resampled
    exactly like the color channels.
    """
    if (src.height, src.width) != (table.height, table.width):
        raise ValueError(
            f"table {table.width}x{table.height} does not match "
            f"frame {src.width}x{src.height}")
    flat = src.pixels.reshape(-1, 4).astype(np.float32)
    acc = table._sampler() @ flat
    out = np.floor(acc + 0.5).astype(np.uint8).reshape(src.pixels.shape)
    return Frame(out, src.timestamp)
