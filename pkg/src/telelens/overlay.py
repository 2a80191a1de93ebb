"""Software stereo overlay rendering of the predicted tool.

The tool is a wireframe-plus-markers stand-in for a CAD mesh: edges are
anti-aliased 2 px lines, markers 3 px discs, painter-ordered by depth.
Layers are rendered with an ideal pinhole (the display distortion is
applied afterwards through a remap table) and alpha-blended over the
delayed camera frame with a single per-frame opacity that grows with the
distance between the current command and the delayed feedback position.
8-bit outputs round half-up so blends are bit-reproducible.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from telelens.camera import CameraIntrinsics, Frame, RemapTable, remap
from telelens.kinematics import FeatureAtlas, KinematicChain, _fk_states, _state_apply
from telelens.se3 import Pose

RENDER_MIN_DEPTH = 1e-3  # meters; edges are clipped against this plane
EDGE_HALF_WIDTH = 1.0    # px, 2 px nominal line width
MARKER_RADIUS = 1.5      # px, 3 px nominal disc diameter

EDGE_COLOR = (90, 220, 255)
MARKER_COLOR = (255, 120, 60)


@dataclass(frozen=True)
class OpacityParams:
    l_thresh: float = 0.0053   # meters; distances below stay fully transparent
    alpha_max: float = 0.8
    r: float = 100.0           # opacity per meter beyond the threshold

    def __post_init__(self):
        if self.l_thresh < 0:
            raise ValueError("distance threshold must be non-negative")
        if not 0.0 <= self.alpha_max <= 1.0:
            raise ValueError("alpha_max must lie in [0, 1]")
        if self.r <= 0:
            raise ValueError("opacity gain must be positive")


def opacity(p_command, p_delayed, params: OpacityParams) -> float:
    """min(alpha_max, r * (max(l_thresh, l) - l_thresh)) for the distance l
    between the commanded position and the delayed feedback position."""
    l = float(np.linalg.norm(np.asarray(p_command, dtype=float)
                             - np.asarray(p_delayed, dtype=float)))
    return min(params.alpha_max, params.r * (max(params.l_thresh, l) - params.l_thresh))


@dataclass(frozen=True)
class ToolModel:
    """Wireframe vertices bound to chain links, plus the marker atlas."""

    vertices: tuple[tuple[int, np.ndarray], ...]
    edges: tuple[tuple[int, int], ...]
    atlas: FeatureAtlas

    def __post_init__(self):
        if len(self.vertices) < 1:
            raise ValueError("tool model needs at least one vertex")
        for a, b in self.edges:
            if not (0 <= a < len(self.vertices) and 0 <= b < len(self.vertices)):
                raise ValueError(f"edge ({a}, {b}) references a missing vertex")


def default_tool_model(chain: KinematicChain, atlas: FeatureAtlas) -> ToolModel:
    """Bone segments along the distal links with a small two-prong tip."""
    atlas.validate(chain)
    last = len(chain) - 1
    first = max(0, last - 4)
    vertices = [(link, np.zeros(3)) for link in range(first, last + 1)]
    edges = [(i, i + 1) for i in range(len(vertices) - 1)]
    tip = len(vertices) - 1
    vertices.append((last, np.array([0.008, 0.0, 0.018])))
    vertices.append((last, np.array([-0.008, 0.0, 0.018])))
    edges += [(tip, len(vertices) - 2), (tip, len(vertices) - 1)]
    return ToolModel(tuple(vertices), tuple(edges), atlas)


@dataclass
class OverlayLayer:
    """Rendered overlay: straight-alpha RGBA plus the blend opacity applied
    (or to be applied) on top of it."""

    pixels: np.ndarray
    side: str = "left"
    applied_alpha: float | None = None

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 4 or pixels.dtype != np.uint8:
            raise ValueError("layer buffer must be (h, w, 4) uint8")
        self.pixels = pixels

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def _over_flat(buf: np.ndarray, flat_idx: np.ndarray, coverage: np.ndarray, color) -> None:
    """Straight-alpha 'over' of a constant color at scattered flat indices.

    Indices must be unique within one call (one write per pixel per
    primitive), which the rasterizers below guarantee.
    """
    pix = buf.reshape(-1, 4)
    patch = pix[flat_idx]
    cov = coverage[:, None].astype(np.float32)
    keep = patch[:, 3:4] * (1.0 - cov)
    a_new = cov + keep
    safe = np.where(a_new > 0, a_new, 1.0)
    patch[:, :3] = (np.asarray(color, dtype=np.float32) * cov + patch[:, :3] * keep) / safe
    patch[:, 3:4] = a_new
    pix[flat_idx] = patch


def _draw_disc(buf: np.ndarray, center, radius: float, color) -> None:
    h, w = buf.shape[:2]
    cx, cy = center
    pad = radius + 1.5
    x0, x1 = max(0, int(np.floor(cx - pad))), min(w, int(np.ceil(cx + pad)) + 1)
    y0, y1 = max(0, int(np.floor(cy - pad))), min(h, int(np.ceil(cy + pad)) + 1)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    d = np.hypot(xs - cx, ys - cy)
    coverage = np.clip(radius + 0.5 - d, 0.0, 1.0).ravel()
    hit = coverage > 0
    if hit.any():
        _over_flat(buf, (ys.ravel() * w + xs.ravel())[hit], coverage[hit], color)


def _draw_line(buf: np.ndarray, p0, p1, half_width: float, color) -> None:
    """Anti-aliased segment via a thin band around the major axis."""
    h, w = buf.shape[:2]
    x0f, y0f = float(p0[0]), float(p0[1])
    x1f, y1f = float(p1[0]), float(p1[1])
    dx, dy = x1f - x0f, y1f - y0f
    length2 = dx * dx + dy * dy
    pad = half_width + 1.0
    steep = abs(dy) > abs(dx)
    if steep:
        # walk rows, offset columns
        a0, a1, b0, b1 = y0f, y1f, x0f, x1f
        da, db = dy, dx
        extent_a, extent_b = h, w
    else:
        a0, a1, b0, b1 = x0f, x1f, y0f, y1f
        da, db = dx, dy
        extent_a, extent_b = w, h
    lo = max(0, int(np.floor(min(a0, a1) - pad)))
    hi = min(extent_a - 1, int(np.ceil(max(a0, a1) + pad)))
    if lo > hi:
        return
    avals = np.arange(lo, hi + 1)
    if abs(da) < 1e-12:
        bc = np.full(len(avals), (b0 + b1) / 2)
    else:
        bc = b0 + np.clip((avals - a0) / da, 0.0, 1.0) * db
    half_band = int(np.ceil((half_width + 0.5) * math.sqrt(2.0))) + 1
    offs = np.arange(-half_band, half_band + 1)
    bvals = np.round(bc).astype(np.int64)[:, None] + offs[None, :]
    amat = np.broadcast_to(avals[:, None], bvals.shape)
    inside = (bvals >= 0) & (bvals < extent_b)
    aa = amat[inside].astype(np.float64)
    bb = bvals[inside].astype(np.float64)
    if steep:
        xs, ys = bb, aa
    else:
        xs, ys = aa, bb
    if length2 < 1e-12:
        d = np.hypot(xs - x0f, ys - y0f)
    else:
        t = np.clip(((xs - x0f) * dx + (ys - y0f) * dy) / length2, 0.0, 1.0)
        d = np.hypot(xs - (x0f + t * dx), ys - (y0f + t * dy))
    coverage = np.clip(half_width + 0.5 - d, 0.0, 1.0)
    hit = coverage > 0
    if hit.any():
        _over_flat(buf, (ys[hit].astype(np.int64) * w + xs[hit].astype(np.int64)),
                   coverage[hit], color)


def _project_pinhole(intr: CameraIntrinsics, pts: np.ndarray) -> np.ndarray:
    uv = np.empty((len(pts), 2))
    uv[:, 0] = intr.fx * pts[:, 0] / pts[:, 2] + intr.cx
    uv[:, 1] = intr.fy * pts[:, 1] / pts[:, 2] + intr.cy
    return uv


def render_tool(model: ToolModel, j, chain: KinematicChain, hand_eye: Pose,
                camera: CameraIntrinsics, side_transform: Pose | None = None,
                edge_color=EDGE_COLOR, marker_color=MARKER_COLOR,
                side: str = "left") -> OverlayLayer:
    """Project the tool at joints ``j`` into one camera and rasterize it.

    ``hand_eye`` maps chain base to the left camera; the right view passes
    the stereo baseline as ``side_transform``.  The layer is undistorted;
    warp it with :func:`distort_overlay` before display.
    """
    cam_from_base = side_transform * hand_eye if side_transform is not None else hand_eye
    states = _fk_states(chain, np.asarray(j, dtype=float))
    rot = cam_from_base.rotation
    trans = cam_from_base.translation

    def to_cam(link: int, point: np.ndarray) -> np.ndarray:
        return rot.rotate(_state_apply(states[link], point)) + trans

    # primitives: (mean depth, kind, payload); painter-sorted far to near
    prims: list[tuple[float, str, tuple]] = []
    verts = [to_cam(link, point) for link, point in model.vertices]
    for a, b in model.edges:
        pa, pb = verts[a], verts[b]
        za, zb = pa[2], pb[2]
        if za <= RENDER_MIN_DEPTH and zb <= RENDER_MIN_DEPTH:
            continue
        if za <= RENDER_MIN_DEPTH or zb <= RENDER_MIN_DEPTH:
            # clip the hidden end to the near plane
            t = (RENDER_MIN_DEPTH - za) / (zb - za)
            crossing = pa + t * (pb - pa)
            if za <= RENDER_MIN_DEPTH:
                pa = crossing
            else:
                pb = crossing
        prims.append((float(pa[2] + pb[2]) / 2, "edge", (pa, pb)))
    for fp in model.atlas.points:
        p = to_cam(fp.link, fp.point)
        if p[2] > RENDER_MIN_DEPTH:
            prims.append((float(p[2]), "marker", (p,)))

    buf = np.zeros((camera.height, camera.width, 4), dtype=np.float32)
    for _, kind, payload in sorted(prims, key=lambda e: -e[0]):
        if kind == "edge":
            pa, pb = payload
            ua = _project_pinhole(camera, pa[None, :])[0]
            ub = _project_pinhole(camera, pb[None, :])[0]
            _draw_line(buf, ua, ub, EDGE_HALF_WIDTH, edge_color)
        else:
            (p,) = payload
            uv = _project_pinhole(camera, p[None, :])[0]
            _draw_disc(buf, uv, MARKER_RADIUS, marker_color)

    out = np.zeros_like(buf, dtype=np.uint8)
    touched = buf[..., 3].any(axis=1)
    if touched.any():
        rows = slice(int(np.argmax(touched)), int(len(touched) - np.argmax(touched[::-1])))
        region = buf[rows]
        out[rows, :, :3] = np.floor(region[..., :3] + 0.5).astype(np.uint8)
        out[rows, :, 3] = np.floor(region[..., 3] * np.float32(255.0) + 0.5).astype(np.uint8)
    return OverlayLayer(out, side=side)


def distort_overlay(layer: OverlayLayer, table: RemapTable) -> OverlayLayer:
    """Warp the rendered layer into the distorted display geometry; the
    alpha channel is resampled exactly like the color channels."""
    warped = remap(Frame(layer.pixels), table)
    return OverlayLayer(warped.pixels, side=layer.side, applied_alpha=layer.applied_alpha)


def blend(frame: Frame, layer: OverlayLayer, alpha: float) -> Frame:
    """Composite: out = (1 - alpha*a_pix) * frame + alpha*a_pix * layer.

    ``a_pix`` is the layer's own anti-aliasing coverage; output alpha is
    forced opaque.  Rounding is half-up.
    """
    if (frame.height, frame.width) != (layer.height, layer.width):
        raise ValueError("frame and layer dimensions disagree")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    out = frame.pixels.copy()
    out[..., 3] = 255
    # only pixels the layer actually covers need mixing
    covered = np.flatnonzero(layer.pixels[..., 3].ravel())
    if alpha > 0.0 and len(covered):
        lay = layer.pixels.reshape(-1, 4)[covered].astype(np.float32)
        base = frame.pixels.reshape(-1, 4)[covered, :3].astype(np.float32)
        weight = (np.float32(alpha) / 255.0) * lay[:, 3:4]
        mixed = base + weight * (lay[:, :3] - base)
        out.reshape(-1, 4)[covered, :3] = np.floor(mixed + np.float32(0.5)).astype(np.uint8)
    return Frame(out, frame.timestamp)


def compose_stereo(left: Frame, right: Frame, j, chain: KinematicChain,
                   model: ToolModel, hand_eye: Pose, alpha: float, rig,
                   left_table: RemapTable, right_table: RemapTable,
                   parallel: bool = False,
                   edge_color=EDGE_COLOR, marker_color=MARKER_COLOR):
    """Render, distort, and blend both sides from one hand-eye snapshot and
    one shared opacity; the sides are independent and may run concurrently."""

    def one(side: str):
        frame, table, intr = ((left, left_table, rig.left) if side == "left"
                              else (right, right_table, rig.right))
        side_tf = None if side == "left" else rig.right_from_left
        layer = render_tool(model, j, chain, hand_eye, intr, side_transform=side_tf,
                            edge_color=edge_color, marker_color=marker_color, side=side)
        layer = distort_overlay(layer, table)
        layer.applied_alpha = alpha
        return blend(frame, layer, alpha)

    if parallel:
        with ThreadPoolExecutor(max_workers=2) as pool:
            fut_l = pool.submit(one, "left")
            fut_r = pool.submit(one, "right")
            return fut_l.result(), fut_r.result()
    return one("left"), one("right")
