"""Emission-absorption volume renderer over surface-aligned fields.

Rays are marched in density space only: every sample is projected onto the
posed mesh, samples farther than ``h0`` from the surface get zero density
without touching the field, and the rest are evaluated in ``(s_c, h, d*)``.
"""
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _accel, kernels, kernels_np
from .fields import QueryBatch
from .projection import projector_for
from .surfcoord import canonical_points, face_frames, view_features

DEFAULT_SAMPLES = 64
DEFAULT_H0 = 0.2


class CameraError(ValueError):
    pass


@dataclass(frozen=True)
class RenderConfig:
    samples_per_ray: int = DEFAULT_SAMPLES
    h0: float = DEFAULT_H0
    near: float = None
    far: float = None
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    jitter: bool = True
    workers: int = 1

    def __post_init__(self):
        if int(self.samples_per_ray) != self.samples_per_ray or self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be an integer >= 2")
        if not self.h0 > 0:
            raise ValueError("h0 must be positive")
        if (self.near is None) != (self.far is None):
            raise ValueError("give both near and far, or neither")
        if self.near is not None and not self.near < self.far:
            raise ValueError("near must be smaller than far")
        if len(self.background) != 3:
            raise ValueError("background must be an RGB triple")


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; +z looks forward, +x right, +y down (pixel rows)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_from_camera: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.world_from_camera, dtype=np.float64)
        if m.shape == (4, 4):
            m = m[:3]
        if m.shape != (3, 4) or not np.isfinite(m).all():
            raise CameraError("world_from_camera must be a finite 3x4 matrix")
        if not (self.fx > 0 and self.fy > 0):
            raise CameraError("focal lengths must be positive")
        if int(self.width) != self.width or int(self.height) != self.height \
                or self.width < 1 or self.height < 1:
            raise CameraError("width and height must be positive integers")
        if abs(np.linalg.det(m[:, :3])) < 1e-12:
            raise CameraError("camera rotation is singular")
        object.__setattr__(self, "world_from_camera", m)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def origin(self):
        return self.world_from_camera[:, 3]

    def row_rays(self, row):
        """Origins and unit directions for the pixels of one image row."""
        u = np.arange(self.width) + 0.5
        v = np.full(self.width, row + 0.5)
        d_cam = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones(self.width)], axis=1)
        d = d_cam @ self.world_from_camera[:, :3].T
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.broadcast_to(self.origin, d.shape), d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                       d["width"], d["height"], d["world_from_camera"])
        except KeyError as e:
            raise CameraError(f"camera is missing {e.args[0]!r}") from None
        except (TypeError, ValueError) as e:
            raise CameraError(f"bad camera: {e}") from None

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def look_at(cls, eye, target, up=(0, 0, 1), width=64, height=64, fov_deg=40.0):
        """Convenience constructor with square pixels and a centred principal point."""
        eye = np.asarray(eye, dtype=float)
        f = np.asarray(target, dtype=float) - eye
        f /= np.linalg.norm(f)
        r = np.cross(f, up)
        r /= np.linalg.norm(r)
        down = np.cross(f, r)
        fx = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        m = np.column_stack([r, down, f, eye])
        return cls(fx, fx, width / 2, height / 2, width, height, m)

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "world_from_camera": self.world_from_camera.tolist()}


def ray_box(origins, dirs, lo, hi):
    """Slab test; returns ``(t_near, t_far, hit)`` with ``t_near`` clamped at 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    tmin = np.maximum(tmin, 0.0)
    return tmin, tmax, tmax > tmin


def composite_rays(sigma, rgb, delta, background):
    """Batched quadrature: ``(color, opacity, transmittance)`` per row."""
    impl = kernels if _accel.backend() == "numba" else kernels_np
    return impl.composite(np.ascontiguousarray(sigma, dtype=np.float64),
                          np.ascontiguousarray(rgb, dtype=np.float64),
                          np.ascontiguousarray(delta, dtype=np.float64),
                          np.asarray(background, dtype=np.float64))


def composite_ray(samples, background):
    """``samples`` is a list of ``(RadianceSample, delta)``; returns ``(rgb, opacity, T_final)``."""
    if not samples:
        return np.asarray(background, dtype=float).copy(), 0.0, 1.0
    sigma = np.array([[s.density for s, _ in samples]])
    rgb = np.array([[s.color for s, _ in samples]])
    delta = np.array([[float(d) for _, d in samples]])
    if np.any(delta <= 0):
        raise ValueError("segment lengths must be positive")
    c, o, t = composite_rays(sigma, rgb, delta, background)
    return c[0], float(o[0]), float(t[0])


@dataclass
class RenderResult:
    """Rendered image plus per-pixel opacity, leftover transmittance and the
    expected ray termination distance (nan where nothing was hit)."""

    image: np.ndarray
    opacity: np.ndarray
    transmittance: np.ndarray
    fallback_count: int
    sample_count: int
    depth: np.ndarray = None

    @property
    def mean_opacity(self):
        return float(self.opacity.mean()) if self.opacity.size else 0.0

    def to_uint8(self):
        return to_uint8(self.image)

    def stats(self):
        return {"fallback_count": int(self.fallback_count), "mean_opacity": self.mean_opacity,
                "samples": int(self.sample_count)}


class _Scene:
    def __init__(self, pair, bvh, field, cfg):
        self.pair = pair
        self.field = field
        self.cfg = cfg
        self.proj = projector_for(pair.posed, bvh)
        self.frames = face_frames(pair.posed)
        lo, hi = pair.posed.bounds()
        self.lo = lo - cfg.h0
        self.hi = hi + cfg.h0

    def shade_points(self, pts, dirs):
        """Colors and densities for sample points with their ray directions."""
        n = len(pts)
        rgb = np.zeros((n, 3))
        sigma = np.zeros(n)
        res = self.proj.project(pts, cull=self.cfg.h0)
        live = np.nonzero(~res.culled & (np.abs(res.height) <= self.cfg.h0))[0]
        n_fallback = int(res.fallback.sum())
        if live.size:
            face = res.face[live]
            q = QueryBatch(canonical_points(self.pair, face, res.bary[live]), res.height[live],
                           view_features(dirs[live], self.frames[face]), face, res.fallback[live])
            c, s = self.field.evaluate(q)
            rgb[live] = np.clip(c, 0.0, 1.0)
            sigma[live] = s
        return rgb, sigma, n_fallback

    def render_row(self, cam, row):
        cfg = self.cfg
        S = cfg.samples_per_ray
        w = cam.width
        o, d = cam.row_rays(row)
        if cfg.near is None:
            t0, t1, hit = ray_box(o, d, self.lo, self.hi)
        else:
            t0 = np.full(w, float(cfg.near))
            t1 = np.full(w, float(cfg.far))
            hit = np.ones(w, bool)
        if cfg.jitter:
            u = np.random.default_rng([cfg.seed, row]).random((w, S))
        else:
            u = np.full((w, S), 0.5)
        color = np.tile(np.asarray(cfg.background, dtype=float), (w, 1))
        opacity = np.zeros(w)
        trans = np.ones(w)
        depth = np.full(w, np.nan)
        idx = np.nonzero(hit)[0]
        if not idx.size:
            return color, opacity, trans, depth, 0
        delta = ((t1[idx] - t0[idx]) / S)[:, None]
        t = t0[idx, None] + (np.arange(S)[None, :] + u[idx]) * delta
        pts = o[idx, None, :] + t[..., None] * d[idx, None, :]
        dirs = np.repeat(d[idx], S, axis=0)
        rgb, sigma, nfb = self.shade_points(pts.reshape(-1, 3), dirs)
        c, op, tr = composite_rays(sigma.reshape(-1, S), rgb.reshape(-1, S, 3),
                                   np.broadcast_to(delta, (len(idx), S)), cfg.background)
        color[idx], opacity[idx], trans[idx] = c, op, tr
        tau = sigma.reshape(-1, S) * delta
        before = np.cumsum(tau, axis=1) - tau
        wts = np.exp(-before) * -np.expm1(-tau)
        with np.errstate(invalid="ignore", divide="ignore"):
            depth[idx] = np.where(op > 0, (wts * t).sum(axis=1) / op, np.nan)
        return color, opacity, trans, depth, nfb


def render(pair, bvh, field, camera, cfg=None):
    """Render ``field`` on ``pair`` through ``camera``.

    Deterministic given ``cfg.seed``: each row draws its jitter from its own
    generator, so the result does not depend on ``cfg.workers``.
    """
    cfg = cfg or RenderConfig()
    scene = _Scene(pair, bvh, field, cfg)
    H, W = camera.height, camera.width
    image = np.empty((H, W, 3))
    opacity = np.empty((H, W))
    trans = np.empty((H, W))
    depth = np.empty((H, W))
    fallback = 0

    def do(row):
        return row, scene.render_row(camera, row)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            rows = list(ex.map(do, range(H)))
    else:
        rows = map(do, range(H))
    for row, (c, o, t, z, nfb) in rows:
        image[row], opacity[row], trans[row], depth[row] = c, o, t, z
        fallback += nfb
    return RenderResult(image, opacity, trans, fallback, H * W * cfg.samples_per_ray, depth)


def to_uint8(image):
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, image):
    """Binary P6; float images in [0, 1] are quantised, uint8 written as is."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = to_uint8(img)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError("only 8-bit binary PPM (P6) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    body = data[pos + 1:pos + 1 + w * h * 3]
    if len(body) != w * h * 3:
        raise ValueError("truncated PPM body")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()
