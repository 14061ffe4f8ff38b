"""Face-proxy renderer: shading, frame rasterization, cast shadows and compositing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import ndimage

from deglass.align import SimilarityTransform, WearingStyle, apply_transform, solve_similarity
from deglass.synth.face import FaceProxy
from deglass.synth.glasses import GlassesModel

SHADOW_MASK_THRESHOLD = 0.05


def rotation_from_euler(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rotation (radians) about y (yaw), then x (pitch), then z (roll)."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    Rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return Rz @ Rx @ Ry


@dataclass(frozen=True)
class Camera:
    """Pinhole camera. ``rotation`` maps world directions into camera axes
    (x right, y down, z forward); ``position`` is the optical centre in world units."""

    focal: float
    cx: float
    cy: float
    image_size: int
    position: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.diag([1.0, -1.0, -1.0]))

    @classmethod
    def framing(cls, image_size: int, distance: float = 6.0, center_y: float = 0.02,
                half_extent: float = 0.8, plane_z: float = 1.0) -> "Camera":
        """Camera on the +z axis looking at the head; ``half_extent`` world units
        at depth ``plane_z`` span half the image."""
        depth = distance - plane_z
        focal = 0.5 * image_size * depth / half_extent
        c = 0.5 * image_size
        return cls(focal, c, c, image_size, np.array([0.0, center_y, distance]))

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.position) @ self.rotation.T

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (N, 2) pixel coordinates (x, y) and (N,) depths."""
        pc = self.to_camera(points)
        z = pc[..., 2]
        uv = np.stack([self.focal * pc[..., 0] / z + self.cx, self.focal * pc[..., 1] / z + self.cy], -1)
        return uv, z

    def pixel_rays(self) -> np.ndarray:
        """World-space unit ray directions through pixel centres, shape (N, N, 3)."""
        n = self.image_size
        j, i = np.meshgrid(np.arange(n) + 0.5, np.arange(n) + 0.5)
        d_cam = np.stack([(j - self.cx) / self.focal, (i - self.cy) / self.focal, np.ones_like(j)], -1)
        d = d_cam @ self.rotation
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "focal": self.focal, "cx": self.cx, "cy": self.cy, "image_size": self.image_size,
            "position": self.position.tolist(), "rotation": self.rotation.reshape(-1).tolist(),
        }


@dataclass(frozen=True)
class PosedEllipsoid:
    """Head ellipsoid rotated by ``rotation`` about the origin."""

    semi_axes: np.ndarray
    rotation: np.ndarray

    def _local(self, v: np.ndarray) -> np.ndarray:
        return v @ self.rotation

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Ray/ellipsoid roots (t_near, t_far); NaN where the ray misses."""
        o = self._local(origins) / self.semi_axes
        d = self._local(dirs) / self.semi_axes
        a = np.sum(d * d, -1)
        b = 2.0 * np.sum(o * d, -1)
        c = np.sum(o * o, -1) - 1.0
        disc = b * b - 4 * a * c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t0 = np.where(hit, (-b - sq) / (2 * a), np.nan)
        t1 = np.where(hit, (-b + sq) / (2 * a), np.nan)
        return t0, t1

    def inside(self, points: np.ndarray) -> np.ndarray:
        q = self._local(points) / self.semi_axes
        return np.sum(q * q, -1) < 1.0

    def normals(self, points: np.ndarray) -> np.ndarray:
        q = self._local(points)
        n_local = q / self.semi_axes**2
        n = n_local @ self.rotation.T
        return n / np.linalg.norm(n, axis=-1, keepdims=True)


@dataclass(frozen=True)
class PosedFrame:
    """Frame segments in world coordinates with stroke widths in world units."""

    segments: np.ndarray
    widths: np.ndarray
    color: np.ndarray


@dataclass(frozen=True)
class SceneConfig:
    camera: Camera
    light_direction: np.ndarray
    head_pose: np.ndarray
    image_size: int = 64
    shadow_intensity: float = 0.5
    shadow_blur_sigma: float | None = None
    ambient: float = 0.35
    background: tuple = ((0.55, 0.6, 0.65), (0.35, 0.38, 0.42))
    noise_sigma: float = 0.01

    def __post_init__(self) -> None:
        L = np.asarray(self.light_direction, dtype=np.float64)
        if abs(np.linalg.norm(L) - 1.0) > 1e-9:
            raise ValueError("light_direction must be a unit vector")
        if self.image_size < 32:
            raise ValueError("image_size must be >= 32")
        if not 0.0 <= self.shadow_intensity <= 1.0:
            raise ValueError("shadow_intensity must lie in [0, 1]")
        object.__setattr__(self, "light_direction", L)

    @property
    def blur_sigma(self) -> float:
        if self.shadow_blur_sigma is None:
            return 1.5 * self.image_size / 64.0
        return float(self.shadow_blur_sigma)

    def to_dict(self) -> dict:
        return {
            "camera": self.camera.to_dict(),
            "light_direction": self.light_direction.tolist(),
            "head_pose": np.asarray(self.head_pose).reshape(-1).tolist(),
            "image_size": self.image_size,
            "shadow_intensity": self.shadow_intensity,
            "shadow_blur_sigma": self.blur_sigma,
            "ambient": self.ambient,
            "background": [list(c) for c in self.background],
            "noise_sigma": self.noise_sigma,
        }


def sample_scene(
    rng_seed: int,
    image_size: int = 64,
    intensity_range: tuple[float, float] = (0.35, 0.75),
    max_yaw_deg: float = 20.0,
) -> SceneConfig:
    """Random head pose and a frontal-hemisphere directional light."""
    rng = np.random.default_rng(rng_seed)
    yaw = np.deg2rad(rng.uniform(-max_yaw_deg, max_yaw_deg))
    pitch = np.deg2rad(rng.uniform(-10, 10))
    roll = np.deg2rad(rng.uniform(-8, 8))
    # light 15-45 degrees off the view axis, any azimuth biased upward
    off = np.deg2rad(rng.uniform(15, 45))
    az = rng.uniform(-np.pi, np.pi) if rng.uniform() < 0.35 else rng.uniform(0.2, np.pi - 0.2)
    L = np.array([np.sin(off) * np.cos(az), np.sin(off) * np.sin(az), np.cos(off)])
    top = rng.uniform(0.3, 0.8, 3)
    bottom = top * rng.uniform(0.5, 0.9)
    return SceneConfig(
        camera=Camera.framing(image_size),
        light_direction=L / np.linalg.norm(L),
        head_pose=rotation_from_euler(yaw, pitch, roll),
        image_size=image_size,
        shadow_intensity=float(rng.uniform(*intensity_range)),
        background=(tuple(top), tuple(bottom)),
    )


@dataclass
class FacePass:
    rgb: np.ndarray
    depth: np.ndarray
    coverage: np.ndarray


def shade_face(face: FaceProxy, scene: SceneConfig, rng_seed: int = 0) -> FacePass:
    """Lambert + ambient shading of the face proxy; background elsewhere."""
    cam = scene.camera
    n = scene.image_size
    dirs = cam.pixel_rays()
    origins = np.broadcast_to(cam.position, dirs.shape)
    head = PosedEllipsoid(face.semi_axes, scene.head_pose)
    t0, _ = head.intersect(origins, dirs)
    hit = np.isfinite(t0) & (t0 > 0)

    rows = np.linspace(0.0, 1.0, n)[:, None, None]
    top, bottom = (np.asarray(c) for c in scene.background)
    rgb = np.broadcast_to((1 - rows) * top + rows * bottom, (n, n, 3)).copy()
    depth = np.full((n, n), np.inf)

    pts = cam.position + t0[hit][:, None] * dirs[hit]
    normals = head.normals(pts)
    lambert = np.clip(normals @ scene.light_direction, 0.0, None)
    shade = scene.ambient + (1.0 - scene.ambient) * lambert
    albedo = face.albedo(pts @ scene.head_pose)
    rgb[hit] = albedo * shade[:, None]
    depth[hit] = cam.to_camera(pts)[:, 2]

    if scene.noise_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        rgb = rgb + rng.normal(0.0, scene.noise_sigma, rgb.shape)
    return FacePass(np.clip(rgb, 0.0, 1.0), depth, hit)


def pose_frame(glasses: GlassesModel, transform: SimilarityTransform, head_pose: np.ndarray,
               color_jitter=None) -> PosedFrame:
    segs, widths = glasses.segments()
    local = apply_transform(transform, segs)
    world = local @ np.asarray(head_pose).T
    color = glasses.frame_color if color_jitter is None else glasses.frame_color + color_jitter
    return PosedFrame(world, widths * transform.s, np.clip(color, 0.0, 1.0))


def _capsule_hits(uv0: np.ndarray, uv1: np.ndarray, radius: np.ndarray, image_size: int,
                  chunk: int = 64):
    """Yield (segment index, flat pixel index, param t) for pixel centres inside
    each 2D capsule. Only pixels in the capsule bounding box are tested."""
    n = image_size
    lo = np.floor(np.minimum(uv0, uv1) - radius[:, None] - 0.5).astype(int)
    hi = np.ceil(np.maximum(uv0, uv1) + radius[:, None] - 0.5).astype(int)
    lo = np.clip(lo, 0, n - 1)
    hi = np.clip(hi, -1, n - 1)
    for k in range(len(uv0)):
        if hi[k, 0] < lo[k, 0] or hi[k, 1] < lo[k, 1]:
            continue
        xs = np.arange(lo[k, 0], hi[k, 0] + 1) + 0.5
        ys = np.arange(lo[k, 1], hi[k, 1] + 1) + 0.5
        px, py = np.meshgrid(xs, ys)
        d = uv1[k] - uv0[k]
        dd = float(d @ d)
        if dd > 0:
            t = np.clip(((px - uv0[k, 0]) * d[0] + (py - uv0[k, 1]) * d[1]) / dd, 0.0, 1.0)
        else:
            t = np.zeros_like(px)
        qx = uv0[k, 0] + t * d[0] - px
        qy = uv0[k, 1] + t * d[1] - py
        inside = qx * qx + qy * qy <= radius[k] ** 2
        if not inside.any():
            continue
        iy = (py[inside] - 0.5).astype(int)
        ix = (px[inside] - 0.5).astype(int)
        yield k, iy * n + ix, t[inside]


def rasterize_frame(frame: PosedFrame, camera: Camera, face_depth: np.ndarray | None = None) -> np.ndarray:
    """Binary frame mask: pixels whose centre lies within half a stroke width of
    a projected segment at a depth nearer than the face surface."""
    n = camera.image_size
    mask = np.zeros(n * n, dtype=bool)
    p0, p1 = frame.segments[:, 0], frame.segments[:, 1]
    uv0, z0 = camera.project(p0)
    uv1, z1 = camera.project(p1)
    if np.all((z0 <= 0) & (z1 <= 0)):
        raise ValueError("frame lies entirely behind the camera")
    keep = (z0 > 0) & (z1 > 0)
    zmid = 0.5 * (z0 + z1)
    radius = 0.5 * frame.widths * camera.focal / np.where(keep, zmid, 1.0)
    fd = None if face_depth is None else face_depth.reshape(-1)
    idx = np.flatnonzero(keep)
    for k, pix, t in _capsule_hits(uv0[idx], uv1[idx], radius[idx], n):
        s = idx[k]
        if fd is None:
            mask[pix] = True
            continue
        # perspective-correct depth along the segment
        inv_z = (1 - t) / z0[s] + t / z1[s]
        vis = (1.0 / inv_z) < fd[pix]
        mask[pix[vis]] = True
    return mask.reshape(n, n)


def _subdivide(segments: np.ndarray, widths: np.ndarray, camera: Camera, max_px: float):
    uv0, _ = camera.project(segments[:, 0])
    uv1, _ = camera.project(segments[:, 1])
    lengths = np.linalg.norm(uv1 - uv0, axis=-1)
    counts = np.maximum(1, np.ceil(lengths / max_px).astype(int))
    pts, w, seg_id = [], [], []
    for k, c in enumerate(counts):
        t = np.linspace(0.0, 1.0, c + 1)[:, None]
        pts.append(segments[k, 0] * (1 - t) + segments[k, 1] * t)
        w.append(np.full(c + 1, widths[k]))
        seg_id.append(np.full(c + 1, k))
    return np.concatenate(pts), np.concatenate(w), np.concatenate(seg_id)


def shadow_coverage(frame: PosedFrame, light_direction: np.ndarray, head: PosedEllipsoid,
                    camera: Camera, max_px: float = 1.0) -> np.ndarray:
    """Hard (unblurred) shadow footprint of the frame on the visible, lit face."""
    n = camera.image_size
    L = np.asarray(light_direction, dtype=np.float64)
    pts, widths, seg_id = _subdivide(frame.segments, frame.widths, camera, max_px)
    dirs = np.broadcast_to(-L, pts.shape)
    t0, t1 = head.intersect(pts, dirs)
    outside = ~head.inside(pts)
    valid = outside & np.isfinite(t0) & (t0 >= 0)
    hits = pts + np.where(valid, t0, 0.0)[:, None] * dirs
    normals = head.normals(hits)
    to_cam = camera.position - hits
    valid &= np.sum(normals * to_cam, -1) > 0
    valid &= normals @ L > 0

    uv, z = camera.project(hits)
    valid &= z > 0
    radius = 0.5 * widths * camera.focal / np.where(valid, z, 1.0)

    # consecutive hits from the same segment form capsules; everything else a disc
    link = valid[:-1] & valid[1:] & (seg_id[:-1] == seg_id[1:])
    link &= np.linalg.norm(uv[1:] - uv[:-1], axis=-1) < 4.0
    a_idx = np.flatnonzero(link)
    disc_idx = np.flatnonzero(valid)
    uv0 = np.concatenate([uv[a_idx], uv[disc_idx]])
    uv1 = np.concatenate([uv[a_idx + 1], uv[disc_idx]])
    rad = np.concatenate([np.maximum(radius[a_idx], radius[a_idx + 1]), radius[disc_idx]])

    cov = np.zeros(n * n)
    for _, pix, _ in _capsule_hits(uv0, uv1, rad, n):
        cov[pix] = 1.0
    return cov.reshape(n, n)


def compute_shadow_map(frame: PosedFrame, light_direction, face: FaceProxy, camera: Camera,
                       head_pose: np.ndarray | None = None, intensity: float = 0.5,
                       blur_sigma: float = 1.5, face_coverage: np.ndarray | None = None) -> np.ndarray:
    """Attenuation in [0, 1]; the shadowed image is ``base * (1 - a)``."""
    L = np.asarray(light_direction, dtype=np.float64)
    if abs(np.linalg.norm(L) - 1.0) > 1e-9:
        raise ValueError("light_direction must be a unit vector")
    pose = np.eye(3) if head_pose is None else np.asarray(head_pose)
    head = PosedEllipsoid(face.semi_axes, pose)
    if intensity == 0:
        return np.zeros((camera.image_size,) * 2)
    cov = shadow_coverage(frame, L, head, camera)
    if blur_sigma > 0:
        cov = ndimage.gaussian_filter(cov, blur_sigma, mode="constant")
    if face_coverage is None:
        dirs = camera.pixel_rays()
        t0, _ = head.intersect(np.broadcast_to(camera.position, dirs.shape), dirs)
        face_coverage = np.isfinite(t0) & (t0 > 0)
    a = intensity * np.clip(cov, 0.0, 1.0) * face_coverage
    return np.clip(a, 0.0, 1.0)


def composite(face_rgb: np.ndarray, frame_rgb: np.ndarray, glasses_mask: np.ndarray,
              attenuation: np.ndarray, glasses: bool = True, shadow: bool = True) -> np.ndarray:
    """One visibility combination: shadow darkens the face, the frame is drawn on top."""
    img = face_rgb * (1.0 - attenuation[..., None]) if shadow else face_rgb.copy()
    if glasses:
        img = np.where(glasses_mask[..., None], frame_rgb, img)
    return img


@dataclass
class RenderSample:
    I: np.ndarray
    I_g: np.ndarray
    I_s: np.ndarray
    I_f: np.ndarray
    M_g: np.ndarray
    M_s: np.ndarray
    meta: dict[str, Any]
    attenuation: np.ndarray | None = None

    CHANNELS = ("I", "I_g", "I_s", "I_f", "M_g", "M_s")


def config_hash(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, default=_jsonable).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def render_sample(face: FaceProxy, glasses: GlassesModel, style: WearingStyle,
                  scene: SceneConfig, rng_seed: int = 0) -> RenderSample:
    targets = face.anchor_targets(style.floating_pair_index)
    transform, residual = solve_similarity(glasses.anchors, targets)
    cam = scene.camera

    base = shade_face(face, scene, rng_seed)
    frame = pose_frame(glasses, transform, scene.head_pose, style.color_jitter)
    M_g = rasterize_frame(frame, cam, base.depth)
    a = compute_shadow_map(frame, scene.light_direction, face, cam, scene.head_pose,
                           scene.shadow_intensity, scene.blur_sigma, base.coverage)
    M_s = a > SHADOW_MASK_THRESHOLD
    frame_rgb = frame.color

    meta = {
        "seed": int(rng_seed),
        "transform": transform.to_dict(),
        "alignment_residual": residual,
        "light_direction": scene.light_direction.tolist(),
        "style": style.to_dict(),
        "scene": scene.to_dict(),
        "glasses_family": glasses.family,
        "face_anchors": targets.tolist(),
        "glasses_anchors": glasses.anchors.tolist(),
    }
    return RenderSample(
        I=composite(base.rgb, frame_rgb, M_g, a, True, True),
        I_g=composite(base.rgb, frame_rgb, M_g, a, True, False),
        I_s=composite(base.rgb, frame_rgb, M_g, a, False, True),
        I_f=composite(base.rgb, frame_rgb, M_g, a, False, False),
        M_g=M_g.astype(np.uint8),
        M_s=M_s.astype(np.uint8),
        meta=meta,
        attenuation=a,
    )
