from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from deglass.align import AnchorSet

# Skin tone endpoints; proxies interpolate between them and jitter.
_SKIN_LIGHT = np.array([0.96, 0.80, 0.69])
_SKIN_DARK = np.array([0.42, 0.27, 0.19])


@dataclass(frozen=True)
class FaceFeatures:
    eye_y: float
    eye_dx: float
    eye_rx: float
    eye_ry: float
    iris_r: float
    iris_color: np.ndarray
    brow_gap: float
    brow_thickness: float
    hair_color: np.ndarray
    hairline_y: float
    nose_len: float
    mouth_y: float
    mouth_w: float
    mouth_h: float
    lip_color: np.ndarray


@dataclass(frozen=True)
class FaceProxy:
    """Ellipsoid head centred at the origin, facing +z, y up.

    ``temple_points`` holds (left, right); ``nose_pad_pairs`` is a (K, 2, 3)
    array of candidate (left, right) nose-pad contact points ordered from the
    top of the nose ridge downward. All anchors lie on the ellipsoid surface.
    """

    semi_axes: np.ndarray
    skin_color: np.ndarray
    texture_seed: int
    temple_points: np.ndarray
    nose_pad_pairs: np.ndarray
    features: FaceFeatures
    texture_waves: np.ndarray

    def anchor_targets(self, pair_index: int) -> AnchorSet:
        if not 0 <= pair_index < len(self.nose_pad_pairs):
            raise IndexError(
                f"pair index {pair_index} outside [0, {len(self.nose_pad_pairs)})"
            )
        pair = self.nose_pad_pairs[pair_index]
        return AnchorSet(np.vstack([self.temple_points, pair]))

    def surface_residual(self, points) -> np.ndarray:
        """|x^2/a^2 + y^2/b^2 + z^2/c^2 - 1| per point."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.abs(np.sum((p / self.semi_axes) ** 2, axis=1) - 1.0)

    def albedo(self, q: np.ndarray) -> np.ndarray:
        """Surface colour at head-local points ``q`` of shape (..., 3)."""
        x, y, z = q[..., 0], q[..., 1], q[..., 2]
        f = self.features
        a, b, c = self.semi_axes

        w = self.texture_waves
        phase = x[..., None] * w[:, 0] + y[..., None] * w[:, 1] + z[..., None] * w[:, 2] + w[:, 3]
        noise = np.sin(phase).mean(axis=-1)
        rgb = self.skin_color * (1.0 + 0.08 * noise)[..., None]
        rgb = np.broadcast_to(rgb, q.shape).copy()

        front = z > 0.0

        # cheeks: slight flush
        cheek = np.exp(-(((np.abs(x) - 0.45) / 0.18) ** 2 + ((y - f.eye_y + 0.35) / 0.15) ** 2))
        rgb[..., 0] += 0.05 * cheek
        rgb[..., 2] -= 0.02 * cheek

        # nose ridge shading and nostrils
        nose_top = f.eye_y - 0.05
        nose_bot = f.eye_y - f.nose_len
        ridge = front & (y < nose_top) & (y > nose_bot)
        shade = np.exp(-((np.abs(x) - 0.07) / 0.03) ** 2)
        rgb[ridge] *= (1.0 - 0.12 * shade[ridge])[..., None]
        for sx in (-1.0, 1.0):
            nostril = ((x - sx * 0.06) / 0.035) ** 2 + ((y - nose_bot) / 0.02) ** 2 < 1.0
            rgb[front & nostril] *= 0.55

        # mouth
        mouth = ((x / f.mouth_w) ** 2 + ((y - f.mouth_y) / f.mouth_h) ** 2) < 1.0
        rgb[front & mouth] = f.lip_color

        for sx in (-1.0, 1.0):
            ex = sx * f.eye_dx
            # brow arc above the eye
            u = (x - ex) / (1.2 * f.eye_rx)
            brow_y = f.eye_y + f.brow_gap + 0.04 * (1.0 - u**2)
            brow = front & (np.abs(u) < 1.0) & (np.abs(y - brow_y) < f.brow_thickness)
            rgb[brow] = f.hair_color
            # eye: sclera, iris, pupil
            d_eye = ((x - ex) / f.eye_rx) ** 2 + ((y - f.eye_y) / f.eye_ry) ** 2
            eye = front & (d_eye < 1.0)
            rgb[eye] = (0.93, 0.92, 0.90)
            r_iris = np.hypot(x - ex, y - f.eye_y)
            rgb[eye & (r_iris < f.iris_r)] = f.iris_color
            rgb[eye & (r_iris < 0.4 * f.iris_r)] = (0.03, 0.03, 0.03)

        rgb[y > f.hairline_y] = f.hair_color
        return np.clip(rgb, 0.0, 1.0)


def _on_ellipsoid_z(axes: np.ndarray, x: float, y: float) -> float:
    a, b, c = axes
    return float(c * np.sqrt(1.0 - (x / a) ** 2 - (y / b) ** 2))


def make_face_proxy(rng_seed: int, n_pad_pairs: int = 3, pad_spacing: float = 0.05) -> FaceProxy:
    """Sample a deterministic face proxy from ``rng_seed``."""
    if n_pad_pairs < 1:
        raise ValueError("n_pad_pairs must be >= 1")
    rng = np.random.default_rng(rng_seed)
    axes = np.array(
        [rng.uniform(0.86, 1.0), rng.uniform(1.15, 1.35), rng.uniform(0.95, 1.1)]
    )
    tone = rng.uniform()
    skin = (1 - tone) * _SKIN_LIGHT + tone * _SKIN_DARK + rng.uniform(-0.03, 0.03, 3)
    skin = np.clip(skin, 0.05, 1.0)

    eye_y = rng.uniform(0.08, 0.14)
    hair = rng.choice([0.08, 0.2, 0.35, 0.55]) * np.array([1.0, 0.8, 0.6]) + rng.uniform(0, 0.05, 3)
    features = FaceFeatures(
        eye_y=eye_y,
        eye_dx=rng.uniform(0.32, 0.39),
        eye_rx=rng.uniform(0.10, 0.13),
        eye_ry=rng.uniform(0.045, 0.06),
        iris_r=rng.uniform(0.035, 0.045),
        iris_color=rng.uniform(0.1, 0.45, 3) * np.array([0.9, 0.8, 1.0]),
        brow_gap=rng.uniform(0.14, 0.2),
        brow_thickness=rng.uniform(0.018, 0.03),
        hair_color=hair,
        hairline_y=rng.uniform(0.7, 0.85) * axes[1],
        nose_len=rng.uniform(0.38, 0.48),
        mouth_y=eye_y - rng.uniform(0.72, 0.8),
        mouth_w=rng.uniform(0.16, 0.22),
        mouth_h=rng.uniform(0.035, 0.055),
        lip_color=np.clip(skin * np.array([1.0, 0.6, 0.6]) + [0.05, 0.0, 0.0], 0, 1),
    )

    temple_y = eye_y + rng.uniform(0.0, 0.06)
    temple_z = rng.uniform(0.3, 0.4) * axes[2]
    tx = axes[0] * np.sqrt(1.0 - (temple_y / axes[1]) ** 2 - (temple_z / axes[2]) ** 2)
    temples = np.array([[-tx, temple_y, temple_z], [tx, temple_y, temple_z]])

    pad_x = rng.uniform(0.1, 0.13)
    top = eye_y - rng.uniform(0.06, 0.1)
    pairs = []
    for k in range(n_pad_pairs):
        py = top - k * pad_spacing
        pz = _on_ellipsoid_z(axes, pad_x, py)
        pairs.append([[-pad_x, py, pz], [pad_x, py, pz]])

    waves = np.column_stack(
        [rng.normal(0.0, 9.0, (6, 3)), rng.uniform(0.0, 2 * np.pi, 6)]
    )
    return FaceProxy(
        semi_axes=axes,
        skin_color=skin,
        texture_seed=int(rng_seed),
        temple_points=temples,
        nose_pad_pairs=np.asarray(pairs, dtype=np.float64),
        features=features,
        texture_waves=waves,
    )
