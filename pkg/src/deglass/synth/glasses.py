from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from deglass.align import AnchorSet

SHAPE_FAMILIES = ("round", "rectangular", "cat_eye")
STROKE_RANGE = (0.07, 0.12)

# Frame base colours; sampled then perturbed.
_PALETTE = np.array(
    [
        [0.05, 0.05, 0.05],
        [0.25, 0.12, 0.05],
        [0.55, 0.08, 0.08],
        [0.08, 0.12, 0.45],
        [0.75, 0.62, 0.25],
        [0.6, 0.6, 0.62],
        [0.1, 0.35, 0.15],
    ]
)


@dataclass(frozen=True)
class Polyline:
    points: np.ndarray
    width: float
    closed: bool = False
    name: str = ""

    def segments(self) -> np.ndarray:
        pts = self.points
        if self.closed:
            pts = np.vstack([pts, pts[:1]])
        return np.stack([pts[:-1], pts[1:]], axis=1)


@dataclass(frozen=True)
class GlassesModel:
    """Frame polylines in glasses-local coordinates.

    The lens plane is z = 0, the wearer sits toward -z, y is up. Lenses are
    always clear, so only the frame contributes pixels.
    """

    family: str
    polylines: tuple[Polyline, ...]
    frame_color: np.ndarray
    anchors: AnchorSet

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (S, 2, 3) segment endpoints and (S,) stroke widths."""
        segs, widths = [], []
        for pl in self.polylines:
            s = pl.segments()
            segs.append(s)
            widths.append(np.full(len(s), pl.width))
        return np.concatenate(segs), np.concatenate(widths)

    def with_stroke_scale(self, factor: float) -> "GlassesModel":
        lines = tuple(
            Polyline(pl.points, pl.width * factor, pl.closed, pl.name) for pl in self.polylines
        )
        return GlassesModel(self.family, lines, self.frame_color, self.anchors)


def _lens_loop(family: str, rx: float, ry: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Lens outline for the right lens (+x side), centred at the origin; outer edge at +x."""
    theta = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    c, s = np.cos(theta), np.sin(theta)
    if family == "round":
        x, y = rx * c, ry * s
    elif family == "rectangular":
        p = rng.uniform(4.0, 7.0)
        x = rx * np.sign(c) * np.abs(c) ** (2.0 / p)
        y = ry * np.sign(s) * np.abs(s) ** (2.0 / p)
    elif family == "cat_eye":
        x, y = rx * c, ry * s
        lift = rng.uniform(0.25, 0.45) * ry
        outer_top = np.clip(c, 0.0, None) ** 2 * np.clip(s, 0.0, None)
        y = y + lift * outer_top
        # flatten the lower-inner region
        y = np.where(s < 0, y * (1.0 - 0.15 * np.clip(-c, 0.0, None)), y)
    else:
        raise ValueError(f"unknown shape family {family!r}")
    return np.column_stack([x, y, np.zeros(n)])


def make_glasses(
    rng_seed: int,
    stroke_range: tuple[float, float] = STROKE_RANGE,
    n_loop: int = 40,
) -> GlassesModel:
    """Sample a parametric frame: two lens loops, bridge, nose pads and temple arms."""
    lo, hi = stroke_range
    if not 0 < lo <= hi:
        raise ValueError(f"invalid stroke range {stroke_range}")
    rng = np.random.default_rng(rng_seed)
    family = SHAPE_FAMILIES[int(rng.integers(len(SHAPE_FAMILIES)))]

    rx = rng.uniform(0.2, 0.27)
    ry = rng.uniform(0.14, 0.2) if family != "round" else rx * rng.uniform(0.8, 0.95)
    bridge_half = rng.uniform(0.06, 0.1)
    cx = rx + bridge_half
    width = float(np.clip(rng.uniform(lo, hi), lo, hi))
    arm_width = float(np.clip(width * rng.uniform(0.7, 1.0), lo, hi))
    pad_width = max(lo, 0.6 * width)

    base = _lens_loop(family, rx, ry, n_loop, rng)
    right = base + [cx, 0.0, 0.0]
    left = base * [-1.0, 1.0, 1.0] + [-cx, 0.0, 0.0]

    # vertex indices: 0 is the outer edge (theta = 0), n/2 the inner edge
    half = n_loop // 2
    inner_top = half - n_loop // 16
    inner_low = half + n_loop // 8
    outer_hinge = n_loop // 24

    arch = rng.uniform(0.0, 0.04)
    b0, b1 = left[inner_top], right[inner_top]
    mid = 0.5 * (b0 + b1) + [0.0, arch, 0.0]
    bridge = np.array([b0, mid, b1])

    pad_x = rng.uniform(0.09, 0.13)
    pad_y = -ry * rng.uniform(0.4, 0.55)
    pad_z = -rng.uniform(0.08, 0.14)
    pad_l = np.array([-pad_x, pad_y, pad_z])
    pad_r = np.array([pad_x, pad_y, pad_z])

    temple_x = rng.uniform(0.82, 0.95)
    temple_y = rng.uniform(0.0, 0.06)
    arm_len = -pad_z + rng.uniform(0.55, 0.7)
    arms = []
    for side, loop in ((-1.0, left), (1.0, right)):
        hinge = loop[outer_hinge]
        bend = np.array([side * temple_x, hinge[1], -0.08])
        end = np.array([side * temple_x, temple_y, -arm_len])
        arms.append(np.array([hinge, bend, 0.5 * (bend + end), end]))

    polylines = (
        Polyline(left, width, closed=True, name="lens_left"),
        Polyline(right, width, closed=True, name="lens_right"),
        Polyline(bridge, width, name="bridge"),
        Polyline(np.array([left[inner_low], pad_l]), pad_width, name="pad_left"),
        Polyline(np.array([right[inner_low], pad_r]), pad_width, name="pad_right"),
        Polyline(arms[0], arm_width, name="arm_left"),
        Polyline(arms[1], arm_width, name="arm_right"),
    )
    color = _PALETTE[int(rng.integers(len(_PALETTE)))] + rng.uniform(-0.05, 0.05, 3)
    anchors = AnchorSet(np.array([arms[0][-1], arms[1][-1], pad_l, pad_r]))
    return GlassesModel(family, polylines, np.clip(color, 0.0, 1.0), anchors)
