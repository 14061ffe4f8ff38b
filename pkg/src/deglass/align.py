"""Four-anchor similarity registration used to seat eyeglasses on a face.

Anchor order is fixed everywhere in the package:
(left temple, right temple, left nose pad, right nose pad), where "left" is
the -x side of the model frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ANCHOR_NAMES = ("temple_left", "temple_right", "nose_left", "nose_right")


class DegenerateAnchorsError(ValueError):
    """Raised when the source anchors do not span at least a line pair."""


@dataclass(frozen=True)
class AnchorSet:
    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (4, 3):
            raise ValueError(f"AnchorSet needs 4x3 points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("AnchorSet points must be finite")
        object.__setattr__(self, "points", pts)

    def permuted(self, order) -> "AnchorSet":
        return AnchorSet(self.points[list(order)])

    def tolist(self) -> list[list[float]]:
        return self.points.tolist()


@dataclass(frozen=True)
class SimilarityTransform:
    """x -> s * R @ x + t."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    s: float = 1.0

    def __post_init__(self) -> None:
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not self.s > 0:
            raise ValueError(f"scale must be positive, got {self.s}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", float(self.s))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.s * self.R
        T[:3, 3] = self.t
        return T

    def inverse(self) -> "SimilarityTransform":
        Rinv = self.R.T
        return SimilarityTransform(Rinv, -(Rinv @ self.t) / self.s, 1.0 / self.s)

    def to_dict(self) -> dict:
        return {"R": self.R.reshape(-1).tolist(), "t": self.t.tolist(), "s": self.s}

    @classmethod
    def from_dict(cls, d: dict) -> "SimilarityTransform":
        return cls(np.asarray(d["R"], dtype=np.float64).reshape(3, 3), d["t"], d["s"])


def compose(outer: SimilarityTransform, inner: SimilarityTransform) -> SimilarityTransform:
    """Return the transform equal to applying ``inner`` first, then ``outer``."""
    return SimilarityTransform(
        outer.R @ inner.R,
        outer.s * (outer.R @ inner.t) + outer.t,
        outer.s * inner.s,
    )


def apply_transform(T: SimilarityTransform, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    flat = pts.reshape(-1, 3)
    out = T.s * flat @ T.R.T + T.t
    return out.reshape(pts.shape)


def alignment_energy(T: SimilarityTransform, source, target) -> float:
    """Sum of squared distances between transformed source anchors and targets."""
    src = source.points if isinstance(source, AnchorSet) else np.asarray(source, float)
    dst = target.points if isinstance(target, AnchorSet) else np.asarray(target, float)
    diff = apply_transform(T, src) - dst
    return float(np.sum(diff * diff))


def solve_similarity(
    glasses_anchors: AnchorSet,
    face_targets: AnchorSet,
    rank_tol: float = 1e-9,
) -> tuple[SimilarityTransform, float]:
    """Closed-form least-squares similarity from glasses anchors onto face anchors.

    Umeyama's solution: SVD of the cross-covariance, with the last singular
    direction flipped when needed so the rotation is proper.

    Returns ``(transform, residual)`` where residual is the minimized sum of
    squared anchor distances.
    """
    A = glasses_anchors.points
    V = face_targets.points
    n = A.shape[0]

    mu_a = A.mean(axis=0)
    mu_v = V.mean(axis=0)
    da = A - mu_a
    dv = V - mu_v

    sv_a = np.linalg.svd(da, compute_uv=False)
    if sv_a[0] == 0.0 or sv_a[1] <= rank_tol * sv_a[0]:
        raise DegenerateAnchorsError(
            f"glasses anchors are collinear or coincident (singular values {sv_a.tolist()})"
        )

    cov = dv.T @ da / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[-1] = -1.0

    R = (U * S) @ Vt
    var_a = np.sum(da * da) / n
    s = float(np.dot(D, S) / var_a)
    if not s > 0:
        raise DegenerateAnchorsError(f"non-positive optimal scale {s}; targets are degenerate")
    t = mu_v - s * R @ mu_a

    T = SimilarityTransform(R, t, s)
    return T, alignment_energy(T, A, V)


@dataclass(frozen=True)
class WearingStyle:
    floating_pair_index: int
    color_jitter: np.ndarray

    def to_dict(self) -> dict:
        return {
            "floating_pair_index": int(self.floating_pair_index),
            "color_jitter": np.asarray(self.color_jitter).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WearingStyle":
        return cls(int(d["floating_pair_index"]), np.asarray(d["color_jitter"], dtype=np.float64))


def sample_wearing_style(face, rng_seed: int, color_jitter: float = 0.08) -> WearingStyle:
    """Pick a nose-pad candidate pair uniformly and a frame color perturbation."""
    n_pairs = len(face.nose_pad_pairs)
    if n_pairs == 0:
        raise ValueError("face proxy has no candidate nose-pad pairs")
    rng = np.random.default_rng(rng_seed)
    index = int(rng.integers(n_pairs))
    jitter = rng.uniform(-color_jitter, color_jitter, size=3)
    return WearingStyle(index, jitter)
