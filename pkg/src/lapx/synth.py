"""Synthetic stick-figure dataset.

Each sample is an articulated figure rendered as anti-aliased colored line
segments with a disc head, over a smoothed-noise background.  Joints are
the segment endpoints.  The default 8-keypoint skeleton is

    0 head, 1 neck, 2 left hip, 3 right hip,
    4 left hand, 5 right hand, 6 left foot, 7 right foot

with flip pairs (2,3), (4,5), (6,7).  The left and right limbs get warm and
cool tints so sides are visually distinguishable.  The PCKh norm is the
head-neck distance.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .codec import PoseAnnotation

__all__ = ["TrainSample", "synth_dataset", "flip_pairs_for", "DEFAULT_FLIP_PAIRS"]

DEFAULT_FLIP_PAIRS = ((2, 3), (4, 5), (6, 7))


@dataclasses.dataclass
class TrainSample:
    image: np.ndarray          # (3, H, W) float32 in [0, 1]
    annotation: PoseAnnotation


def flip_pairs_for(num_keypoints: int) -> tuple:
    return tuple((a, b) for a, b in DEFAULT_FLIP_PAIRS if b < num_keypoints)


def _rot(v, angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def _skeleton(rng, h, w, num_keypoints):
    """Sample joint positions, in (x, y) pixels.  Returns (joints, segments,
    head_radius) where segments are (index_a, index_b, half_thickness)."""
    scale = min(h, w) / 64.0
    for _ in range(20):
        pelvis = np.array([w / 2, h * 0.55]) + rng.uniform(-5, 5, 2) * scale
        body = rng.uniform(-0.45, 0.45)            # lean, radians
        up = _rot(np.array([0.0, -1.0]), body)
        down = -up
        torso = rng.uniform(13, 17) * scale
        neck = pelvis + torso * up
        head = neck + rng.uniform(9, 12) * scale * _rot(up, rng.uniform(-0.2, 0.2))
        perp = _rot(up, np.pi / 2)                 # anatomical left
        spread = rng.uniform(4, 7) * scale
        l_hip = pelvis + spread * perp
        r_hip = pelvis - spread * perp
        arm = rng.uniform(10, 15) * scale
        l_hand = neck + arm * _rot(down, rng.uniform(0.3, 1.3))
        r_hand = neck + arm * _rot(down, -rng.uniform(0.3, 1.3))
        leg = rng.uniform(12, 17) * scale
        l_foot = l_hip + leg * _rot(down, rng.uniform(-0.15, 0.6))
        r_foot = r_hip + leg * _rot(down, -rng.uniform(-0.15, 0.6))
        joints = [head, neck, l_hip, r_hip, l_hand, r_hand, l_foot, r_foot]
        pts = np.array(joints)
        if (pts[:, 0].min() >= 2 and pts[:, 0].max() <= w - 3
                and pts[:, 1].min() >= 2 and pts[:, 1].max() <= h - 3):
            break
    # extra keypoints beyond 8 are spaced along the torso
    for i in range(8, num_keypoints):
        t = (i - 7) / (num_keypoints - 6)
        joints.append(neck + t * (pelvis - neck))
    joints = np.array(joints[:num_keypoints])
    segments = [(1, 2, 1.0), (1, 3, 1.0)]          # neck to hips (torso)
    if num_keypoints > 4:
        segments += [(1, 4, 0.8), (1, 5, 0.8)]     # arms
    if num_keypoints > 6:
        segments += [(2, 6, 0.9), (3, 7, 0.9)]     # legs
    return joints, segments, 3.2 * scale


# per-segment RGB colors, keyed by the far joint; left limbs warm, right cool
_COLORS = {
    0: (0.95, 0.95, 0.90),   # head
    2: (0.95, 0.55, 0.35),   # left hip
    3: (0.35, 0.60, 0.95),   # right hip
    4: (0.95, 0.75, 0.30),   # left hand
    5: (0.30, 0.80, 0.95),   # right hand
    6: (0.90, 0.40, 0.55),   # left foot
    7: (0.45, 0.45, 0.95),   # right foot
}


def _background(rng, h, w):
    coarse = rng.uniform(0.0, 1.0, (max(h // 8, 1), max(w // 8, 1), 3))
    img = np.repeat(np.repeat(coarse, 8, axis=0), 8, axis=1)[:h, :w]
    # crude blur: average the four half-cell shifts
    for axis in (0, 1):
        img = 0.5 * (img + np.roll(img, 4, axis=axis))
    return (0.08 + 0.22 * img).astype(np.float32)


def _draw_segment(img, a, b, half_width, color):
    h, w, _ = img.shape
    ys, xs = np.mgrid[0:h, 0:w]
    p = np.stack([xs, ys], axis=-1).astype(np.float64)
    ab = b - a
    denom = float(ab @ ab)
    t = ((p - a) @ ab) / denom if denom > 1e-9 else np.zeros((h, w))
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[..., None] * ab
    d = np.sqrt(((p - closest) ** 2).sum(-1))
    alpha = np.clip(1.0 + half_width - d, 0.0, 1.0)
    for c in range(3):
        img[:, :, c] = np.maximum(img[:, :, c], (alpha * color[c]).astype(np.float32))


def _draw_disc(img, center, radius, color):
    h, w, _ = img.shape
    ys, xs = np.mgrid[0:h, 0:w]
    d = np.sqrt((xs - center[0]) ** 2 + (ys - center[1]) ** 2)
    alpha = np.clip(1.0 + radius - d, 0.0, 1.0)
    for c in range(3):
        img[:, :, c] = np.maximum(img[:, :, c], (alpha * color[c]).astype(np.float32))


def render_figure(rng, hw, num_keypoints):
    """Returns (image (3,H,W) float32, joints (K,2) float array)."""
    h, w = hw
    joints, segments, head_r = _skeleton(rng, h, w, num_keypoints)
    img = _background(rng, h, w)
    torso_color = (0.55, 0.90, 0.45)
    for ia, ib, width in segments:
        color = _COLORS.get(ib, torso_color)
        _draw_segment(img, joints[ia], joints[ib], width, color)
    for i in range(8, num_keypoints):
        _draw_segment(img, joints[1], joints[i], 0.9, torso_color)
    _draw_disc(img, joints[0], head_r, _COLORS[0])
    return np.ascontiguousarray(img.transpose(2, 0, 1)), joints


def synth_dataset(n: int, hw: tuple, num_keypoints: int = 8, seed: int = 0):
    """Deterministic list of n TrainSamples; roughly 10% of joints carry
    v=0 (annotated-occluded)."""
    if num_keypoints < 4:
        raise ValueError(f"need at least 4 keypoints, got {num_keypoints}")
    rng = np.random.default_rng(seed)
    h, w = hw
    pairs = flip_pairs_for(num_keypoints)
    samples = []
    for _ in range(n):
        img, pts = render_figure(rng, hw, num_keypoints)
        vis = (rng.uniform(size=num_keypoints) >= 0.1).astype(np.float32)
        in_frame = ((pts[:, 0] >= 0) & (pts[:, 0] <= w - 1)
                    & (pts[:, 1] >= 0) & (pts[:, 1] <= h - 1))
        vis *= in_frame
        joints = np.concatenate([pts, vis[:, None]], axis=1).astype(np.float32)
        norm = float(np.linalg.norm(pts[0] - pts[1]))
        samples.append(TrainSample(img, PoseAnnotation(joints, norm, pairs)))
    return samples
