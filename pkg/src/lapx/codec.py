"""Heatmap encoding and decoding plus test-time post-processing.

Joints live in image-pixel coordinates; heatmaps are quarter resolution.
Encoding drops an unnormalized Gaussian (peak exactly 1.0) on the nearest
heatmap pixel; decoding takes the argmax and optionally applies a
quarter-pixel shift toward the stronger neighbor.  The flip-merge routine
implements the flip-test / heatmap-shift combination in heatmap space.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

__all__ = [
    "PoseAnnotation", "HeatmapSet",
    "encode_heatmaps", "encode_batch", "decode_heatmaps", "flip_merge",
    "annotations_to_json", "annotations_from_json",
    "load_annotation_file", "save_annotation_file",
]


@dataclasses.dataclass
class PoseAnnotation:
    """joints: (K,3) array of (x, y, v); v > 0 means annotated-visible.
    norm: the distance that scales keypoint-error thresholds (head-segment
    length or sqrt of object area).  score: optional detection confidence.
    """

    joints: np.ndarray
    norm: float
    flip_pairs: tuple = ()
    score: float | None = None

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float32).reshape(-1, 3)
        if not (self.norm > 0):
            raise ValueError(f"norm must be positive, got {self.norm}")
        k = self.joints.shape[0]
        for a, b in self.flip_pairs:
            if a == b or not (0 <= a < k and 0 <= b < k):
                raise ValueError(f"bad flip pair ({a}, {b}) for {k} joints")

    @property
    def num_joints(self) -> int:
        return self.joints.shape[0]

    def visible(self) -> np.ndarray:
        return self.joints[:, 2] > 0


@dataclasses.dataclass
class HeatmapSet:
    maps: np.ndarray        # (K, h, w) or (N, K, h, w)
    sigma: float


def _nearest_pixel(x: float) -> int:
    return int(np.floor(x + 0.5))


def encode_heatmaps(ann: PoseAnnotation, hw: tuple, sigma: float):
    """Returns (HeatmapSet with (K,h,w) maps, vis_mask of K booleans).

    A joint whose nearest pixel falls outside the map, or with v=0, yields
    an all-zero map and a false mask entry.
    """
    if not (sigma > 0):
        raise ValueError(f"sigma must be positive, got {sigma}")
    h, w = hw
    k = ann.num_joints
    maps = np.zeros((k, h, w), dtype=np.float32)
    vis = np.zeros(k, dtype=bool)
    ys = np.arange(h, dtype=np.float32)[:, None]
    xs = np.arange(w, dtype=np.float32)[None, :]
    inv = 1.0 / (2.0 * sigma * sigma)
    for j in range(k):
        x, y, v = ann.joints[j]
        if v <= 0:
            continue
        cx, cy = _nearest_pixel(x), _nearest_pixel(y)
        if not (0 <= cx < w and 0 <= cy < h):
            continue
        maps[j] = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) * inv)
        vis[j] = True
    return HeatmapSet(maps, sigma), vis


def encode_batch(anns, hw, sigma):
    """Stack per-annotation encodings: returns ((N,K,h,w) maps, (N,K) vis)."""
    maps, vis = [], []
    for ann in anns:
        hm, m = encode_heatmaps(ann, hw, sigma)
        maps.append(hm.maps)
        vis.append(m)
    return np.stack(maps), np.stack(vis)


def _quarter_shift(m: np.ndarray, py: int, px: int):
    h, w = m.shape
    dx = 0.0
    if 0 < px < w - 1:
        right, left = m[py, px + 1], m[py, px - 1]
        if right > left:
            dx = 0.25
        elif left > right:
            dx = -0.25
    dy = 0.0
    if 0 < py < h - 1:
        down, up = m[py + 1, px], m[py - 1, px]
        if down > up:
            dy = 0.25
        elif up > down:
            dy = -0.25
    return dx, dy


def decode_heatmaps(hm: HeatmapSet, quarter_offset: bool = True) -> np.ndarray:
    """(K,h,w) maps -> (K,3) rows of (x, y, score).

    The peak is the first-occurrence argmax; the optional quarter-pixel
    offset moves toward the strictly larger axis neighbor and leaves
    boundary peaks and ties alone.
    """
    maps = hm.maps
    if maps.ndim != 3:
        raise ValueError(f"expected (K,h,w) maps, got {maps.shape}")
    k, h, w = maps.shape
    out = np.zeros((k, 3), dtype=np.float32)
    for j in range(k):
        flat = int(np.argmax(maps[j]))
        py, px = divmod(flat, w)
        x, y = float(px), float(py)
        if quarter_offset:
            dx, dy = _quarter_shift(maps[j], py, px)
            x += dx
            y += dy
        out[j] = (x, y, maps[j, py, px])
    return out


def flip_merge(hm: HeatmapSet, hm_flipped_input: HeatmapSet, flip_pairs,
               shift_px: int = 1) -> HeatmapSet:
    """Merge maps from the original and the horizontally-flipped input.

    The flipped-input maps are mirrored back along width, left/right
    channels are swapped, the result is translated shift_px pixels toward
    +width with the edge column replicated, and the two map sets are
    averaged element-wise.
    """
    a, b = hm.maps, hm_flipped_input.maps
    if a.shape != b.shape:
        raise ValueError(f"heatmap dims differ: {a.shape} vs {b.shape}")
    if shift_px < 0:
        raise ValueError(f"shift_px must be >= 0, got {shift_px}")
    back = b[..., ::-1].copy()
    for i, j in flip_pairs:
        back[..., [i, j], :, :] = back[..., [j, i], :, :]
    if shift_px:
        shifted = np.empty_like(back)
        shifted[..., shift_px:] = back[..., :-shift_px]
        shifted[..., :shift_px] = back[..., :1]
        back = shifted
    return HeatmapSet((a + back) * 0.5, hm.sigma)


# ---------------------------------------------------------------------------
# annotation files: JSON of image id -> list of instances
# ---------------------------------------------------------------------------

def annotations_to_json(data: dict) -> str:
    """data: image id -> list of PoseAnnotation."""
    doc = {}
    for image_id, anns in data.items():
        rows = []
        for ann in anns:
            row = {"joints": np.asarray(ann.joints, dtype=float).tolist(),
                   "norm": float(ann.norm)}
            if ann.score is not None:
                row["score"] = float(ann.score)
            rows.append(row)
        doc[str(image_id)] = rows
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def annotations_from_json(text: str, flip_pairs=()) -> dict:
    doc = json.loads(text)
    if not isinstance(doc, dict):
        raise ValueError("annotation document must be a JSON object")
    out = {}
    for image_id, rows in doc.items():
        out[image_id] = [
            PoseAnnotation(np.asarray(row["joints"], dtype=np.float32),
                           float(row["norm"]),
                           flip_pairs=tuple(flip_pairs),
                           score=float(row["score"]) if "score" in row else None)
            for row in rows
        ]
    return out


def save_annotation_file(path: str, data: dict):
    import os
    import tempfile
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(annotations_to_json(data))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_annotation_file(path: str, flip_pairs=()) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return annotations_from_json(fh.read(), flip_pairs=flip_pairs)
