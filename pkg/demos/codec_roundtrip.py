# Heatmap encode/decode: how much of the joint position survives the trip
# through a quarter-resolution gaussian map, and what the flip merge does.

import numpy as np

from lapx.codec import HeatmapSet, PoseAnnotation, decode_heatmaps, encode_heatmaps, flip_merge

rng = np.random.default_rng(7)
h, w = 24, 20

pts = np.column_stack([
    rng.uniform(1.0, w - 2.0, 6),
    rng.uniform(1.0, h - 2.0, 6),
    np.ones(6),
]).astype(np.float32)
ann = PoseAnnotation(pts, norm=5.0)

maps, vis = encode_heatmaps(ann, (h, w), sigma=2.0)
print("encoded", maps.maps.shape, "peak value", maps.maps.max())

# training targets are centered on the snapped pixel, so their neighbors
# tie exactly and decoding returns the snap: at most half a pixel off
decoded = decode_heatmaps(maps)
err = np.abs(decoded[:, :2] - pts[:, :2]).max(axis=1)
print("\nper-joint decode error on clean targets:")
for j in range(6):
    print(f"  joint {j}: {err[j]:.3f} px")

worst = 0.0
n = 0
while n < 2000:
    k = int(rng.integers(1, 9))
    p = np.column_stack([rng.uniform(1, w - 2, k), rng.uniform(1, h - 2, k),
                         np.ones(k)]).astype(np.float32)
    m, _ = encode_heatmaps(PoseAnnotation(p, 5.0), (h, w), sigma=2.0)
    worst = max(worst, float(np.abs(decode_heatmaps(m)[:, :2] - p[:, :2]).max()))
    n += k
print(f"worst round-trip error over {n} random joints: {worst:.3f} px")

# a network's predicted map is never perfectly symmetric; the quarter
# offset then leans toward the strictly larger neighbor
bump = np.zeros((1, h, w), np.float32)
bump[0, 5, 5] = 1.0
bump[0, 5, 6] = 0.6   # right neighbor louder than left
bump[0, 4, 5] = 0.3
asym = HeatmapSet(bump, 2.0)
print("\nasymmetric peak at (5,5) decodes to",
      decode_heatmaps(asym)[0, :2].tolist(), "(leans right and up)")

# flip merge: average a pose with its mirrored twin; on a left/right
# symmetric input the merge changes nothing
left = rng.uniform(0, 1, (h, w)).astype(np.float32)
center = rng.uniform(0, 1, (h, w)).astype(np.float32)
center = (center + center[:, ::-1]) * 0.5
sym = np.stack([center, left, left[:, ::-1]])
flipped_view = sym[:, :, ::-1].copy()
flipped_view[[1, 2]] = flipped_view[[2, 1]]
merged = flip_merge(HeatmapSet(sym, 2.0), HeatmapSet(flipped_view, 2.0),
                    flip_pairs=((1, 2),), shift_px=0)
print("flip merge fixed point on symmetric maps:",
      np.array_equal(merged.maps, sym))
