"""Regenerates the binary fixtures with Pillow and numpy.

    python3 make_fixtures.py
"""
import io

import numpy as np
from PIL import Image

rng = np.random.default_rng(7)

# smooth scene with a few edges, 32x32
y, x = np.mgrid[0:32, 0:32] / 31.0
scene = np.stack([x, y, 0.5 + 0.5 * np.sin(6 * x * y)], axis=-1)
scene[8:20, 10:24] = [0.9, 0.2, 0.1]
scene[22:30, 4:12] = [0.1, 0.3, 0.8]
scene = np.clip(scene + rng.normal(0, 0.02, scene.shape), 0, 1)
pixels = np.round(scene * 255).astype(np.uint8)

img = Image.fromarray(pixels, "RGB")
img.save("scene.ppm")
for q in (30, 90):
    buf = io.BytesIO()
    img.save(buf, "JPEG", quality=q, subsampling="4:2:0")
    buf.seek(0)
    Image.open(buf).convert("RGB").save("scene_q%d_pillow.ppm" % q)

# two CIFAR-10 records: label byte then 1024 R, 1024 G, 1024 B
records = []
for label in (3, 9):
    planes = rng.integers(0, 256, size=(3, 32, 32), dtype=np.uint8)
    records.append(bytes([label]) + planes.tobytes())
    Image.fromarray(planes.transpose(1, 2, 0), "RGB").save("record_label%d.ppm" % label)
open("two_records.bin", "wb").write(b"".join(records))
