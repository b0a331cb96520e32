#!/usr/bin/env python3
"""Generate a synthetic cytology-like fixture dataset.

Draws soft-textured backgrounds with elliptical stained "cells", one
annotation per cell.  Masks are mixed on purpose: some polygon, some
uncompressed RLE, some absent (exercising the segmentation fallback).

    python scripts/make_fixture_dataset.py --out /tmp/fixture --images 20
"""

import argparse
import json
import math
import random
from pathlib import Path

import numpy as np

from saic.dataio import CANONICAL_SCHEMA
from saic.raster import save_png

CATEGORY_TINTS = {
    "hsil": (150, 60, 120),
    "lsil": (90, 80, 160),
    "agc": (70, 130, 90),
    "flora": (170, 120, 60),
    "actin": (60, 110, 150),
}


def smooth_noise(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    coarse = rng.uniform(140, 230, (h // 8 + 2, w // 8 + 2, 3))
    idx_y = np.linspace(0, coarse.shape[0] - 1.001, h)
    idx_x = np.linspace(0, coarse.shape[1] - 1.001, w)
    y0, x0 = idx_y.astype(int), idx_x.astype(int)
    fy, fx = (idx_y - y0)[:, None, None], (idx_x - x0)[None, :, None]
    tl = coarse[y0][:, x0]
    tr = coarse[y0][:, x0 + 1]
    bl = coarse[y0 + 1][:, x0]
    br = coarse[y0 + 1][:, x0 + 1]
    out = tl * (1 - fy) * (1 - fx) + tr * (1 - fy) * fx + bl * fy * (1 - fx) + br * fy * fx
    return out.astype(np.uint8)


def draw_cell(image: np.ndarray, cx: int, cy: int, rx: int, ry: int, tint) -> None:
    h, w = image.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    rim = ((xx - cx) / (rx + 2)) ** 2 + ((yy - cy) / (ry + 2)) ** 2 <= 1.0
    image[rim] = (0.65 * image[rim] + 0.35 * np.array(tint)).astype(np.uint8)
    image[inside] = (0.35 * image[inside] + 0.65 * np.array(tint)).astype(np.uint8)


def ellipse_polygon(cx, cy, rx, ry, points=10):
    flat = []
    for k in range(points):
        theta = 2 * math.pi * k / points
        flat += [cx + rx * math.cos(theta), cy + ry * math.sin(theta)]
    return flat


def ellipse_rle(h, w, cx, cy, rx, ry):
    yy, xx = np.mgrid[0:h, 0:w]
    mask = (((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0).astype(np.uint8)
    flat = mask.T.reshape(-1)
    counts, current, run = [], 0, 0
    for v in flat:
        if v == current:
            run += 1
        else:
            counts.append(run)
            current, run = v, 1
    counts.append(run)
    return {"size": [h, w], "counts": [int(c) for c in counts]}


def make_fixture(out_dir: Path, n_images: int, size: int, cells_per_image: int, seed: int) -> Path:
    rng = np.random.default_rng(seed)
    pick = random.Random(seed)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    categories = list(CATEGORY_TINTS)
    images, annotations = [], []
    for i in range(n_images):
        image_id = f"img{i:03d}"
        image = smooth_noise(rng, size, size)
        for _ in range(cells_per_image):
            category = pick.choice(categories)
            rx, ry = pick.randint(5, 9), pick.randint(5, 9)
            cx = pick.randint(rx + 3, size - rx - 4)
            cy = pick.randint(ry + 3, size - ry - 4)
            draw_cell(image, cx, cy, rx, ry, CATEGORY_TINTS[category])
            x, y = cx - rx - 1, cy - ry - 1
            w, h = 2 * rx + 3, 2 * ry + 3
            style = pick.randrange(3)
            if style == 0:
                mask = {"polygon": ellipse_polygon(cx, cy, rx, ry)}
            elif style == 1:
                mask = {"rle": ellipse_rle(size, size, cx, cy, rx, ry)}
            else:
                mask = None
            annotations.append(
                {
                    "image_id": image_id,
                    "bbox": [x, y, w, h],
                    "category": category,
                    "cell_type": "single_cell",
                    "area": max(1, int(round(math.pi * rx * ry))),
                    "mask": mask,
                }
            )
        save_png(image, out_dir / "images" / f"{image_id}.png")
        images.append({"id": image_id, "path": f"images/{image_id}.png", "width": size, "height": size})
    payload = {
        "schema": CANONICAL_SCHEMA,
        "categories": categories,
        "images": images,
        "annotations": annotations,
    }
    path = out_dir / "dataset.json"
    path.write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")
    return path


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--images", type=int, default=20)
    parser.add_argument("--size", type=int, default=96)
    parser.add_argument("--cells-per-image", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    path = make_fixture(Path(args.out), args.images, args.size, args.cells_per_image, args.seed)
    print(f"fixture dataset -> {path}")


if __name__ == "__main__":
    main()
