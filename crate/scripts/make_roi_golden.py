"""Independent reference for the ROI blend mask.

Builds the 1024x1024 mask with numpy (box -> 16x16 area average -> bilinear
upsample, half-pixel centres, edge clamped) and writes it as a 16-bit
grayscale PNG storing round(mask * 32768).

Usage: python3 scripts/make_roi_golden.py crates/core/tests/fixtures/roi_mask_1024.png
"""
import sys

import numpy as np
from PIL import Image

CANVAS, TOP, LEFT, HEIGHT, WIDTH, BLUR = 1024, 384, 256, 608, 512, 16


def bilinear_taps(out_size, in_size):
    src = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, None)
    i0 = np.floor(src).astype(int)
    i0 = np.minimum(i0, in_size - 1)
    i1 = np.minimum(i0 + 1, in_size - 1)
    frac = src - i0
    return i0, i1, frac


def build_mask():
    box = np.zeros((CANVAS, CANVAS))
    box[TOP:TOP + HEIGHT, LEFT:LEFT + WIDTH] = 1.0
    k = CANVAS // BLUR
    small = box.reshape(BLUR, k, BLUR, k).mean(axis=(1, 3))
    y0, y1, fy = bilinear_taps(CANVAS, BLUR)
    x0, x1, fx = bilinear_taps(CANVAS, BLUR)
    fy = fy[:, None]
    fx = fx[None, :]
    top = small[y0][:, x0] * (1 - fx) + small[y0][:, x1] * fx
    bot = small[y1][:, x0] * (1 - fx) + small[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def main():
    mask = build_mask()
    scaled = mask * 32768.0
    assert np.all(scaled == np.round(scaled)), "mask values are not multiples of 2^-15"
    assert mask[688, 512] == 1.0 and mask[0, 0] == 0.0
    Image.fromarray(scaled.astype(np.uint16)).save(sys.argv[1])


if __name__ == "__main__":
    main()
