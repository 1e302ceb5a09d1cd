"""Synthetic trap-and-cell scene generator for desk-scale training and tests.

Scenes mimic single-trap microscopy crops: one or two dark bracket-shaped
trap structures on a noisy gradient background, with elliptical cells parked
in or near the trap pocket. Every sample carries exact instance masks and
boxes plus a fluorescence channel whose per-cell totals are recorded, so
measurement code can be checked against known ground truth.

Pixel intensities are quantized to the 1/65536 fixed-point grid used by the
on-disk format, which makes save/load round trips and fluorescence sums
exact.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from trapseg.data import Sample
from trapseg.sets import CLASS_CELL, CLASS_TRAP, InstanceSet, mask_to_box

FIXED_POINT = 65536.0


def _quantize(image: np.ndarray) -> np.ndarray:
    levels = np.clip(np.round(image * FIXED_POINT), 0, FIXED_POINT - 1)
    return (levels / FIXED_POINT).astype(np.float32)


def _bracket_mask(size: int, cx: float, cy: float, width: float, height: float,
                  thickness: float, opening: str) -> np.ndarray:
    """A rectangular frame open on one side, like a PDMS trap arm."""
    yy, xx = np.mgrid[0:size, 0:size]
    x0, x1 = cx - width / 2, cx + width / 2
    y0, y1 = cy - height / 2, cy + height / 2
    outer = (xx >= x0) & (xx <= x1) & (yy >= y0) & (yy <= y1)
    ix0, ix1 = x0 + thickness, x1 - thickness
    iy0, iy1 = y0 + thickness, y1 - thickness
    if opening == "right":
        ix1 = x1 + 1
    elif opening == "left":
        ix0 = x0 - 1
    else:
        raise ValueError(opening)
    inner = (xx >= ix0) & (xx <= ix1) & (yy >= iy0) & (yy <= iy1)
    return outer & ~inner


def _ellipse_mask(size: int, cx: float, cy: float, rx: float, ry: float,
                  angle: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    dx, dy = xx - cx, yy - cy
    c, s = np.cos(angle), np.sin(angle)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _place_cells(rng: np.random.Generator, size: int, count: int,
                 pocket: tuple[float, float], occupied: np.ndarray) -> list[np.ndarray]:
    """Drop up to `count` disjoint elliptical cells around the trap pocket."""
    masks = []
    px, py = pocket
    for _ in range(count):
        for _attempt in range(12):
            rx = rng.uniform(7.0, 12.0)
            ry = rx * rng.uniform(0.8, 1.2)
            cx = px + rng.normal(0, 9.0)
            cy = py + rng.normal(0, 11.0)
            cx = float(np.clip(cx, rx + 2, size - rx - 3))
            cy = float(np.clip(cy, ry + 2, size - ry - 3))
            mask = _ellipse_mask(size, cx, cy, rx, ry, rng.uniform(0, np.pi))
            free = mask & ~occupied
            if free.sum() >= 0.9 * mask.sum() and free.sum() >= 40:
                masks.append(free)
                occupied |= free
                break
    return masks


def generate_sample(rng: np.random.Generator, sample_id: str, size: int = 128) -> Sample:
    scenario = rng.choice(("empty", "single", "multi"), p=(0.25, 0.4, 0.35))
    num_traps = int(rng.integers(1, 3))
    num_cells = {"empty": 0, "single": 1, "multi": int(rng.integers(2, 5))}[scenario]

    base = rng.uniform(0.5, 0.6)
    image = np.full((size, size), base, dtype=np.float64)
    gy, gx = rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04)
    yy, xx = np.mgrid[0:size, 0:size]
    image += gy * (yy / size - 0.5) + gx * (xx / size - 0.5)

    center_x = size / 2 + rng.uniform(-8, 8)
    center_y = size / 2 + rng.uniform(-8, 8)
    gap = rng.uniform(26, 34)
    trap_w = rng.uniform(14, 18)
    trap_h = rng.uniform(38, 48)
    thickness = rng.uniform(4.5, 6.5)

    trap_masks = []
    occupied = np.zeros((size, size), dtype=bool)
    positions = [(-1, "right"), (1, "left")] if num_traps == 2 else [(rng.choice((-1, 1)), "right")]
    if num_traps == 1 and positions[0][0] == 1:
        positions = [(1, "left")]
    for side, opening in positions:
        tcx = center_x + side * gap / 2
        mask = _bracket_mask(size, tcx, center_y, trap_w, trap_h, thickness, opening)
        if mask.sum() >= 40:
            trap_masks.append(mask)
            occupied |= mask

    pocket = (center_x, center_y)
    cell_masks = _place_cells(rng, size, num_cells, pocket, occupied)

    trap_level = rng.uniform(0.22, 0.34)
    for mask in trap_masks:
        image[mask] = trap_level + rng.uniform(-0.02, 0.02)

    for mask in cell_masks:
        interior = gaussian_filter(mask.astype(np.float64), 1.2) > 0.85
        rim = mask & ~interior
        image[interior] = rng.uniform(0.68, 0.82)
        image[rim] = rng.uniform(0.28, 0.38)

    image = gaussian_filter(image, sigma=0.6)
    image += rng.normal(0.0, 0.015, image.shape)
    image = _quantize(np.clip(image, 0.0, 1.0))

    fluor = np.zeros((size, size), dtype=np.float64)
    fluor_totals = []
    for mask in cell_masks:
        level = rng.uniform(0.2, 0.85)
        rr = gaussian_filter(mask.astype(np.float64), 2.0)
        rr = rr / max(rr.max(), 1e-9)
        fluor[mask] = level * (0.6 + 0.4 * rr[mask])
    fluor = _quantize(np.clip(fluor, 0.0, 1.0))
    for mask in cell_masks:
        fluor_totals.append(float(fluor[mask].astype(np.float64).sum()))

    masks = trap_masks + cell_masks
    classes = np.array(
        [CLASS_TRAP] * len(trap_masks) + [CLASS_CELL] * len(cell_masks), dtype=np.int64
    )
    boxes = (
        np.stack([mask_to_box(m) for m in masks])
        if masks
        else np.zeros((0, 4), dtype=np.float64)
    )
    instances = InstanceSet(
        classes=classes,
        boxes=boxes,
        masks=np.stack(masks) if masks else np.zeros((0, size, size), dtype=bool),
    ).validate()

    return Sample(
        image=image,
        instances=instances,
        id=sample_id,
        fluorescence=fluor,
        # cell_fluorescence[i] belongs to the i-th cell instance, i.e. instance
        # index len(trap_masks) + i.
        meta={"scenario": str(scenario), "cell_fluorescence": fluor_totals},
    )


def synth_generate(count: int, seed: int, size: int = 128) -> list[Sample]:
    """Generate `count` validated synthetic samples, deterministic in `seed`."""
    rng = np.random.default_rng(seed)
    return [
        generate_sample(rng, f"synth-{seed}-{i:04d}", size=size) for i in range(count)
    ]
