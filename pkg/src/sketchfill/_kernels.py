"""Compiled inner loops for the stroke rasterizer."""
from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True)
def fill_distance_patch(verts, ox, oy, reach, dist, seg_idx, foot_s):  # pragma: no cover - exercised via raster
    """Min distance from pixel centers to a polyline, per-segment bounding boxes.

    ``dist`` must come in filled with a large sentinel. Pixel (px, py) has
    center (ox + px + 0.5, oy + py + 0.5). Only pixels within ``reach`` of a
    segment are guaranteed exact; farther pixels keep the sentinel, which is
    fine because coverage is zero beyond ``reach``. Ties keep the lower
    segment index (strict < update, segments visited in order).
    """
    h, w = dist.shape
    nseg = verts.shape[0] - 1
    for k in range(nseg):
        ax = verts[k, 0]
        ay = verts[k, 1]
        bx = verts[k + 1, 0]
        by = verts[k + 1, 1]
        lox = min(ax, bx) - reach
        hix = max(ax, bx) + reach
        loy = min(ay, by) - reach
        hiy = max(ay, by) + reach
        px0 = int(math.floor(lox - ox - 0.5))
        px1 = int(math.ceil(hix - ox - 0.5))
        py0 = int(math.floor(loy - oy - 0.5))
        py1 = int(math.ceil(hiy - oy - 0.5))
        if px0 < 0:
            px0 = 0
        if py0 < 0:
            py0 = 0
        if px1 > w - 1:
            px1 = w - 1
        if py1 > h - 1:
            py1 = h - 1
        dx = bx - ax
        dy = by - ay
        l2 = dx * dx + dy * dy
        for py in range(py0, py1 + 1):
            cy = oy + py + 0.5
            for px in range(px0, px1 + 1):
                cx = ox + px + 0.5
                if l2 < 1e-24:
                    s = 0.0
                else:
                    s = ((cx - ax) * dx + (cy - ay) * dy) / l2
                    if s < 0.0:
                        s = 0.0
                    elif s > 1.0:
                        s = 1.0
                fx = ax + s * dx
                fy = ay + s * dy
                d = math.sqrt((cx - fx) * (cx - fx) + (cy - fy) * (cy - fy))
                if d < dist[py, px]:
                    dist[py, px] = d
                    seg_idx[py, px] = k
                    foot_s[py, px] = s
