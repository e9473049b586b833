"""Slow, independent reference implementations used by the tests.

Everything here is written with plain loops over pixels or entries so it
shares no code path with the vectorized library versions.
"""

from __future__ import annotations

import math
import struct
from fractions import Fraction

import numpy as np


def nd_loop(a, b, nodata):
    h, w = a.shape
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            x, y = float(a[r, c]), float(b[r, c])
            if x == nodata or y == nodata:
                out[r, c] = nodata
            elif x + y == 0:
                out[r, c] = 0.0
            else:
                out[r, c] = (x - y) / (x + y)
    return out


def horn_loop(z, ps):
    """(slope deg, aspect deg or -1) per pixel, clamping neighbour indices at the border."""
    h, w = z.shape
    slope = np.zeros((h, w))
    asp = np.zeros((h, w))

    def at(r, c):
        return float(z[min(max(r, 0), h - 1), min(max(c, 0), w - 1)])

    for r in range(h):
        for c in range(w):
            a, b, cc = at(r - 1, c - 1), at(r - 1, c), at(r - 1, c + 1)
            d, f = at(r, c - 1), at(r, c + 1)
            g, hh, i = at(r + 1, c - 1), at(r + 1, c), at(r + 1, c + 1)
            east = ((cc + 2 * f + i) - (a + 2 * d + g)) / (8 * ps)
            north = ((a + 2 * b + cc) - (g + 2 * hh + i)) / (8 * ps)
            slope[r, c] = math.degrees(math.atan(math.hypot(east, north)))
            if math.hypot(east, north) < 1e-9:
                asp[r, c] = -1.0
            else:
                # azimuth of steepest descent, clockwise from north
                asp[r, c] = math.degrees(math.atan2(-east, -north)) % 360.0
    return slope, asp


def quantize_loop(values, valid, levels):
    vals = [float(v) for v, ok in zip(values.ravel(), valid.ravel()) if ok]
    lo, hi = min(vals), max(vals)
    q = np.zeros(values.shape, dtype=int)
    for idx in np.ndindex(values.shape):
        if valid[idx]:
            k = math.floor((float(values[idx]) - lo) / (hi - lo) * levels)
            q[idx] = min(max(k, 0), levels - 1)
    return q


def glcm_loop(values, valid, window, levels, offsets):
    """Build a symmetric co-occurrence matrix per window and take sum P(i,j)|i-j|."""
    q = quantize_loop(values, valid, levels)
    h, w = q.shape
    half = window // 2
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            r0, r1 = max(r - half, 0), min(r + half, h - 1)
            c0, c1 = max(c - half, 0), min(c + half, w - 1)
            m = np.zeros((levels, levels))
            for dy, dx in offsets:
                for y in range(r0, r1 + 1):
                    for x in range(c0, c1 + 1):
                        y2, x2 = y + dy, x + dx
                        if not (r0 <= y2 <= r1 and c0 <= x2 <= c1):
                            continue
                        if not (valid[y, x] and valid[y2, x2]):
                            continue
                        m[q[y, x], q[y2, x2]] += 1
                        m[q[y2, x2], q[y, x]] += 1
            total = m.sum()
            if total:
                i, j = np.indices(m.shape)
                out[r, c] = (m / total * np.abs(i - j)).sum()
    return out


def jacobi_eigh(a, sweeps=100, tol=1e-15):
    """Cyclic Jacobi rotations; returns (eigenvalues, eigenvectors as columns)."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                cs = 1 / math.sqrt(t * t + 1)
                sn = t * cs
                for k in range(n):
                    akp, akq = a[k, p], a[k, q]
                    a[k, p], a[k, q] = cs * akp - sn * akq, sn * akp + cs * akq
                for k in range(n):
                    apk, aqk = a[p, k], a[q, k]
                    a[p, k], a[q, k] = cs * apk - sn * aqk, sn * apk + cs * aqk
                for k in range(n):
                    vkp, vkq = v[k, p], v[k, q]
                    v[k, p], v[k, q] = cs * vkp - sn * vkq, sn * vkp + cs * vkq
    return np.diag(a).copy(), v


def pca_oracle(pixels, components):
    """pixels: (N, B). Returns (mean, components rows, eigenvalues) with the largest |loading| positive."""
    n, b = pixels.shape
    mean = [sum(pixels[:, j]) / n for j in range(b)]
    cov = np.zeros((b, b))
    for i in range(b):
        for j in range(b):
            cov[i, j] = sum((pixels[:, i] - mean[i]) * (pixels[:, j] - mean[j])) / (n - 1)
    vals, vecs = jacobi_eigh(cov)
    order = sorted(range(b), key=lambda k: -vals[k])
    comps = []
    for k in order[:components]:
        v = vecs[:, k]
        lead = max(range(b), key=lambda j: abs(v[j]))
        comps.append(v * (1 if v[lead] > 0 else -1))
    return np.array(mean), np.array(comps), np.array([vals[k] for k in order[:components]])


def metrics_fraction(cm):
    """Per-class IoU, precision, recall and total accuracy as exact Fractions (None where undefined)."""
    cm = [[int(v) for v in row] for row in cm]
    k = len(cm)
    total = sum(map(sum, cm))
    iou, prec, rec = [], [], []
    for c in range(k):
        tp = cm[c][c]
        fp = sum(cm[r][c] for r in range(k)) - tp  # rows are truth, columns predictions
        fn = sum(cm[c]) - tp
        iou.append(Fraction(tp, tp + fp + fn) if tp + fp + fn else None)
        prec.append(Fraction(tp, tp + fp) if tp + fp else None)
        rec.append(Fraction(tp, tp + fn) if tp + fn else None)
    acc = Fraction(sum(cm[c][c] for c in range(k)), total) if total else None
    return iou, prec, rec, acc


def cryo_bytes(width, height, pixel_size, ox, oy, nodata, bands, code=1):
    """Hand-assembled CRYO file. ``bands`` is a list of (name, role_code, 2-D array)."""
    out = bytearray(b"CRYO")
    out += struct.pack("<H", code)
    out += struct.pack("<III", width, height, len(bands))
    out += struct.pack("<ddd", pixel_size, ox, oy)
    out += struct.pack("<f", nodata)
    for name, role, _ in bands:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<H", role)
    fmt = "<B" if code == 2 else "<f"
    for _, _, arr in bands:
        for v in np.asarray(arr).ravel():
            out += struct.pack(fmt, v)
    return bytes(out)


def hann_loop(n, floor=1e-3):
    w1 = [max(0.5 - 0.5 * math.cos(2 * math.pi * i / (n - 1)), floor) for i in range(n)]
    return np.array([[a * b for b in w1] for a in w1])
