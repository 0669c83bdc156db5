"""Moving-least-squares projection of points onto a local polynomial surface."""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from d2s.pointcloud import PointCloud, SpatialIndex

logger = logging.getLogger(__name__)


def _design(u, v, degree):
    cols = [np.ones_like(u), u, v]
    if degree == 2:
        cols += [u * u, u * v, v * v]
    return np.stack(cols, axis=1)


def mls_smooth(cloud: PointCloud, radius: float, degree: int = 2, diagnostics: dict | None = None) -> PointCloud:
    """Project each point onto a Gaussian-weighted polynomial height field.

    The local frame comes from the weighted PCA of the radius neighbourhood
    (sigma = radius / 3). Points whose neighbourhood has fewer samples than
    the polynomial has coefficients pass through unchanged; their count is
    logged and, when a ``diagnostics`` dict is passed, stored under its
    ``mls_skipped`` key. Labels and pixel provenance are kept.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    if degree not in (1, 2):
        raise ValueError("degree must be 1 or 2")
    need = (degree + 1) * (degree + 2) // 2
    pos = cloud.positions
    out = pos.copy()
    index = SpatialIndex(pos)
    sigma = radius / 3.0
    skipped = 0
    for i, p in enumerate(pos):
        nb = index.radius(p, radius)
        if len(nb) < need:
            skipped += 1
            continue
        q = pos[nb]
        w = np.exp(-np.sum((q - p) ** 2, axis=1) / (2.0 * sigma * sigma))
        c = (w[:, None] * q).sum(axis=0) / w.sum()
        d = q - c
        cov = (w[:, None] * d).T @ d
        _, vecs = np.linalg.eigh(cov)
        n, e1, e2 = vecs[:, 0], vecs[:, 2], vecs[:, 1]
        u, v, h = d @ e1, d @ e2, d @ n
        A = _design(u, v, degree)
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(A * sw[:, None], h * sw, rcond=None)
        dp = p - c
        up, vp = dp @ e1, dp @ e2
        hp = (_design(np.array([up]), np.array([vp]), degree) @ coef)[0]
        out[i] = c + up * e1 + vp * e2 + hp * n
    if skipped:
        logger.info("mls_smooth: %d points with too few neighbours left unmoved", skipped)
    if diagnostics is not None:
        diagnostics["mls_skipped"] = skipped
    return replace(cloud, positions=out)
