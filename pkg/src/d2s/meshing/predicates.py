"""Orientation and in-circle predicates with an exact rational fallback.

Each predicate first evaluates in floating point and trusts the sign when the
magnitude clears Shewchuk's static error bound; otherwise the determinant is
recomputed exactly with :class:`fractions.Fraction` (every float is a dyadic
rational, so the fallback is exact).
"""

from __future__ import annotations

from fractions import Fraction

_EPS = 2.0**-53
_CCW_BOUND = (3.0 + 16.0 * _EPS) * _EPS
_ICC_BOUND = (10.0 + 96.0 * _EPS) * _EPS


def _sign(x) -> int:
    return int(x > 0) - int(x < 0)


def orient2d(a, b, c) -> int:
    """+1 if a, b, c turn counter-clockwise, -1 if clockwise, 0 if collinear."""
    detleft = (a[0] - c[0]) * (b[1] - c[1])
    detright = (a[1] - c[1]) * (b[0] - c[0])
    det = detleft - detright
    if abs(det) > _CCW_BOUND * (abs(detleft) + abs(detright)):
        return _sign(det)
    ax, ay, bx, by, cx, cy = (Fraction(v) for v in (a[0], a[1], b[0], b[1], c[0], c[1]))
    return _sign((ax - cx) * (by - cy) - (ay - cy) * (bx - cx))


def incircle(a, b, c, d) -> int:
    """+1 if d lies strictly inside the circle through counter-clockwise a, b, c.

    Returns -1 outside and 0 when the four points are cocircular. The sign is
    reversed when a, b, c are clockwise.
    """
    adx, ady = a[0] - d[0], a[1] - d[1]
    bdx, bdy = b[0] - d[0], b[1] - d[1]
    cdx, cdy = c[0] - d[0], c[1] - d[1]
    bdxcdy, cdxbdy = bdx * cdy, cdx * bdy
    cdxady, adxcdy = cdx * ady, adx * cdy
    adxbdy, bdxady = adx * bdy, bdx * ady
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    det = alift * (bdxcdy - cdxbdy) + blift * (cdxady - adxcdy) + clift * (adxbdy - bdxady)
    permanent = (
        (abs(bdxcdy) + abs(cdxbdy)) * alift
        + (abs(cdxady) + abs(adxcdy)) * blift
        + (abs(adxbdy) + abs(bdxady)) * clift
    )
    if abs(det) > _ICC_BOUND * permanent:
        return _sign(det)
    return incircle_exact(a, b, c, d)


def incircle_exact(a, b, c, d) -> int:
    ax, ay, bx, by, cx, cy, dx, dy = (
        Fraction(v) for v in (a[0], a[1], b[0], b[1], c[0], c[1], d[0], d[1])
    )
    adx, ady = ax - dx, ay - dy
    bdx, bdy = bx - dx, by - dy
    cdx, cdy = cx - dx, cy - dy
    det = (
        (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
        + (bdx * bdx + bdy * bdy) * (cdx * ady - adx * cdy)
        + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady)
    )
    return _sign(det)
