"""One-step derivative scaling factors S_u(lam) and S_l(lam)."""

from __future__ import annotations

import math


def s_upper(lam) -> float:
    """S_u(lam) = 2 lam + 22, valid for lam > 4."""
    lam = float(lam)
    if lam <= 4:
        raise ValueError("S_u needs lam > 4")
    return 2.0 * lam + 22.0


def s_lower(lam) -> float:
    """S_l(lam) = ((lam - 4) + sqrt((lam - 4)^2 - 12)) / 2, valid for lam >= 8."""
    lam = float(lam)
    if lam < 8:
        raise ValueError("S_l needs lam >= 8")
    d = lam - 4.0
    return 0.5 * (d + math.sqrt(d * d - 12.0))
