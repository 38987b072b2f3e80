"""Piecewise cubic Hermite curves with position and velocity knots."""

from __future__ import annotations

import numpy as np


class HermiteTrajectory:
    """Cubic Hermite segments between knots ``(t_i, p_i, v_i)``.

    Each segment matches both endpoint positions and both endpoint
    velocities; nothing ties second derivatives across knots, so a sudden
    change in acceleration is representable.
    """

    def __init__(self, t, p, v):
        t = np.asarray(t, dtype=float).reshape(-1)
        p = np.asarray(p, dtype=float).reshape(len(t), -1)
        v = np.asarray(v, dtype=float).reshape(p.shape)
        if len(t) < 2:
            raise ValueError("a Hermite trajectory needs at least two knots")
        if np.any(np.diff(t) <= 0):
            raise ValueError("knot timestamps must be strictly increasing")
        self.t, self.p, self.v = t, p, v

    @property
    def t_start(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t[0] - 1e-12) or np.any(t > self.t[-1] + 1e-12):
            raise ValueError(f"t outside [{self.t[0]}, {self.t[-1]}]")
        i = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(self.t) - 2)
        h = self.t[i + 1] - self.t[i]
        s = (t - self.t[i]) / h
        return i, h, s

    def evaluate(self, t) -> np.ndarray:
        i, h, s = self._locate(t)
        s2, s3 = s * s, s * s * s
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        hh = h[..., None]
        return (h00[..., None] * self.p[i] + h10[..., None] * hh * self.v[i]
                + h01[..., None] * self.p[i + 1] + h11[..., None] * hh * self.v[i + 1])

    def derivative(self, t) -> np.ndarray:
        i, h, s = self._locate(t)
        s2 = s * s
        d00 = 6 * s2 - 6 * s
        d10 = 3 * s2 - 4 * s + 1
        d01 = -6 * s2 + 6 * s
        d11 = 3 * s2 - 2 * s
        hh = h[..., None]
        return ((d00[..., None] * self.p[i] + d01[..., None] * self.p[i + 1]) / hh
                + d10[..., None] * self.v[i] + d11[..., None] * self.v[i + 1])

    __call__ = evaluate
