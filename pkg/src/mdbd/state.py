"""Flat storage for stacked per-agent states.

Both the mirror-space state ``s = (y, gamma, mu, omega, nu)`` and the output
``z = (x, lambda, mu, omega, nu)`` live in one contiguous float vector with
the same block layout, so the integrator can work on plain arrays while
callers get named, shaped views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BLOCKS = ("primal", "ineq", "eq", "ineq_aux", "eq_aux")
STATE_NAMES = ("y", "gamma", "mu", "omega", "nu")
OUTPUT_NAMES = ("x", "lambda", "mu", "omega", "nu")


@dataclass(frozen=True)
class Layout:
    N: int
    n: int
    p: int
    q: int

    @classmethod
    def of(cls, net):
        return cls(net.N, net.n, net.p, net.q)

    @property
    def widths(self):
        return (self.n, self.p, self.q, self.p, self.q)

    @property
    def size(self):
        return self.N * sum(self.widths)

    def offsets(self):
        out, start = [], 0
        for w in self.widths:
            out.append((start, start + self.N * w))
            start += self.N * w
        return out

    def views(self, v):
        """Five ``(N, width)`` views into the flat vector ``v``."""
        v = np.asarray(v)
        if v.shape != (self.size,):
            raise ValueError(f"expected a flat vector of length {self.size}, got shape {v.shape}")
        return tuple(v[a:b].reshape(self.N, w) for (a, b), w in zip(self.offsets(), self.widths))

    def pack(self, *blocks):
        return np.concatenate([np.asarray(b, dtype=float).reshape(-1) for b in blocks])

    def zeros(self):
        return np.zeros(self.size)


class _Stacked:
    names: tuple = ()

    def __init__(self, layout: Layout, data=None):
        self.layout = layout
        self.data = layout.zeros() if data is None else np.asarray(data, dtype=float)
        self._views = layout.views(self.data)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def blocks(self):
        return dict(zip(self.names, self._views))

    def copy(self):
        return type(self)(self.layout, self.data.copy())

    def __repr__(self):
        return f"{type(self).__name__}({self.layout})"

    mu = property(lambda self: self._views[2])
    omega = property(lambda self: self._views[3])
    nu = property(lambda self: self._views[4])


class StackedState(_Stacked):
    """Mirror-space state ``(y, gamma, mu, omega, nu)``."""

    names = STATE_NAMES
    y = property(lambda self: self._views[0])
    gamma = property(lambda self: self._views[1])


class OutputState(_Stacked):
    """Output point ``(x, lambda, mu, omega, nu)``."""

    names = OUTPUT_NAMES
    x = property(lambda self: self._views[0])
    lam = property(lambda self: self._views[1])


def as_flat(v, layout: Layout) -> np.ndarray:
    data = v.data if isinstance(v, _Stacked) else np.asarray(v, dtype=float)
    if data.shape != (layout.size,):
        raise ValueError(f"state has shape {data.shape}, expected ({layout.size},)")
    return data
