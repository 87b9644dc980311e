"""Uniform time grid on [0, 1], trapezoid quadrature and the three norms.

Grid functions are plain ``numpy`` arrays of shape ``(N + 1, dim)``; row ``i``
holds the sample at node ``t_i = i / N``.  Every quadrature in the package
(norms, antiderivatives, integrals over the triangle ``tau <= t``) uses the
same composite trapezoid weights, so discrete inner products stay consistent
with one another.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import ContractViolation, EvaluationError, InvalidParameter

__all__ = [
    "TimeGrid",
    "DerivCoords",
    "as_grid_function",
    "cumtrapz",
    "cumtrapz_adjoint",
    "l2_norm",
    "bielecki_norm",
    "triangle_integral",
    "triangle_integrate",
    "triangle_integrate_adjoint",
    "norm_ac02",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i / N``, ``i = 0..N``, with ``N >= 2``."""

    n_intervals: int

    def __post_init__(self):
        n = self.n_intervals
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
            raise InvalidParameter(f"n_intervals must be an integer, got {n!r}")
        if n < 2:
            raise InvalidParameter(f"grid needs N >= 2 intervals, got {n}")
        object.__setattr__(self, "n_intervals", int(n))

    @property
    def n_nodes(self) -> int:
        return self.n_intervals + 1

    @property
    def h(self) -> float:
        return 1.0 / self.n_intervals

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.n_nodes, dtype=float) / self.n_intervals
        t[-1] = 1.0
        t.flags.writeable = False
        return t

    @cached_property
    def weights(self) -> np.ndarray:
        """Composite trapezoid weights on [0, 1]."""
        w = np.full(self.n_nodes, self.h)
        w[0] = w[-1] = 0.5 * self.h
        w.flags.writeable = False
        return w

    @cached_property
    def triangle_pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Index pairs ``(i, j)`` with ``j <= i`` and the weight of ``tau_j`` in
        the trapezoid rule on ``[0, t_i]``."""
        i, j = np.tril_indices(self.n_nodes)
        w = np.where((j == 0) | (j == i), 0.5 * self.h, self.h)
        w[i == 0] = 0.0
        for a in (i, j, w):
            a.flags.writeable = False
        return i, j, w

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and other.n_intervals == self.n_intervals

    def __hash__(self):
        return hash(("TimeGrid", self.n_intervals))


def as_grid_function(grid: TimeGrid, values, dim: int | None = None) -> np.ndarray:
    """Validate ``values`` as samples on ``grid`` and return a 2-D float array.

    A 1-D array of length ``N + 1`` is read as a scalar function (``dim = 1``).
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != grid.n_nodes:
        raise ContractViolation(
            f"expected samples of shape ({grid.n_nodes}, dim), got {np.shape(values)}"
        )
    if dim is not None and arr.shape[1] != dim:
        raise ContractViolation(f"expected dimension {dim}, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("grid function has non-finite entries")
    return arr


def cumtrapz(l, grid: TimeGrid) -> np.ndarray:
    """Antiderivative ``x(t_i) = int_0^{t_i} l`` with ``x(0) = 0``."""
    l = as_grid_function(grid, l)
    x = np.zeros_like(l)
    x[1:] = np.cumsum(0.5 * grid.h * (l[:-1] + l[1:]), axis=0)
    return x


def cumtrapz_adjoint(s, grid: TimeGrid) -> np.ndarray:
    """Transpose of the linear map :func:`cumtrapz` (Euclidean pairing)."""
    s = np.asarray(s, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    h = grid.h
    # tail[j] = sum_{i >= j} s_i
    tail = np.cumsum(s[::-1], axis=0)[::-1]
    out = np.empty_like(s)
    out[0] = 0.5 * h * tail[1]
    out[1:-1] = 0.5 * h * s[1:-1] + h * tail[2:]
    out[-1] = 0.5 * h * s[-1]
    return out


def l2_norm(g, grid: TimeGrid) -> float:
    g = as_grid_function(grid, g)
    return float(np.sqrt(grid.weights @ np.sum(g * g, axis=1)))


def bielecki_norm(l, grid: TimeGrid, k: float) -> float:
    """Weighted norm ``(int_0^1 exp(-k t) |l(t)|^2 dt)^(1/2)``."""
    if not k > 0:
        raise InvalidParameter(f"Bielecki weight must be positive, got {k!r}")
    l = as_grid_function(grid, l)
    w = grid.weights * np.exp(-k * grid.nodes)
    return float(np.sqrt(w @ np.sum(l * l, axis=1)))


def triangle_integral(kernel: Callable, grid: TimeGrid, i: int) -> np.ndarray:
    """Trapezoid approximation of ``int_0^{t_i} K(t_i, tau) dtau``.

    ``kernel(t, tau)`` is called with a scalar ``t`` and the array of nodes
    ``tau_0..tau_i``; it returns one value (or vector) per ``tau``.
    """
    if not 0 <= i <= grid.n_intervals:
        raise ContractViolation(f"node index {i} outside 0..{grid.n_intervals}")
    t = grid.nodes[i]
    tau = grid.nodes[: i + 1]
    vals = np.asarray(kernel(t, tau), dtype=float)
    if vals.ndim == 0:
        vals = np.full(i + 1, float(vals))
    if vals.ndim == 1:
        vals = vals[:, None]
    bad = ~np.all(np.isfinite(vals), axis=1)
    if bad.any():
        j = int(np.argmax(bad))
        raise EvaluationError("kernel returned a non-finite value", t=float(t), tau=float(tau[j]))
    if i == 0:
        return np.zeros(vals.shape[1])
    w = np.full(i + 1, grid.h)
    w[0] = w[-1] = 0.5 * grid.h
    return w @ vals


def triangle_integrate(values, grid: TimeGrid) -> np.ndarray:
    """Integrate kernel samples over every ``[0, t_i]`` at once.

    ``values`` has one row per pair in ``grid.triangle_pairs`` (shape
    ``(P, n)``); the result has shape ``(N + 1, n)``.
    """
    i, _, w = grid.triangle_pairs
    values = np.asarray(values, dtype=float)
    out = np.empty((grid.n_nodes, values.shape[1]))
    for c in range(values.shape[1]):
        out[:, c] = np.bincount(i, weights=w * values[:, c], minlength=grid.n_nodes)
    return out


def triangle_integrate_adjoint(r, grid: TimeGrid) -> np.ndarray:
    """Spread node values ``r_i`` back onto pairs: row ``p`` gets ``w_p * r_{i_p}``."""
    i, _, w = grid.triangle_pairs
    return w[:, None] * np.asarray(r, dtype=float)[i]


def norm_ac02(x: "DerivCoords") -> float:
    """Norm of the space of absolutely continuous ``x`` with ``x(0) = 0``: ``||x'||_2``."""
    return l2_norm(x.l, x.grid)


@dataclass(frozen=True, eq=False)
class DerivCoords:
    """A trajectory stored through its derivative samples ``l = x'``.

    ``x`` is always the trapezoid antiderivative of ``l``, so ``x(0) = 0``.
    """

    grid: TimeGrid
    l: np.ndarray
    x: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        l = as_grid_function(self.grid, self.l).copy()
        l.flags.writeable = False
        x = cumtrapz(l, self.grid)
        x.flags.writeable = False
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "x", x)

    @classmethod
    def zeros(cls, grid: TimeGrid, dim: int) -> "DerivCoords":
        return cls(grid, np.zeros((grid.n_nodes, dim)))

    @classmethod
    def from_function(cls, grid: TimeGrid, deriv: Callable) -> "DerivCoords":
        """Sample a derivative given as a function of time."""
        return cls(grid, np.asarray(deriv(grid.nodes), dtype=float))

    @property
    def dim(self) -> int:
        return self.l.shape[1]

    def __add__(self, other: "DerivCoords") -> "DerivCoords":
        return DerivCoords(self.grid, self.l + other.l)

    def __sub__(self, other: "DerivCoords") -> "DerivCoords":
        return DerivCoords(self.grid, self.l - other.l)

    def __mul__(self, c: float) -> "DerivCoords":
        return DerivCoords(self.grid, c * self.l)

    __rmul__ = __mul__
