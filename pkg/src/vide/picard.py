"""Successive approximations for the derivative ``l = x'``.

With ``x = int_0^t l`` the system becomes the fixed-point problem ``l = T(l)``
where::

    T(l)(t) = f(t, x(t), v(t)) - int_0^t Phi(t, tau, x(tau), u(tau)) dtau.

Under the weighted norm ``||l||_k^2 = int_0^1 exp(-k t)|l(t)|^2 dt`` the map is
a contraction with constant at most ``(L + M) / sqrt(k)`` when ``f`` is
``L``-Lipschitz and ``Phi`` is ``M``-Lipschitz in ``x``, so a large enough
``k`` makes plain iteration converge from any start.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ContractViolation, DivergenceError, InvalidParameter
from .grid import DerivCoords, TimeGrid, bielecki_norm, cumtrapz, l2_norm
from .problem import ProblemInstance, residual_F

__all__ = [
    "SolverConfig",
    "SolveReport",
    "apply_T",
    "choose_k",
    "contraction_bound",
    "fixed_point_iterate",
    "picard_solve",
    "verify_contraction",
    "random_smooth",
]

log = logging.getLogger(__name__)

K_MARGIN = 0.05
RATIO_FLOOR = 1e-14
BLOWUP = 1e150


@dataclass(frozen=True)
class SolverConfig:
    """Iteration settings shared by every solver.

    ``k=None`` picks the weight from the Lipschitz metadata via
    :func:`choose_k`.  ``tol`` bounds the weighted-norm increment for the
    fixed-point solver and the gradient norm for the descent solver.
    """

    k: Optional[float] = None
    tol: float = 1e-10
    max_iter: int = 500
    initial: Optional[DerivCoords] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidParameter(f"tol must be positive, got {self.tol!r}")
        if int(self.max_iter) < 1:
            raise InvalidParameter(f"max_iter must be >= 1, got {self.max_iter!r}")
        if self.k is not None and not self.k > 0:
            raise InvalidParameter(f"k must be positive, got {self.k!r}")


@dataclass
class SolveReport:
    iterations: int = 0
    increments: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    final_residual_l2: float = float("nan")
    converged: bool = False
    k_used: float = float("nan")
    ratio_bound: float = float("nan")
    """``(L + M)/sqrt(k)``; below one the map is a certified contraction."""
    residual_constant: float = float("nan")
    """``exp(k/2) * ratio_bound``: on convergence ``final_residual_l2 <= residual_constant * tol``."""

    @property
    def max_ratio(self) -> float:
        return max(self.ratios) if self.ratios else 0.0


def choose_k(L: float, M: float) -> float:
    """Weight ``k = 4 max(L, M)^2 (1 + 0.05)`` so that ``L/sqrt(k)`` and
    ``M/sqrt(k)`` both stay strictly below one half."""
    if L < 0 or M < 0 or not (np.isfinite(L) and np.isfinite(M)):
        raise InvalidParameter(f"Lipschitz constants must be finite and nonnegative, got L={L!r}, M={M!r}")
    top = max(L, M)
    if top == 0:
        raise InvalidParameter("at least one Lipschitz constant must be positive")
    return 4.0 * top * top * (1.0 + K_MARGIN)


def contraction_bound(L: float, M: float, k: float) -> float:
    return (L + M) / math.sqrt(k)


def _auto_k(L: float, M: float) -> float:
    # constant map: every weight certifies the contraction
    return choose_k(L, M) if max(L, M) > 0 else 1.0


def apply_T(l, p: ProblemInstance) -> np.ndarray:
    """One application of the fixed-point map to derivative samples ``l``."""
    x = cumtrapz(l, p.grid)
    return p.rhs_values(x) - p.history_integral(x)


def fixed_point_iterate(
    step: Callable[[np.ndarray], np.ndarray],
    l0: np.ndarray,
    grid: TimeGrid,
    k: float,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, list, list, bool]:
    """Iterate ``l <- step(l)`` until the weighted increment drops to ``tol``.

    Returns ``(l, increments, ratios, converged)``.
    """
    l = np.array(l0, dtype=float)
    increments, ratios = [], []
    for it in range(int(max_iter)):
        new = step(l)
        if not np.all(np.isfinite(new)) or np.max(np.abs(new), initial=0.0) > BLOWUP:
            raise DivergenceError(f"iterates blew up at iteration {it + 1}")
        inc = bielecki_norm(new - l, grid, k)
        if increments and increments[-1] > RATIO_FLOOR:
            ratios.append(inc / increments[-1])
        increments.append(inc)
        l = new
        if inc <= tol:
            return l, increments, ratios, True
    return l, increments, ratios, False


def picard_solve(p: ProblemInstance, cfg: SolverConfig = SolverConfig()):
    """Solve the system by successive approximations.

    Returns ``(x, report)``.  Failing to converge within ``cfg.max_iter`` is
    reported through ``report.converged``; a non-finite iterate raises
    :class:`DivergenceError`.
    """
    g = p.growth
    k = cfg.k if cfg.k is not None else _auto_k(g.lip_L, g.lip_M)
    if cfg.initial is None:
        l0 = np.zeros((p.grid.n_nodes, p.dim_n))
    else:
        if cfg.initial.grid != p.grid or cfg.initial.dim != p.dim_n:
            raise ContractViolation("initial iterate does not match the problem grid/dimension")
        l0 = cfg.initial.l

    l, increments, ratios, converged = fixed_point_iterate(
        lambda z: apply_T(z, p), l0, p.grid, k, cfg.tol, cfg.max_iter
    )
    x = DerivCoords(p.grid, l)
    q = contraction_bound(g.lip_L, g.lip_M, k)
    report = SolveReport(
        iterations=len(increments),
        increments=increments,
        ratios=ratios,
        final_residual_l2=l2_norm(residual_F(x, p), p.grid),
        converged=converged,
        k_used=k,
        ratio_bound=q,
        residual_constant=math.exp(k / 2) * q,
    )
    log.debug("picard %s: %d iterations, converged=%s", p.name, report.iterations, converged)
    return x, report


def random_smooth(grid: TimeGrid, dim: int, rng: np.random.Generator, modes: int = 8) -> np.ndarray:
    """Random trigonometric series ``sum_j c_j cos(j pi t) + s_j sin(j pi t)``
    with coefficients uniform in [-1, 1] and decaying like ``1/(1+j)``."""
    t = grid.nodes
    j = np.arange(modes)
    decay = 1.0 / (1.0 + j)
    c = rng.uniform(-1, 1, (modes, dim)) * decay[:, None]
    s = rng.uniform(-1, 1, (modes, dim)) * decay[:, None]
    arg = np.pi * np.outer(t, j)
    return np.cos(arg) @ c + np.sin(arg) @ s


def verify_contraction(
    p: ProblemInstance, k: float, trials: int = 50, seed: int = 0
) -> float:
    """Largest observed ``||T(l1) - T(l2)||_k / ||l1 - l2||_k`` over random pairs.

    Half the pairs are smooth trigonometric series, half are node-wise noise.
    """
    if trials < 1:
        raise InvalidParameter("trials must be >= 1")
    if not k > 0:
        raise InvalidParameter(f"k must be positive, got {k!r}")
    rng = np.random.default_rng(seed)
    grid = p.grid
    shape = (grid.n_nodes, p.dim_n)
    best = 0.0
    done = 0
    while done < trials:
        scale = rng.uniform(0.1, 5.0)
        if done % 2 == 0:
            l1 = scale * random_smooth(grid, p.dim_n, rng)
            l2 = scale * random_smooth(grid, p.dim_n, rng)
        else:
            l1 = scale * rng.normal(size=shape)
            l2 = scale * rng.normal(size=shape)
        den = bielecki_norm(l1 - l2, grid, k)
        if den < RATIO_FLOOR:
            continue
        num = bielecki_norm(apply_T(l1, p) - apply_T(l2, p), grid, k)
        best = max(best, num / den)
        done += 1
    return best
