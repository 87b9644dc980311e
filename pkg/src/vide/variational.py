"""Residual functional, coercivity certificate and a descent cross-check.

The functional is ``phi(x) = 1/2 ||F(x)||^2`` with ``F`` the residual map.
Gradients here are gradients of the *discrete* functional: the returned
``G`` satisfies ``phi(x + eps h) = phi(x) + eps <G, h'>_w + O(eps^2)`` where
``<., .>_w`` is the trapezoid inner product on derivative samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter
from .grid import DerivCoords, cumtrapz_adjoint, l2_norm, norm_ac02, triangle_integrate_adjoint
from .picard import SolverConfig, random_smooth
from .problem import GrowthData, ProblemInstance, residual_F

__all__ = [
    "SQRT2_2",
    "CoercivityBound",
    "DescentReport",
    "phi",
    "phi_gradient",
    "condition_lhs",
    "check_condition",
    "coercivity_coefficients",
    "coercivity_probe",
    "descent_solve",
]

SQRT2_2 = math.sqrt(2.0) / 2.0

ARMIJO_C = 1e-4
ARMIJO_SHRINK = 0.5
ARMIJO_STEP0 = 1.0
ARMIJO_MAX_HALVINGS = 60


@dataclass(frozen=True)
class CoercivityBound:
    """``phi(x) >= C2 ||x||^2 - C1 ||x|| - C0`` in the norm ``||x'||_2``."""

    C2: float
    C1: float
    C0: float

    def lower_bound(self, norm: float) -> float:
        return self.C2 * norm * norm - self.C1 * norm - self.C0


@dataclass
class DescentReport:
    iterations: int = 0
    phi_values: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    converged: bool = False
    message: str = ""


def phi(x: DerivCoords, p: ProblemInstance) -> float:
    r = residual_F(x, p)
    return 0.5 * l2_norm(r, p.grid) ** 2


def phi_gradient(x: DerivCoords, p: ProblemInstance) -> np.ndarray:
    """Trapezoid-inner-product gradient of the discrete functional in ``l``."""
    grid = p.grid
    w = grid.weights[:, None]
    wr = w * residual_F(x, p)
    _, j, _ = grid.triangle_pairs
    # d phi = <wr, dl> + <s, C dl>,  s_j = sum_i W_ij Phi_x(i,j)^T wr_i - f_x(j)^T wr_j
    spread = triangle_integrate_adjoint(wr, grid)
    pulled = np.einsum("pab,pa->pb", p.kernel_jac_x(x.x), spread)
    s = np.zeros_like(wr)
    for c in range(s.shape[1]):
        s[:, c] = np.bincount(j, weights=pulled[:, c], minlength=grid.n_nodes)
    s -= np.einsum("iab,ia->ib", p.rhs_jac_x(x.x), wr)
    return (wr + cumtrapz_adjoint(s, grid)) / w


def condition_lhs(g: GrowthData) -> float:
    return g.norm_a + 2.0 * g.s_f * (1.0 + g.norm_a)


def check_condition(g: GrowthData) -> tuple[bool, float]:
    """Test ``||a|| + 2 s_f (1 + ||a||) < sqrt(2)/2``.

    Returns ``(passed, margin)`` with ``margin = sqrt(2)/2 - lhs``.
    """
    margin = SQRT2_2 - condition_lhs(g)
    return bool(margin > 0), margin


def coercivity_coefficients(g: GrowthData, A: float, B: float) -> CoercivityBound:
    """Coefficients of the quadratic lower bound on ``phi``.

    Every non-quadratic contribution is subtracted.  ``C1`` also keeps a bare
    ``A`` term, which can only loosen the bound.
    """
    if A < 0 or B < 0:
        raise InvalidParameter("control bounds A, B must be nonnegative")
    na, nb, nbf, sf = g.norm_a, g.norm_b, g.norm_bf, g.s_f
    rb = math.sqrt(2.0 * B) * nbf
    C2 = 0.5 - SQRT2_2 * na - math.sqrt(2.0) * sf * (1.0 + na)
    C1 = A + A * nb + rb + rb * A * nb + 2.0 * A * nb * sf + rb * na
    C0 = rb * math.sqrt(2.0) * A * nb
    return CoercivityBound(C2, C1, C0)


def coercivity_probe(
    p: ProblemInstance, samples: int = 100, radius: float = 10.0, seed: int = 0,
    return_details: bool = False,
):
    """Check the quadratic lower bound on random trajectories.

    Derivatives are random trigonometric series rescaled to a norm drawn
    uniformly from ``[0, radius]``.
    """
    if samples < 1 or not radius > 0:
        raise InvalidParameter("need samples >= 1 and radius > 0")
    rng = np.random.default_rng(seed)
    bound = coercivity_coefficients(p.growth, p.controls.A, p.controls.B)
    violations = []
    for _ in range(samples):
        l = random_smooth(p.grid, p.dim_n, rng)
        target = rng.uniform(0.0, radius)
        l *= target / l2_norm(l, p.grid)
        x = DerivCoords(p.grid, l)
        nx = norm_ac02(x)
        val = phi(x, p)
        lb = bound.lower_bound(nx)
        if val < lb:
            violations.append((nx, val, lb))
    ok = not violations
    return (ok, bound, violations) if return_details else ok


def descent_solve(p: ProblemInstance, cfg: SolverConfig = SolverConfig()):
    """Gradient descent with Armijo backtracking on the discrete functional.

    Starts from ``cfg.initial`` (zero by default) and stops once the gradient
    norm is at most ``cfg.tol``.  Returns ``(x, report)``.
    """
    x = cfg.initial if cfg.initial is not None else p.zero_state()
    rep = DescentReport()
    val = phi(x, p)
    for it in range(int(cfg.max_iter)):
        G = phi_gradient(x, p)
        gn = l2_norm(G, p.grid)
        rep.phi_values.append(val)
        rep.grad_norms.append(gn)
        if gn <= cfg.tol:
            rep.converged = True
            break
        step = ARMIJO_STEP0
        for _ in range(ARMIJO_MAX_HALVINGS):
            trial = DerivCoords(p.grid, x.l - step * G)
            tval = phi(trial, p)
            if tval <= val - ARMIJO_C * step * gn * gn:
                break
            step *= ARMIJO_SHRINK
        else:
            rep.message = "line search failed"
            break
        x, val = trial, tval
        rep.iterations = it + 1
    else:
        rep.message = "max_iter reached"
    return x, rep
