"""Directional derivatives of the control-to-state map.

For a perturbation ``(du, dv)`` of the controls, the derivative ``z`` of the
solution solves the linear system::

    z' + int_0^t Phi_x(t, tau, x(tau), u(tau)) z(tau) dtau - f_x(t, x, v) z
        = -int_0^t Phi_u(t, tau, x(tau), u(tau)) du(tau) dtau + f_v(t, x, v) dv

which is solved with the same successive approximations as the forward
problem.  :func:`fd_directional` is the independent finite-difference check.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import PreconditionError, VideError
from .grid import DerivCoords, as_grid_function, cumtrapz, l2_norm, triangle_integrate
from .picard import (
    SolveReport,
    SolverConfig,
    _auto_k,
    contraction_bound,
    fixed_point_iterate,
    picard_solve,
)
from .problem import ProblemInstance, residual_F

__all__ = [
    "Perturbation",
    "SensitivityResult",
    "SensitivityError",
    "sensitivity_solve",
    "sensitivity_batch",
    "fd_directional",
    "validate_sensitivity",
]

LIP_SAFETY = 1.1


class SensitivityError(VideError):
    code = "nonconvergence"


@dataclass(frozen=True, eq=False)
class Perturbation:
    du: np.ndarray
    dv: np.ndarray

    @classmethod
    def zero(cls, p: ProblemInstance) -> "Perturbation":
        n = p.grid.n_nodes
        return cls(np.zeros((n, p.dim_m)), np.zeros((n, p.dim_r)))

    def checked(self, p: ProblemInstance) -> "Perturbation":
        return Perturbation(
            as_grid_function(p.grid, self.du, p.dim_m),
            as_grid_function(p.grid, self.dv, p.dim_r),
        )

    def __add__(self, other):
        return Perturbation(np.asarray(self.du) + other.du, np.asarray(self.dv) + other.dv)

    def __mul__(self, c):
        return Perturbation(c * np.asarray(self.du), c * np.asarray(self.dv))

    __rmul__ = __mul__


@dataclass
class SensitivityResult:
    z: DerivCoords
    solve_report: SolveReport


def sensitivity_solve(
    p: ProblemInstance,
    x_sol: DerivCoords,
    pert: Perturbation,
    cfg: SolverConfig = SolverConfig(),
    residual_tol: float = 1e-6,
) -> SensitivityResult:
    """Derivative of the solution in the direction ``pert`` at ``x_sol``.

    ``x_sol`` must solve the forward problem (residual norm at most
    ``residual_tol``).  The weight comes from ``cfg.k`` or, if unset, from the
    largest sampled ``|Phi_x|`` and ``|f_x|`` along ``x_sol`` times 1.1.
    """
    res = l2_norm(residual_F(x_sol, p), p.grid)
    if res > residual_tol:
        raise PreconditionError(
            f"x_sol is not a solution: residual {res:.3e} exceeds {residual_tol:.3e}"
        )
    pert = pert.checked(p)
    grid = p.grid
    _, j, _ = grid.triangle_pairs
    kx = p.kernel_jac_x(x_sol.x)
    fx = p.rhs_jac_x(x_sol.x)
    forcing = np.einsum("iab,ib->ia", p.rhs_jac_v(x_sol.x), pert.dv) - triangle_integrate(
        np.einsum("pab,pb->pa", p.kernel_jac_u(x_sol.x), pert.du[j]), grid
    )

    def step(m):
        z = cumtrapz(m, grid)
        hist = triangle_integrate(np.einsum("pab,pb->pa", kx, z[j]), grid)
        return np.einsum("iab,ib->ia", fx, z) + forcing - hist

    lip_M = LIP_SAFETY * float(np.max(np.linalg.norm(kx, ord=2, axis=(1, 2)), initial=0.0))
    lip_L = LIP_SAFETY * float(np.max(np.linalg.norm(fx, ord=2, axis=(1, 2)), initial=0.0))
    k = cfg.k if cfg.k is not None else _auto_k(lip_L, lip_M)
    m0 = np.zeros((grid.n_nodes, p.dim_n))
    m, increments, ratios, converged = fixed_point_iterate(step, m0, grid, k, cfg.tol, cfg.max_iter)
    z = DerivCoords(grid, m)
    q = contraction_bound(lip_L, lip_M, k)
    report = SolveReport(
        iterations=len(increments),
        increments=increments,
        ratios=ratios,
        final_residual_l2=l2_norm(m - step(m), grid),
        converged=converged,
        k_used=k,
        ratio_bound=q,
        residual_constant=math.exp(k / 2) * q,
    )
    return SensitivityResult(z, report)


def sensitivity_batch(p, x_sol, perts, cfg: SolverConfig = SolverConfig(), workers=None):
    """Solve several directions against one frozen solution; order is kept."""
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda q: sensitivity_solve(p, x_sol, q, cfg), perts))


def _perturbed(p: ProblemInstance, pert: Perturbation, eps: float) -> ProblemInstance:
    return p.with_controls(p.controls.u + eps * pert.du, p.controls.v + eps * pert.dv)


def fd_directional(
    p: ProblemInstance, pert: Perturbation, eps: float, cfg: SolverConfig = SolverConfig(),
    base: DerivCoords | None = None,
) -> DerivCoords:
    """One-sided difference quotient ``(x(u + eps du, v + eps dv) - x(u, v)) / eps``.

    Both nonlinear solves use tolerance ``cfg.tol * min(eps, 1)`` (floored at
    1e-15) so the quotient is accurate to about ``cfg.tol``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    pert = pert.checked(p)
    inner = replace(cfg, tol=max(cfg.tol * min(eps, 1.0), 1e-15))
    if base is None:
        base, rep0 = picard_solve(p, inner)
        if not rep0.converged:
            raise SensitivityError("unperturbed solve did not converge")
    x1, rep1 = picard_solve(_perturbed(p, pert, eps), replace(inner, initial=base))
    if not rep1.converged:
        raise SensitivityError(f"perturbed solve (eps={eps:g}) did not converge")
    return DerivCoords(p.grid, (x1.l - base.l) / eps)


def validate_sensitivity(p, pert, eps_list, cfg: SolverConfig = SolverConfig()):
    """Rows ``(eps, max-node |fd - z|)`` for a decreasing list of steps."""
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(e <= 0 for e in eps_list) or any(
        b >= a for a, b in zip(eps_list, eps_list[1:])
    ):
        raise ValueError("eps_list must be decreasing positive numbers")
    pert = pert.checked(p)
    inner = replace(cfg, tol=max(cfg.tol * min(eps_list[-1], 1.0), 1e-15))
    x_sol, rep = picard_solve(p, inner)
    if not rep.converged:
        raise SensitivityError("forward solve did not converge")
    z = sensitivity_solve(p, x_sol, pert, cfg).z
    rows = []
    for eps in eps_list:
        fd = fd_directional(p, pert, eps, cfg, base=x_sol)
        rows.append((eps, float(np.max(np.abs(fd.x - z.x)))))
    return rows
