"""The controlled integro-differential system and its residual map.

An instance couples a kernel ``Phi(t, tau, x, u)`` integrated over the history
``[0, t]``, a right-hand side ``f(t, x, v)``, sampled controls ``u`` and ``v``
and the growth/Lipschitz metadata that the existence theory needs::

    x'(t) + int_0^t Phi(t, tau, x(tau), u(tau)) dtau = f(t, x(t), v(t)),  x(0) = 0.

All evaluators are vectorised: ``phi(t, tau, x, u)`` receives ``t`` and ``tau``
of shape ``(P,)``, ``x`` of shape ``(P, n)`` and ``u`` of shape ``(P, m)`` and
returns ``(P, n)``; ``phi_x`` returns ``(P, n, n)`` and ``phi_u`` returns
``(P, n, m)``.  The right-hand side follows the same convention without
``tau``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import ContractViolation, EvaluationError, InvalidParameter
from .grid import (
    DerivCoords,
    TimeGrid,
    as_grid_function,
    triangle_integrate,
)

__all__ = [
    "KernelBounds",
    "RhsBounds",
    "GrowthData",
    "KernelSpec",
    "RhsSpec",
    "Controls",
    "ProblemInstance",
    "residual_F",
    "apply_Fx",
    "apply_Fuv",
    "check_growth",
    "check_lipschitz",
]

_FD_STEP = 1e-6
_FD_RTOL = 1e-5


def _norm_triangle(fn) -> float:
    """L2 norm over {(t, tau): 0 <= tau <= t <= 1}."""
    val, _ = integrate.dblquad(lambda tau, t: fn(t, tau) ** 2, 0.0, 1.0, 0.0, lambda t: t)
    return float(np.sqrt(max(val, 0.0)))


def _norm_interval(fn, weight=None) -> float:
    if weight is None:
        val, _ = integrate.quad(lambda t: fn(t) ** 2, 0.0, 1.0)
    else:
        val, _ = integrate.quad(lambda t: fn(t) ** 2 * weight(t), 0.0, 1.0)
    return float(np.sqrt(max(val, 0.0)))


def _check_modulus(fn, name):
    s = np.linspace(0.0, 100.0, 201)
    vals = np.array([fn(x) for x in s], dtype=float)
    if not np.all(np.isfinite(vals)) or np.any(vals < 0):
        raise InvalidParameter(f"{name} must map [0, inf) into [0, inf)")


@dataclass(frozen=True)
class KernelBounds:
    """Growth data of a kernel.

    ``|Phi| <= a(t,tau)|x| + b(t,tau) omega(|u|)``, ``|Phi_x| <= c omega(|x|) + d omega(|u|)``,
    ``|Phi_u| <= a omega(|x|) + b omega(|u|)`` and ``Phi`` is ``lip_M``-Lipschitz in ``x``.
    Norms of ``a`` and ``b`` over the triangle are computed by quadrature
    unless given.
    """

    a: Callable
    b: Callable
    omega: Callable
    c: float
    d: float
    lip_M: float
    norm_a: Optional[float] = None
    norm_b: Optional[float] = None

    def __post_init__(self):
        if not (self.c > 0 and self.d > 0):
            raise InvalidParameter("kernel growth constants c, d must be positive")
        if not self.lip_M >= 0:
            raise InvalidParameter("Lipschitz constant M must be nonnegative")
        _check_modulus(self.omega, "omega")
        if self.norm_a is None:
            object.__setattr__(self, "norm_a", _norm_triangle(self.a))
        if self.norm_b is None:
            object.__setattr__(self, "norm_b", _norm_triangle(self.b))


@dataclass(frozen=True)
class RhsBounds:
    """Growth data of a right-hand side.

    ``|f| <= a_f(t)|x| + b_f(t) kappa(|v|)``, ``|f_x| <= c_f kappa(|x|) + d_f kappa(|v|)``,
    ``|f_v| <= a_f kappa(|x|) + b_f kappa(|v|)`` and ``f`` is ``lip_L``-Lipschitz in ``x``.
    """

    a_f: Callable
    b_f: Callable
    kappa: Callable
    c_f: float
    d_f: float
    lip_L: float
    norm_af: Optional[float] = None
    norm_bf: Optional[float] = None
    s_f: Optional[float] = None

    def __post_init__(self):
        if not (self.c_f > 0 and self.d_f > 0):
            raise InvalidParameter("rhs growth constants c_f, d_f must be positive")
        if not self.lip_L >= 0:
            raise InvalidParameter("Lipschitz constant L must be nonnegative")
        _check_modulus(self.kappa, "kappa")
        if self.norm_af is None:
            object.__setattr__(self, "norm_af", _norm_interval(self.a_f))
        if self.norm_bf is None:
            object.__setattr__(self, "norm_bf", _norm_interval(self.b_f))
        if self.s_f is None:
            object.__setattr__(self, "s_f", _norm_interval(self.a_f, weight=lambda t: t))


@dataclass(frozen=True)
class GrowthData:
    """The scalar quantities the coercivity and contraction estimates use.

    ``s_f`` is ``(int_0^1 a_f(t)^2 t dt)^(1/2)``.  Evaluators are optional so
    the record can be built straight from numbers.
    """

    norm_a: float
    norm_b: float
    norm_af: float
    norm_bf: float
    s_f: float
    c: float = 1.0
    d: float = 1.0
    c_f: float = 1.0
    d_f: float = 1.0
    lip_M: float = 0.0
    lip_L: float = 0.0
    a: Optional[Callable] = field(default=None, repr=False)
    b: Optional[Callable] = field(default=None, repr=False)
    omega: Optional[Callable] = field(default=None, repr=False)
    a_f: Optional[Callable] = field(default=None, repr=False)
    b_f: Optional[Callable] = field(default=None, repr=False)
    kappa: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("norm_a", "norm_b", "norm_af", "norm_bf", "s_f", "lip_M", "lip_L"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val >= 0):
                raise InvalidParameter(f"{name} must be finite and nonnegative, got {val!r}")
        for name in ("c", "d", "c_f", "d_f"):
            if not getattr(self, name) > 0:
                raise InvalidParameter(f"{name} must be positive")

    @classmethod
    def combine(cls, kb: KernelBounds, rb: RhsBounds) -> "GrowthData":
        return cls(
            norm_a=kb.norm_a, norm_b=kb.norm_b, norm_af=rb.norm_af, norm_bf=rb.norm_bf,
            s_f=rb.s_f, c=kb.c, d=kb.d, c_f=rb.c_f, d_f=rb.d_f,
            lip_M=kb.lip_M, lip_L=rb.lip_L,
            a=kb.a, b=kb.b, omega=kb.omega, a_f=rb.a_f, b_f=rb.b_f, kappa=rb.kappa,
        )


def _fd_spot_check(label, fn, jac, args, wrt, rng, n_samples=10):
    """Compare an analytic Jacobian with central differences at random points."""
    out_bad = []
    for _ in range(n_samples):
        pts = [g(rng) for g in args]
        analytic = np.asarray(jac(*pts), dtype=float)[0]
        base = pts[wrt]
        fd = np.empty_like(analytic)
        for q in range(base.shape[1]):
            step = np.zeros_like(base)
            step[0, q] = _FD_STEP
            plus = list(pts)
            minus = list(pts)
            plus[wrt] = base + step
            minus[wrt] = base - step
            fd[:, q] = (np.asarray(fn(*plus))[0] - np.asarray(fn(*minus))[0]) / (2 * _FD_STEP)
        err = np.max(np.abs(fd - analytic))
        if err > _FD_RTOL * (1.0 + np.max(np.abs(analytic))):
            out_bad.append(err)
    if out_bad:
        raise ContractViolation(
            f"{label} disagrees with finite differences (max error {max(out_bad):.3e})"
        )


@dataclass(frozen=True)
class KernelSpec:
    phi: Callable
    phi_x: Callable
    phi_u: Callable
    bounds: KernelBounds
    n: int
    m: int
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        if not self.check:
            return
        rng = np.random.default_rng(12345)
        gens = [
            lambda r: r.uniform(0.5, 1, 1),
            lambda r: r.uniform(0, 0.5, 1),
            lambda r: r.normal(size=(1, self.n)),
            lambda r: r.normal(size=(1, self.m)),
        ]
        _fd_spot_check("phi_x", self.phi, self.phi_x, gens, 2, rng)
        _fd_spot_check("phi_u", self.phi, self.phi_u, gens, 3, rng)


@dataclass(frozen=True)
class RhsSpec:
    f: Callable
    f_x: Callable
    f_v: Callable
    bounds: RhsBounds
    n: int
    r: int
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        if not self.check:
            return
        rng = np.random.default_rng(54321)
        gens = [
            lambda r: r.uniform(0, 1, 1),
            lambda r: r.normal(size=(1, self.n)),
            lambda r: r.normal(size=(1, self.r)),
        ]
        _fd_spot_check("f_x", self.f, self.f_x, gens, 1, rng)
        _fd_spot_check("f_v", self.f, self.f_v, gens, 2, rng)


@dataclass(frozen=True, eq=False)
class Controls:
    """Sampled controls with their discrete essential suprema.

    ``A = max_i omega(|u(t_i)|)`` and ``B = max_i kappa(|v(t_i)|)^2``.
    """

    u: np.ndarray
    v: np.ndarray
    A: float
    B: float

    @classmethod
    def from_samples(cls, grid: TimeGrid, u, v, omega: Callable, kappa: Callable) -> "Controls":
        u = as_grid_function(grid, u).copy()
        v = as_grid_function(grid, v).copy()
        u.flags.writeable = False
        v.flags.writeable = False
        A = max(float(omega(s)) for s in np.linalg.norm(u, axis=1))
        B = max(float(kappa(s)) ** 2 for s in np.linalg.norm(v, axis=1))
        return cls(u, v, A, B)


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    kernel: KernelSpec
    rhs: RhsSpec
    controls: Controls
    grid: TimeGrid
    name: str = "problem"
    exact: Optional[Callable] = field(default=None, repr=False)
    """Closed-form ``x(t)`` when one is known (used for error columns)."""
    config: Optional[object] = field(default=None, repr=False)
    """The :class:`~vide.config.ProblemConfig` this instance was built from, if any."""

    def __post_init__(self):
        n = self.kernel.n
        if self.rhs.n != n:
            raise ContractViolation(f"kernel state dim {n} != rhs state dim {self.rhs.n}")
        if self.controls.u.shape != (self.grid.n_nodes, self.kernel.m):
            raise ContractViolation(
                f"u has shape {self.controls.u.shape}, expected ({self.grid.n_nodes}, {self.kernel.m})"
            )
        if self.controls.v.shape != (self.grid.n_nodes, self.rhs.r):
            raise ContractViolation(
                f"v has shape {self.controls.v.shape}, expected ({self.grid.n_nodes}, {self.rhs.r})"
            )

    @property
    def dim_n(self) -> int:
        return self.kernel.n

    @property
    def dim_m(self) -> int:
        return self.kernel.m

    @property
    def dim_r(self) -> int:
        return self.rhs.r

    @cached_property
    def growth(self) -> GrowthData:
        return GrowthData.combine(self.kernel.bounds, self.rhs.bounds)

    def with_controls(self, u, v) -> "ProblemInstance":
        """Same system with different control samples."""
        ctl = Controls.from_samples(
            self.grid, u, v, self.kernel.bounds.omega, self.rhs.bounds.kappa
        )
        return ProblemInstance(self.kernel, self.rhs, ctl, self.grid, self.name, None, None)

    def zero_state(self) -> DerivCoords:
        return DerivCoords.zeros(self.grid, self.dim_n)

    # -- evaluation on the grid ------------------------------------------------

    def _pair_args(self, x):
        i, j, _ = self.grid.triangle_pairs
        t = self.grid.nodes
        return t[i], t[j], x[j], self.controls.u[j]

    def _checked(self, vals, what, pairwise):
        vals = np.asarray(vals, dtype=float)
        flat = vals.reshape(vals.shape[0], -1)
        bad = ~np.all(np.isfinite(flat), axis=1)
        if bad.any():
            p = int(np.argmax(bad))
            t = self.grid.nodes
            if pairwise:
                i, j, _ = self.grid.triangle_pairs
                raise EvaluationError(f"{what} returned a non-finite value", t=float(t[i[p]]), tau=float(t[j[p]]))
            raise EvaluationError(f"{what} returned a non-finite value", t=float(t[p]))
        return vals

    def kernel_values(self, x) -> np.ndarray:
        """``Phi(t_i, t_j, x_j, u_j)`` for every pair ``j <= i``."""
        return self._checked(self.kernel.phi(*self._pair_args(x)), "kernel", True)

    def kernel_jac_x(self, x) -> np.ndarray:
        return self._checked(self.kernel.phi_x(*self._pair_args(x)), "kernel x-derivative", True)

    def kernel_jac_u(self, x) -> np.ndarray:
        return self._checked(self.kernel.phi_u(*self._pair_args(x)), "kernel u-derivative", True)

    def rhs_values(self, x) -> np.ndarray:
        return self._checked(self.rhs.f(self.grid.nodes, x, self.controls.v), "rhs", False)

    def rhs_jac_x(self, x) -> np.ndarray:
        return self._checked(self.rhs.f_x(self.grid.nodes, x, self.controls.v), "rhs x-derivative", False)

    def rhs_jac_v(self, x) -> np.ndarray:
        return self._checked(self.rhs.f_v(self.grid.nodes, x, self.controls.v), "rhs v-derivative", False)

    def history_integral(self, x) -> np.ndarray:
        """``int_0^{t_i} Phi(t_i, tau, x(tau), u(tau)) dtau`` at every node."""
        return triangle_integrate(self.kernel_values(x), self.grid)


def _check_on_grid(x: DerivCoords, p: ProblemInstance):
    if x.grid != p.grid:
        raise ContractViolation("trajectory and problem live on different grids")
    if x.dim != p.dim_n:
        raise ContractViolation(f"trajectory has dim {x.dim}, problem has state dim {p.dim_n}")


def residual_F(x: DerivCoords, p: ProblemInstance) -> np.ndarray:
    """Node-wise ``x' + int_0^t Phi(., x, u) - f(t, x, v)``."""
    _check_on_grid(x, p)
    return x.l + p.history_integral(x.x) - p.rhs_values(x.x)


def apply_Fx(p: ProblemInstance, x: DerivCoords, h: DerivCoords) -> np.ndarray:
    """Differential of the residual in the state, applied to ``h``."""
    _check_on_grid(x, p)
    _check_on_grid(h, p)
    _, j, _ = p.grid.triangle_pairs
    hist = triangle_integrate(np.einsum("pab,pb->pa", p.kernel_jac_x(x.x), h.x[j]), p.grid)
    return h.l + hist - np.einsum("iab,ib->ia", p.rhs_jac_x(x.x), h.x)


def apply_Fuv(p: ProblemInstance, x: DerivCoords, du, dv) -> np.ndarray:
    """Differential of the residual in the controls, applied to ``(du, dv)``."""
    _check_on_grid(x, p)
    du = as_grid_function(p.grid, du, p.dim_m)
    dv = as_grid_function(p.grid, dv, p.dim_r)
    _, j, _ = p.grid.triangle_pairs
    hist = triangle_integrate(np.einsum("pab,pb->pa", p.kernel_jac_u(x.x), du[j]), p.grid)
    return hist - np.einsum("iab,ib->ia", p.rhs_jac_v(x.x), dv)


# -- sampled conformance checks ------------------------------------------------


def check_growth(p: ProblemInstance, samples: int = 1000, seed: int = 0, scale: float = 5.0):
    """Count sampled violations of the growth bounds; returns a dict of counts."""
    rng = np.random.default_rng(seed)
    kb, rb = p.kernel.bounds, p.rhs.bounds
    n, m, r = p.dim_n, p.dim_m, p.dim_r
    t = rng.uniform(0, 1, samples)
    tau = t * rng.uniform(0, 1, samples)
    x = rng.normal(scale=scale, size=(samples, n))
    u = rng.normal(scale=scale, size=(samples, m))
    v = rng.normal(scale=scale, size=(samples, r))
    ax, au, av = (np.linalg.norm(z, axis=1) for z in (x, u, v))
    om = lambda s: np.array([kb.omega(q) for q in s])  # noqa: E731
    ka = lambda s: np.array([rb.kappa(q) for q in s])  # noqa: E731
    a = np.array([kb.a(ti, si) for ti, si in zip(t, tau)])
    b = np.array([kb.b(ti, si) for ti, si in zip(t, tau)])
    af = np.array([rb.a_f(ti) for ti in t])
    bf = np.array([rb.b_f(ti) for ti in t])
    slack = 1e-12

    def opnorm(mats):
        return np.linalg.norm(mats, ord=2, axis=(1, 2))

    phi = np.linalg.norm(p.kernel.phi(t, tau, x, u), axis=1)
    f = np.linalg.norm(p.rhs.f(t, x, v), axis=1)
    return {
        "phi": int(np.sum(phi > a * ax + b * om(au) + slack)),
        "phi_x": int(np.sum(opnorm(p.kernel.phi_x(t, tau, x, u)) > kb.c * om(ax) + kb.d * om(au) + slack)),
        "phi_u": int(np.sum(opnorm(p.kernel.phi_u(t, tau, x, u)) > a * om(ax) + b * om(au) + slack)),
        "f": int(np.sum(f > af * ax + bf * ka(av) + slack)),
        "f_x": int(np.sum(opnorm(p.rhs.f_x(t, x, v)) > rb.c_f * ka(ax) + rb.d_f * ka(av) + slack)),
        "f_v": int(np.sum(opnorm(p.rhs.f_v(t, x, v)) > af * ka(ax) + bf * ka(av) + slack)),
    }


def check_lipschitz(p: ProblemInstance, samples: int = 1000, seed: int = 0, scale: float = 5.0):
    """Largest sampled difference quotients of ``Phi`` and ``f`` in ``x``.

    Returns ``(ratio_M, ratio_L)``; values above the declared ``lip_M`` /
    ``lip_L`` flag dishonest metadata.
    """
    rng = np.random.default_rng(seed)
    n, m, r = p.dim_n, p.dim_m, p.dim_r
    t = rng.uniform(0, 1, samples)
    tau = t * rng.uniform(0, 1, samples)
    x1 = rng.normal(scale=scale, size=(samples, n))
    x2 = x1 + rng.normal(scale=rng.uniform(1e-3, scale, (samples, 1)), size=(samples, n))
    u = rng.normal(scale=scale, size=(samples, m))
    v = rng.normal(scale=scale, size=(samples, r))
    dx = np.linalg.norm(x1 - x2, axis=1)
    dphi = np.linalg.norm(p.kernel.phi(t, tau, x1, u) - p.kernel.phi(t, tau, x2, u), axis=1)
    df = np.linalg.norm(p.rhs.f(t, x1, v) - p.rhs.f(t, x2, v), axis=1)
    return float(np.max(dphi / dx)), float(np.max(df / dx))
