"""Builtin kernels, right-hand sides and control generators.

Each builtin ships its analytic derivatives and hand-derived growth metadata.
Builtins act componentwise, so a kernel works for any state dimension ``n``
with controls of the same dimension.  All builtins use ``omega(s) = kappa(s)
= 1 + s``.

New entries can be added with :func:`register_kernel` and :func:`register_rhs`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidConfig, UnknownBuiltin
from .problem import KernelBounds, KernelSpec, RhsBounds, RhsSpec

__all__ = [
    "Builtin",
    "KERNELS",
    "RHS",
    "CONTROLS",
    "register_kernel",
    "register_rhs",
    "make_kernel",
    "make_rhs",
    "make_control",
    "exact_solution",
    "resolve_params",
]


def _modulus(s):
    return 1.0 + s


def _positive(c):
    # growth constants must be strictly positive; a zero bound is met by any positive one
    return c if c > 0 else 1.0


def _diag(vals):
    """(P, n) -> (P, n, n) diagonal stack."""
    P, n = vals.shape
    out = np.zeros((P, n, n))
    idx = np.arange(n)
    out[:, idx, idx] = vals
    return out


def _eye(P, n, c):
    return np.broadcast_to(c * np.eye(n), (P, n, n)).copy()


def _triangle_exp_norm(beta: float) -> float:
    """``(int_0^1 int_0^t exp(-2 beta (t - tau)) dtau dt)^(1/2)``."""
    if abs(beta) < 1e-8:
        return math.sqrt(0.5 - beta / 3.0)
    two_b = 2.0 * beta
    inner = -math.expm1(-two_b) / two_b
    return math.sqrt((1.0 - inner) / two_b)


@dataclass(frozen=True)
class Builtin:
    factory: Callable
    params: tuple  # parameter names
    defaults: tuple  # defaults for trailing parameters
    doc: str = ""


def resolve_params(entry: Builtin, name: str, params: Sequence[float]) -> list:
    params = [float(q) for q in params]
    required = len(entry.params) - len(entry.defaults)
    if not required <= len(params) <= len(entry.params):
        raise InvalidConfig(
            f"builtin {name!r} takes parameters {list(entry.params)} "
            f"({required} required), got {len(params)}"
        )
    tail = list(entry.defaults[len(params) - required:])
    return params + tail


# -- kernels ------------------------------------------------------------------


def _zero_kernel(n, _params):
    def phi(t, tau, x, u):
        return np.zeros_like(x)

    def phi_x(t, tau, x, u):
        return np.zeros((x.shape[0], n, n))

    def phi_u(t, tau, x, u):
        return np.zeros((x.shape[0], n, u.shape[1]))

    zero = lambda t, tau: 0.0  # noqa: E731
    bounds = KernelBounds(zero, zero, _modulus, 1.0, 1.0, 0.0, norm_a=0.0, norm_b=0.0)
    return phi, phi_x, phi_u, bounds


def _linear_kernel(n, params):
    alpha, gamma = params

    def phi(t, tau, x, u):
        return alpha * x + gamma * u

    def phi_x(t, tau, x, u):
        return _eye(x.shape[0], n, alpha)

    def phi_u(t, tau, x, u):
        return _eye(x.shape[0], n, gamma)

    bounds = KernelBounds(
        a=lambda t, tau: abs(alpha),
        b=lambda t, tau: abs(gamma),
        omega=_modulus,
        c=_positive(abs(alpha)),
        d=_positive(abs(alpha)),
        lip_M=abs(alpha),
        norm_a=abs(alpha) / math.sqrt(2.0),
        norm_b=abs(gamma) / math.sqrt(2.0),
    )
    return phi, phi_x, phi_u, bounds


def _exp_kernel(n, params):
    alpha, beta, gamma = params
    peak = max(1.0, math.exp(-beta))  # sup of exp(-beta (t - tau)) over the triangle

    def weight(t, tau):
        return np.exp(-beta * (np.asarray(t) - np.asarray(tau)))

    def phi(t, tau, x, u):
        return weight(t, tau)[:, None] * (alpha * np.sin(x) + gamma * u)

    def phi_x(t, tau, x, u):
        return _diag(alpha * weight(t, tau)[:, None] * np.cos(x))

    def phi_u(t, tau, x, u):
        return weight(t, tau)[:, None, None] * _eye(x.shape[0], n, gamma)

    bounds = KernelBounds(
        a=lambda t, tau: abs(alpha) * float(weight(t, tau)),
        b=lambda t, tau: abs(gamma) * float(weight(t, tau)),
        omega=_modulus,
        c=_positive(abs(alpha) * peak),
        d=_positive(abs(alpha) * peak),
        lip_M=abs(alpha) * peak,
        norm_a=abs(alpha) * _triangle_exp_norm(beta),
        norm_b=abs(gamma) * _triangle_exp_norm(beta),
    )
    return phi, phi_x, phi_u, bounds


# -- right-hand sides ---------------------------------------------------------


def _constant_rhs(n, params):
    (c,) = params

    def f(t, x, v):
        return np.full_like(x, c)

    def f_x(t, x, v):
        return np.zeros((x.shape[0], n, n))

    def f_v(t, x, v):
        return np.zeros((x.shape[0], n, v.shape[1]))

    bf = abs(c) * math.sqrt(n)
    bounds = RhsBounds(
        a_f=lambda t: 0.0, b_f=lambda t: bf, kappa=_modulus,
        c_f=1.0, d_f=1.0, lip_L=0.0, norm_af=0.0, norm_bf=bf, s_f=0.0,
    )
    return f, f_x, f_v, bounds


def _passthrough_rhs(n, params):
    sigma, rho = params

    def f(t, x, v):
        return rho * x + sigma * v

    def f_x(t, x, v):
        return _eye(x.shape[0], n, rho)

    def f_v(t, x, v):
        return _eye(x.shape[0], n, sigma)

    bounds = RhsBounds(
        a_f=lambda t: abs(rho), b_f=lambda t: abs(sigma), kappa=_modulus,
        c_f=_positive(abs(rho)), d_f=_positive(abs(rho)), lip_L=abs(rho),
        norm_af=abs(rho), norm_bf=abs(sigma), s_f=abs(rho) / math.sqrt(2.0),
    )
    return f, f_x, f_v, bounds


_SAT_SLOPE = 3.0 * math.sqrt(3.0) / 8.0  # max of 2|x| / (1 + x^2)^2


def _saturating_rhs(n, params):
    c, sigma = params

    def f(t, x, v):
        return c / (1.0 + x * x) + sigma * v

    def f_x(t, x, v):
        return _diag(-2.0 * c * x / (1.0 + x * x) ** 2)

    def f_v(t, x, v):
        return _eye(x.shape[0], n, sigma)

    lip = abs(c) * _SAT_SLOPE
    bf = abs(c) * math.sqrt(n) + abs(sigma)
    bounds = RhsBounds(
        a_f=lambda t: 0.0, b_f=lambda t: bf, kappa=_modulus,
        c_f=_positive(lip), d_f=_positive(lip), lip_L=lip,
        norm_af=0.0, norm_bf=bf, s_f=0.0,
    )
    return f, f_x, f_v, bounds


KERNELS: dict[str, Builtin] = {
    "zero": Builtin(_zero_kernel, (), (), "Phi = 0"),
    "linear_scaled": Builtin(
        _linear_kernel, ("alpha", "gamma"), (0.0,), "Phi = alpha x + gamma u"
    ),
    "exp_nonconv": Builtin(
        _exp_kernel, ("alpha", "beta", "gamma"), (1.0, 0.0),
        "Phi = exp(-beta (t - tau)) (alpha sin x + gamma u)",
    ),
}

RHS: dict[str, Builtin] = {
    "constant": Builtin(_constant_rhs, ("c",), (), "f = c"),
    "control_passthrough": Builtin(
        _passthrough_rhs, ("sigma", "rho"), (1.0, 0.0), "f = rho x + sigma v"
    ),
    "saturating": Builtin(
        _saturating_rhs, ("c", "sigma"), (0.0,), "f = c / (1 + x^2) + sigma v"
    ),
}


def register_kernel(name: str, factory: Callable, params=(), defaults=(), doc=""):
    """Add a kernel builtin.

    ``factory(n, params)`` returns ``(phi, phi_x, phi_u, KernelBounds)`` for
    state and control dimension ``n``.
    """
    KERNELS[name] = Builtin(factory, tuple(params), tuple(defaults), doc)


def register_rhs(name: str, factory: Callable, params=(), defaults=(), doc=""):
    """Add a right-hand side builtin; ``factory(n, params)`` returns
    ``(f, f_x, f_v, RhsBounds)``."""
    RHS[name] = Builtin(factory, tuple(params), tuple(defaults), doc)


def _lookup(table, kind, name):
    try:
        return table[name]
    except KeyError:
        raise UnknownBuiltin(
            f"unknown {kind} builtin {name!r}; known: {sorted(table)}"
        ) from None


def make_kernel(name: str, params: Sequence[float], n: int) -> KernelSpec:
    entry = _lookup(KERNELS, "kernel", name)
    phi, phi_x, phi_u, bounds = entry.factory(n, resolve_params(entry, name, params))
    return KernelSpec(phi, phi_x, phi_u, bounds, n=n, m=n)


def make_rhs(name: str, params: Sequence[float], n: int) -> RhsSpec:
    entry = _lookup(RHS, "rhs", name)
    f, f_x, f_v, bounds = entry.factory(n, resolve_params(entry, name, params))
    return RhsSpec(f, f_x, f_v, bounds, n=n, r=n)


# -- controls -----------------------------------------------------------------


def _constant_control(t, value=0.0):
    return np.full_like(t, float(value))


def _sine_control(t, amplitude=1.0, frequency=1.0, phase=0.0, offset=0.0):
    return offset + amplitude * np.sin(frequency * t + phase)


CONTROLS: dict[str, Callable] = {
    "constant": _constant_control,
    "sine": _sine_control,
}


def make_control(spec: dict, t: np.ndarray, dim: int) -> np.ndarray:
    """Sample a control description on the nodes ``t``.

    ``spec`` is ``{"kind": "nodes", "values": [...]}`` or a named generator
    with keyword arguments, e.g. ``{"kind": "sine", "amplitude": 0.5}``.  A
    generator applies to every component.
    """
    kind = spec.get("kind", "constant")
    if kind == "nodes":
        vals = np.asarray(spec.get("values"), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        return vals
    gen = _lookup(CONTROLS, "control", kind)
    kwargs = {k: v for k, v in spec.items() if k != "kind"}
    try:
        col = gen(t, **kwargs)
    except TypeError as exc:
        raise InvalidConfig(f"bad arguments for control generator {kind!r}: {exc}") from None
    return np.repeat(np.asarray(col, dtype=float)[:, None], dim, axis=1)


# -- closed forms ---------------------------------------------------------------


def exact_solution(
    kernel: str, kparams: Sequence[float], rhs: str, rparams: Sequence[float],
    u_is_zero: bool,
) -> Optional[Callable]:
    """Closed-form ``x(t)`` for ``Phi = alpha x`` (or zero) with constant ``f = c``.

    Differentiating ``x' + alpha int_0^t x = c`` gives ``x'' + alpha x = 0``
    with ``x(0) = 0``, ``x'(0) = c``.  Returns ``None`` when no closed form is
    known.
    """
    if rhs != "constant":
        return None
    (c,) = resolve_params(RHS[rhs], rhs, rparams)
    if kernel == "zero":
        alpha = 0.0
    elif kernel == "linear_scaled":
        alpha, gamma = resolve_params(KERNELS[kernel], kernel, kparams)
        if gamma != 0.0 and not u_is_zero:
            return None
    else:
        return None
    if alpha > 0:
        w = math.sqrt(alpha)
        return lambda t: c / w * np.sin(w * np.asarray(t))
    if alpha < 0:
        w = math.sqrt(-alpha)
        return lambda t: c / w * np.sinh(w * np.asarray(t))
    return lambda t: c * np.asarray(t, dtype=float)
