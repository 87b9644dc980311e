import numpy as np
import pytest

from vide.config import preset
from vide.grid import TimeGrid
from vide.problem import Controls, KernelBounds, KernelSpec, ProblemInstance, RhsBounds, RhsSpec

CONDITION_OK = ["zero", "passthrough", "linear_coercive", "nonlinear_exp"]
ALL_PRESETS = CONDITION_OK + ["sin_oracle", "sensitivity_oracle", "linear_violating"]


def build(name, **overrides):
    return preset(name, **overrides).build()


@pytest.fixture(scope="session")
def problems():
    cache = {}

    def get(name, **overrides):
        key = (name, tuple(sorted((k, repr(v)) for k, v in overrides.items())))
        if key not in cache:
            cache[key] = build(name, **overrides)
        return cache[key]

    return get


def custom_problem(N, phi, phi_x, phi_u, f, f_x, f_v, u=0.0, v=0.0, n=1, lip_M=1.0, lip_L=1.0):
    """A problem from raw evaluators with placeholder growth data."""
    grid = TimeGrid(N)
    one = lambda *a: 1.0  # noqa: E731
    kb = KernelBounds(one, one, lambda s: 1.0 + s, 1.0, 1.0, lip_M, norm_a=1.0, norm_b=1.0)
    rb = RhsBounds(one, one, lambda s: 1.0 + s, 1.0, 1.0, lip_L, norm_af=1.0, norm_bf=1.0, s_f=1.0)
    kernel = KernelSpec(phi, phi_x, phi_u, kb, n=n, m=n)
    rhs = RhsSpec(f, f_x, f_v, rb, n=n, r=n)
    uu = np.broadcast_to(np.asarray(u, dtype=float), (grid.n_nodes, n)) if np.ndim(u) < 2 else u
    vv = np.broadcast_to(np.asarray(v, dtype=float), (grid.n_nodes, n)) if np.ndim(v) < 2 else v
    ctl = Controls.from_samples(grid, uu, vv, kb.omega, rb.kappa)
    return ProblemInstance(kernel, rhs, ctl, grid)
