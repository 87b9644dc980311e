import numpy as np
import pytest

from conftest import build
from vide.errors import PreconditionError
from vide.grid import DerivCoords, cumtrapz, l2_norm
from vide.picard import SolverConfig, picard_solve, random_smooth
from vide.problem import apply_Fuv, apply_Fx
from vide.sensitivity import (
    Perturbation,
    fd_directional,
    sensitivity_batch,
    sensitivity_solve,
    validate_sensitivity,
)

TOL = 1e-10


def solved(p, tol=TOL):
    x, rep = picard_solve(p, SolverConfig(tol=tol))
    assert rep.converged
    return x


def smooth_pert(p, seed):
    rng = np.random.default_rng(seed)
    return Perturbation(random_smooth(p.grid, 1, rng), random_smooth(p.grid, 1, rng))


def test_zero_perturbation(problems):
    p = problems("nonlinear_exp")
    res = sensitivity_solve(p, solved(p), Perturbation.zero(p))
    assert np.all(res.z.l == 0) and res.solve_report.converged


def test_zero_kernel_integrates_dv(problems):
    p = problems("passthrough")
    dv = np.cos(3 * p.grid.nodes)[:, None]
    res = sensitivity_solve(p, solved(p), Perturbation(np.zeros_like(dv), dv))
    np.testing.assert_allclose(res.z.x, cumtrapz(dv, p.grid), atol=1e-13)


def test_linear_oracle_is_sine(problems):
    p = problems("sensitivity_oracle")
    one = np.ones((p.grid.n_nodes, 1))
    res = sensitivity_solve(p, solved(p), Perturbation(0 * one, one))
    assert res.solve_report.converged
    assert np.max(np.abs(res.z.x[:, 0] - np.sin(p.grid.nodes))) <= 1e-4


def test_rejects_non_solution(problems):
    p = problems("nonlinear_exp")
    with pytest.raises(PreconditionError):
        sensitivity_solve(p, p.zero_state(), Perturbation.zero(p))


@pytest.mark.parametrize("name", ["nonlinear_exp", "linear_coercive"])
def test_linearity(problems, name):
    p = problems(name)
    x = solved(p)
    a, b = smooth_pert(p, 1), smooth_pert(p, 2)
    za, zb, zab = (sensitivity_solve(p, x, q, SolverConfig(tol=1e-14)).z for q in (a, b, 2.0 * a + (-3.0) * b))
    assert np.max(np.abs(zab.l - (2 * za.l - 3 * zb.l))) <= 1e-12


@pytest.mark.parametrize("name", ["nonlinear_exp", "linear_coercive", "sensitivity_oracle"])
def test_linearized_residual(problems, name):
    p = problems(name)
    x = solved(p)
    q = smooth_pert(p, 3).checked(p)
    z = sensitivity_solve(p, x, q, SolverConfig(tol=TOL)).z
    r = apply_Fx(p, x, z) + apply_Fuv(p, x, q.du, q.dv)
    assert l2_norm(r, p.grid) <= 10 * TOL


@pytest.mark.parametrize("eps", [1.0, 1e-2, 1e-4])
def test_fd_exact_on_affine_problem(problems, eps):
    p = problems("linear_coercive")
    q = smooth_pert(p, 4)
    z = sensitivity_solve(p, solved(p, 1e-13), q, SolverConfig(tol=1e-13)).z
    fd = fd_directional(p, q, eps, SolverConfig(tol=TOL))
    assert np.max(np.abs(fd.x - z.x)) <= 2 * TOL


def test_fd_zero_perturbation(problems):
    p = problems("nonlinear_exp")
    fd = fd_directional(p, Perturbation.zero(p), 1e-3)
    assert np.max(np.abs(fd.l)) <= 1e-12


def test_fd_nonlinear_first_order():
    p = build("nonlinear_exp", grid_n=400)
    q = smooth_pert(p, 5)
    z = sensitivity_solve(p, solved(p), q).z
    fd = fd_directional(p, q, 1e-4)
    zmax = np.max(np.abs(z.x))
    assert zmax > 1e-2
    assert np.max(np.abs(fd.x - z.x)) <= 1e-3 * (1 + zmax)


def test_validate_ratio_on_nonlinear(problems):
    p = problems("nonlinear_exp")
    rows = validate_sensitivity(p, smooth_pert(p, 6), [1e-2, 5e-3, 2.5e-3])
    errs = [e for _, e in rows]
    for a, b in zip(errs, errs[1:]):
        assert 1.5 <= a / b <= 2.5


def test_validate_linear_floor(problems):
    p = problems("linear_coercive")
    rows = validate_sensitivity(p, smooth_pert(p, 7), [1e-1, 1e-2, 1e-3])
    assert all(e <= 2 * TOL for _, e in rows)


def test_validate_zero_perturbation(problems):
    p = problems("nonlinear_exp")
    rows = validate_sensitivity(p, Perturbation.zero(p), [1e-2, 1e-3])
    assert all(e <= 1e-12 for _, e in rows)


def test_validate_rejects_bad_eps(problems):
    p = problems("nonlinear_exp")
    with pytest.raises(ValueError):
        validate_sensitivity(p, Perturbation.zero(p), [1e-3, 1e-2])


def test_batch_keeps_order(problems):
    p = problems("nonlinear_exp")
    x = solved(p)
    perts = [smooth_pert(p, s) for s in range(6)]
    batch = sensitivity_batch(p, x, perts, workers=3)
    for q, r in zip(perts, batch):
        np.testing.assert_array_equal(r.z.l, sensitivity_solve(p, x, q).z.l)


def test_grid_stability():
    diffs = []
    for N in (50, 100, 200):
        zs = []
        for n in (N, 2 * N):
            p = build("nonlinear_exp", grid_n=n)
            t = p.grid.nodes[:, None]
            q = Perturbation(np.cos(2 * t), np.sin(3 * t))
            zs.append(sensitivity_solve(p, solved(p), q).z.x)
        diffs.append(np.max(np.abs(zs[0] - zs[1][::2])))
    for a, b in zip(diffs, diffs[1:]):
        assert 3.2 <= a / b <= 4.8
