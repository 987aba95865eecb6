import numpy as np
import pytest

from compatfe.euler2d import Euler2D
from compatfe.fespace import interpolate
from compatfe.linalg import SolverConfig
from compatfe.mesh import build


def _model(n, tau=0.0):
    return Euler2D(build(n, n, 1, 1), tau=tau, newton_config=SolverConfig(rtol=1e-13, atol=1e-15))


def _smooth_omega(model, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(4)

    def w(x, y):
        s = 2 * np.pi
        return (a[0] * np.sin(s * x) * np.sin(s * y) + a[1] * np.cos(2 * s * x)
                + a[2] * np.sin(s * (x + 2 * y)) + a[3] * np.cos(s * y))

    om = interpolate(model.spaces.V0, w).coeffs
    return om - om.mean()


def test_elliptic_zero_and_linear():
    model = _model(8)
    assert np.all(model.elliptic_solve(np.zeros(64)).coeffs == 0)
    w = _smooth_omega(model)
    a = model.elliptic_solve(w).coeffs
    b = model.elliptic_solve(3.5 * w).coeffs
    assert np.allclose(b, 3.5 * a, atol=1e-12 * np.abs(b).max())


def test_elliptic_eigenfunction_second_order():
    errs = []
    for n in (16, 32, 64):
        model = _model(n)
        f = lambda x, y: np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
        om = interpolate(model.spaces.V0, f).coeffs
        psi = model.elliptic_solve(om).coeffs
        # <gamma, omega> = -<grad gamma, grad psi> means omega = lap psi
        errs.append(np.abs(psi + om / (8 * np.pi**2)).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 2) < 0.2), orders


def test_tendency_trivial_cases():
    model = _model(8)
    st = model.state(np.full(64, 2.0))
    assert np.abs(model.semidiscrete_tendency(st).coeffs).max() < 1e-14
    # omega(x) gives psi(x), u = (0, psi'), and u.grad omega = 0
    om = interpolate(model.spaces.V0, lambda x, y: np.cos(2 * np.pi * x)).coeffs
    assert np.abs(model.semidiscrete_tendency(model.state(om)).coeffs).max() < 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_energy_enstrophy_orthogonality(seed):
    model = _model(12)
    st = model.state(_smooth_omega(model, seed))
    wd = model.semidiscrete_tendency(st).coeffs
    M0 = model.ops.M0
    scale = np.linalg.norm(wd) * max(np.linalg.norm(st.omega.coeffs), np.linalg.norm(st.psi.coeffs))
    assert abs(st.psi.coeffs @ M0 @ wd) < 1e-11 * scale
    assert abs(st.omega.coeffs @ M0 @ wd) < 1e-11 * scale


def test_supg_enstrophy_budget():
    model = _model(12, tau=0.01)
    st = model.state(_smooth_omega(model, 7))
    wd = model.semidiscrete_tendency(st).coeffs
    diff = model.streamwise_diffusion(st)
    assert diff <= 0
    # <omega + tau u.grad omega, omega_t + u.grad omega> = 0 rearranged
    V0 = model.spaces.V0
    a = model._velocity_qp(st.psi.coeffs)
    adv = np.einsum("cqk,cqk->cq", a, model._grad_qp(st.omega.coeffs))
    wt = V0.at_quadrature(wd)
    w = V0.qp_weights
    z_rate = float(st.omega.coeffs @ model.ops.M0 @ wd)
    cross = st.tau * float(np.einsum("cq,cq,q->", adv, wt, w))
    assert z_rate + cross == pytest.approx(diff, rel=1e-9)


def test_midpoint_zero_state():
    model = _model(8)
    st = model.step_midpoint(model.state(np.zeros(64)), 0.1)
    assert np.all(st.omega.coeffs == 0)


def test_midpoint_conserves_short_run():
    model = _model(16)
    st = model.state(_smooth_omega(model, 1))
    E0, Z0, C0 = model.energy(st), model.enstrophy(st), model.total_vorticity(st)
    for _ in range(10):
        st = model.step_midpoint(st, 0.02)
        assert model.last_report.converged
    assert abs(model.energy(st) - E0) <= 1e-10 * E0
    assert abs(model.enstrophy(st) - Z0) <= 1e-10 * Z0
    assert abs(model.total_vorticity(st) - C0) < 1e-12


def test_negative_tau_rejected():
    with pytest.raises(ValueError):
        Euler2D(build(4, 4, 1, 1), tau=-1.0)
