import numpy as np
import pytest

from compatfe.fespace import interpolate
from compatfe.mesh import build
from compatfe.swe_linear import LinearParams, LinearSWE, NonRealFrequencyError, dispersion


def _model(n=16, f=10.0, g=10.0, H=1.0, dt=0.01):
    return LinearSWE(build(n, n, 1, 1), LinearParams(f=f, g=g, H=H, dt=dt))


def _psi(model, fn):
    p = interpolate(model.spaces.V0, fn).coeffs
    return p - p.mean()


def _rel_tendency(model, st):
    td = model.tendency(st)
    return np.linalg.norm(td.vector()) / np.linalg.norm(st.vector())


def test_params_validation():
    with pytest.raises(ValueError):
        LinearParams(f=1.0, g=0.0, H=1.0, dt=0.1)
    with pytest.raises(ValueError):
        LinearParams(f=1.0, g=1.0, H=1.0, dt=0.0)
    with pytest.raises(ValueError):
        _model(8, f=0.0).geostrophic_state(np.zeros(64))


def test_geostrophic_zero_is_rest():
    model = _model(8)
    st = model.geostrophic_state(np.zeros(64))
    assert np.all(st.vector() == 0)
    assert np.all(model.tendency(st).vector() == 0)


def test_geostrophic_state_is_steady():
    model = _model(16)
    psi = _psi(model, lambda x, y: np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y))
    st = model.geostrophic_state(psi)
    assert _rel_tendency(model, st) <= 1e-12
    st3 = model.geostrophic_state(3 * psi)
    assert np.allclose(st3.vector(), 3 * st.vector(), rtol=0, atol=1e-14 * np.abs(st3.vector()).max())


def test_tendency_inertial_rotation():
    model = _model(6, f=2.0)
    assert np.all(model.tendency(model.rest()).vector() == 0)
    V1 = model.spaces.V1
    u = interpolate(V1, lambda x, y: (1.0, 0.0))
    td = model.tendency(model.state(u, np.zeros(36)))
    expect = interpolate(V1, lambda x, y: (0.0, -2.0)).coeffs
    assert np.allclose(td.u.coeffs, expect, atol=1e-13)
    assert np.all(td.eta.coeffs == 0)


def test_eta_tendency_is_exact_divergence():
    model = _model(8, H=2.5)
    rng = np.random.default_rng(0)
    st = model.state(rng.standard_normal(128), rng.standard_normal(64))
    td = model.tendency(st)
    assert np.abs(td.eta.coeffs + 2.5 * (model.ops.Div @ st.u.coeffs)).max() < 1e-14 * 64 * 2.5


def test_geostrophic_state_survives_midpoint_steps():
    model = _model(16)
    psi = _psi(model, lambda x, y: np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y))
    st0 = model.geostrophic_state(psi)
    st = st0
    for _ in range(100):
        st = model.step_midpoint(st)
    rel = np.linalg.norm(st.vector() - st0.vector()) / np.linalg.norm(st0.vector())
    assert rel <= 1e-11


def test_midpoint_energy_conservation_f0():
    model = _model(16, f=0.0, dt=0.02)
    eta = interpolate(model.spaces.V2, lambda x, y: 0.1 * np.cos(2 * np.pi * x)).coeffs
    st = model.state(np.zeros(model.n_u), eta)
    E0 = model.energy(st)
    for _ in range(100):
        st = model.step_midpoint(st)
    assert abs(model.energy(st) - E0) <= 1e-11 * E0


def test_large_wave_courant_bounded():
    n, g, H = 16, 10.0, 1.0
    dt = 4.0 / n / np.sqrt(g * H)
    model = _model(n, f=5.0, g=g, H=H, dt=dt)
    rng = np.random.default_rng(1)
    st = model.state(0.1 * rng.standard_normal(model.n_u), 0.1 * rng.standard_normal(n * n))
    n0 = np.linalg.norm(st.vector())
    for _ in range(200):
        st = model.step_midpoint(st)
    assert np.isfinite(st.vector()).all()
    assert np.linalg.norm(st.vector()) < 2 * n0


def test_coriolis_kernel_dimension_reported():
    # resolution dependent; only its well-formedness is checked here
    d = _model(4).coriolis_kernel_dimension()
    assert isinstance(d, int) and 0 <= d < 32


@pytest.mark.parametrize("f", [0.0, 10.0, -3.0])
def test_dispersion_k0(f):
    w = dispersion(0.0, 0.0, {"f": f, "g": 10.0, "H": 1.0}, 1 / 16)
    assert np.allclose(w, sorted([-abs(f), 0.0, abs(f)]), atol=1e-10)


@pytest.mark.parametrize("f", [0.0, 5.0])
def test_dispersion_second_order(f):
    g, H = 10.0, 1.0
    k = np.array([2 * np.pi, 2 * np.pi])
    exact = np.sqrt(f**2 + g * H * (k @ k))
    errs = [abs(dispersion(k[0], k[1], {"f": f, "g": g, "H": H}, dx)[-1] - exact)
            for dx in (1 / 16, 1 / 32, 1 / 64)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 2.0) <= 0.2), orders


def test_dispersion_symmetric_and_real():
    w = dispersion(3.0, -1.0, LinearParams(f=2.0, g=9.81, H=0.5, dt=1.0), 0.05)
    assert np.allclose(w, -w[::-1], atol=1e-10)
    assert isinstance(NonRealFrequencyError("x"), RuntimeError)


def test_dispersion_outside_zone():
    with pytest.raises(ValueError):
        dispersion(np.pi / 0.1 * 1.01, 0.0, {"f": 0.0, "g": 1.0, "H": 1.0}, 0.1)
