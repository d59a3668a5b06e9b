import numpy as np
import pytest

from cukf.builtin import birth_death_cle, example_sec3
from cukf.continuous import (IntegratorConfig, cd_run, cd_time_update,
                             default_config, euler_limit_check)
from cukf.discrete import StateEstimate, time_update
from cukf.errors import StepTooLargeError
from cukf.models import ContinuousDiscreteModel, DiscreteLinearModel
from cukf.simulate import simulate_cd

from reference_impl import classical_cd_kf, random_constant_noise_model, rel_err

CFG = IntegratorConfig(step=0.001)


def scalar_model(A0=10.0, A1=-0.1, g2=(10.0, 0.1)):
    return DiscreteLinearModel(A0=[A0], A1=[[A1]], C=[[1.0]],
                               gsq=[list(g2)], Sigma_v=[[1.0]],
                               Sigma_w=[[1.0]])


def test_zero_length_interval_is_identity():
    post = StateEstimate([50.0], [[1.0]], 0.0)
    out = cd_time_update(post, scalar_model(), 2.0, 2.0, CFG)
    assert np.array_equal(out.xhat, post.xhat)
    assert np.array_equal(out.Sigma, post.Sigma)


def test_constant_integrand_closed_form():
    # A0 = 0, A1 = 0, g^2 = c: Sigma(t1) = Sigma(t0) + c * sv * (t1 - t0) I
    model = DiscreteLinearModel(A0=[0, 0], A1=np.zeros((2, 2)), C=np.eye(2),
                                gsq=[[3.0, 0, 0], [3.0, 0, 0]],
                                Sigma_v=np.diag([2.0, 2.0]), Sigma_w=np.eye(2))
    post = StateEstimate([1.0, -1.0], np.eye(2) * 0.5, 0.0)
    out = cd_time_update(post, model, 0.0, 0.7, CFG)
    assert np.allclose(out.xhat, post.xhat)
    assert np.allclose(out.Sigma, 0.5 * np.eye(2) + 3.0 * 2.0 * 0.7 * np.eye(2),
                       rtol=1e-12)


def test_affine_gain_frozen_reference():
    # Frozen from an independent forward-Euler integration at h = 1e-6:
    # xhat(1) = 54.75812932441148, Sigma(1) = 14.64032322594648.
    post = StateEstimate([50.0], [[1.0]], 0.0)
    out = cd_time_update(post, scalar_model(), 0.0, 1.0, CFG)
    assert np.allclose(out.xhat, [54.75812932441148], rtol=1e-5)
    assert np.allclose(out.Sigma, [[14.64032322594648]], rtol=1e-5)


def test_step_too_large():
    post = StateEstimate([0.0], [[1.0]], 0.0)
    with pytest.raises(StepTooLargeError):
        cd_time_update(post, scalar_model(), 0.0, 0.5, IntegratorConfig(step=1.0))


def test_covariance_ode_preserves_symmetry():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = random_constant_noise_model(rng, n=2)
        model = DiscreteLinearModel(
            A0=p["A0"], A1=p["A1"], C=p["C"],
            gsq=np.column_stack([p["g2"], rng.uniform(0, 0.2, (2, 2))]),
            Sigma_v=np.diag(p["sv"]), Sigma_w=p["Sigma_w"])
        B = rng.standard_normal((2, 2))
        S0 = B @ B.T + np.eye(2)
        out = cd_time_update(StateEstimate(rng.standard_normal(2) + 10, S0, 0.0),
                             model, 0.0, 0.5, IntegratorConfig(step=0.005))
        assert np.abs(out.Sigma - out.Sigma.T).max() <= 1e-10


def test_euler_single_step_equals_discrete_update():
    # dt = t1 - t0 reproduces one discrete time update of the scaled model.
    model = scalar_model()
    post = StateEstimate([50.0], [[1.0]], 0.0)
    dt = 0.25
    rows = euler_limit_check(model, post, 0.0, dt, [dt])
    scaled = DiscreteLinearModel(
        A0=model.A0 * dt, A1=np.eye(1) + dt * model.A1, C=model.C,
        gsq=dt * model.gsq, Sigma_v=model.Sigma_v, Sigma_w=model.Sigma_w)
    one = time_update(StateEstimate(post.xhat, post.Sigma, 0), scaled)
    ref = cd_time_update(post, model, 0.0, dt, IntegratorConfig(step=dt / 400))
    assert np.isclose(rows[0].mean_err, abs(one.xhat[0] - ref.xhat[0]),
                      rtol=1e-6, atol=1e-12)
    assert np.isclose(rows[0].cov_err, abs(one.Sigma[0, 0] - ref.Sigma[0, 0]),
                      rtol=1e-6, atol=1e-12)


@pytest.mark.parametrize("g2", [(4.0, 0.0), (10.0, 0.1)])
def test_euler_errors_halve_with_dt(g2):
    model = scalar_model(A0=1.0, A1=-0.5, g2=g2)
    post = StateEstimate([5.0], [[1.0]], 0.0)
    rows = euler_limit_check(model, post, 0.0, 0.8, [0.08, 0.04, 0.02, 0.01])
    errs = [r.cov_err for r in rows]
    for fine, coarse in zip(errs[:-1], errs[1:]):
        assert 1.6 <= coarse / fine <= 2.4


def test_cd_run_degenerate_single_sample():
    model = ContinuousDiscreteModel(inner=example_sec3(), sample_times=[0.0])
    init = StateEstimate([2.0], [[0.0]], 0.0)
    trace = cd_run(model, [[5.0]], init)
    assert np.allclose(trace.xhat_post[0], [2.0])
    assert np.allclose(trace.Sigma_post[0], [[0.0]])


def test_cd_run_birth_death_runs_clean():
    model = birth_death_cle()
    data = simulate_cd(model, np.array([100.0]), 11, em_step=0.005)
    trace = cd_run(model, data.measurements, StateEstimate([90.0], [[25.0]], 0.0))
    assert len(trace) == model.sample_times.size
    assert np.all(np.isfinite(trace.xhat_post))
    for S in trace.Sigma_post:
        assert np.min(np.linalg.eigvalsh(S)) >= -1e-10


def test_cd_run_constant_gain_matches_classical(subtests=None):
    rng = np.random.default_rng(4)
    for _ in range(10):
        p = random_constant_noise_model(rng, n=int(rng.integers(1, 3)))
        n = p["n"]
        dyn = DiscreteLinearModel(
            A0=p["A0"], A1=p["A1"], C=p["C"],
            gsq=np.column_stack([p["g2"], np.zeros((n, n))]),
            Sigma_v=np.diag(p["sv"]), Sigma_w=p["Sigma_w"])
        times = np.arange(30) * 0.1
        model = ContinuousDiscreteModel(inner=dyn, sample_times=times)
        data = simulate_cd(model, rng.standard_normal(n), rng.integers(1 << 31),
                           em_step=0.01)
        x0 = rng.standard_normal(n)
        P0 = np.eye(n)
        trace = cd_run(model, data.measurements, StateEstimate(x0, P0, 0.0))
        Q = np.diag(p["g2"] * p["sv"])
        xs, Ps = classical_cd_kf(p["A0"], p["A1"], Q, p["C"], p["Sigma_w"],
                                 times, data.measurements, x0, P0)
        assert rel_err(trace.xhat_post, xs) < 1e-8
        assert rel_err(trace.Sigma_post, Ps) < 1e-8


def test_cd_trace_csv_has_time_column_and_sidecar(tmp_path):
    model = birth_death_cle(t_end=1.0, n_samples=6)
    data = simulate_cd(model, np.array([100.0]), 12, em_step=0.01)
    trace = cd_run(model, data.measurements, StateEstimate([100.0], [[1.0]], 0.0))
    path = tmp_path / "trace.csv"
    sidecar = tmp_path / "summary.csv"
    trace.to_csv(path, sidecar=sidecar)
    header = path.read_text().splitlines()[0]
    assert header.split(",")[1] == "t"
    body = sidecar.read_text()
    assert "clamp_count" in body and "step_count" in body


def test_default_config_uses_hundredth_of_gap():
    model = birth_death_cle(t_end=5.0, n_samples=51)
    cfg = default_config(model)
    assert np.isclose(cfg.step, 0.1 / 100.0)
    assert cfg.scheme == "rk4"
