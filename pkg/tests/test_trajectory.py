import numpy as np
import pytest

from defsim import taylor_solver as ts
from defsim.errors import DefsimError
from defsim.trajectory import Trajectory, sample_grid

from systems import single_pipe_scenario, single_pipe_system


def test_sample_grid_exact_division():
    t = sample_grid(3600.0, 600.0)
    np.testing.assert_allclose(t, np.arange(7) * 600.0)


def test_sample_grid_ragged_horizon_appends_end():
    t = sample_grid(100.0, 30.0)
    np.testing.assert_allclose(t, [0.0, 30.0, 60.0, 90.0, 100.0])


def test_sample_grid_rejects_nonpositive_spacing():
    with pytest.raises(DefsimError):
        sample_grid(10.0, 0.0)


def test_trajectory_requires_increasing_times():
    with pytest.raises(DefsimError, match="increasing"):
        Trajectory(times=[0.0, 0.0], columns=["a"], values=np.zeros((2, 1)))


def test_trajectory_shape_check():
    with pytest.raises(DefsimError, match="shape"):
        Trajectory(times=[0.0, 1.0], columns=["a", "b"], values=np.zeros((2, 1)))


def test_outlet_pressure_dips_after_load_rise():
    """The bundled 3 h case: when the load climbs at 1.5 h the outlet
    pressure falls well below its pre-rise level and stays lower while the
    high draw lasts."""
    traj = ts.simulate(
        single_pipe_system(), single_pipe_scenario(), target_dl_m=1000.0, sample_dt=60.0
    )
    pi_out = traj.column("pipe.p1.pi.50")
    t = traj.times
    before = pi_out[(t >= 5000) & (t < 5400)].mean()
    after = pi_out[(t >= 6300) & (t <= 7200)].mean()
    assert after < before - 3e3  # several kPa of linepack drawn down
    # and the inlet flow has risen toward the new demand
    m_in = traj.column("pipe.p1.m.0")
    assert m_in[(t >= 6600) & (t <= 7200)].mean() > 1.8
