import numpy as np
import pytest

from defsim import discretization as disc
from defsim import model
from defsim.errors import DefsimError, StructuralError


def pipe(length=50e3, d=0.5, lam=0.01):
    return model.Pipeline(
        id="p", from_node="A", to_node="B", length_m=length, diameter_m=d, friction=lam
    )


def test_make_grid_standard():
    g = disc.make_grid(pipe(50e3), 1000.0)
    assert g.n_seg == 50 and g.dl_m == 1000.0


def test_make_grid_minimum_guard():
    g = disc.make_grid(pipe(2.5e3), 1000.0)
    assert g.n_seg == 3
    assert g.dl_m == pytest.approx(2500.0 / 3.0)


def test_make_grid_fine():
    g = disc.make_grid(pipe(50e3), 500.0)
    assert g.n_seg == 100


def test_interior_rhs_rest_state():
    p = pipe()
    g = disc.make_grid(p, 1000.0)
    pi = np.full(g.n_points, 3e5)
    m = np.zeros(g.n_points)
    dpi, dm = disc.interior_rhs(g, pi, m, p, 340.0)
    np.testing.assert_array_equal(dpi, np.zeros(g.n_seg - 1))
    np.testing.assert_array_equal(dm, np.zeros(g.n_seg - 1))


def test_interior_rhs_linear_pressure_exact():
    p = pipe()
    g = disc.make_grid(p, 1000.0)
    l = np.arange(g.n_points) * g.dl_m
    pi = 3e5 + 0.4 * l
    m = np.zeros(g.n_points)
    _, dm = disc.interior_rhs(g, pi, m, p, 340.0)
    np.testing.assert_allclose(dm, -p.cross_section_m2 * 0.4, rtol=1e-12)


def test_interior_rhs_steady_profile():
    """On the closed-form steady profile the pressure rate vanishes exactly
    (uniform flow) and the flow rate is only the O(dl^2) stencil error."""
    p = pipe()
    c = 340.0
    m0 = 1.2
    g = disc.make_grid(p, 1000.0)
    l = np.arange(g.n_points) * g.dl_m
    pi = np.sqrt(3e5**2 - p.resistance(c) * m0 * abs(m0) * l)
    m = np.full(g.n_points, m0)
    dpi, dm = disc.interior_rhs(g, pi, m, p, c)
    np.testing.assert_array_equal(dpi, np.zeros(g.n_seg - 1))
    assert np.max(np.abs(dm)) < 1e-7  # pure truncation error


def test_interior_rhs_requires_positive_pressure():
    p = pipe()
    g = disc.make_grid(p, 1000.0)
    pi = np.full(g.n_points, 3e5)
    pi[5] = -1.0
    with pytest.raises(DefsimError):
        disc.interior_rhs(g, pi, np.zeros(g.n_points), p, 340.0)


def test_interior_rhs_second_order_convergence():
    """Halving dl shrinks the stencil error by ~4 on a smooth manufactured field."""
    p = pipe()
    c = 340.0
    s = p.cross_section_m2

    def field(l):
        pi = 3e5 + 5e3 * np.sin(2 * np.pi * l / 50e3)
        m = 1.0 + 0.3 * np.cos(2 * np.pi * l / 50e3)
        return pi, m

    errs = []
    for dl in (1000.0, 500.0):
        g = disc.make_grid(p, dl)
        l = np.arange(g.n_points) * g.dl_m
        pi, m = field(l)
        dpi, dm = disc.interior_rhs(g, pi, m, p, c)
        dpi_dl = 5e3 * (2 * np.pi / 50e3) * np.cos(2 * np.pi * l / 50e3)
        dm_dl = -0.3 * (2 * np.pi / 50e3) * np.sin(2 * np.pi * l / 50e3)
        exact_dpi = -(c * c / s) * dm_dl[1:-1]
        fric = p.friction * c * c / (2 * p.diameter_m * s) * m * np.abs(m) / pi
        exact_dm = -s * dpi_dl[1:-1] - fric[1:-1]
        errs.append(
            max(np.max(np.abs(dpi - exact_dpi)), np.max(np.abs(dm - exact_dm)))
        )
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_tail_boundary_residual_cases():
    p = pipe()
    g = disc.make_grid(p, 1000.0)
    c = 340.0
    n = g.n_points
    # uniform field
    assert disc.tail_boundary_residual(g, np.full(n, 3e5), np.full(n, 1.0), p, c) == 0.0
    # linear pressure, uniform flow
    pi_lin = 3e5 + 2.0 * np.arange(n)
    assert disc.tail_boundary_residual(g, pi_lin, np.ones(n), p, c) == pytest.approx(0.0, abs=1e-9)
    # hand second difference: last three pressures (1, 2, 4)e5
    pi = np.full(n, 1e5)
    pi[-3:] = [1e5, 2e5, 4e5]
    assert disc.tail_boundary_residual(g, pi, np.zeros(n), p, c) == pytest.approx(1e5)


def test_head_boundary_residual_cases():
    c = 340.0
    # build an artificial pipe with c/S = 1700 => S = 0.2
    d = np.sqrt(4 * 0.2 / np.pi)
    p = model.Pipeline(id="q", from_node="A", to_node="B", length_m=3e3,
                       diameter_m=d, friction=0.01)
    assert c / p.cross_section_m2 == pytest.approx(1700.0)
    g = disc.make_grid(p, 1000.0)
    n = g.n_points
    pi = np.full(n, 3e5)
    m = np.zeros(n)
    m[:3] = [0.0, 1.0, 2.0]  # linear
    assert disc.head_boundary_residual(g, pi, m, p, c) == pytest.approx(0.0)
    m[:3] = [0.0, 1.0, 3.0]
    assert disc.head_boundary_residual(g, pi, m, p, c) == pytest.approx(-1700.0)


def test_affine_characteristic_combination_is_exact():
    rng = np.random.default_rng(8)
    p = pipe()
    g = disc.make_grid(p, 1000.0)
    c = 340.0
    a = c / p.cross_section_m2
    n = g.n_points
    # w1 = pi + a m affine in l, m arbitrary -> tail residual 0
    w1 = 2e5 + 3.0 * np.arange(n)
    m = rng.normal(size=n)
    pi = w1 - a * m
    assert disc.tail_boundary_residual(g, pi, m, p, c) == pytest.approx(0.0, abs=1e-9)
    # w2 = pi - a m affine -> head residual 0
    w2 = 2e5 - 1.5 * np.arange(n)
    pi2 = w2 + a * m
    assert disc.head_boundary_residual(g, pi2, m, p, c) == pytest.approx(0.0, abs=1e-9)


# --- layout / squareness --------------------------------------------------


def single_pipe_system():
    gas = model.GasNetwork(
        nodes=(model.GasNode("A", "source"), model.GasNode("B", "load")),
        pipelines=(model.Pipeline("p1", "A", "B", 50e3, 0.5, 0.01),),
        sound_speed_mps=340.0,
    )
    return model.build_system(gas)


def test_check_square_single_pipe():
    sys_ = single_pipe_system()
    grids = disc.make_grids(sys_, 1000.0)
    layout = disc.build_layout(sys_, grids)
    report = disc.check_square(layout)
    # hand count: 2*49 interior + 2 closures + 2 mass + 2 pressure*1 pipe
    # + 2 node boundaries; unknowns 2*51 + 4
    assert report["pipe_interior"] == 98
    assert report["pipe_boundary_closure"] == 2
    assert report["node_mass"] == 2
    assert report["node_pressure"] == 2
    assert report["node_boundary"] == 2
    assert report["equations"] == report["unknowns"] == 106


def test_check_square_minimum_grid():
    sys_ = single_pipe_system()
    grids = disc.make_grids(sys_, 50e3)  # forces n_seg = 3
    layout = disc.build_layout(sys_, grids)
    report = disc.check_square(layout)
    assert grids[0].n_seg == 3
    assert report["equations"] == report["unknowns"]


def test_check_square_triangle_loop():
    gas = model.GasNetwork(
        nodes=(
            model.GasNode("A", "source"),
            model.GasNode("B", "junction"),
            model.GasNode("C", "load"),
        ),
        pipelines=(
            model.Pipeline("1", "A", "B", 10e3, 0.5, 0.01),
            model.Pipeline("2", "B", "C", 10e3, 0.5, 0.01),
            model.Pipeline("3", "A", "C", 10e3, 0.5, 0.01),
        ),
        sound_speed_mps=340.0,
    )
    sys_ = model.build_system(gas)
    grids = disc.make_grids(sys_, 2000.0)
    layout = disc.build_layout(sys_, grids)
    report = disc.check_square(layout)
    # unknowns: 3 pipes * 2*(5+1) + 2*3 nodal = 42
    assert report["unknowns"] == 42
    assert report["equations"] == 42


def test_check_square_detects_mismatch():
    sys_ = single_pipe_system()
    grids = disc.make_grids(sys_, 1000.0)
    layout = disc.build_layout(sys_, grids)
    bad = dict(layout.family_counts)
    bad["node_mass"] += 1
    broken = disc.SemiDiscreteLayout(
        **{**layout.__dict__, "family_counts": bad}
    )
    with pytest.raises(StructuralError, match="not square"):
        disc.check_square(broken)
