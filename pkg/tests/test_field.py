import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad

from robinid.errors import AdmissibilityError, ConfigError
from robinid.field import (
    CellField,
    NodalField,
    boundary_l2,
    embedding_constants,
    estimate_constants,
    h1_norm,
    h1_seminorm,
    l2_error,
    l2_norm,
    read_csv,
    write_csv,
)
from robinid.grid import boundary_trace_weights, build_interval_mesh, build_rect_mesh


def _dirichlet_p1_eigenvalue(n):
    # Smallest eigenvalue of the 1-D P1 Dirichlet pencil on a uniform mesh of (0, 1):
    # lambda = (6 / h^2) (1 - cos(pi h)) / (2 + cos(pi h)).
    h = 1.0 / n
    return 6.0 / h**2 * (1 - np.cos(np.pi * h)) / (2 + np.cos(np.pi * h))


def test_field_validation():
    m = build_interval_mesh(4)
    with pytest.raises(ConfigError):
        NodalField(m, np.zeros(4))
    with pytest.raises(ConfigError):
        CellField(m, np.zeros(5))
    with pytest.raises(ConfigError):
        CellField(m, [1, 2, np.nan, 4])
    with pytest.raises(ConfigError):
        NodalField(m, 1.0) + NodalField(build_interval_mesh(4), 1.0)
    f = CellField(m, [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(ValueError):
        f.values[0] = 3.0


def test_field_arithmetic():
    m = build_interval_mesh(3)
    a = CellField(m, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal((a + 1).values, [2, 3, 4])
    np.testing.assert_array_equal((2 * a - a).values, a.values)
    np.testing.assert_array_equal((a / 2).values, [0.5, 1.0, 1.5])


def test_from_function_samples_centroids():
    m = build_rect_mesh(2, 2)
    c = CellField.from_function(m, lambda x, y: x + 10 * y)
    np.testing.assert_allclose(c.values, m.centroids[:, 0] + 10 * m.centroids[:, 1])


def test_l2_examples():
    m = build_interval_mesh(16)
    assert l2_norm(CellField(m, 1.0)) == pytest.approx(1.0, rel=1e-14)
    assert l2_norm(NodalField.from_function(m, lambda x: x)) == pytest.approx(1 / np.sqrt(3), rel=1e-13)
    assert l2_norm(NodalField(m, 0.0)) == 0.0
    assert l2_norm(CellField(m, 0.0)) == 0.0


def test_h1_examples():
    m = build_interval_mesh(16)
    assert h1_norm(NodalField(m, 1.0)) == pytest.approx(1.0, rel=1e-14)
    assert h1_norm(NodalField.from_function(m, lambda x: x)) == pytest.approx(np.sqrt(4 / 3), rel=1e-13)
    assert h1_norm(NodalField(m, 0.0)) == 0.0


def test_norms_exact_for_linear_field_2d():
    m = build_rect_mesh(4, 4, (0, 0, 2, 1))
    v = NodalField.from_function(m, lambda x, y: 3 * x - y + 1)
    # |grad v|^2 = 10 on an area-2 domain
    semi2 = 10.0 * 2.0
    assert h1_seminorm(v) ** 2 == pytest.approx(semi2, rel=1e-13)
    ref, _ = dblquad(lambda y, x: (3 * x - y + 1) ** 2, 0, 2, 0, 1)
    assert l2_norm(v) ** 2 == pytest.approx(ref, rel=1e-12)


def test_boundary_l2_examples():
    m = build_interval_mesh(10)
    assert boundary_l2(NodalField(m, -3.0)) == pytest.approx(3 * np.sqrt(2))
    assert boundary_l2(NodalField(m, 0.0)) == 0.0
    assert boundary_l2(NodalField.from_function(m, lambda x: x)) == pytest.approx(1.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), two_d=st.booleans())
def test_h1_pythagoras(seed, two_d):
    rng = np.random.default_rng(seed)
    m = build_rect_mesh(3, 4) if two_d else build_interval_mesh(9)
    v = NodalField(m, rng.normal(size=m.num_nodes))
    assert h1_norm(v) ** 2 == pytest.approx(l2_norm(v) ** 2 + h1_seminorm(v) ** 2, rel=1e-13)


def test_l2_error_order():
    errs = []
    for n in (8, 16, 32):
        m = build_interval_mesh(n)
        v = NodalField.from_function(m, np.sin)
        errs.append(l2_error(v, np.sin))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    np.testing.assert_allclose(rates, 2.0, atol=0.05)
    m = build_rect_mesh(5, 5)
    lin = NodalField.from_function(m, lambda x, y: 2 * x + y)
    assert l2_error(lin, lambda x, y: 2 * x + y) < 1e-14


def test_poincare_constant_unit_interval():
    c = estimate_constants(build_interval_mesh(256), 1.0, 0.0, 1.0)
    assert abs(c.c_p - 1 / np.pi**2) <= 0.01 / np.pi**2
    for n in (4, 17, 64):
        cp, _, _ = embedding_constants(build_interval_mesh(n))
        assert cp == pytest.approx(1 / _dirichlet_p1_eigenvalue(n), rel=1e-10)


def test_poincare_constant_increases_to_continuum():
    cps = [embedding_constants(build_interval_mesh(n))[0] for n in (4, 8, 16, 32, 64)]
    assert np.all(np.diff(cps) > 0)
    assert cps[-1] < 1 / np.pi**2


def test_poincare_constant_scales_with_length():
    cp1 = embedding_constants(build_interval_mesh(40, 0, 1))[0]
    cp2 = embedding_constants(build_interval_mesh(40, 0, 2))[0]
    assert cp2 == pytest.approx(4 * cp1, rel=1e-10)


def test_alpha_without_reaction():
    c = estimate_constants(build_interval_mesh(64), 1.0, 0.0, 1.0)
    assert c.gamma_tilde == 1.0
    assert c.alpha == pytest.approx(1.0 / c.c_f)
    assert c.alpha > 0 and c.beta > 0


def test_constant_formulas():
    m = build_rect_mesh(6, 6)
    c = estimate_constants(m, 0.7, 0.05, 2.5)
    assert c.gamma_tilde == 1.0
    assert c.alpha == pytest.approx((0.7 - 0.05 * c.c_f) / c.c_f)
    assert c.beta == pytest.approx((0.7 - 0.05 * c.c_p) / (c.c_f * (1 + 2.5 * c.c_t**2)))
    assert c.lam == pytest.approx((0.7 - 0.05 * c.c_f) / c.c_f)
    c = estimate_constants(m, 0.7, 0.05, 0.4)
    assert c.gamma_tilde == 0.4
    assert c.alpha == pytest.approx((0.7 * 0.4 - 0.05 * c.c_f) / c.c_f)
    assert c.lam > c.alpha


def test_reaction_bound_rejected():
    m = build_interval_mesh(32)
    c = estimate_constants(m, 1.0, 0.0, 1.0, check=False)
    bound = min(1.0 / c.c_p, 1.0 / c.c_f)
    with pytest.raises(AdmissibilityError) as exc:
        estimate_constants(m, 1.0, 1.01 * bound, 1.0)
    assert exc.value.details["bound"] == pytest.approx(bound)
    assert exc.value.details["b_hi"] == pytest.approx(1.01 * bound)
    estimate_constants(m, 1.0, 0.99 * bound, 1.0)


def test_constants_bad_inputs():
    m = build_interval_mesh(8)
    for args in ((0.0, 0.0, 1.0), (1.0, -0.1, 1.0), (1.0, 0.0, 0.0)):
        with pytest.raises(ConfigError):
            estimate_constants(m, *args)


def test_sparse_and_dense_eigen_paths_agree(monkeypatch):
    import robinid.field as fld

    m = build_rect_mesh(12, 12)
    dense = fld.embedding_constants(m)
    monkeypatch.setattr(fld, "_DENSE_LIMIT", 10)
    m2 = build_rect_mesh(12, 12)
    sparse = fld.embedding_constants(m2)
    np.testing.assert_allclose(sparse, dense, rtol=1e-8)


@pytest.mark.parametrize("mesh", [build_interval_mesh(40), build_rect_mesh(9, 7, (0, 0, 1.5, 1))],
                         ids=["1d", "2d"])
def test_discrete_inequalities_random_fields(mesh):
    rng = np.random.default_rng(7)
    cp, cf, ct = embedding_constants(mesh)
    q = boundary_trace_weights(mesh)
    inner = mesh.interior_nodes
    for _ in range(50):
        v = rng.normal(size=mesh.num_nodes) + rng.normal() * 3
        f = NodalField(mesh, v)
        d = np.zeros(mesh.num_nodes)
        d[inner] = v[inner]
        fd = NodalField(mesh, d)
        assert l2_norm(fd) ** 2 <= cp * h1_seminorm(fd) ** 2 * (1 + 1e-12)
        assert h1_norm(f) ** 2 <= cf * (h1_seminorm(f) ** 2 + (q @ v) ** 2) * (1 + 1e-12)
        assert boundary_l2(f) ** 2 <= ct**2 * h1_norm(f) ** 2 * (1 + 1e-12)


def test_csv_roundtrip(tmp_path):
    m = build_rect_mesh(3, 2)
    rng = np.random.default_rng(0)
    for cls, kind in ((NodalField, "nodal"), (CellField, "cell")):
        f = cls(m, rng.normal(size=cls._size(m)))
        p = tmp_path / f"{kind}.csv"
        write_csv(f, p)
        assert p.read_text().splitlines()[0] == "index,x,y,value"
        g = read_csv(p, m, kind)
        np.testing.assert_array_equal(g.values, f.values)
        p2 = tmp_path / f"{kind}2.csv"
        write_csv(g, p2)
        assert p.read_bytes() == p2.read_bytes()


def test_csv_errors(tmp_path):
    m = build_interval_mesh(4)
    with pytest.raises(ConfigError):
        read_csv(tmp_path / "missing.csv", m)
    p = tmp_path / "f.csv"
    write_csv(NodalField(m, 1.0), p)
    assert p.read_text().splitlines()[0] == "index,x,value"
    with pytest.raises(ConfigError):
        read_csv(p, build_interval_mesh(5))
