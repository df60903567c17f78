import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robustcore.game import ValueFunction, in_core, three_firm_game
from robustcore.geometry import (MIXED, OVER_PROJECTION, PROJECTION, OperatorSpec, PolyhedralSet,
                                 ProjectionError, apply_operator, bounding_polyhedron, core_polyhedron,
                                 normalize_kind, project, project_many)

from conftest import random_core_game
from oracles import active_set_projection, core_rows

KINDS = [PROJECTION, OVER_PROJECTION, MIXED]


def hyperplane(total=8.0, n=3):
    return PolyhedralSet(np.zeros((0, n)), np.zeros(0), total, np.zeros(0, dtype=np.int64))


def test_core_polyhedron_shape():
    core = core_polyhedron(three_firm_game().upper)
    assert core.n_rows == 6 and core.dim == 3 and core.total == 8
    assert core.masks.tolist() == [1, 2, 3, 4, 5, 6]


def test_single_agent_core():
    core = core_polyhedron(ValueFunction(1, [0.0, 4.0]))
    assert core.n_rows == 0
    np.testing.assert_allclose(project(core, [1.0]), [4.0])


def test_bounding_polyhedron_rows():
    v = three_firm_game().upper
    assert sorted(bounding_polyhedron(v, 0).masks.tolist()) == [0b001, 0b011, 0b101]
    v2 = ValueFunction.from_dict(2, {"0": 1, "1": 1, "0,1": 3})
    assert bounding_polyhedron(v2, 1).masks.tolist() == [0b10]
    rows = set()
    for i in range(3):
        rows |= set(bounding_polyhedron(v, i).masks.tolist())
    assert rows == set(core_polyhedron(v).masks.tolist())
    with pytest.raises(IndexError):
        bounding_polyhedron(v, 3)


def test_membership_via_rows_matches_in_core(rng):
    v = three_firm_game().upper
    core = core_polyhedron(v)
    for _ in range(200):
        x = rng.uniform(0, 5, size=3)
        x *= 8 / x.sum()
        assert core.contains(x, 1e-9) == in_core(x, v, 1e-9)


def test_hyperplane_projection_and_reflection():
    H = hyperplane()
    np.testing.assert_allclose(project(H, [9, 0, 0]), [26 / 3, -1 / 3, -1 / 3], atol=1e-12)
    refl = apply_operator(OperatorSpec(OVER_PROJECTION, H), [9, 0, 0])
    np.testing.assert_allclose(refl, [25 / 3, -2 / 3, -2 / 3], atol=1e-12)


def test_three_firm_projection_matches_oracle():
    v = three_firm_game().upper
    A, b, total = core_rows(v.values, 3)
    expected = active_set_projection(A, b, total, [8, 0, 0])
    np.testing.assert_allclose(project(core_polyhedron(v), [8, 0, 0]), expected, atol=1e-6)
    np.testing.assert_allclose(expected, [3, 2.5, 2.5], atol=1e-9)


def test_points_in_set_are_fixed_by_every_kind():
    core = core_polyhedron(three_firm_game().upper)
    x = np.array([2.4, 3.0, 2.6])
    for kind in KINDS:
        np.testing.assert_allclose(apply_operator(OperatorSpec(kind, core, 0.5), x), x, atol=1e-9)


def test_mixed_endpoints(rng):
    core = core_polyhedron(three_firm_game().upper)
    for _ in range(20):
        x = rng.normal(size=3) * 4
        np.testing.assert_allclose(apply_operator(OperatorSpec(MIXED, core, 0.0), x),
                                   apply_operator(OperatorSpec(PROJECTION, core), x), atol=1e-12)
        np.testing.assert_allclose(apply_operator(OperatorSpec(MIXED, core, 1.0), x),
                                   apply_operator(OperatorSpec(OVER_PROJECTION, core), x), atol=1e-12)


def test_operator_spec_validation():
    core = core_polyhedron(three_firm_game().upper)
    with pytest.raises(ValueError):
        OperatorSpec(MIXED, core, 1.5)
    with pytest.raises(ValueError):
        normalize_kind("reflect")
    assert normalize_kind("overproj") == OVER_PROJECTION
    assert OperatorSpec(MIXED, core, 0.3).is_paracontraction
    assert not OperatorSpec(OVER_PROJECTION, core).is_paracontraction


def test_empty_set_reports_non_convergence():
    # x0 + x1 >= 5 and x0 + x1 <= 3 (as -x0 - x1 >= -3): empty
    A = np.array([[1.0, 1.0, 0.0], [-1.0, -1.0, 0.0]])
    P = PolyhedralSet(A, np.array([5.0, -3.0]), 8.0, np.array([-1, -1]))
    with pytest.raises(ProjectionError) as info:
        project_many(P, np.zeros((2, 3)), max_iter=200)
    assert info.value.agent == 0 and info.value.residual > 0
    assert "empty" in str(info.value)


def test_degenerate_set_is_handled():
    # the pairwise bounds force a single point
    v = ValueFunction.from_dict(2, {"0": 1, "1": 2, "0,1": 3})
    np.testing.assert_allclose(project(core_polyhedron(v), [5, -5]), [1, 2], atol=1e-8)


def _random_instance(seed, n):
    rng = np.random.default_rng(seed)
    g = random_core_game(rng, n)
    return rng, g.upper


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 4), agent=st.integers(0, 3))
def test_projection_matches_active_set_oracle(seed, n, agent):
    rng, v = _random_instance(seed, n)
    which = None if agent >= n else agent
    target = core_polyhedron(v) if which is None else bounding_polyhedron(v, which)
    A, b, total = core_rows(v.values, n, which)
    for _ in range(3):
        x = rng.normal(size=n) * 3
        np.testing.assert_allclose(project(target, x), active_set_projection(A, b, total, x), atol=1e-6)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 4),
       kind=st.sampled_from(KINDS), beta=st.floats(0, 1))
def test_operators_are_nonexpansive(seed, n, kind, beta):
    rng, v = _random_instance(seed, n)
    op = OperatorSpec(kind, core_polyhedron(v), beta)
    x, y = rng.normal(size=(2, n)) * 4
    assert np.linalg.norm(op(x) - op(y)) <= np.linalg.norm(x - y) + 1e-7


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 4), beta=st.floats(0, 0.95))
def test_paracontraction_toward_fixed_points(seed, n, beta):
    rng, v = _random_instance(seed, n)
    core = core_polyhedron(v)
    y = project(core, rng.normal(size=n))
    for kind in (PROJECTION, MIXED):
        op = OperatorSpec(kind, core, beta)
        x = rng.normal(size=n) * 5
        if core.contains(x, 1e-6):
            continue
        assert np.linalg.norm(op(x) - y) < np.linalg.norm(x - y)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 4), kind=st.sampled_from(KINDS))
def test_distance_to_set_never_grows(seed, n, kind):
    rng, v = _random_instance(seed, n)
    core = core_polyhedron(v)
    x = rng.normal(size=n) * 4
    tx = OperatorSpec(kind, core, 0.5)(x)
    d_before = np.linalg.norm(x - project(core, x))
    d_after = np.linalg.norm(tx - project(core, tx))
    assert d_after <= d_before + 1e-7


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 4))
def test_projection_is_idempotent_and_variational(seed, n):
    rng, v = _random_instance(seed, n)
    core = core_polyhedron(v)
    x = rng.normal(size=n) * 4
    p = project(core, x)
    assert core.residual(p) <= 1e-8
    assert np.linalg.norm(project(core, p) - p) <= 1e-9
    for _ in range(10):
        y = project(core, rng.normal(size=n) * 4)
        assert (x - p) @ (y - p) <= 1e-7
