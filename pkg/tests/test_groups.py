import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqop.errors import InconsistencyError, ValidationError
from eqop.groups import (
    DIRECT_PRODUCT,
    SEMI_DIRECT,
    SINGLE_CYCLIC,
    GroupElement,
    GroupSpec,
    action_from_generator,
    character_orbits,
    compose,
    dual_action,
    elements,
    identity,
    inverse,
    orbit,
    orbit_representatives,
    quarter_turn_spec,
    validate_element,
)

Z10 = GroupSpec((10,), SINGLE_CYCLIC)
Z5x5 = GroupSpec((5, 5), DIRECT_PRODUCT)
Q33 = quarter_turn_spec(3, 3)


def test_compose_cyclic_mod10():
    assert compose(GroupElement((3,)), GroupElement((9,)), Z10) == GroupElement((2,))


def test_compose_direct_product_componentwise():
    g = compose(GroupElement((3, 4)), GroupElement((4, 3)), Z5x5)
    assert g == GroupElement((2, 2))


def test_identity_is_neutral():
    for spec in (Z10, Z5x5, Q33):
        e = identity(spec)
        for g in elements(spec):
            assert compose(e, g, spec) == g
            assert compose(g, e, spec) == g


def test_semidirect_compose_example():
    # (a=(1,0), h=1) * (a=(1,0), h=0): the quarter turn sends (1,0) to (0,1),
    # so the translation parts add to (1,1) and the rotation parts to 1.
    g = GroupElement((1, 0, 1))
    h = GroupElement((1, 0, 0))
    assert compose(g, h, Q33) == GroupElement((1, 1, 1))


def test_semidirect_associativity_exhaustive():
    els = list(elements(Q33))
    assert len(els) == 36
    for g, h, f in itertools.product(els, els, els):
        assert compose(compose(g, h, Q33), f, Q33) == compose(
            g, compose(h, f, Q33), Q33
        )


def test_inverse_cyclic():
    assert inverse(GroupElement((3,)), Z10) == GroupElement((7,))
    assert inverse(GroupElement((0,)), Z10) == GroupElement((0,))


def test_inverse_semidirect_matches_bruteforce():
    g = GroupElement((1, 1, 1))
    gi = inverse(g, Q33)
    e = identity(Q33)
    assert compose(g, gi, Q33) == e
    assert compose(gi, g, Q33) == e
    brute = [h for h in elements(Q33) if compose(g, h, Q33) == e]
    assert brute == [gi]


def test_every_element_has_unique_inverse_quarter_turn():
    e = identity(Q33)
    for g in elements(Q33):
        gi = inverse(g, Q33)
        assert compose(g, gi, Q33) == e
        assert compose(gi, g, Q33) == e


def test_element_out_of_range_rejected():
    with pytest.raises(ValidationError):
        compose(GroupElement((10,)), GroupElement((0,)), Z10)
    with pytest.raises(ValidationError):
        validate_element(GroupElement((1, 2)), Z10)
    with pytest.raises(ValidationError):
        validate_element(GroupElement((-1,)), Z10)


def test_spec_validation_errors():
    with pytest.raises(ValidationError):
        GroupSpec((0,), SINGLE_CYCLIC)
    with pytest.raises(ValidationError):
        GroupSpec((3, 3), SINGLE_CYCLIC)
    with pytest.raises(ValidationError):
        GroupSpec((3, 3), "nonsense")
    with pytest.raises(ValidationError):
        GroupSpec((3, 3, 4), SEMI_DIRECT)  # missing action
    with pytest.raises(ValidationError):
        GroupSpec((3, 3), DIRECT_PRODUCT, action=Q33.action)


def test_quarter_turn_requires_square_lattice():
    with pytest.raises(ValidationError):
        quarter_turn_spec(3, 5)


def test_action_generator_order_must_divide_H():
    # A 3-cycle on Z_3 x Z_1 cannot generate a 4-element rotation action.
    with pytest.raises(ValidationError):
        action_from_generator(3, 1, 4, lambda k, kp: ((k + 1) % 3, kp))


def test_action_table_must_fix_origin_of_rotations():
    bad = [list(map(list, rows)) for rows in Q33.action]
    bad[0] = bad[1]  # action[0] no longer the identity
    with pytest.raises(ValidationError):
        GroupSpec((3, 3, 4), SEMI_DIRECT, tuple(bad))


def test_action_table_must_be_additive():
    # A bijection that is not an automorphism: swap two images in action[1].
    rows = [[[list(p) for p in row] for row in js] for js in Q33.action]
    rows[1][0][1], rows[1][0][2] = rows[1][0][2], rows[1][0][1]
    fixed = tuple(
        tuple(tuple(tuple(p) for p in row) for row in js) for js in rows
    )
    with pytest.raises(ValidationError):
        GroupSpec((3, 3, 4), SEMI_DIRECT, fixed)


def test_dual_action_quarter_turn():
    dual = dual_action(Q33)
    assert dual[0][(1, 2)] == (1, 2)
    # One quarter turn acts on character indices by (x, y) -> (-y, x).
    assert dual[1][(0, 1)] == (2, 0)
    assert dual[1][(1, 1)] == (2, 1)
    assert dual[1][(1, 0)] == (0, 1)


def test_orbit_representatives_3x3():
    assert orbit_representatives(Q33) == [(0, 1), (1, 1)]
    orbits = character_orbits(Q33)
    flat = {u for orb in orbits for u in orb}
    assert flat == {(x, y) for x in range(3) for y in range(3)} - {(0, 0)}
    assert all(len(orb) == 4 for orb in orbits)


def test_orbit_representatives_5x5():
    q55 = quarter_turn_spec(5, 5)
    assert orbit_representatives(q55) == [
        (0, 1),
        (0, 2),
        (1, 1),
        (1, 2),
        (1, 3),
        (2, 2),
    ]


def test_degree_sum_identity():
    for K in (3, 5, 7):
        spec = quarter_turn_spec(K, K)
        reps = orbit_representatives(spec)
        A, H = K * K, 4
        assert H + len(reps) * H * H == A * H


def test_orbit_size_inconsistency_detected():
    # The identity-only action fixes every character, so nonzero orbits have
    # size 1 instead of |H|.
    frozen = action_from_generator(3, 3, 2, lambda k, kp: (k, kp))
    spec = GroupSpec((3, 3, 2), SEMI_DIRECT, frozen)
    with pytest.raises(InconsistencyError):
        orbit_representatives(spec)


def test_image_orbits_on_three_pixels():
    z3 = GroupSpec((3,), SINGLE_CYCLIC)

    def act(x, g):
        return np.roll(x, g.indices[0])

    assert len(orbit(np.array([0.0, 0.0, 0.0]), act, z3)) == 1
    assert len(orbit(np.array([1.0, 1.0, 1.0]), act, z3)) == 1
    assert len(orbit(np.array([1.0, 0.0, 0.0]), act, z3)) == 3


@given(st.integers(1, 200), st.data())
def test_cyclic_axioms(K, data):
    spec = GroupSpec((K,), SINGLE_CYCLIC)
    a = GroupElement((data.draw(st.integers(0, K - 1)),))
    b = GroupElement((data.draw(st.integers(0, K - 1)),))
    c = GroupElement((data.draw(st.integers(0, K - 1)),))
    assert compose(compose(a, b, spec), c, spec) == compose(a, compose(b, c, spec), spec)
    assert compose(a, inverse(a, spec), spec) == identity(spec)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([2, 3, 4, 5, 6, 7]), st.data())
def test_quarter_turn_group_axioms(K, data):
    spec = quarter_turn_spec(K, K)
    assert spec.order == 4 * K * K

    def draw():
        return GroupElement(
            (
                data.draw(st.integers(0, K - 1)),
                data.draw(st.integers(0, K - 1)),
                data.draw(st.integers(0, 3)),
            )
        )

    a, b, c = draw(), draw(), draw()
    assert compose(compose(a, b, spec), c, spec) == compose(a, compose(b, c, spec), spec)
    assert compose(a, inverse(a, spec), spec) == identity(spec)
    assert compose(inverse(a, spec), a, spec) == identity(spec)


@settings(max_examples=25, deadline=None)
@given(st.integers(5, 40), st.integers(0, 2**31 - 1))
def test_orbit_cardinality_divides_group_order(K, seed):
    spec = GroupSpec((K,), SINGLE_CYCLIC)
    rng = np.random.default_rng(seed)
    x = (rng.random(K) < 0.5).astype(float)

    def act(v, g):
        return np.roll(v, g.indices[0])

    assert spec.order % len(orbit(x, act, spec)) == 0
