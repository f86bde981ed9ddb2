import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ontolab.dist_core import (
    A,
    LAMBDA,
    X,
    Y,
    Z,
    Backend,
    ConditionalKernel,
    JointTable,
    Role,
    Scenario,
    VariableSpec,
    build_joint,
    canonical_scenario,
    compose_product,
    condition,
    conditional_kernel,
    derive_seed,
    marginalize,
    random_kernel,
    to_probability,
)
from ontolab.errors import (
    AliasViolation,
    CapExceeded,
    CyclicFactorization,
    DuplicateTarget,
    InvalidAssignment,
    InvalidProbability,
    MissingVariable,
    NegativeEntry,
    NotNormalized,
    UnknownVariable,
    ZeroProbabilityEvent,
)

NAMES = ("V0", "V1", "V2", "V3")


@st.composite
def weighted_joints(draw, backend=Backend.EXACT):
    """Random joint over up to four variables, alphabets of size <= 4."""
    n = draw(st.integers(min_value=1, max_value=4))
    sizes = draw(st.lists(st.integers(min_value=1, max_value=4), min_size=n, max_size=n))
    size = math.prod(sizes)
    weights = draw(st.lists(st.integers(min_value=0, max_value=5), min_size=size, max_size=size))
    weights[0] += 1
    total = sum(weights)
    scenario = Scenario.of(*(VariableSpec(NAMES[i], Role.OUTCOME, s) for i, s in enumerate(sizes)))
    if backend is Backend.EXACT:
        values = [Fraction(w, total) for w in weights]
    else:
        values = [w / total for w in weights]
    entries = [
        (scenario.as_assignment(point), value)
        for point, value in zip(scenario.assignments(), values)
        if value
    ]
    return build_joint(scenario, entries, backend)


def brute_marginal(joint, keep):
    out = {}
    for point in joint.scenario.assignments():
        assignment = joint.scenario.as_assignment(point)
        key = tuple(assignment[n] for n in keep)
        out[key] = out.get(key, 0) + joint.probabilities[point]
    return out


def binary(*names):
    return Scenario.of(*(VariableSpec(n, Role.OUTCOME, 2) for n in names))


# ---------------------------------------------------------------------
# Scalars and scenarios
# ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "value, expected",
    [("1/4", Fraction(1, 4)), ("0.25", Fraction(1, 4)), (0.1, Fraction(1, 10)), (1, Fraction(1))],
)
def test_to_probability_exact(value, expected):
    assert to_probability(value, Backend.EXACT) == expected


def test_to_probability_rejects_garbage():
    with pytest.raises(InvalidProbability):
        to_probability("one half", Backend.EXACT)
    with pytest.raises(InvalidProbability):
        to_probability(True, Backend.EXACT)


def test_canonical_scenario_order_and_alias():
    scenario = canonical_scenario({LAMBDA: 3}, z_alias=LAMBDA)
    assert scenario.names == ("A", "B", "C", "X", "Y", "Z", "lambda")
    assert scenario.alphabet_size(Z) == 3
    assert scenario.spec(Z).alias_of == LAMBDA


def test_unknown_variable_is_named():
    with pytest.raises(UnknownVariable, match="W"):
        canonical_scenario().index("W")


def test_derive_seed_is_stable_and_split():
    assert derive_seed(7, 3) == derive_seed(7, 3)
    assert len({derive_seed(7, i) for i in range(100)}) == 100
    assert derive_seed(7, 0) != derive_seed(8, 0)


# ---------------------------------------------------------------------
# Joint construction
# ---------------------------------------------------------------------


def test_build_joint_exact_has_no_rounding():
    scenario = binary(A, X)
    joint = build_joint(
        scenario,
        [({A: 0, X: 0}, "1/3"), ({A: 1, X: 1}, "2/3")],
        Backend.EXACT,
    )
    assert joint.total() == 1
    assert joint.probability({A: 1, X: 1}) == Fraction(2, 3)
    assert joint.probability({A: 0, X: 1}) == 0
    assert [a for a, _ in joint.entries()] == [{A: 0, X: 0}, {A: 1, X: 1}]


def test_build_joint_rejects_unnormalized():
    with pytest.raises(NotNormalized):
        build_joint(binary(A), [({A: 0}, 0.5), ({A: 1}, 0.4)])


def test_build_joint_rejects_negative():
    with pytest.raises(NegativeEntry):
        build_joint(binary(A), [({A: 0}, "3/2"), ({A: 1}, "-1/2")], Backend.EXACT)


@pytest.mark.parametrize(
    "assignment, error",
    [
        ({A: 0}, InvalidAssignment),
        ({A: 0, X: 2}, InvalidAssignment),
        ({A: 0, X: 0, "W": 0}, UnknownVariable),
    ],
)
def test_build_joint_rejects_bad_assignments(assignment, error):
    with pytest.raises(error):
        build_joint(binary(A, X), [(assignment, 1.0)])


def test_build_joint_rejects_duplicates():
    with pytest.raises(InvalidAssignment):
        build_joint(binary(A), [({A: 0}, 0.5), ({A: 0}, 0.5)])


def test_alias_violation():
    scenario = Scenario.of(VariableSpec(X, Role.OUTCOME, 2), VariableSpec(Z, Role.OUTCOME, 2, alias_of=X))
    build_joint(scenario, [({X: 0, Z: 0}, 0.5), ({X: 1, Z: 1}, 0.5)])
    with pytest.raises(AliasViolation):
        build_joint(scenario, [({X: 0, Z: 1}, 1.0)])


def test_cap_exceeded_before_allocation():
    scenario = Scenario.of(*(VariableSpec(f"V{i}", Role.OUTCOME, 10) for i in range(8)))
    with pytest.raises(CapExceeded):
        build_joint(scenario, [])


def test_to_exact_is_lossless():
    joint = build_joint(binary(A), [({A: 0}, 0.25), ({A: 1}, 0.75)])
    exact = joint.to_exact()
    assert exact.backend is Backend.EXACT
    assert exact.probability({A: 0}) == Fraction(1, 4)
    assert exact.to_float() == joint


def test_tables_are_read_only():
    joint = build_joint(binary(A), [({A: 0}, 1.0)])
    with pytest.raises(ValueError):
        joint.probabilities[0] = 0.5


# ---------------------------------------------------------------------
# Marginals and conditionals against brute force
# ---------------------------------------------------------------------


@settings(max_examples=500, deadline=None)
@given(data=st.data(), joint=weighted_joints())
def test_marginalize_matches_enumeration_exact(data, joint):
    keep = data.draw(st.permutations(joint.names).flatmap(lambda p: st.integers(1, len(p)).map(lambda k: p[:k])))
    result = marginalize(joint, keep)
    assert result.names == tuple(keep)
    oracle = brute_marginal(joint, keep)
    for point in result.scenario.assignments():
        assert result.probabilities[point] == oracle[point]


@settings(max_examples=100, deadline=None)
@given(data=st.data(), joint=weighted_joints(Backend.FLOAT))
def test_marginalize_matches_enumeration_float(data, joint):
    keep = data.draw(st.permutations(joint.names).flatmap(lambda p: st.integers(1, len(p)).map(lambda k: p[:k])))
    result = marginalize(joint, keep)
    oracle = brute_marginal(joint, keep)
    for point in result.scenario.assignments():
        assert abs(result.probabilities[point] - oracle[point]) <= 1e-12


@settings(max_examples=500, deadline=None)
@given(data=st.data(), joint=weighted_joints())
def test_condition_matches_enumeration(data, joint):
    if len(joint.names) < 2:
        return
    order = data.draw(st.permutations(joint.names))
    split = data.draw(st.integers(1, len(order) - 1))
    targets, givens = list(order[:split]), list(order[split:])
    given_point = {n: data.draw(st.integers(0, joint.scenario.alphabet_size(n) - 1)) for n in givens}
    joint_marginal = brute_marginal(joint, givens + targets)
    mass = sum(v for k, v in joint_marginal.items() if k[: len(givens)] == tuple(given_point[n] for n in givens))
    if mass == 0:
        with pytest.raises(ZeroProbabilityEvent):
            condition(joint, targets, given_point)
        return
    result = condition(joint, targets, given_point)
    prefix = tuple(given_point[n] for n in givens)
    for point in result.scenario.assignments():
        assert result.probabilities[point] == joint_marginal[prefix + point] / mass


def test_condition_rejects_null_event():
    joint = build_joint(binary(A, X), [({A: 0, X: 0}, "1")], Backend.EXACT)
    with pytest.raises(ZeroProbabilityEvent):
        condition(joint, [X], {A: 1})


def test_conditional_kernel_reads_rows():
    joint = build_joint(
        binary(A, X),
        [({A: 0, X: 0}, "1/4"), ({A: 0, X: 1}, "1/4"), ({A: 1, X: 1}, "1/2")],
        Backend.EXACT,
    )
    kernel = conditional_kernel(joint, [X], [A])
    assert list(kernel.row({A: 0})) == [Fraction(1, 2), Fraction(1, 2)]
    assert list(kernel.row({A: 1})) == [0, 1]


# ---------------------------------------------------------------------
# Kernels and factorized composition
# ---------------------------------------------------------------------


def test_kernel_rows_must_normalize():
    with pytest.raises(NotNormalized):
        ConditionalKernel.from_rows([X], [A], {A: 2, X: 2}, [["1/2", "1/2"], ["1/2", "1/3"]])


@pytest.mark.parametrize("backend", list(Backend))
def test_random_kernel_is_seeded(backend):
    sizes = {A: 3, X: 4}
    first = random_kernel([X], [A], sizes, seed=11, backend=backend)
    again = random_kernel([X], [A], sizes, seed=11, backend=backend)
    other = random_kernel([X], [A], sizes, seed=12, backend=backend)
    assert np.array_equal(first.table, again.table)
    assert not np.array_equal(first.table, other.table)
    if backend is Backend.EXACT:
        assert all(sum(row) == 1 for _, row in first.rows())


def test_compose_product_matches_rows():
    sizes = {A: 2, LAMBDA: 3, X: 2}
    scenario = Scenario.of(
        VariableSpec(A, Role.SETTING, 2), VariableSpec(X, Role.OUTCOME, 2), VariableSpec(LAMBDA, Role.ONTIC, 3)
    )
    factors = [
        random_kernel([LAMBDA], [], sizes, 1, Backend.EXACT),
        random_kernel([A], [], sizes, 2, Backend.EXACT),
        random_kernel([X], [A, LAMBDA], sizes, 3, Backend.EXACT),
    ]
    joint = compose_product(scenario, factors)
    assert joint.backend is Backend.EXACT
    assert joint.total() == 1
    for a, x, l in itertools.product(range(2), range(2), range(3)):
        expected = factors[0].table[l] * factors[1].table[a] * factors[2].table[a, l, x]
        assert joint.probability({A: a, X: x, LAMBDA: l}) == expected


def test_compose_product_structure_errors():
    sizes = {A: 2, X: 2}
    scenario = binary(A, X)
    p_a = ConditionalKernel.uniform([A], [], sizes)
    x_given_a = ConditionalKernel.uniform([X], [A], sizes)
    with pytest.raises(CyclicFactorization):
        compose_product(scenario, [x_given_a, p_a])
    with pytest.raises(DuplicateTarget):
        compose_product(scenario, [p_a, p_a, x_given_a])
    with pytest.raises(MissingVariable):
        compose_product(scenario, [p_a])


def test_deterministic_kernel_and_alias():
    sizes = {X: 2, Y: 2}
    scenario = Scenario.of(VariableSpec(X, Role.OUTCOME, 2), VariableSpec(Y, Role.OUTCOME, 2, alias_of=X))
    joint = compose_product(
        scenario,
        [ConditionalKernel.uniform([X], [], sizes), ConditionalKernel.deterministic(Y, [X], sizes, lambda x: x)],
    )
    assert joint == JointTable.from_array(scenario, [["1/2", 0], [0, "1/2"]], Backend.EXACT)


@settings(max_examples=300, deadline=None)
@given(data=st.data(), joint=weighted_joints())
def test_marginalizing_twice_equals_once(data, joint):
    keep = data.draw(st.permutations(joint.names).flatmap(lambda p: st.integers(1, len(p)).map(lambda k: p[:k])))
    inner = data.draw(st.integers(1, len(keep)))
    sub = data.draw(st.permutations(keep[:inner]))
    assert marginalize(marginalize(joint, keep), sub) == marginalize(joint, sub)


@settings(max_examples=100, deadline=None)
@given(data=st.data(), joint=weighted_joints())
def test_exact_and_float_marginals_agree(data, joint):
    keep = data.draw(st.permutations(joint.names).flatmap(lambda p: st.integers(1, len(p)).map(lambda k: p[:k])))
    exact = marginalize(joint, keep).to_float()
    lowered = marginalize(joint.to_float(), keep)
    assert exact.allclose(lowered, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_condition_recovers_composed_kernel(seed):
    sizes = {A: 2, LAMBDA: 3, X: 2}
    scenario = Scenario.of(
        VariableSpec(A, Role.SETTING, 2), VariableSpec(X, Role.OUTCOME, 2), VariableSpec(LAMBDA, Role.ONTIC, 3)
    )
    x_given = random_kernel([X], [A, LAMBDA], sizes, derive_seed(seed, 2), Backend.EXACT)
    factors = [
        random_kernel([LAMBDA], [], sizes, derive_seed(seed, 0), Backend.EXACT),
        random_kernel([A], [], sizes, derive_seed(seed, 1), Backend.EXACT),
        x_given,
    ]
    joint = compose_product(scenario, factors)
    for a, l in itertools.product(range(2), range(3)):
        if marginalize(joint, [A, LAMBDA]).probability({A: a, LAMBDA: l}) == 0:
            continue
        rows = condition(joint, [X], {A: a, LAMBDA: l})
        assert list(rows.probabilities) == list(x_given.row({A: a, LAMBDA: l}))


def test_random_kernel_rows_are_flat_dirichlet():
    sizes = {A: 3, X: 2}
    firsts = []
    for seed in range(10_000):
        table = random_kernel([X], [A], sizes, seed).table
        assert np.all(np.abs(table.sum(axis=-1) - 1.0) <= 1e-12)
        firsts.extend(table[:, 0])
    assert abs(np.mean(firsts) - 0.5) <= 0.02
