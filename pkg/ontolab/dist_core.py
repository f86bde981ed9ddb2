"""dist_core.py

Dense joint distributions over finite random variables.

Two numeric backends share every code path:

- ``Backend.EXACT`` stores ``fractions.Fraction`` values in numpy object
  arrays; no operation ever rounds.
- ``Backend.FLOAT`` stores float64 arrays and is used wherever speed matters
  (sweeps, searches).

Tables are indexed by full assignments, one axis per scenario variable in
scenario order. Every value returned here is immutable: arrays are marked
read-only on construction.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Callable, Dict, Iterable, Iterator, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ontolab.errors import (
    AliasViolation,
    CapExceeded,
    CyclicFactorization,
    DuplicateTarget,
    InvalidAssignment,
    InvalidProbability,
    InvalidQuery,
    InvalidScenario,
    MissingVariable,
    NegativeEntry,
    NotNormalized,
    ShapeMismatch,
    UnknownVariable,
    ZeroProbabilityEvent,
)

logger = logging.getLogger(__name__)

TABLE_CAP = 10**7
FLOAT_NORMALIZATION_TOLERANCE = 1e-9

# Canonical variable names. The ontic state is spelled out, the fresh noise
# variable only ever lives inside the gallery composer.
A, B, C, X, Y, Z = "A", "B", "C", "X", "Y", "Z"
LAMBDA = "lambda"
MU = "mu"
CANONICAL_ORDER = (A, B, C, X, Y, Z, LAMBDA)

Assignment = Mapping[str, int]
Probability = Union[Fraction, float]


class Role(str, Enum):
    SETTING = "setting"
    OUTCOME = "outcome"
    ONTIC = "ontic"


class Backend(str, Enum):
    EXACT = "exact"
    FLOAT = "float"


CANONICAL_ROLES = {
    A: Role.SETTING,
    B: Role.SETTING,
    C: Role.SETTING,
    X: Role.OUTCOME,
    Y: Role.OUTCOME,
    Z: Role.OUTCOME,
    LAMBDA: Role.ONTIC,
    MU: Role.ONTIC,
}


# ---------------------------------------------------------------------
# Scalars
# ---------------------------------------------------------------------


def to_probability(value: Any, backend: Backend) -> Probability:
    """Convert a user-supplied probability to the backend's scalar type.

    Strings may be decimals ("0.25") or rationals ("1/4"). On the exact
    backend floats are read through their shortest decimal repr, so 0.1
    becomes 1/10 rather than the nearest dyadic rational.
    """
    try:
        if backend is Backend.EXACT:
            if isinstance(value, Fraction):
                return value
            if isinstance(value, bool):
                raise TypeError("booleans are not probabilities")
            if isinstance(value, (int, np.integer)):
                return Fraction(int(value))
            if isinstance(value, (float, np.floating)):
                return Fraction(repr(float(value)))
            if isinstance(value, str):
                return Fraction(value.strip())
            raise TypeError(f"unsupported probability type {type(value).__name__}")
        if isinstance(value, str):
            return float(Fraction(value.strip()))
        return float(value)
    except (TypeError, ValueError, ZeroDivisionError) as e:
        raise InvalidProbability(f"cannot read {value!r} as a probability: {e}") from e


def zeros(shape: Sequence[int], backend: Backend) -> np.ndarray:
    if backend is Backend.EXACT:
        return np.full(tuple(shape), Fraction(0), dtype=object)
    return np.zeros(tuple(shape), dtype=np.float64)


def ones(shape: Sequence[int], backend: Backend) -> np.ndarray:
    if backend is Backend.EXACT:
        return np.full(tuple(shape), Fraction(1), dtype=object)
    return np.ones(tuple(shape), dtype=np.float64)


def backend_of(array: np.ndarray) -> Backend:
    return Backend.EXACT if array.dtype == object else Backend.FLOAT


def lift_exact(array: np.ndarray) -> np.ndarray:
    """Losslessly convert a float array to Fractions (floats are dyadic)."""
    if array.dtype == object:
        return array
    flat = [Fraction(float(v)) for v in array.ravel()]
    out = np.empty(len(flat), dtype=object)
    out[:] = flat
    return out.reshape(array.shape)


def lower_float(array: np.ndarray) -> np.ndarray:
    if array.dtype == object:
        return np.array([float(v) for v in array.ravel()], dtype=np.float64).reshape(array.shape)
    return array


def _freeze(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def derive_seed(seed: int, index: int) -> int:
    """Split ``seed`` into an independent 64-bit stream for task ``index``.

    The result depends only on (seed, index), never on how tasks are
    scheduled.
    """
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class VariableSpec:
    name: str
    role: Role = Role.OUTCOME
    alphabet_size: int = 2
    alias_of: Optional[str] = None

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise InvalidScenario(f"variable name must be a nonempty string, got {self.name!r}")
        object.__setattr__(self, "role", Role(self.role))
        if int(self.alphabet_size) < 1:
            raise InvalidScenario(
                f"variable {self.name!r}: alphabet_size must be >= 1, got {self.alphabet_size}"
            )
        object.__setattr__(self, "alphabet_size", int(self.alphabet_size))
        if self.alias_of == self.name:
            raise InvalidScenario(f"variable {self.name!r} cannot alias itself")


@dataclass(frozen=True)
class Scenario:
    """Ordered set of named finite random variables."""

    variables: Tuple[VariableSpec, ...]
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        variables = tuple(self.variables)
        object.__setattr__(self, "variables", variables)
        index: Dict[str, int] = {}
        for pos, spec in enumerate(variables):
            if spec.name in index:
                raise InvalidScenario(f"duplicate variable name {spec.name!r}")
            index[spec.name] = pos
        object.__setattr__(self, "_index", index)

        for spec in variables:
            if spec.alias_of is None:
                continue
            if spec.alias_of not in index:
                raise InvalidScenario(
                    f"variable {spec.name!r} aliases unknown variable {spec.alias_of!r}"
                )
            target = variables[index[spec.alias_of]]
            if target.alphabet_size != spec.alphabet_size:
                raise InvalidScenario(
                    f"alias {spec.name!r} -> {target.name!r} needs equal alphabet sizes "
                    f"({spec.alphabet_size} != {target.alphabet_size})"
                )
            seen = {spec.name}
            cursor = target
            while cursor.alias_of is not None:
                if cursor.name in seen:
                    raise InvalidScenario(f"alias cycle through {spec.name!r}")
                seen.add(cursor.name)
                cursor = variables[index[cursor.alias_of]]

    @classmethod
    def of(cls, *specs: VariableSpec) -> "Scenario":
        return cls(tuple(specs))

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(spec.name for spec in self.variables)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(spec.alphabet_size for spec in self.variables)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self.variables)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownVariable(f"unknown variable {name!r}") from None

    def spec(self, name: str) -> VariableSpec:
        return self.variables[self.index(name)]

    def alphabet_size(self, name: str) -> int:
        return self.spec(name).alphabet_size

    def require(self, names: Iterable[str]) -> None:
        for name in names:
            self.index(name)

    def subscenario(self, names: Sequence[str]) -> "Scenario":
        """Scenario restricted to ``names`` in the given order.

        Aliases whose target is dropped become plain variables.
        """
        names = list(names)
        if len(set(names)) != len(names):
            raise InvalidQuery(f"variable list has duplicates: {names}")
        kept = set(names)
        specs = []
        for name in names:
            spec = self.spec(name)
            if spec.alias_of is not None and spec.alias_of not in kept:
                spec = VariableSpec(spec.name, spec.role, spec.alphabet_size, None)
            specs.append(spec)
        return Scenario(tuple(specs))

    def extended(self, *specs: VariableSpec) -> "Scenario":
        return Scenario(self.variables + tuple(specs))

    def assignments(self) -> Iterator[Tuple[int, ...]]:
        """All full assignments in lexicographic order."""
        return itertools.product(*(range(n) for n in self.shape))

    def as_assignment(self, values: Sequence[int]) -> Dict[str, int]:
        return {name: int(v) for name, v in zip(self.names, values)}


def check_cap(scenario: Scenario) -> None:
    if scenario.size > TABLE_CAP:
        raise CapExceeded(
            f"product alphabet of {scenario.names} has {scenario.size} points "
            f"(cap {TABLE_CAP})"
        )


def canonical_scenario(
    sizes: Optional[Mapping[str, int]] = None,
    z_alias: Optional[str] = None,
) -> Scenario:
    """The {A, B, C, X, Y, Z, lambda} scenario, binary unless ``sizes`` says otherwise.

    ``z_alias`` ("lambda" or "X") turns Z into a deterministic copy; its
    alphabet size then follows the target's.
    """
    sizes = dict(sizes or {})
    unknown = set(sizes) - set(CANONICAL_ORDER) - {MU}
    if unknown:
        raise UnknownVariable(f"unknown variable {sorted(unknown)[0]!r}")
    if z_alias is not None:
        sizes[Z] = sizes.get(z_alias, 2)
    specs = [
        VariableSpec(
            name,
            CANONICAL_ROLES[name],
            sizes.get(name, 2),
            z_alias if name == Z else None,
        )
        for name in CANONICAL_ORDER
    ]
    return Scenario(tuple(specs))


# ---------------------------------------------------------------------
# Joint tables
# ---------------------------------------------------------------------


def _first_index(mask: np.ndarray) -> Tuple[int, ...]:
    flat = int(np.flatnonzero(mask.ravel())[0])
    return tuple(int(i) for i in np.unravel_index(flat, mask.shape))


def _check_aliases(scenario: Scenario, array: np.ndarray) -> None:
    for spec in scenario.variables:
        if spec.alias_of is None:
            continue
        i, j = scenario.index(spec.name), scenario.index(spec.alias_of)
        moved = np.moveaxis(array, (i, j), (0, 1))
        for u in range(spec.alphabet_size):
            for v in range(spec.alphabet_size):
                if u != v and np.any(moved[u, v] != 0):
                    raise AliasViolation(
                        f"{spec.name}={u} with {spec.alias_of}={v} has positive mass "
                        f"but {spec.name} aliases {spec.alias_of}"
                    )


def _validate(scenario: Scenario, backend: Backend, array: np.ndarray) -> None:
    negative = array < 0
    if np.any(negative):
        where = scenario.as_assignment(_first_index(negative))
        raise NegativeEntry(f"negative probability {array[tuple(where.values())]} at {where}")
    total = array.sum()
    if backend is Backend.EXACT:
        if total != 1:
            raise NotNormalized(f"entries sum to {total}, expected exactly 1")
    elif abs(float(total) - 1.0) > FLOAT_NORMALIZATION_TOLERANCE:
        raise NotNormalized(
            f"entries sum to {float(total)!r}, expected 1 within {FLOAT_NORMALIZATION_TOLERANCE}"
        )
    _check_aliases(scenario, array)


@dataclass(frozen=True, eq=False)
class JointTable:
    """Full joint distribution over a scenario.

    Use :func:`build_joint` or :meth:`from_array` to get a validated table;
    the bare constructor is for internal results that are valid by
    construction.
    """

    scenario: Scenario
    backend: Backend
    probabilities: np.ndarray

    def __post_init__(self) -> None:
        backend = Backend(self.backend)
        array = np.asarray(self.probabilities, dtype=object if backend is Backend.EXACT else np.float64)
        if array.shape != self.scenario.shape:
            raise ShapeMismatch(
                f"table shape {array.shape} does not match scenario shape {self.scenario.shape}"
            )
        object.__setattr__(self, "backend", backend)
        object.__setattr__(self, "probabilities", _freeze(array))

    @classmethod
    def from_array(cls, scenario: Scenario, array: Any, backend: Backend = Backend.FLOAT) -> "JointTable":
        backend = Backend(backend)
        check_cap(scenario)
        raw = np.asarray(array, dtype=object)
        if raw.shape != scenario.shape:
            raise ShapeMismatch(f"table shape {raw.shape} does not match scenario shape {scenario.shape}")
        values = [to_probability(v, backend) for v in raw.ravel()]
        if backend is Backend.EXACT:
            converted = np.empty(len(values), dtype=object)
            converted[:] = values
        else:
            converted = np.array(values, dtype=np.float64)
        converted = converted.reshape(scenario.shape)
        _validate(scenario, backend, converted)
        return cls(scenario, backend, converted)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, JointTable):
            return NotImplemented
        return (
            self.scenario == other.scenario
            and self.backend is other.backend
            and bool(np.array_equal(self.probabilities, other.probabilities))
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def names(self) -> Tuple[str, ...]:
        return self.scenario.names

    def probability(self, assignment: Assignment) -> Probability:
        """Probability of one full assignment."""
        return self.probabilities[_full_index(self.scenario, assignment)]

    def entries(self) -> Iterator[Tuple[Dict[str, int], Probability]]:
        """Positive-mass assignments in lexicographic order."""
        for values in self.scenario.assignments():
            p = self.probabilities[values]
            if p > 0:
                yield self.scenario.as_assignment(values), p

    def total(self) -> Probability:
        return self.probabilities.sum()

    def to_float(self) -> "JointTable":
        if self.backend is Backend.FLOAT:
            return self
        return JointTable(self.scenario, Backend.FLOAT, lower_float(self.probabilities))

    def to_exact(self) -> "JointTable":
        """Exact copy; float entries are lifted losslessly then renormalized."""
        if self.backend is Backend.EXACT:
            return self
        lifted = lift_exact(self.probabilities)
        total = lifted.sum()
        if total != 1:
            lifted = lifted / total
        return JointTable(self.scenario, Backend.EXACT, lifted)

    def astype(self, backend: Backend) -> "JointTable":
        return self.to_exact() if Backend(backend) is Backend.EXACT else self.to_float()

    def allclose(self, other: "JointTable", atol: float = 1e-12) -> bool:
        if self.scenario.names != other.scenario.names or self.scenario.shape != other.scenario.shape:
            return False
        return bool(
            np.allclose(
                lower_float(self.probabilities), lower_float(other.probabilities), rtol=0.0, atol=atol
            )
        )


def _full_index(scenario: Scenario, assignment: Assignment) -> Tuple[int, ...]:
    for name in assignment:
        scenario.index(name)
    missing = [n for n in scenario.names if n not in assignment]
    if missing:
        raise InvalidAssignment(f"assignment {dict(assignment)} leaves {missing} unassigned")
    return tuple(_symbol(scenario, name, assignment[name]) for name in scenario.names)


def _symbol(scenario: Scenario, name: str, value: Any) -> int:
    size = scenario.alphabet_size(name)
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise InvalidAssignment(f"{name}={value!r} is not an integer symbol")
    if not 0 <= int(value) < size:
        raise InvalidAssignment(f"{name}={value} is outside alphabet of size {size}")
    return int(value)


def build_joint(
    scenario: Scenario,
    entries: Iterable[Tuple[Assignment, Any]],
    backend: Backend = Backend.FLOAT,
) -> JointTable:
    """Build a validated table from (full assignment, probability) pairs.

    Omitted points default to 0. The exact backend performs no rounding.

    Raises:
        UnknownVariable: an assignment names a variable outside the scenario.
        InvalidAssignment: a partial, duplicated or out-of-range assignment.
        NegativeEntry / NotNormalized / AliasViolation: table invariants.
    """
    backend = Backend(backend)
    check_cap(scenario)
    array = zeros(scenario.shape, backend)
    seen = set()
    for assignment, value in entries:
        index = _full_index(scenario, assignment)
        if index in seen:
            raise InvalidAssignment(f"assignment {dict(assignment)} listed twice")
        seen.add(index)
        array[index] = to_probability(value, backend)
    _validate(scenario, backend, array)
    logger.debug("built %s joint over %s with %d entries", backend.value, scenario.names, len(seen))
    return JointTable(scenario, backend, array)


def marginalize(joint: JointTable, keep: Sequence[str]) -> JointTable:
    """Distribution over ``keep`` (in that order); other variables summed out."""
    keep = list(keep)
    joint.scenario.require(keep)
    sub = joint.scenario.subscenario(keep)
    kept = set(keep)
    array = joint.probabilities
    drop = tuple(i for i, name in enumerate(joint.names) if name not in kept)
    if drop:
        array = np.asarray(array.sum(axis=drop), dtype=array.dtype)
    remaining = [name for name in joint.names if name in kept]
    perm = [remaining.index(name) for name in keep]
    if perm != sorted(perm):
        array = array.transpose(perm)
    return JointTable(sub, joint.backend, np.array(array, dtype=array.dtype))


def condition(joint: JointTable, targets: Sequence[str], given: Assignment) -> JointTable:
    """P(targets | given) as a table over ``targets``.

    Raises:
        ZeroProbabilityEvent: P(given) = 0; a vacuous event never yields a
            distribution.
        InvalidQuery: targets and given overlap.
    """
    targets = list(targets)
    given_names = list(given)
    joint.scenario.require(targets + given_names)
    overlap = set(targets) & set(given_names)
    if overlap:
        raise InvalidQuery(f"targets and conditioning variables overlap on {sorted(overlap)}")
    index = tuple(_symbol(joint.scenario, name, given[name]) for name in given_names)
    table = marginalize(joint, given_names + targets).probabilities
    sub = table[index + (Ellipsis,)]
    mass = sub.sum()
    if mass == 0:
        raise ZeroProbabilityEvent(f"P({dict(given)}) = 0")
    return JointTable(joint.scenario.subscenario(targets), joint.backend, np.asarray(sub / mass, dtype=sub.dtype))


# ---------------------------------------------------------------------
# Conditional kernels
# ---------------------------------------------------------------------


def _as_backend_array(values: Any, backend: Backend) -> np.ndarray:
    raw = np.asarray(values, dtype=object)
    converted = [to_probability(v, backend) for v in raw.ravel()]
    if backend is Backend.EXACT:
        out = np.empty(len(converted), dtype=object)
        out[:] = converted
    else:
        out = np.array(converted, dtype=np.float64)
    return out.reshape(raw.shape)


@dataclass(frozen=True, eq=False)
class ConditionalKernel:
    """P(targets | givens) stored as an array of shape (*given sizes, *target sizes)."""

    targets: Tuple[str, ...]
    givens: Tuple[str, ...]
    table: np.ndarray

    def __post_init__(self) -> None:
        targets, givens = tuple(self.targets), tuple(self.givens)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "givens", givens)
        if not targets:
            raise InvalidQuery("a kernel needs at least one target")
        if set(targets) & set(givens) or len(set(targets + givens)) != len(targets + givens):
            raise InvalidQuery(f"kernel variables must be distinct: targets={targets} givens={givens}")
        table = np.asarray(self.table)
        if table.dtype != object:
            table = np.asarray(table, dtype=np.float64)
        if table.ndim != len(givens) + len(targets):
            raise ShapeMismatch(
                f"kernel table has {table.ndim} axes, expected {len(givens) + len(targets)}"
            )
        if np.any(table < 0):
            raise NegativeEntry(f"kernel P({targets}|{givens}) has a negative entry")
        sums = table.reshape(self.n_rows_of(table), -1).sum(axis=1)
        if table.dtype == object:
            bad = [i for i, s in enumerate(sums) if s != 1]
        else:
            bad = list(np.flatnonzero(np.abs(sums - 1.0) > FLOAT_NORMALIZATION_TOLERANCE))
        if bad:
            raise NotNormalized(f"kernel P({targets}|{givens}) row {int(bad[0])} sums to {sums[bad[0]]}")
        object.__setattr__(self, "table", _freeze(np.array(table, dtype=table.dtype)))

    def n_rows_of(self, table: np.ndarray) -> int:
        return math.prod(table.shape[: len(self.givens)])

    @property
    def backend(self) -> Backend:
        return backend_of(self.table)

    @property
    def sizes(self) -> Dict[str, int]:
        return dict(zip(self.givens + self.targets, self.table.shape))

    @property
    def given_shape(self) -> Tuple[int, ...]:
        return self.table.shape[: len(self.givens)]

    @property
    def target_shape(self) -> Tuple[int, ...]:
        return self.table.shape[len(self.givens):]

    def row(self, given: Assignment) -> np.ndarray:
        index = tuple(int(given[name]) for name in self.givens)
        return self.table[index]

    def rows(self) -> Iterator[Tuple[Tuple[int, ...], np.ndarray]]:
        for index in itertools.product(*(range(n) for n in self.given_shape)):
            yield index, self.table[index]

    def astype(self, backend: Backend) -> "ConditionalKernel":
        backend = Backend(backend)
        if backend is self.backend:
            return self
        if backend is Backend.FLOAT:
            return ConditionalKernel(self.targets, self.givens, lower_float(self.table))
        lifted = lift_exact(self.table)
        flat = lifted.reshape(self.n_rows_of(lifted), -1)
        flat = flat / flat.sum(axis=1, keepdims=True)
        return ConditionalKernel(self.targets, self.givens, flat.reshape(self.table.shape))

    # -- constructors --------------------------------------------------

    @classmethod
    def from_rows(
        cls,
        targets: Sequence[str],
        givens: Sequence[str],
        sizes: Mapping[str, int],
        rows: Sequence[Sequence[Any]],
        backend: Backend = Backend.EXACT,
    ) -> "ConditionalKernel":
        """Kernel from rows listed in lexicographic given order, each a flat
        distribution over target assignments in lexicographic order."""
        backend = Backend(backend)
        given_shape = [sizes[n] for n in givens]
        target_shape = [sizes[n] for n in targets]
        flat = _as_backend_array(rows, backend)
        expected = (math.prod(given_shape), math.prod(target_shape))
        if flat.shape != expected:
            raise ShapeMismatch(f"rows have shape {flat.shape}, expected {expected}")
        return cls(tuple(targets), tuple(givens), flat.reshape(given_shape + target_shape))

    @classmethod
    def distribution(cls, target: str, probabilities: Sequence[Any], backend: Backend = Backend.EXACT) -> "ConditionalKernel":
        """Unconditional kernel P(target)."""
        return cls((target,), (), _as_backend_array(list(probabilities), Backend(backend)))

    @classmethod
    def uniform(
        cls,
        targets: Sequence[str],
        givens: Sequence[str],
        sizes: Mapping[str, int],
        backend: Backend = Backend.EXACT,
    ) -> "ConditionalKernel":
        backend = Backend(backend)
        shape = [sizes[n] for n in givens] + [sizes[n] for n in targets]
        k = math.prod(sizes[n] for n in targets)
        value = Fraction(1, k) if backend is Backend.EXACT else 1.0 / k
        table = np.full(shape, value, dtype=object if backend is Backend.EXACT else np.float64)
        return cls(tuple(targets), tuple(givens), table)

    @classmethod
    def deterministic(
        cls,
        target: str,
        givens: Sequence[str],
        sizes: Mapping[str, int],
        fn: Callable[..., int],
        backend: Backend = Backend.EXACT,
    ) -> "ConditionalKernel":
        """Kernel putting all mass on ``fn(*given_values)``."""
        backend = Backend(backend)
        given_shape = [sizes[n] for n in givens]
        table = zeros(given_shape + [sizes[target]], backend)
        one = Fraction(1) if backend is Backend.EXACT else 1.0
        for index in itertools.product(*(range(n) for n in given_shape)):
            value = int(fn(*index))
            if not 0 <= value < sizes[target]:
                raise InvalidAssignment(f"{target}={value} is outside alphabet of size {sizes[target]}")
            table[index + (value,)] = one
        return cls((target,), tuple(givens), table)


def _exact_simplex_rows(draws: np.ndarray) -> np.ndarray:
    out = np.empty(draws.shape, dtype=object)
    for i, row in enumerate(draws):
        lifted = [Fraction(float(v)).limit_denominator(2**20) for v in row]
        total = sum(lifted)
        out[i, :] = [v / total for v in lifted]
    return out


def random_kernel(
    targets: Sequence[str],
    givens: Sequence[str],
    sizes: Mapping[str, int],
    seed: int,
    backend: Backend = Backend.FLOAT,
) -> ConditionalKernel:
    """Kernel whose rows are drawn from the flat Dirichlet(1, ..., 1) law.

    Deterministic in ``seed``. The exact backend rounds each draw to a
    rational with denominator at most 2**20 and renormalizes exactly.
    """
    backend = Backend(backend)
    targets, givens = list(targets), list(givens)
    missing = [n for n in targets + givens if n not in sizes]
    if missing:
        raise UnknownVariable(f"no alphabet size for {missing[0]!r}")
    given_shape = [int(sizes[n]) for n in givens]
    target_shape = [int(sizes[n]) for n in targets]
    n_rows, k = math.prod(given_shape), math.prod(target_shape)
    rng = np.random.default_rng(int(seed))
    draws = rng.dirichlet(np.ones(k), size=n_rows)
    table = _exact_simplex_rows(draws) if backend is Backend.EXACT else draws
    return ConditionalKernel(tuple(targets), tuple(givens), table.reshape(given_shape + target_shape))


# ---------------------------------------------------------------------
# Factorized composition
# ---------------------------------------------------------------------


def _order_factors(scenario: Scenario, factors: Sequence[ConditionalKernel]) -> None:
    produced: set = set()
    producers = {}
    for pos, factor in enumerate(factors):
        scenario.require(factor.targets + factor.givens)
        for name in factor.targets:
            if name in producers:
                raise DuplicateTarget(f"{name!r} is a target of factors {producers[name]} and {pos}")
            producers[name] = pos
    for pos, factor in enumerate(factors):
        for name in factor.givens:
            if name not in producers:
                raise MissingVariable(f"factor {pos} conditions on {name!r}, which no factor produces")
            if name not in produced:
                raise CyclicFactorization(
                    f"factor {pos} conditions on {name!r}, produced only later by factor {producers[name]}"
                )
        produced.update(factor.targets)
        for name, size in factor.sizes.items():
            if size != scenario.alphabet_size(name):
                raise ShapeMismatch(
                    f"factor {pos} gives {name!r} {size} symbols, scenario declares "
                    f"{scenario.alphabet_size(name)}"
                )
    missing = [name for name in scenario.names if name not in producers]
    if missing:
        raise MissingVariable(f"no factor produces {missing}")


def compose_product(
    scenario: Scenario,
    factors: Sequence[ConditionalKernel],
    backend: Optional[Backend] = None,
) -> JointTable:
    """Joint table equal to the product of factor rows at every assignment.

    ``factors`` must form a DAG in the listed order: each variable is the
    target of exactly one factor and givens come from earlier factors. When
    ``backend`` is omitted the result is exact iff every factor is exact.
    """
    factors = list(factors)
    check_cap(scenario)
    _order_factors(scenario, factors)
    if backend is None:
        backend = Backend.EXACT if all(f.backend is Backend.EXACT for f in factors) else Backend.FLOAT
    backend = Backend(backend)

    ndim = len(scenario)
    result: Optional[np.ndarray] = None
    for factor in factors:
        table = factor.astype(backend).table
        axes = [scenario.index(n) for n in factor.givens + factor.targets]
        order = sorted(range(len(axes)), key=lambda k: axes[k])
        shape = [1] * ndim
        for k in order:
            shape[axes[k]] = table.shape[k]
        expanded = table.transpose(order).reshape(shape)
        result = expanded if result is None else result * expanded
    if result is None:
        result = ones(scenario.shape, backend)
    result = np.broadcast_to(result, scenario.shape)
    result = np.array(result, dtype=object if backend is Backend.EXACT else np.float64)
    if any(spec.alias_of for spec in scenario.variables):
        _check_aliases(scenario, result)
    return JointTable(scenario, backend, result)


def conditional_kernel(joint: JointTable, targets: Sequence[str], givens: Sequence[str]) -> ConditionalKernel:
    """P(targets | givens) read off a joint table.

    Raises:
        ZeroProbabilityEvent: some given-assignment has zero mass, so its row
            is undefined.
    """
    targets, givens = list(targets), list(givens)
    table = marginalize(joint, givens + targets).probabilities
    t_axes = tuple(range(len(givens), table.ndim))
    mass = table.sum(axis=t_axes, keepdims=True)
    if np.any(mass == 0):
        empty = _first_index(np.asarray(mass == 0).reshape(mass.shape[: len(givens)]))
        raise ZeroProbabilityEvent(f"P({dict(zip(givens, empty))}) = 0")
    return ConditionalKernel(tuple(targets), tuple(givens), table / mass)
