"""independence.py

Sup-norm violation measures for conditional-independence statements and for
the four named assumptions (plus the free-choice factorization identity).

Every statement is reduced to one of two component kinds:

- ``ConditionalEquality``: P(T | S) = P(T | R) for R ⊆ S. A CI query
  "T independent of S" is the case R = ∅; no-signalling keeps the party's own
  setting in R.
- ``Factorization``: P(G1, ..., Gk) = P(G1) ... P(Gk).

Conditioning assignments of zero mass satisfy the constraint vacuously and
are counted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from ontolab.dist_core import (
    A,
    B,
    C,
    LAMBDA,
    X,
    Y,
    Z,
    Backend,
    JointTable,
    Probability,
    condition,
    marginalize,
)
from ontolab.errors import InvalidQuery

logger = logging.getLogger(__name__)

EXACT_PASS_THRESHOLD = Fraction(0)
FLOAT_PASS_THRESHOLD = 1e-9


def _names(values: Iterable[str]) -> Tuple[str, ...]:
    if isinstance(values, str):
        return (values,)
    return tuple(values)


def _braced(names: Sequence[str]) -> str:
    return ",".join(names)


@dataclass(frozen=True)
class CIQuery:
    """``target`` is independent of ``independent_of``: P(target | rest) = P(target)."""

    target: Tuple[str, ...]
    independent_of: Tuple[str, ...]

    def __post_init__(self) -> None:
        target, rest = _names(self.target), _names(self.independent_of)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "independent_of", rest)
        if not target or not rest:
            raise InvalidQuery(f"CI query needs nonempty sides, got {target} and {rest}")
        if len(set(target)) != len(target) or len(set(rest)) != len(rest):
            raise InvalidQuery(f"CI query lists a variable twice: {target} | {rest}")
        overlap = set(target) & set(rest)
        if overlap:
            raise InvalidQuery(f"CI query sides overlap on {sorted(overlap)}")

    @property
    def label(self) -> str:
        return f"P({_braced(self.target)}|{_braced(self.independent_of)})=P({_braced(self.target)})"

    def as_component(self) -> "ConditionalEquality":
        return ConditionalEquality(self.target, self.independent_of, ())


@dataclass(frozen=True)
class ConditionalEquality:
    target: Tuple[str, ...]
    given: Tuple[str, ...]
    reduced: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "target", _names(self.target))
        object.__setattr__(self, "given", _names(self.given))
        object.__setattr__(self, "reduced", _names(self.reduced))
        if not set(self.reduced) <= set(self.given):
            raise InvalidQuery(f"reduced set {self.reduced} must lie inside {self.given}")
        if set(self.target) & set(self.given):
            raise InvalidQuery(f"target {self.target} overlaps conditioning set {self.given}")

    @property
    def label(self) -> str:
        lhs = f"P({_braced(self.target)}|{_braced(self.given)})"
        if self.reduced:
            return f"{lhs}=P({_braced(self.target)}|{_braced(self.reduced)})"
        return f"{lhs}=P({_braced(self.target)})"

    @property
    def variables(self) -> Tuple[str, ...]:
        return self.given + self.target


@dataclass(frozen=True)
class Factorization:
    groups: Tuple[Tuple[str, ...], ...]

    @property
    def label(self) -> str:
        joint = ",".join(n for g in self.groups for n in g)
        return f"P({joint})=" + "".join(f"P({_braced(g)})" for g in self.groups)

    @property
    def variables(self) -> Tuple[str, ...]:
        return tuple(n for g in self.groups for n in g)


Component = Union[ConditionalEquality, Factorization]


class AssumptionId(str, Enum):
    FR = "FR"
    FRPRIME = "FRprime"
    NS = "NS"
    ST = "ST"
    FACT = "FACT"


ASSUMPTION_COMPONENTS: Dict[AssumptionId, Tuple[Component, ...]] = {
    AssumptionId.FR: (
        ConditionalEquality((A,), (B, C, Y, Z)),
        ConditionalEquality((B,), (A, C, X, Z)),
        ConditionalEquality((C,), (A, B, X, Y)),
    ),
    AssumptionId.FRPRIME: (
        ConditionalEquality((A,), (B, LAMBDA)),
        ConditionalEquality((B,), (A, LAMBDA)),
    ),
    AssumptionId.NS: (
        ConditionalEquality((X,), (A, B), (A,)),
        ConditionalEquality((Y,), (A, B), (B,)),
    ),
    AssumptionId.ST: (ConditionalEquality((C, Z), (A, B, X, Y)),),
    AssumptionId.FACT: (Factorization(((A,), (B,), (LAMBDA,))),),
}


def expand(which: Union[AssumptionId, str]) -> Tuple[Component, ...]:
    """Fixed list of components an assumption stands for."""
    return ASSUMPTION_COMPONENTS[AssumptionId(which)]


@dataclass(frozen=True)
class ComponentResult:
    component: Component
    deviation: Probability
    witness: Optional[Dict[str, int]]
    vacuous_events: int
    conditioning_events: int
    total_variation: Probability


@dataclass(frozen=True)
class ViolationReport:
    """Aggregated sup-norm deviation of an assumption or query.

    ``deviation`` is the max over ``per_component``; ``witness`` is the
    lexicographically first assignment attaining it and is absent when the
    deviation is zero.
    """

    assumption: str
    backend: Backend
    deviation: Probability
    witness: Optional[Dict[str, int]]
    witness_component: Optional[Component]
    vacuous_events: int
    conditioning_events: int
    per_component: Dict[str, Probability] = field(default_factory=dict)
    total_variation: Probability = 0.0

    @property
    def degenerate(self) -> bool:
        """More than half of the conditioning events have zero mass."""
        return self.conditioning_events > 0 and 2 * self.vacuous_events > self.conditioning_events

    def passes(self, tolerance: Optional[float] = None) -> bool:
        return passes(self, tolerance)


def default_threshold(backend: Backend) -> Probability:
    return EXACT_PASS_THRESHOLD if backend is Backend.EXACT else FLOAT_PASS_THRESHOLD


def passes(report: ViolationReport, tolerance: Optional[float] = None) -> bool:
    """Pass iff deviation <= tolerance (exact zero / 1e-9 by default)."""
    threshold = default_threshold(report.backend) if tolerance is None else tolerance
    return report.deviation <= threshold


# ---------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------


def _zero(backend: Backend) -> Probability:
    return Fraction(0) if backend is Backend.EXACT else 0.0


def _safe(denominator: np.ndarray) -> np.ndarray:
    return np.where(denominator == 0, 1, denominator)


def locate_witness(joint: JointTable, names: Sequence[str], diff: np.ndarray) -> Tuple[Probability, Optional[Dict[str, int]]]:
    # Lexicographic tie-break in scenario order, whatever order the
    # component lists its variables in.
    perm = sorted(range(len(names)), key=lambda k: joint.scenario.index(names[k]))
    ordered = diff.transpose(perm)
    if ordered.size == 0:
        return _zero(joint.backend), None
    flat = int(np.argmax(ordered.ravel()))
    best = ordered.ravel()[flat]
    if joint.backend is Backend.FLOAT:
        best = float(best)
    if best == 0:
        return best, None
    values = np.unravel_index(flat, ordered.shape)
    return best, {names[k]: int(v) for k, v in zip(perm, values)}


def _equality(joint: JointTable, comp: ConditionalEquality) -> ComponentResult:
    reduced = list(comp.reduced)
    extra = [n for n in comp.given if n not in comp.reduced]
    target = list(comp.target)
    names = reduced + extra + target
    m = marginalize(joint, names).probabilities

    n_target = len(target)
    t_axes = tuple(range(m.ndim - n_target, m.ndim))
    extra_axes = tuple(range(len(reduced), len(reduced) + len(extra)))

    p_given = m.sum(axis=t_axes, keepdims=True)
    conditional = m / _safe(p_given)
    m_reduced = m.sum(axis=extra_axes, keepdims=True) if extra_axes else m
    p_reduced = m_reduced.sum(axis=t_axes, keepdims=True)
    reference = m_reduced / _safe(p_reduced)

    positive = np.broadcast_to(p_given > 0, m.shape)
    diff = np.where(positive, np.abs(conditional - reference), _zero(joint.backend))
    if joint.backend is Backend.FLOAT:
        diff = np.asarray(diff, dtype=np.float64)

    deviation, witness = locate_witness(joint, names, diff)
    events = int(np.prod(p_given.shape))
    vacuous = int(np.count_nonzero(p_given == 0))
    tv_rows = diff.sum(axis=t_axes) / 2
    total_variation = tv_rows.max() if tv_rows.size else _zero(joint.backend)
    if joint.backend is Backend.FLOAT:
        total_variation = float(total_variation)
    return ComponentResult(comp, deviation, witness, vacuous, events, total_variation)


def _factorization(joint: JointTable, comp: Factorization) -> ComponentResult:
    names = list(comp.variables)
    m = marginalize(joint, names).probabilities
    product = None
    offset = 0
    for group in comp.groups:
        axes = tuple(i for i in range(m.ndim) if not offset <= i < offset + len(group))
        marginal = m.sum(axis=axes, keepdims=True) if axes else m
        product = marginal if product is None else product * marginal
        offset += len(group)
    diff = np.abs(m - product)
    if joint.backend is Backend.FLOAT:
        diff = np.asarray(diff, dtype=np.float64)
    deviation, witness = locate_witness(joint, names, diff)
    total_variation = diff.sum() / 2
    if joint.backend is Backend.FLOAT:
        total_variation = float(total_variation)
    return ComponentResult(comp, deviation, witness, 0, 0, total_variation)


def evaluate_component(joint: JointTable, comp: Component) -> ComponentResult:
    if isinstance(comp, Factorization):
        return _factorization(joint, comp)
    return _equality(joint, comp)


def _aggregate(label: str, joint: JointTable, results: Sequence[ComponentResult]) -> ViolationReport:
    best: Optional[ComponentResult] = None
    for result in results:
        if best is None or result.deviation > best.deviation:
            best = result
    assert best is not None
    report = ViolationReport(
        assumption=label,
        backend=joint.backend,
        deviation=best.deviation,
        witness=best.witness,
        witness_component=best.component if best.witness is not None else None,
        vacuous_events=sum(r.vacuous_events for r in results),
        conditioning_events=sum(r.conditioning_events for r in results),
        per_component={r.component.label: r.deviation for r in results},
        total_variation=max(r.total_variation for r in results),
    )
    if report.degenerate:
        logger.info(
            "%s: %d of %d conditioning events are vacuous", label, report.vacuous_events, report.conditioning_events
        )
    return report


def ci_deviation(joint: JointTable, query: CIQuery) -> ViolationReport:
    """max over P(s) > 0 and t of |P(t | s) - P(t)|; zero iff the CI statement holds.

    Raises:
        UnknownVariable: the query names a variable outside the scenario.
    """
    return _aggregate(query.label, joint, [_equality(joint, query.as_component())])


def assumption_deviation(joint: JointTable, which: Union[AssumptionId, str]) -> ViolationReport:
    """Aggregate report over the fixed component list of ``which``."""
    which = AssumptionId(which)
    results = [evaluate_component(joint, comp) for comp in expand(which)]
    report = _aggregate(which.value, joint, results)
    logger.debug("%s deviation %s (witness %s)", which.value, report.deviation, report.witness)
    return report


def assumption_profile(
    joint: JointTable,
    assumptions: Sequence[Union[AssumptionId, str]] = tuple(AssumptionId),
) -> Dict[AssumptionId, ViolationReport]:
    return {AssumptionId(a): assumption_deviation(joint, a) for a in assumptions}


def witness_deviation(joint: JointTable, report: ViolationReport) -> Probability:
    """Recompute the deviation at the report's witness point from scratch."""
    if report.witness is None or report.witness_component is None:
        return _zero(joint.backend)
    comp = report.witness_component
    w = report.witness
    if isinstance(comp, Factorization):
        names = list(comp.variables)
        value = marginalize(joint, names).probability({n: w[n] for n in names})
        product = None
        for group in comp.groups:
            p = marginalize(joint, list(group)).probability({n: w[n] for n in group})
            product = p if product is None else product * p
        return abs(value - product)
    target = {n: w[n] for n in comp.target}
    lhs = condition(joint, list(comp.target), {n: w[n] for n in comp.given}).probability(target)
    if comp.reduced:
        rhs = condition(joint, list(comp.target), {n: w[n] for n in comp.reduced}).probability(target)
    else:
        rhs = marginalize(joint, list(comp.target)).probability(target)
    result = abs(lhs - rhs)
    return float(result) if joint.backend is Backend.FLOAT else result
