"""theorem_lab.py

Executable form of the argument FR' and NS and ST imply FR:

- ``verify_implication_sweep`` draws premise-satisfying models, certifies the
  premises and records how far each model is from FR;
- ``derivation_trace`` evaluates every step of the proof as a sup-norm
  residual, so a failing model shows which step (and premise) broke;
- ``penalized_search`` looks for models that violate a target assumption
  while a penalty holds the premises, to find which premises are needed.
"""

from __future__ import annotations

import logging
import math
import multiprocessing
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

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
    ConditionalKernel,
    JointTable,
    Probability,
    canonical_scenario,
    compose_product,
    derive_seed,
    marginalize,
)
from ontolab.errors import InvalidBudget, PremiseNotCertified
from ontolab.independence import (
    AssumptionId,
    ConditionalEquality,
    assumption_deviation,
    assumption_profile,
    default_threshold,
    evaluate_component,
    locate_witness,
)
from ontolab.model_gallery import premise_model_random

logger = logging.getLogger(__name__)

PREMISES = (AssumptionId.FRPRIME, AssumptionId.NS, AssumptionId.ST)
SWEEP_QUANTILES = (0.5, 0.9, 0.99, 1.0)
SWEEP_LOG_EVERY = 1000

DEFAULT_PENALTY_WEIGHT = 1e3
PENALTY_ESCALATION = 10.0
DEFAULT_SIMPLEX_FLOOR = 0.05
DEFAULT_EVALUATIONS_PER_START = 2000
INITIAL_STEP = 0.25
MIN_STEP = 1e-6


# ---------------------------------------------------------------------
# Derivation trace
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class DerivationTrace:
    """Residuals of each proof step, on the input's backend.

    ``premise_residuals`` attributes the nonzero residuals to premises:
    ST (the conditioning on C, Z is dropped), NS and FRprime (the party's
    setting factors out of the remaining joint).
    """

    party: str
    backend: Backend
    residual_chain_rule: Probability
    residual_st_step: Probability
    residual_ns_frprime_step: Probability
    residual_conclusion: Probability
    residual_c_leg: Probability
    witnesses: Dict[str, Optional[Dict[str, int]]] = field(default_factory=dict)
    premise_residuals: Dict[str, Probability] = field(default_factory=dict)

    @property
    def residuals(self) -> Dict[str, Probability]:
        return {
            "chain_rule": self.residual_chain_rule,
            "st_step": self.residual_st_step,
            "ns_frprime_step": self.residual_ns_frprime_step,
            "conclusion": self.residual_conclusion,
            "c_leg": self.residual_c_leg,
        }

    def broken_premises(self, tolerance: Optional[float] = None) -> List[str]:
        threshold = default_threshold(self.backend) if tolerance is None else tolerance
        return [name for name, value in self.premise_residuals.items() if value > threshold]


def _safe(denominator: np.ndarray) -> np.ndarray:
    return np.where(denominator == 0, 1, denominator)


def _chain_rule(joint: JointTable, own: str, other: str, other_outcome: str):
    """sup |P(a, b, y | c, z) - P(a | b, y, c, z) P(b, y | c, z)| over P(c, z) > 0."""
    names = [C, Z, other, other_outcome, own]
    m = marginalize(joint, names).probabilities
    p_cz = m.sum(axis=(2, 3, 4), keepdims=True)
    p_bycz = m.sum(axis=4, keepdims=True)
    lhs = m / _safe(p_cz)
    rhs = (m / _safe(p_bycz)) * (p_bycz / _safe(p_cz))
    positive = np.broadcast_to(p_cz > 0, m.shape)
    diff = np.where(positive, np.abs(lhs - rhs), Fraction(0))
    return locate_witness(joint, names, diff)


def _worst(joint: JointTable, components: Sequence[ConditionalEquality]):
    best = None
    for comp in components:
        result = evaluate_component(joint, comp)
        if best is None or result.deviation > best.deviation:
            best = result
    return best.deviation, best.witness


def derivation_trace(joint: JointTable, party: str = "A") -> DerivationTrace:
    """Evaluate the proof of P(A | B, Y, C, Z) = P(A) step by step.

    Steps, for party A (party B swaps A with B and X with Y):

    1. chain rule: P(A | B, Y, C, Z) = P(A, B, Y | C, Z) / P(B, Y | C, Z);
    2. ST step: the ratio equals P(A | B, Y); also P(C, Z | A, B, Y) = P(C, Z);
    3. NS / FR' step: P(A | B, Y) = P(A), with P(Y | A, B) = P(Y | B) and
       P(A | B[, lambda]) = P(A) as the premises it uses;
    4. conclusion: P(A | B, Y, C, Z) = P(A).

    The C leg P(C | A, B, X, Y) = P(C) follows from ST alone.

    Residuals are computed in exact arithmetic (float input is lifted
    losslessly) so the chain-rule residual is exactly zero; they are
    returned as floats for float input.

    Raises:
        UnknownVariable: one of A, B, C, X, Y, Z is missing.
        ValueError: party is not "A" or "B".
    """
    if party not in (A, B):
        raise ValueError(f"party must be 'A' or 'B', got {party!r}")
    joint.scenario.require((A, B, C, X, Y, Z))
    exact = joint.to_exact()
    if party == A:
        own, other, own_outcome, other_outcome = A, B, X, Y
    else:
        own, other, own_outcome, other_outcome = B, A, Y, X

    chain, chain_witness = _chain_rule(exact, own, other, other_outcome)
    st_literal = ConditionalEquality((own,), (other, other_outcome, C, Z), (other, other_outcome))
    st_readout = ConditionalEquality((C, Z), (own, other, other_outcome))
    st_step, st_witness = _worst(exact, [st_literal, st_readout])

    frprime_given = (other, LAMBDA) if LAMBDA in exact.scenario else (other,)
    ns_comp = ConditionalEquality((other_outcome,), (own, other), (other,))
    frprime_comp = ConditionalEquality((own,), frprime_given)
    factor_comp = ConditionalEquality((own,), (other, other_outcome))
    ns_frprime, ns_frprime_witness = _worst(exact, [factor_comp, ns_comp, frprime_comp])
    ns_part = evaluate_component(exact, ns_comp).deviation
    frprime_part = evaluate_component(exact, frprime_comp).deviation

    conclusion, conclusion_witness = _worst(exact, [ConditionalEquality((own,), (other, other_outcome, C, Z))])
    c_leg, c_witness = _worst(exact, [ConditionalEquality((C,), (own, other, own_outcome, other_outcome))])

    cast = float if joint.backend is Backend.FLOAT else (lambda v: v)
    trace = DerivationTrace(
        party=party,
        backend=joint.backend,
        residual_chain_rule=cast(chain),
        residual_st_step=cast(st_step),
        residual_ns_frprime_step=cast(ns_frprime),
        residual_conclusion=cast(conclusion),
        residual_c_leg=cast(c_leg),
        witnesses={
            "chain_rule": chain_witness,
            "st_step": st_witness,
            "ns_frprime_step": ns_frprime_witness,
            "conclusion": conclusion_witness,
            "c_leg": c_witness,
        },
        premise_residuals={
            AssumptionId.ST.value: cast(max(st_step, c_leg)),
            AssumptionId.NS.value: cast(ns_part),
            AssumptionId.FRPRIME.value: cast(frprime_part),
        },
    )
    logger.debug("trace for party %s: %s", party, trace.residuals)
    return trace


# ---------------------------------------------------------------------
# Implication sweep
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class SweepReport:
    """FR deviations of ``n_models`` certified premise models.

    ``argmax_seed`` is the model seed (not the sweep seed) of the first model
    attaining ``max_fr_deviation``; ``premise_model_random(argmax_seed, sizes,
    backend)`` rebuilds it.
    """

    n_models: int
    max_fr_deviation: Probability
    argmax_seed: Optional[int]
    argmax_index: Optional[int]
    backend: Backend
    seed: int
    sizes: Dict[str, int]
    quantiles: Dict[float, float]
    max_premise_deviation: Dict[str, Probability]
    deviations: Tuple[Probability, ...] = ()


def _sweep_task(task: Tuple[int, int, Optional[Mapping[str, int]], Backend, Optional[float]]):
    index, seed, sizes, backend, tolerance = task
    model_seed = derive_seed(seed, index)
    joint = premise_model_random(model_seed, sizes, backend)
    threshold = default_threshold(backend) if tolerance is None else tolerance
    premise_devs = {}
    for premise in PREMISES:
        report = assumption_deviation(joint, premise)
        if report.deviation > threshold:
            raise PremiseNotCertified(
                f"model {index} (seed {model_seed}) fails {premise.value}: deviation "
                f"{report.deviation} at {report.witness}"
            )
        premise_devs[premise.value] = report.deviation
    fr = assumption_deviation(joint, AssumptionId.FR).deviation
    return index, model_seed, premise_devs, fr


def verify_implication_sweep(
    n: int,
    sizes: Optional[Mapping[str, int]] = None,
    seed: int = 0,
    backend: Backend = Backend.FLOAT,
    workers: int = 1,
    tolerance: Optional[float] = None,
) -> SweepReport:
    """Draw ``n`` premise models, certify FR', NS and ST, record FR deviation.

    Model ``i`` uses ``derive_seed(seed, i)``, so the report does not depend
    on ``workers``. Premises are checked against ``tolerance`` (exact zero
    or 1e-9 by default) before FR is looked at.

    Raises:
        InvalidBudget: n < 0.
        PremiseNotCertified: a drawn model fails a premise check.
        CapExceeded: ``sizes`` make the composed table too large.
    """
    if n < 0:
        raise InvalidBudget(f"number of models must be >= 0, got {n}")
    backend = Backend(backend)
    tasks = [(i, int(seed), dict(sizes) if sizes else None, backend, tolerance) for i in range(n)]

    results = []
    if workers > 1 and n > 1:
        pool = multiprocessing.Pool(processes=workers)
        try:
            for done, result in enumerate(pool.imap(_sweep_task, tasks, chunksize=64), start=1):
                results.append(result)
                if done % SWEEP_LOG_EVERY == 0:
                    logger.info("sweep: %d/%d models certified", done, n)
        finally:
            pool.close()
            pool.join()
    else:
        for task in tasks:
            results.append(_sweep_task(task))
            if len(results) % SWEEP_LOG_EVERY == 0:
                logger.info("sweep: %d/%d models certified", len(results), n)

    zero = Fraction(0) if backend is Backend.EXACT else 0.0
    max_fr, argmax_index, argmax_seed = zero, None, None
    max_premise = {p.value: zero for p in PREMISES}
    for index, model_seed, premise_devs, fr in results:
        if argmax_index is None or fr > max_fr:
            max_fr, argmax_index, argmax_seed = fr, index, model_seed
        for name, value in premise_devs.items():
            max_premise[name] = max(max_premise[name], value)

    deviations = tuple(r[3] for r in results)
    quantiles: Dict[float, float] = {}
    if deviations:
        values = np.array([float(d) for d in deviations])
        quantiles = {q: float(np.quantile(values, q)) for q in SWEEP_QUANTILES}

    logger.info("sweep of %d models: max FR deviation %s (seed %s)", n, max_fr, argmax_seed)
    return SweepReport(
        n_models=n,
        max_fr_deviation=max_fr,
        argmax_seed=argmax_seed,
        argmax_index=argmax_index,
        backend=backend,
        seed=int(seed),
        sizes=dict(sizes or {}),
        quantiles=quantiles,
        max_premise_deviation=max_premise,
        deviations=deviations,
    )


# ---------------------------------------------------------------------
# Penalized search
# ---------------------------------------------------------------------


class SearchMode(str, Enum):
    NO_ST = "no_st"
    FULL_PREMISES = "full_premises"
    FR_IMPLIES_NS = "fr_implies_ns"


@dataclass(frozen=True)
class Block:
    """One simplex-constrained kernel of the search parameterization."""

    name: str
    target: str
    givens: Tuple[str, ...] = ()

    def shape(self, sizes: Mapping[str, int]) -> Tuple[int, int]:
        return math.prod(sizes[g] for g in self.givens), sizes[self.target]


# Settings and lambda are independent blocks, outcomes read only local
# settings: FR' and NS hold by construction; C, Z are free to adapt.
READOUT_BLOCKS = (
    Block("P(lambda)", LAMBDA),
    Block("P(A)", A),
    Block("P(B)", B),
    Block("P(C|A)", C, (A,)),
    Block("P(X|A,lambda)", X, (A, LAMBDA)),
    Block("P(Y|B,lambda)", Y, (B, LAMBDA)),
    Block("P(Z|C,lambda,X)", Z, (C, LAMBDA, X)),
)

# Outcomes may read both settings; only FR is held by the penalty.
SIGNALLING_BLOCKS = (
    Block("P(lambda)", LAMBDA),
    Block("P(A)", A),
    Block("P(B)", B),
    Block("P(C)", C),
    Block("P(X|A,B,lambda)", X, (A, B, LAMBDA)),
    Block("P(Y|A,B,lambda)", Y, (A, B, LAMBDA)),
    Block("P(Z|C,lambda)", Z, (C, LAMBDA)),
)

MODES: Dict[SearchMode, Tuple[Tuple[Block, ...], AssumptionId, Tuple[AssumptionId, ...]]] = {
    SearchMode.NO_ST: (READOUT_BLOCKS, AssumptionId.FR, (AssumptionId.FRPRIME, AssumptionId.NS)),
    SearchMode.FULL_PREMISES: (
        READOUT_BLOCKS,
        AssumptionId.FR,
        (AssumptionId.FRPRIME, AssumptionId.NS, AssumptionId.ST),
    ),
    SearchMode.FR_IMPLIES_NS: (SIGNALLING_BLOCKS, AssumptionId.NS, (AssumptionId.FR,)),
}

SEARCH_SIZES = {n: 2 for n in (A, B, C, X, Y, Z, LAMBDA)}


@dataclass(frozen=True)
class SearchResult:
    mode: SearchMode
    best_model: JointTable
    objective_value: float
    deviation_profile: Dict[AssumptionId, float]
    evaluations_used: int
    seed: int
    penalty_weight: float
    final_penalty_weight: float
    restarts: int
    parameters: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class _Point:
    q: Dict[str, np.ndarray]
    target: float
    penalty: float

    def objective(self, weight: float) -> float:
        return self.target - weight * self.penalty


class _Problem:
    def __init__(self, mode: SearchMode, floor: float):
        self.mode = mode
        self.blocks, self.target, self.penalties = MODES[mode]
        self.floor = floor
        self.scenario = canonical_scenario(SEARCH_SIZES)

    def floored(self, q: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        out = {}
        for block in self.blocks:
            k = SEARCH_SIZES[block.target]
            out[block.name] = self.floor + (1.0 - k * self.floor) * q[block.name]
        return out

    def compose(self, q: Dict[str, np.ndarray]) -> JointTable:
        p = self.floored(q)
        factors = []
        for block in self.blocks:
            shape = tuple(SEARCH_SIZES[g] for g in block.givens) + (SEARCH_SIZES[block.target],)
            factors.append(ConditionalKernel((block.target,), block.givens, p[block.name].reshape(shape)))
        return compose_product(self.scenario, factors, Backend.FLOAT)

    def evaluate(self, q: Dict[str, np.ndarray]) -> _Point:
        joint = self.compose(q)
        target = float(assumption_deviation(joint, self.target).deviation)
        penalty = sum(float(assumption_deviation(joint, a).deviation) for a in self.penalties)
        return _Point(q, target, penalty)

    def uniform_start(self) -> Dict[str, np.ndarray]:
        q = {}
        for block in self.blocks:
            rows, k = block.shape(SEARCH_SIZES)
            q[block.name] = np.full((rows, k), 1.0 / k)
        return q

    def random_start(self, seed: int) -> Dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        q = {}
        for block in self.blocks:
            rows, k = block.shape(SEARCH_SIZES)
            q[block.name] = rng.dirichlet(np.ones(k), size=rows)
        return q

    def coordinates(self):
        for block in self.blocks:
            rows, k = block.shape(SEARCH_SIZES)
            for row in range(rows):
                for entry in range(k):
                    yield block.name, row, entry


def _moved(q: Dict[str, np.ndarray], name: str, row: int, entry: int, delta: float) -> Optional[Dict[str, np.ndarray]]:
    values = q[name][row].copy()
    values[entry] = min(max(values[entry] + delta, 0.0), 1.0)
    values /= values.sum()
    if np.array_equal(values, q[name][row]):
        return None
    candidate = dict(q)
    candidate[name] = q[name].copy()
    candidate[name][row] = values
    return candidate


def _run_start(
    problem: _Problem,
    start: Dict[str, np.ndarray],
    allotment: int,
    escalate_at: int,
    weight: float,
    on_point,
) -> int:
    """Coordinate pattern search from ``start``; returns evaluations spent.

    Each evaluated point is passed to ``on_point``. The trajectory depends
    only on the start and ``escalate_at``, never on ``allotment``, which
    merely truncates it.
    """
    used = 0
    current = problem.evaluate(start)
    used += 1
    on_point(current)
    step = INITIAL_STEP
    escalated = False
    while used < allotment and step >= MIN_STEP:
        improved = False
        for name, row, entry in problem.coordinates():
            for delta in (step, -step):
                if used >= allotment:
                    return used
                if not escalated and used >= escalate_at:
                    weight *= PENALTY_ESCALATION
                    escalated = True
                    logger.info("penalty weight escalated to %g", weight)
                candidate_q = _moved(current.q, name, row, entry, delta)
                if candidate_q is None:
                    continue
                candidate = problem.evaluate(candidate_q)
                used += 1
                on_point(candidate)
                if candidate.objective(weight) > current.objective(weight):
                    current = candidate
                    improved = True
                    break
        if not improved:
            step /= 2
    return used


def _search_task(task: Tuple[SearchMode, float, int, int, int, int, float]) -> Tuple[int, _Point, int]:
    """One start of the pattern search; returns its best point at the final weight."""
    mode, floor, seed, index, allotment, escalate_at, weight = task
    problem = _Problem(mode, floor)
    start = problem.uniform_start() if index == 0 else problem.random_start(derive_seed(seed, index))
    final_weight = weight * PENALTY_ESCALATION
    best: List[Optional[_Point]] = [None]

    def keep_best(point: _Point) -> None:
        if best[0] is None or point.objective(final_weight) > best[0].objective(final_weight):
            best[0] = point

    spent = _run_start(problem, start, allotment, escalate_at, weight, keep_best)
    logger.debug("start %d: %d evaluations, best objective %.6g", index, spent, best[0].objective(final_weight))
    return index, best[0], spent


def penalized_search(
    mode: Union[SearchMode, str],
    budget: int,
    penalty_weight: float = DEFAULT_PENALTY_WEIGHT,
    seed: int = 0,
    simplex_floor: float = DEFAULT_SIMPLEX_FLOOR,
    evaluations_per_start: int = DEFAULT_EVALUATIONS_PER_START,
    workers: int = 1,
) -> SearchResult:
    """Maximize target deviation - weight * (sum of premise deviations).

    Binary alphabets, float backend. Parameters are kernel rows on the
    simplex, floored at ``simplex_floor`` per entry. Start 0 is the uniform
    model; start s > 0 draws flat-simplex rows from ``derive_seed(seed, s)``.

    The budget is cut into ``ceil(budget / evaluations_per_start)`` starts,
    each allotted ``evaluations_per_start`` evaluations (the last one gets
    the remainder). Evaluations a start leaves unused when it converges are
    not handed to later starts, so every start is independent and
    ``workers > 1`` runs them in a process pool with the same result. Each
    start multiplies the weight by 10 after ``evaluations_per_start // 2``
    of its own evaluations. The best point is chosen with the final weight
    over every evaluated point, ties going to the earliest start, so a
    larger budget never reports a worse objective.

    Raises:
        InvalidBudget: budget < 1, penalty_weight <= 0 or an unusable floor.
    """
    mode = SearchMode(mode)
    if budget < 1:
        raise InvalidBudget(f"budget must be >= 1, got {budget}")
    if not penalty_weight > 0 or not math.isfinite(penalty_weight):
        raise InvalidBudget(f"penalty_weight must be a positive number, got {penalty_weight}")
    if not 0 <= simplex_floor < 0.5:
        raise InvalidBudget(f"simplex_floor must lie in [0, 0.5), got {simplex_floor}")
    if evaluations_per_start < 1:
        raise InvalidBudget(f"evaluations_per_start must be >= 1, got {evaluations_per_start}")

    problem = _Problem(mode, simplex_floor)
    final_weight = penalty_weight * PENALTY_ESCALATION
    n_starts = -(-budget // evaluations_per_start)
    tasks = [
        (
            mode,
            simplex_floor,
            int(seed),
            index,
            min(evaluations_per_start, budget - index * evaluations_per_start),
            evaluations_per_start // 2,
            penalty_weight,
        )
        for index in range(n_starts)
    ]

    if workers > 1 and n_starts > 1:
        pool = multiprocessing.Pool(processes=workers)
        try:
            results = list(pool.imap(_search_task, tasks))
        finally:
            pool.close()
            pool.join()
    else:
        results = [_search_task(task) for task in tasks]

    point, used = None, 0
    for _, candidate, spent in results:
        used += spent
        if point is None or candidate.objective(final_weight) > point.objective(final_weight):
            point = candidate

    model = problem.compose(point.q)
    profile = {a: float(r.deviation) for a, r in assumption_profile(model).items()}
    objective = profile[problem.target] - final_weight * sum(profile[a] for a in problem.penalties)
    logger.info("%s search: objective %.6g after %d evaluations in %d starts", mode.value, objective, used, n_starts)
    return SearchResult(
        mode=mode,
        best_model=model,
        objective_value=float(objective),
        deviation_profile=profile,
        evaluations_used=used,
        seed=int(seed),
        penalty_weight=float(penalty_weight),
        final_penalty_weight=final_weight,
        restarts=n_starts,
        parameters=problem.floored(point.q),
    )
