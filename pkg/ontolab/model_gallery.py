"""model_gallery.py

Concrete joint distributions to run the checkers against:

- Born-rule correlations of pure two-qubit states under projective Bloch
  measurements, and the CHSH correlator;
- the PR box and generic boxes paired with setting distributions;
- local deterministic hidden-variable models;
- random models satisfying free choice, no-signalling and static readout;
- counterexample models whose ontic readout (C, Z) is not static.

Outcome convention: measurement result +1 is symbol 0, result -1 is symbol 1.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Any, Callable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ontolab.dist_core import (
    A,
    B,
    C,
    LAMBDA,
    MU,
    TABLE_CAP,
    X,
    Y,
    Z,
    Backend,
    ConditionalKernel,
    JointTable,
    Role,
    Scenario,
    VariableSpec,
    canonical_scenario,
    compose_product,
    derive_seed,
    marginalize,
    random_kernel,
    to_probability,
)
from ontolab.errors import (
    CapExceeded,
    InconsistentSpec,
    InvalidProbability,
    NotNormalizedState,
    NotUnitSetting,
    ShapeMismatch,
)

logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-12

IDENTITY = np.eye(2, dtype=complex)
PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
# symbol index -> eigenvalue
SIGNS = (1, -1)


# ---------------------------------------------------------------------
# Quantum layer
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TwoQubitState:
    """Pure state as four amplitudes on |00>, |01>, |10>, |11>."""

    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        psi = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if psi.shape != (4,):
            raise NotNormalizedState(f"expected 4 amplitudes, got {psi.shape[0]}")
        norm = float(np.vdot(psi, psi).real)
        if abs(norm - 1.0) > UNIT_TOLERANCE:
            raise NotNormalizedState(f"squared amplitudes sum to {norm!r}, expected 1")
        psi.setflags(write=False)
        object.__setattr__(self, "amplitudes", psi)

    @classmethod
    def singlet(cls) -> "TwoQubitState":
        return cls(np.array([0, 1, -1, 0], dtype=complex) / math.sqrt(2))

    @classmethod
    def product(cls, first: int = 0, second: int = 0) -> "TwoQubitState":
        psi = np.zeros(4, dtype=complex)
        psi[2 * first + second] = 1
        return cls(psi)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "TwoQubitState":
        psi = rng.normal(size=4) + 1j * rng.normal(size=4)
        return cls(psi / np.linalg.norm(psi))


@dataclass(frozen=True, eq=False)
class BlochSetting:
    """Unit vector labelling the projective measurement (I ± n·σ)/2."""

    vector: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if v.shape != (3,):
            raise NotUnitSetting(f"expected a 3-vector, got {v.shape[0]} components")
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > UNIT_TOLERANCE:
            raise NotUnitSetting(f"setting {v.tolist()} has norm {norm!r}, expected 1")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    @classmethod
    def normalized(cls, vector: Sequence[float]) -> "BlochSetting":
        v = np.asarray(vector, dtype=np.float64)
        return cls(v / np.linalg.norm(v))

    @classmethod
    def z(cls) -> "BlochSetting":
        return cls(np.array([0.0, 0.0, 1.0]))

    @classmethod
    def x(cls) -> "BlochSetting":
        return cls(np.array([1.0, 0.0, 0.0]))

    @classmethod
    def random(cls, rng: np.random.Generator) -> "BlochSetting":
        return cls.normalized(rng.normal(size=3))

    def projector(self, symbol: int) -> np.ndarray:
        n_sigma = sum(component * pauli for component, pauli in zip(self.vector, PAULI))
        return (IDENTITY + SIGNS[symbol] * n_sigma) / 2


def two_qubit_kernel(
    state: TwoQubitState,
    a_settings: Sequence[BlochSetting],
    b_settings: Sequence[BlochSetting],
) -> ConditionalKernel:
    """Born-rule kernel P(X, Y | A, B) = <psi| P_x^a (x) P_y^b |psi> (float)."""
    psi = state.amplitudes
    table = np.zeros((len(a_settings), len(b_settings), 2, 2))
    for (i, a), (j, b) in itertools.product(enumerate(a_settings), enumerate(b_settings)):
        for x, y in itertools.product(range(2), range(2)):
            operator = np.kron(a.projector(x), b.projector(y))
            table[i, j, x, y] = np.vdot(psi, operator @ psi).real
    # Born probabilities can come out as -1e-17.
    table = np.clip(table, 0.0, None)
    return ConditionalKernel((X, Y), (A, B), table)


def chsh_settings() -> Tuple[List[BlochSetting], List[BlochSetting]]:
    """Directions reaching +2*sqrt(2) on the singlet: z, x against -(z + x)/sqrt(2), (x - z)/sqrt(2).

    The singlet anticorrelates, E(a, b) = -a.b, hence the flipped B directions.
    """
    z, x = np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])
    return (
        [BlochSetting(z), BlochSetting(x)],
        [BlochSetting.normalized(-(z + x)), BlochSetting.normalized(x - z)],
    )


def correlator(kernel: ConditionalKernel) -> np.ndarray:
    """E(a, b) = sum_xy x*y P(x, y | a, b) with ±1 outcomes."""
    _check_box_shape(kernel, require_binary_settings=False)
    table = kernel.table
    n_a, n_b = table.shape[:2]
    return np.array(
        [[sum(SIGNS[x] * SIGNS[y] * table[a, b, x, y] for x in range(2) for y in range(2)) for b in range(n_b)] for a in range(n_a)],
        dtype=table.dtype,
    )


def chsh_value(kernel: ConditionalKernel):
    """E(0,0) + E(0,1) + E(1,0) - E(1,1).

    Raises:
        ShapeMismatch: the kernel is not P(X, Y | A, B) with binary inputs
            and outputs.
    """
    _check_box_shape(kernel, require_binary_settings=True)
    e = correlator(kernel)
    value = e[0, 0] + e[0, 1] + e[1, 0] - e[1, 1]
    return float(value) if kernel.backend is Backend.FLOAT else value


def _check_box_shape(kernel: ConditionalKernel, require_binary_settings: bool) -> None:
    if len(kernel.givens) != 2 or len(kernel.targets) != 2:
        raise ShapeMismatch(
            f"expected P(outcome, outcome | setting, setting), got P({kernel.targets}|{kernel.givens})"
        )
    if kernel.target_shape != (2, 2):
        raise ShapeMismatch(f"outcomes must be binary, got alphabet sizes {kernel.target_shape}")
    if require_binary_settings and kernel.given_shape != (2, 2):
        raise ShapeMismatch(f"settings must be binary, got alphabet sizes {kernel.given_shape}")


def pr_box_kernel(backend: Backend = Backend.EXACT) -> ConditionalKernel:
    """P(x, y | a, b) = 1/2 when x XOR y = a AND b, else 0."""
    half = Fraction(1, 2)
    rows = [
        [half if (x ^ y) == (a & b) else Fraction(0) for x in range(2) for y in range(2)]
        for a in range(2)
        for b in range(2)
    ]
    return ConditionalKernel.from_rows((X, Y), (A, B), {A: 2, B: 2, X: 2, Y: 2}, rows, backend)


def box_model(
    kernel: ConditionalKernel,
    p_a: Optional[Sequence[Any]] = None,
    p_b: Optional[Sequence[Any]] = None,
    backend: Optional[Backend] = None,
) -> JointTable:
    """Pair a box P(X, Y | A, B) with setting distributions (uniform by default)."""
    _check_box_shape(kernel, require_binary_settings=False)
    backend = Backend(backend) if backend is not None else kernel.backend
    n_a, n_b = kernel.given_shape
    scenario = Scenario.of(
        VariableSpec(A, Role.SETTING, n_a),
        VariableSpec(B, Role.SETTING, n_b),
        VariableSpec(X, Role.OUTCOME, 2),
        VariableSpec(Y, Role.OUTCOME, 2),
    )
    factors = [
        _setting(A, p_a, n_a, backend),
        _setting(B, p_b, n_b, backend),
        ConditionalKernel((X, Y), (A, B), kernel.astype(backend).table),
    ]
    return compose_product(scenario, factors, backend)


def quantum_model(
    state: TwoQubitState,
    a_settings: Sequence[BlochSetting],
    b_settings: Sequence[BlochSetting],
) -> JointTable:
    return box_model(two_qubit_kernel(state, a_settings, b_settings), backend=Backend.FLOAT)


def _setting(name: str, probabilities: Optional[Sequence[Any]], size: int, backend: Backend) -> ConditionalKernel:
    if probabilities is None:
        return ConditionalKernel.uniform((name,), (), {name: size}, backend)
    if len(probabilities) != size:
        raise InconsistentSpec(f"P({name}) has {len(probabilities)} entries, alphabet has {size}")
    return ConditionalKernel.distribution(name, probabilities, backend)


# ---------------------------------------------------------------------
# Ontic models
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ResponseFunction:
    """Deterministic outcome table indexed by (setting symbol, ontic symbol)."""

    table: np.ndarray
    n_outcomes: int = 2

    def __post_init__(self) -> None:
        table = np.asarray(self.table, dtype=np.int64)
        if table.ndim != 2:
            raise InconsistentSpec(f"response table must be 2-D, got shape {table.shape}")
        if table.size and (table.min() < 0 or table.max() >= self.n_outcomes):
            raise InconsistentSpec(
                f"response values must lie in [0, {self.n_outcomes}), got {table.tolist()}"
            )
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @classmethod
    def from_callable(
        cls,
        fn: Callable[[int, int], int],
        n_settings: int = 2,
        n_ontic: int = 2,
        n_outcomes: int = 2,
    ) -> "ResponseFunction":
        table = [[int(fn(s, l)) for l in range(n_ontic)] for s in range(n_settings)]
        return cls(np.array(table, dtype=np.int64).reshape(n_settings, n_ontic), n_outcomes)

    @classmethod
    def constant(cls, value: int = 0, n_settings: int = 2, n_ontic: int = 2, n_outcomes: int = 2) -> "ResponseFunction":
        return cls.from_callable(lambda s, l: value, n_settings, n_ontic, n_outcomes)

    @classmethod
    def copy_ontic(cls, n_settings: int = 2, n_ontic: int = 2) -> "ResponseFunction":
        return cls.from_callable(lambda s, l: l, n_settings, n_ontic, n_ontic)

    @classmethod
    def copy_setting(cls, n_settings: int = 2, n_ontic: int = 2) -> "ResponseFunction":
        return cls.from_callable(lambda s, l: s, n_settings, n_ontic, n_settings)

    @classmethod
    def all_binary(cls) -> Iterator["ResponseFunction"]:
        """All 16 maps {0,1} x {0,1} -> {0,1}."""
        for values in itertools.product(range(2), repeat=4):
            yield cls(np.array(values, dtype=np.int64).reshape(2, 2))

    @property
    def n_settings(self) -> int:
        return self.table.shape[0]

    @property
    def n_ontic(self) -> int:
        return self.table.shape[1]

    def __call__(self, setting: int, ontic: int) -> int:
        return int(self.table[setting, ontic])

    def kernel(self, target: str, setting: str, ontic: str, backend: Backend) -> ConditionalKernel:
        sizes = {target: self.n_outcomes, setting: self.n_settings, ontic: self.n_ontic}
        return ConditionalKernel.deterministic(target, (setting, ontic), sizes, self, backend)


class ZSource(str, Enum):
    FROM_C_AND_LAMBDA = "from_C_and_lambda"
    FROM_C_AND_NOISE = "from_C_and_noise"
    COPY_X = "copy_X"
    COPY_LAMBDA = "copy_lambda"


def _uniform(n: int) -> Tuple[Fraction, ...]:
    return tuple(Fraction(1, n) for _ in range(n))


@dataclass(frozen=True, eq=False)
class OntModelSpec:
    """Factorized ontic model: settings, ontic state, responses and Z readout.

    ``z_response`` reads (C, lambda) or (C, mu) depending on ``z_source``;
    the copy sources ignore it. ``adaptive_c`` rows give P(C | A = a).
    """

    p_a: Sequence[Any]
    p_b: Sequence[Any]
    p_c: Sequence[Any]
    p_lambda: Sequence[Any]
    x_response: ResponseFunction
    y_response: ResponseFunction
    z_response: Optional[ResponseFunction] = None
    z_source: ZSource = ZSource.FROM_C_AND_LAMBDA
    p_mu: Optional[Sequence[Any]] = None
    adaptive_c: Optional[Sequence[Sequence[Any]]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "z_source", ZSource(self.z_source))
        n_a, n_b, n_c, n_l = len(self.p_a), len(self.p_b), len(self.p_c), len(self.p_lambda)
        self._expect("X response", self.x_response.table.shape, (n_a, n_l))
        self._expect("Y response", self.y_response.table.shape, (n_b, n_l))
        if self.z_source is ZSource.FROM_C_AND_LAMBDA:
            self._require_z()
            self._expect("Z response", self.z_response.table.shape, (n_c, n_l))
        elif self.z_source is ZSource.FROM_C_AND_NOISE:
            self._require_z()
            if self.p_mu is None:
                raise InconsistentSpec("z_source from_C_and_noise needs p_mu")
            self._expect("Z response", self.z_response.table.shape, (n_c, len(self.p_mu)))
        if self.adaptive_c is not None:
            shape = (len(self.adaptive_c),) + tuple({len(row) for row in self.adaptive_c})
            self._expect("adaptive C kernel", shape, (n_a, n_c))

    def _require_z(self) -> None:
        if self.z_response is None:
            raise InconsistentSpec(f"z_source {self.z_source.value} needs a z_response")

    @staticmethod
    def _expect(what: str, got: Tuple[int, ...], want: Tuple[int, ...]) -> None:
        if tuple(got) != tuple(want):
            raise InconsistentSpec(f"{what} has shape {tuple(got)}, alphabets require {tuple(want)}")

    @classmethod
    def uniform(
        cls,
        x_response: ResponseFunction,
        y_response: ResponseFunction,
        z_response: Optional[ResponseFunction] = None,
        z_source: ZSource = ZSource.FROM_C_AND_LAMBDA,
        n_c: int = 2,
        **overrides: Any,
    ) -> "OntModelSpec":
        """Uniform settings and ontic state sized after the response tables."""
        fields = dict(
            p_a=_uniform(x_response.n_settings),
            p_b=_uniform(y_response.n_settings),
            p_c=_uniform(n_c),
            p_lambda=_uniform(x_response.n_ontic),
            x_response=x_response,
            y_response=y_response,
            z_response=z_response,
            z_source=z_source,
        )
        fields.update(overrides)
        return cls(**fields)

    @property
    def sizes(self) -> dict:
        sizes = {
            A: len(self.p_a),
            B: len(self.p_b),
            C: len(self.p_c),
            LAMBDA: len(self.p_lambda),
            X: self.x_response.n_outcomes,
            Y: self.y_response.n_outcomes,
        }
        if self.z_source is ZSource.COPY_X:
            sizes[Z] = sizes[X]
        elif self.z_source is ZSource.COPY_LAMBDA:
            sizes[Z] = sizes[LAMBDA]
        else:
            sizes[Z] = self.z_response.n_outcomes
        if self.p_mu is not None:
            sizes[MU] = len(self.p_mu)
        return sizes


def compose_ontic_model(spec: OntModelSpec, backend: Backend = Backend.EXACT) -> JointTable:
    """Compose P(lambda)[P(mu)]P(A)P(B)P(C[|A]) P(X|A,lambda) P(Y|B,lambda) P(Z|...).

    The fresh noise mu is marginalized out before returning, so the result
    always lives on the canonical {A, B, C, X, Y, Z, lambda} scenario.
    """
    backend = Backend(backend)
    sizes = spec.sizes
    z_alias = {ZSource.COPY_X: X, ZSource.COPY_LAMBDA: LAMBDA}.get(spec.z_source)
    scenario = canonical_scenario({k: v for k, v in sizes.items() if k != MU}, z_alias=z_alias)
    uses_noise = spec.z_source is ZSource.FROM_C_AND_NOISE
    if uses_noise:
        scenario = scenario.extended(VariableSpec(MU, Role.ONTIC, sizes[MU]))

    factors = [ConditionalKernel.distribution(LAMBDA, spec.p_lambda, backend)]
    if uses_noise:
        factors.append(ConditionalKernel.distribution(MU, spec.p_mu, backend))
    factors.append(ConditionalKernel.distribution(A, spec.p_a, backend))
    factors.append(ConditionalKernel.distribution(B, spec.p_b, backend))
    if spec.adaptive_c is None:
        factors.append(ConditionalKernel.distribution(C, spec.p_c, backend))
    else:
        factors.append(ConditionalKernel.from_rows((C,), (A,), sizes, spec.adaptive_c, backend))
    factors.append(spec.x_response.kernel(X, A, LAMBDA, backend))
    factors.append(spec.y_response.kernel(Y, B, LAMBDA, backend))
    if spec.z_source is ZSource.FROM_C_AND_LAMBDA:
        factors.append(spec.z_response.kernel(Z, C, LAMBDA, backend))
    elif uses_noise:
        factors.append(spec.z_response.kernel(Z, C, MU, backend))
    else:
        source = X if spec.z_source is ZSource.COPY_X else LAMBDA
        factors.append(ConditionalKernel.deterministic(Z, (source,), sizes, lambda v: v, backend))

    joint = compose_product(scenario, factors, backend)
    if uses_noise:
        joint = marginalize(joint, [n for n in scenario.names if n != MU])
    return joint


def local_deterministic_model(spec: OntModelSpec, backend: Backend = Backend.EXACT) -> JointTable:
    """X = f(A, lambda), Y = g(B, lambda), Z = h(C, lambda) with free settings.

    Raises:
        InconsistentSpec: the spec adapts C to A or reads Z from anything
            other than (C, lambda).
    """
    if spec.adaptive_c is not None:
        raise InconsistentSpec("a local deterministic model has no adaptive C kernel")
    if spec.z_source not in (ZSource.FROM_C_AND_LAMBDA, ZSource.COPY_LAMBDA):
        raise InconsistentSpec(f"Z must be a function of C and lambda, got z_source {spec.z_source.value}")
    return compose_ontic_model(spec, backend)


def local_deterministic_boxes() -> Iterator[Tuple[ResponseFunction, ResponseFunction, ConditionalKernel]]:
    """Every binary response pair (f, g) with uniform binary lambda, as a box P(X, Y | A, B)."""
    half = Fraction(1, 2)
    for f in ResponseFunction.all_binary():
        for g in ResponseFunction.all_binary():
            table = np.full((2, 2, 2, 2), Fraction(0), dtype=object)
            for a, b, l in itertools.product(range(2), range(2), range(2)):
                table[a, b, f(a, l), g(b, l)] += half
            yield f, g, ConditionalKernel((X, Y), (A, B), table)


PREMISE_SIZES = {A: 2, B: 2, C: 2, X: 2, Y: 2, Z: 2, LAMBDA: 2, MU: 2}


def premise_model_random(
    seed: int,
    sizes: Optional[Mapping[str, int]] = None,
    backend: Backend = Backend.FLOAT,
) -> JointTable:
    """Random model satisfying FR', NS and ST by construction.

    Composes P(lambda)P(mu)P(A)P(B)P(C) P(X|A,lambda) P(Y|B,lambda) P(Z|C,mu)
    with flat-simplex kernels seeded from ``seed`` and marginalizes mu.

    Raises:
        CapExceeded: the table including mu would exceed the dense cap.
    """
    backend = Backend(backend)
    merged = dict(PREMISE_SIZES)
    merged.update(sizes or {})
    if math.prod(merged.values()) > TABLE_CAP:
        raise CapExceeded(f"premise model with sizes {merged} exceeds the {TABLE_CAP}-entry cap")
    scenario = canonical_scenario({k: v for k, v in merged.items() if k != MU}).extended(
        VariableSpec(MU, Role.ONTIC, merged[MU])
    )
    layout = [
        ((LAMBDA,), ()),
        ((MU,), ()),
        ((A,), ()),
        ((B,), ()),
        ((C,), ()),
        ((X,), (A, LAMBDA)),
        ((Y,), (B, LAMBDA)),
        ((Z,), (C, MU)),
    ]
    factors = [
        random_kernel(targets, givens, merged, derive_seed(seed, k), backend)
        for k, (targets, givens) in enumerate(layout)
    ]
    joint = compose_product(scenario, factors, backend)
    return marginalize(joint, [n for n in scenario.names if n != MU])


def _copy_probability(p_copy: Any, backend: Backend):
    p = to_probability(p_copy, backend)
    if not 0 <= p <= 1:
        raise InvalidProbability(f"p_copy must lie in [0, 1], got {p_copy!r}")
    return p


def adaptive_c_model(p_copy: Any = 1, backend: Backend = Backend.EXACT) -> JointTable:
    """C := A with probability ``p_copy``, else uniform; free choice and NS intact.

    X = lambda and Y = lambda; Z reports the readout setting C.

    Raises:
        InvalidProbability: p_copy outside [0, 1].
    """
    backend = Backend(backend)
    p = _copy_probability(p_copy, backend)
    half = Fraction(1, 2) if backend is Backend.EXACT else 0.5
    rows = [[p * (a == c) + (1 - p) * half for c in range(2)] for a in range(2)]
    spec = OntModelSpec.uniform(
        ResponseFunction.copy_ontic(),
        ResponseFunction.copy_ontic(),
        ResponseFunction.copy_setting(),
        adaptive_c=rows,
    )
    logger.debug("adaptive C model with p_copy=%s", p)
    return compose_ontic_model(spec, backend)


def a_and_lambda(a: int, l: int) -> int:
    return a & l


def outcome_revealing_model(
    x_response: Optional[ResponseFunction] = None,
    backend: Backend = Backend.EXACT,
) -> JointTable:
    """Z := X: the readout reveals the local outcome, so it is not static.

    Defaults to X = A AND lambda. Settings and lambda are uniform, Y = lambda,
    and the readout setting C is fixed at symbol 0.
    """
    f = x_response if x_response is not None else ResponseFunction.from_callable(a_and_lambda)
    spec = OntModelSpec.uniform(
        f,
        ResponseFunction.copy_ontic(n_ontic=f.n_ontic),
        z_source=ZSource.COPY_X,
        p_c=(Fraction(1), Fraction(0)),
    )
    return compose_ontic_model(spec, backend)


def signalling_model(backend: Backend = Backend.EXACT) -> JointTable:
    """Y := A, so B's outcome reveals A's setting; free choice still holds.

    X = lambda, C uniform and Z = C.
    """
    backend = Backend(backend)
    sizes = {n: 2 for n in (A, B, C, X, Y, Z, LAMBDA)}
    factors = [
        ConditionalKernel.uniform((LAMBDA,), (), sizes, backend),
        ConditionalKernel.uniform((A,), (), sizes, backend),
        ConditionalKernel.uniform((B,), (), sizes, backend),
        ConditionalKernel.uniform((C,), (), sizes, backend),
        ConditionalKernel.deterministic(X, (LAMBDA,), sizes, lambda l: l, backend),
        ConditionalKernel.deterministic(Y, (A,), sizes, lambda a: a, backend),
        ConditionalKernel.deterministic(Z, (C,), sizes, lambda c: c, backend),
    ]
    return compose_product(canonical_scenario(sizes), factors, backend)
