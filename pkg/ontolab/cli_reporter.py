"""cli_reporter.py

Scenario documents in, deterministic reports out.

A scenario document is UTF-8 JSON::

    {
      "ontolab_schema": 1,
      "variables": [{"name": "A", "role": "setting", "alphabet_size": 2}, ...],
      "model": {"kind": "gallery", "name": "pr_box", "parameters": {}},
      "checks": ["NS", {"target": ["A"], "independent_of": ["B"]}],
      "options": {"backend": "exact", "seed": 7}
    }

``model`` is one of ``{"kind": "table", "entries": [{"assignment": {...},
"p": "1/4"}, ...]}``, ``{"kind": "factors", "factors": [{"targets": [...],
"givens": [...], "rows": [[...], ...]}, ...]}`` or a gallery reference.
Probabilities are decimal or "p/q" strings; plain JSON numbers are accepted
on the float backend only.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Annotated, Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import click
from pydantic import BaseModel, ConfigDict, Field, StrictFloat, StrictInt, StrictStr, ValidationError

from ontolab import __version__, config
from ontolab.dist_core import (
    A,
    Backend,
    ConditionalKernel,
    JointTable,
    Probability,
    Role,
    Scenario,
    VariableSpec,
    build_joint,
    compose_product,
)
from ontolab.errors import (
    DocumentReferenceError,
    DocumentSyntaxError,
    InvalidQuery,
    OntolabError,
    SchemaError,
)
from ontolab.independence import (
    AssumptionId,
    CIQuery,
    ViolationReport,
    assumption_deviation,
    ci_deviation,
    default_threshold,
    expand,
)
from ontolab.model_gallery import (
    OntModelSpec,
    ResponseFunction,
    TwoQubitState,
    ZSource,
    adaptive_c_model,
    box_model,
    chsh_settings,
    local_deterministic_model,
    outcome_revealing_model,
    pr_box_kernel,
    premise_model_random,
    quantum_model,
    signalling_model,
)
from ontolab.theorem_lab import (
    MODES,
    SearchMode,
    derivation_trace,
    penalized_search,
    verify_implication_sweep,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FLOAT_FORMAT = ".12g"
VERBS = ("check", "sweep", "trace", "search", "gallery")
GALLERY_NAMES = (
    "pr_box",
    "singlet_chsh",
    "local_deterministic",
    "premise_random",
    "adaptive_c",
    "outcome_revealing",
    "signalling",
)
REPORT_COLUMNS = (
    "check",
    "deviation",
    "witness",
    "vacuous_events",
    "passed",
    "backend",
    "tolerance",
    "seed",
    "version",
)

ProbabilityValue = Union[StrictStr, StrictInt, StrictFloat]


# ---------------------------------------------------------------------
# Document schema
# ---------------------------------------------------------------------


class _Doc(BaseModel):
    model_config = ConfigDict(extra="forbid")


class VariableDoc(_Doc):
    name: StrictStr
    role: Role = Role.OUTCOME
    alphabet_size: StrictInt = 2
    alias_of: Optional[StrictStr] = None


class EntryDoc(_Doc):
    assignment: Dict[str, StrictInt]
    p: ProbabilityValue


class TableModelDoc(_Doc):
    kind: Literal["table"]
    entries: List[EntryDoc]


class FactorDoc(_Doc):
    targets: List[StrictStr]
    givens: List[StrictStr] = []
    rows: List[List[ProbabilityValue]]


class FactorsModelDoc(_Doc):
    kind: Literal["factors"]
    factors: List[FactorDoc]


class GalleryModelDoc(_Doc):
    kind: Literal["gallery"]
    name: Literal[
        "pr_box",
        "singlet_chsh",
        "local_deterministic",
        "premise_random",
        "adaptive_c",
        "outcome_revealing",
        "signalling",
    ]
    parameters: Dict[str, Any] = {}


ResponseTable = List[List[StrictInt]]


class NoParameters(_Doc):
    pass


class AdaptiveCParameters(_Doc):
    p_copy: ProbabilityValue = "1"


class OutcomeRevealingParameters(_Doc):
    x: Optional[ResponseTable] = None


class LocalDeterministicParameters(_Doc):
    x: Optional[ResponseTable] = None
    y: Optional[ResponseTable] = None
    z: Optional[ResponseTable] = None
    p_c: Optional[List[ProbabilityValue]] = None


class PremiseRandomParameters(_Doc):
    seed: Optional[Annotated[StrictInt, Field(ge=0)]] = None
    sizes: Optional[Dict[str, Annotated[StrictInt, Field(ge=1)]]] = None


# Checked when the model is built, so emitted documents keep the raw mapping.
GALLERY_PARAMETERS = {
    "pr_box": NoParameters,
    "singlet_chsh": NoParameters,
    "signalling": NoParameters,
    "local_deterministic": LocalDeterministicParameters,
    "premise_random": PremiseRandomParameters,
    "adaptive_c": AdaptiveCParameters,
    "outcome_revealing": OutcomeRevealingParameters,
}


ModelDoc = Annotated[Union[TableModelDoc, FactorsModelDoc, GalleryModelDoc], Field(discriminator="kind")]


class CIQueryDoc(_Doc):
    target: List[StrictStr]
    independent_of: List[StrictStr]


class OptionsDoc(_Doc):
    backend: Optional[Backend] = None
    tolerance: Optional[float] = None
    seed: Optional[StrictInt] = None


class ScenarioDoc(_Doc):
    ontolab_schema: Literal[1]
    variables: List[VariableDoc]
    model: ModelDoc
    checks: List[Union[AssumptionId, CIQueryDoc]] = []
    options: OptionsDoc = OptionsDoc()

    def scenario(self) -> Scenario:
        return Scenario(
            tuple(VariableSpec(v.name, v.role, v.alphabet_size, v.alias_of) for v in self.variables)
        )


def _path(loc: Sequence[Any]) -> str:
    return ".".join(str(part) for part in loc)


def _declared(doc: ScenarioDoc) -> set:
    return {v.name for v in doc.variables}


def _check_references(doc: ScenarioDoc) -> None:
    declared = _declared(doc)

    def need(names, path):
        for name in names:
            if name not in declared:
                raise DocumentReferenceError(name, path)

    for i, v in enumerate(doc.variables):
        if v.alias_of is not None:
            need([v.alias_of], f"variables.{i}.alias_of")
    if isinstance(doc.model, TableModelDoc):
        for i, entry in enumerate(doc.model.entries):
            need(entry.assignment, f"model.entries.{i}.assignment")
    elif isinstance(doc.model, FactorsModelDoc):
        for i, factor in enumerate(doc.model.factors):
            need(factor.targets, f"model.factors.{i}.targets")
            need(factor.givens, f"model.factors.{i}.givens")
    for i, check in enumerate(doc.checks):
        if isinstance(check, CIQueryDoc):
            need(check.target, f"checks.{i}.target")
            need(check.independent_of, f"checks.{i}.independent_of")
        else:
            for comp in expand(check):
                need(comp.variables, f"checks.{i}")


def parse_scenario(document: bytes) -> ScenarioDoc:
    """Validate a scenario document and the model it describes.

    Raises:
        DocumentSyntaxError: not UTF-8 or not JSON.
        SchemaError: unknown or missing fields, or a model that fails
            table validation (the underlying error is chained).
        DocumentReferenceError: a check, entry, factor or alias names an
            undeclared variable.
    """
    try:
        text = document.decode("utf-8") if isinstance(document, (bytes, bytearray)) else document
        raw = json.loads(text)
    except UnicodeDecodeError as e:
        raise DocumentSyntaxError(f"document is not UTF-8: {e}") from e
    except json.JSONDecodeError as e:
        raise DocumentSyntaxError(f"line {e.lineno} column {e.colno}: {e.msg}") from e

    if isinstance(raw, dict) and raw.get("ontolab_schema") != SCHEMA_VERSION:
        raise SchemaError("ontolab_schema", f"expected schema version {SCHEMA_VERSION}, got {raw.get('ontolab_schema')!r}")
    try:
        doc = ScenarioDoc.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        raise SchemaError(_path(first["loc"]), first["msg"]) from e

    _check_references(doc)
    build_model(doc)
    return doc


def emit_scenario(doc: ScenarioDoc) -> bytes:
    """Canonical JSON form of ``doc``; ``parse_scenario`` reads it back."""
    payload = doc.model_dump(mode="json", exclude_none=True)
    return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")


# ---------------------------------------------------------------------
# Model construction
# ---------------------------------------------------------------------


def _require_strings(values: Sequence[Any], path: str, backend: Backend) -> None:
    if backend is not Backend.EXACT:
        return
    for i, value in enumerate(values):
        if not isinstance(value, str):
            raise SchemaError(f"{path}.{i}", f"exact backend needs probabilities as strings, got {value!r}")


def _response(value: Optional[List[List[int]]], path: str, default: Optional[ResponseFunction]) -> Optional[ResponseFunction]:
    if value is None:
        return default
    try:
        return ResponseFunction(value)
    except (TypeError, ValueError) as e:
        if isinstance(e, OntolabError):
            raise
        raise SchemaError(path, f"expected a rectangular table of outcome symbols, got {value!r}") from e


def _gallery_parameters(model: GalleryModelDoc) -> _Doc:
    try:
        return GALLERY_PARAMETERS[model.name].model_validate(model.parameters)
    except ValidationError as e:
        first = e.errors()[0]
        raise SchemaError(_path(("model", "parameters") + tuple(first["loc"])), first["msg"]) from e


def _gallery_joint(model: GalleryModelDoc, backend: Backend, seed: int) -> JointTable:
    params = _gallery_parameters(model)
    path = "model.parameters"

    if model.name == "pr_box":
        return box_model(pr_box_kernel(backend), backend=backend)
    if model.name == "singlet_chsh":
        if backend is Backend.EXACT:
            raise SchemaError("options.backend", "singlet_chsh is only available on the float backend")
        return quantum_model(TwoQubitState.singlet(), *chsh_settings())
    if model.name == "signalling":
        return signalling_model(backend)
    if model.name == "adaptive_c":
        return adaptive_c_model(params.p_copy, backend)
    if model.name == "outcome_revealing":
        return outcome_revealing_model(_response(params.x, f"{path}.x", None), backend)
    if model.name == "premise_random":
        return premise_model_random(params.seed if params.seed is not None else seed, params.sizes, backend)
    copy = ResponseFunction.copy_ontic()
    overrides = {"p_c": tuple(params.p_c)} if params.p_c is not None else {}
    spec = OntModelSpec.uniform(
        _response(params.x, f"{path}.x", copy),
        _response(params.y, f"{path}.y", copy),
        _response(params.z, f"{path}.z", copy),
        ZSource.FROM_C_AND_LAMBDA,
        **overrides,
    )
    return local_deterministic_model(spec, backend)


def _doc_backend(doc: ScenarioDoc, backend: Optional[Backend]) -> Backend:
    if backend is not None:
        return Backend(backend)
    if doc.options.backend is not None:
        return doc.options.backend
    return Backend(config.DEFAULT_BACKEND)


def build_model(doc: ScenarioDoc, backend: Optional[Backend] = None, seed: Optional[int] = None) -> JointTable:
    """Joint table described by ``doc.model``.

    Raises:
        SchemaError: the model is invalid; the library error is chained.
    """
    backend = _doc_backend(doc, backend)
    seed = seed if seed is not None else (doc.options.seed if doc.options.seed is not None else config.DEFAULT_SEED)
    model = doc.model
    try:
        scenario = doc.scenario()
        if isinstance(model, TableModelDoc):
            _require_strings([e.p for e in model.entries], "model.entries", backend)
            return build_joint(scenario, [(e.assignment, e.p) for e in model.entries], backend)
        if isinstance(model, FactorsModelDoc):
            sizes = {v.name: v.alphabet_size for v in doc.variables}
            factors = []
            for i, factor in enumerate(model.factors):
                for j, row in enumerate(factor.rows):
                    _require_strings(row, f"model.factors.{i}.rows.{j}", backend)
                factors.append(ConditionalKernel.from_rows(factor.targets, factor.givens, sizes, factor.rows, backend))
            return compose_product(scenario, factors, backend)
        joint = _gallery_joint(model, backend, seed)
    except SchemaError:
        raise
    except OntolabError as e:
        raise SchemaError("model", f"{type(e).__name__}: {e}") from e

    declared = {v.name: v.alphabet_size for v in doc.variables}
    built = dict(zip(joint.scenario.names, joint.scenario.shape))
    if declared != built:
        raise SchemaError(
            "variables",
            f"gallery model {model.name!r} has variables {built}, document declares {declared}",
        )
    return joint


# ---------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    check: str
    deviation: Probability
    witness: Optional[Dict[str, int]] = None
    vacuous_events: int = 0
    # None for informational rows that --assert ignores.
    passed: Optional[bool] = None


@dataclass(frozen=True)
class ReportDoc:
    backend: Backend
    tolerance: Probability
    seed: int
    version: str = __version__
    rows: Tuple[ReportRow, ...] = ()

    @property
    def all_passed(self) -> bool:
        return all(row.passed is not False for row in self.rows)


@dataclass
class RunFlags:
    backend: Optional[Backend] = None
    tolerance: Optional[float] = None
    seed: Optional[int] = None
    budget: Optional[int] = None
    mode: SearchMode = SearchMode.NO_ST
    n: int = 1000
    workers: Optional[int] = None
    penalty_weight: Optional[float] = None
    party: str = A
    gallery: Optional[str] = None
    params: Dict[str, Any] = field(default_factory=dict)


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, float):
        return format(value, FLOAT_FORMAT)
    return str(value)


def format_witness(witness: Optional[Dict[str, int]]) -> str:
    if not witness:
        return ""
    return ";".join(f"{name}={value}" for name, value in witness.items())


def _cells(report: ReportDoc, row: ReportRow) -> List[str]:
    return [
        row.check,
        format_value(row.deviation),
        format_witness(row.witness),
        str(row.vacuous_events),
        format_value(row.passed),
        report.backend.value,
        format_value(report.tolerance),
        str(report.seed),
        report.version,
    ]


def render_csv(report: ReportDoc) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in report.rows:
        writer.writerow(_cells(report, row))
    return buffer.getvalue()


def render_markdown(report: ReportDoc) -> str:
    lines = [
        "| " + " | ".join(REPORT_COLUMNS) + " |",
        "|" + "|".join("---" for _ in REPORT_COLUMNS) + "|",
    ]
    for row in report.rows:
        cells = [cell.replace("|", "\\|") for cell in _cells(report, row)]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _passed(deviation: Probability, tolerance: Probability) -> bool:
    return deviation <= tolerance


def _row(report: ViolationReport, tolerance: Probability, label: Optional[str] = None) -> ReportRow:
    return ReportRow(
        check=label or report.assumption,
        deviation=report.deviation,
        witness=report.witness,
        vacuous_events=report.vacuous_events,
        passed=_passed(report.deviation, tolerance),
    )


def _resolve(flags: RunFlags, doc: Optional[ScenarioDoc]) -> Tuple[Backend, Probability, int]:
    options = doc.options if doc is not None else OptionsDoc()
    if flags.backend is not None:
        backend = Backend(flags.backend)
    elif options.backend is not None:
        backend = options.backend
    else:
        backend = Backend(config.DEFAULT_BACKEND)
    tolerance = flags.tolerance if flags.tolerance is not None else options.tolerance
    if tolerance is None:
        tolerance = config.DEFAULT_TOLERANCE
    if tolerance is None:
        tolerance = default_threshold(backend)
    seed = flags.seed if flags.seed is not None else options.seed
    if seed is None:
        seed = config.DEFAULT_SEED
    return backend, tolerance, int(seed)


def _check_rows(joint: JointTable, checks: Sequence[Union[AssumptionId, CIQueryDoc]], tolerance) -> List[ReportRow]:
    rows = []
    for check in checks:
        if isinstance(check, CIQueryDoc):
            try:
                query = CIQuery(tuple(check.target), tuple(check.independent_of))
            except InvalidQuery as e:
                raise SchemaError("checks", str(e)) from e
            rows.append(_row(ci_deviation(joint, query), tolerance))
        else:
            rows.append(_row(assumption_deviation(joint, check), tolerance))
    return rows


def _default_checks(joint: JointTable) -> List[AssumptionId]:
    names = set(joint.scenario.names)
    return [a for a in AssumptionId if all(set(c.variables) <= names for c in expand(a))]


def gallery_scenario(name: str, params: Dict[str, Any], backend: Backend, seed: int) -> Tuple[ScenarioDoc, JointTable]:
    """Scenario document (with default checks) and joint for a gallery model."""
    if name not in GALLERY_NAMES:
        raise SchemaError("gallery", f"unknown gallery model {name!r}; choose from {', '.join(GALLERY_NAMES)}")
    joint = _gallery_joint(GalleryModelDoc(kind="gallery", name=name, parameters=params), backend, seed)
    variables = [
        VariableDoc(name=s.name, role=s.role, alphabet_size=s.alphabet_size, alias_of=s.alias_of)
        for s in joint.scenario.variables
    ]
    doc = ScenarioDoc(
        ontolab_schema=1,
        variables=variables,
        model=GalleryModelDoc(kind="gallery", name=name, parameters=params),
        checks=_default_checks(joint),
        options=OptionsDoc(backend=backend, seed=seed),
    )
    return doc, joint


def run_command(verb: str, scenario: Optional[ScenarioDoc], flags: RunFlags) -> ReportDoc:
    """Dispatch ``verb`` and collect its report rows.

    ``check`` and ``trace`` need a scenario; ``gallery`` needs
    ``flags.gallery``; ``sweep`` and ``search`` need neither.

    Raises:
        click.UsageError: a verb-specific input is missing.
        OntolabError: forwarded from the library.
    """
    if verb not in VERBS:
        raise click.UsageError(f"unknown verb {verb!r}; choose from {', '.join(VERBS)}")
    if verb in ("check", "trace") and scenario is None:
        raise click.UsageError(f"{verb} needs a scenario document")
    backend, tolerance, seed = _resolve(flags, scenario)
    logger.debug("%s: backend=%s tolerance=%s seed=%s", verb, backend.value, tolerance, seed)

    if verb == "gallery":
        if not flags.gallery:
            raise click.UsageError("gallery needs a model name")
        try:
            _, joint = gallery_scenario(flags.gallery, flags.params, backend, seed)
        except OntolabError as e:
            if isinstance(e, SchemaError):
                raise
            raise SchemaError("gallery", f"{type(e).__name__}: {e}") from e
        rows = _check_rows(joint, _default_checks(joint), tolerance)

    elif verb == "check":
        joint = build_model(scenario, backend, seed)
        checks = scenario.checks or _default_checks(joint)
        rows = _check_rows(joint, checks, tolerance)

    elif verb == "trace":
        joint = build_model(scenario, backend, seed)
        trace = derivation_trace(joint, flags.party)
        rows = [
            ReportRow(f"residual_{step}", value, trace.witnesses.get(step), 0, _passed(value, tolerance))
            for step, value in trace.residuals.items()
            if step != "c_leg"
        ]

    elif verb == "sweep":
        workers = flags.workers if flags.workers is not None else config.DEFAULT_WORKERS
        report = verify_implication_sweep(flags.n, None, seed, backend, workers, tolerance)
        rows = [
            ReportRow(
                f"{name} (max over {report.n_models} models)", value, None, 0, _passed(value, tolerance)
            )
            for name, value in report.max_premise_deviation.items()
        ]
        witness = {"seed": report.argmax_seed} if report.argmax_seed is not None else None
        rows.append(
            ReportRow(
                f"FR (max over {report.n_models} models)",
                report.max_fr_deviation,
                witness,
                0,
                _passed(report.max_fr_deviation, tolerance),
            )
        )

    else:
        budget = flags.budget if flags.budget is not None else config.DEFAULT_BUDGET
        weight = flags.penalty_weight if flags.penalty_weight is not None else config.DEFAULT_PENALTY_WEIGHT
        workers = flags.workers if flags.workers is not None else config.DEFAULT_WORKERS
        result = penalized_search(flags.mode, budget, weight, seed, workers=workers)
        # Search always runs on floats.
        if backend is not Backend.FLOAT:
            backend, tolerance, _ = _resolve(RunFlags(Backend.FLOAT, flags.tolerance, seed), scenario)
        _, _, penalties = MODES[result.mode]
        rows = [ReportRow(f"objective ({result.mode.value})", result.objective_value)]
        for assumption, value in result.deviation_profile.items():
            passed = _passed(value, tolerance) if assumption in penalties else None
            rows.append(ReportRow(assumption.value, value, None, 0, passed))
        rows.append(ReportRow("evaluations_used", float(result.evaluations_used)))

    return ReportDoc(backend=backend, tolerance=tolerance, seed=seed, rows=tuple(rows))
