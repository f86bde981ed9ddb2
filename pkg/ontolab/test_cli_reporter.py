import csv
import io
import json
from fractions import Fraction

import pytest
from click.testing import CliRunner

from ontolab import __version__, config
from ontolab.__main__ import cli
from ontolab.cli_reporter import (
    REPORT_COLUMNS,
    ReportDoc,
    ReportRow,
    RunFlags,
    build_model,
    emit_scenario,
    gallery_scenario,
    parse_scenario,
    render_csv,
    render_markdown,
    run_command,
)
from ontolab.dist_core import Backend
from ontolab.errors import DocumentReferenceError, DocumentSyntaxError, SchemaError
from ontolab.independence import AssumptionId
from ontolab.model_gallery import adaptive_c_model
import ontolab.theorem_lab as theorem_lab


def copy_document(**overrides) -> dict:
    doc = {
        "ontolab_schema": 1,
        "variables": [
            {"name": "A", "role": "setting", "alphabet_size": 2},
            {"name": "B", "role": "setting", "alphabet_size": 2},
        ],
        "model": {
            "kind": "table",
            "entries": [
                {"assignment": {"A": 0, "B": 0}, "p": "1/2"},
                {"assignment": {"A": 1, "B": 1}, "p": "1/2"},
            ],
        },
        "checks": [{"target": ["A"], "independent_of": ["B"]}],
        "options": {"backend": "exact"},
    }
    doc.update(overrides)
    return doc


def encode(doc: dict) -> bytes:
    return json.dumps(doc).encode("utf-8")


def rows_of(text: str) -> dict:
    return {row["check"]: row for row in csv.DictReader(io.StringIO(text))}


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def adaptive_file(tmp_path):
    doc, _ = gallery_scenario("adaptive_c", {}, Backend.EXACT, 0)
    path = tmp_path / "adaptive.json"
    path.write_bytes(emit_scenario(doc))
    return path


# ---------------------------------------------------------------------
# Scenario documents
# ---------------------------------------------------------------------


def test_parse_table_document():
    doc = parse_scenario(encode(copy_document()))
    joint = build_model(doc)
    assert joint.backend is Backend.EXACT
    report = run_command("check", doc, RunFlags())
    (row,) = report.rows
    assert row.check == "P(A|B)=P(A)"
    assert row.deviation == Fraction(1, 2)
    assert row.witness == {"A": 0, "B": 0}
    assert row.passed is False
    assert not report.all_passed


def test_parse_factors_document():
    doc = copy_document(
        model={
            "kind": "factors",
            "factors": [
                {"targets": ["A"], "rows": [["1/2", "1/2"]]},
                {"targets": ["B"], "givens": ["A"], "rows": [["1", "0"], ["0", "1"]]},
            ],
        }
    )
    joint = build_model(parse_scenario(encode(doc)))
    assert joint.probability({"A": 1, "B": 1}) == Fraction(1, 2)


def test_undeclared_variable_is_a_reference_error():
    doc = copy_document(checks=[{"target": ["W"], "independent_of": ["B"]}])
    with pytest.raises(DocumentReferenceError, match="W"):
        parse_scenario(encode(doc))


def test_assumption_check_needs_its_variables():
    with pytest.raises(DocumentReferenceError):
        parse_scenario(encode(copy_document(checks=["NS"])))


@pytest.mark.parametrize(
    "change, path",
    [
        ({"ontolab_schema": 2}, "ontolab_schema"),
        ({"extra": True}, "extra"),
        ({"model": {"kind": "table", "entries": [{"assignment": {"A": 0, "B": 0}, "p": 1.0}]}}, "model.entries.0"),
    ],
)
def test_schema_errors(change, path):
    with pytest.raises(SchemaError) as info:
        parse_scenario(encode(copy_document(**change)))
    assert info.value.path == path


def test_unnormalized_table_is_a_schema_error():
    entries = [{"assignment": {"A": 0, "B": 0}, "p": "1/2"}]
    with pytest.raises(SchemaError) as info:
        parse_scenario(encode(copy_document(model={"kind": "table", "entries": entries})))
    assert info.value.path == "model"


@pytest.mark.parametrize("payload", [b"{", b"\xff\xfe", b"[1, 2"])
def test_syntax_errors(payload):
    with pytest.raises(DocumentSyntaxError):
        parse_scenario(payload)


@pytest.mark.parametrize("name", ["pr_box", "adaptive_c", "outcome_revealing", "signalling", "premise_random"])
def test_gallery_documents_reparse(name):
    doc, joint = gallery_scenario(name, {}, Backend.EXACT, 3)
    text = emit_scenario(doc)
    again = parse_scenario(text)
    assert emit_scenario(again) == text
    assert build_model(again) == joint


def test_singlet_needs_float_backend():
    with pytest.raises(SchemaError) as info:
        gallery_scenario("singlet_chsh", {}, Backend.EXACT, 0)
    assert info.value.path == "options.backend"


def test_unknown_gallery_parameter():
    with pytest.raises(SchemaError, match="model.parameters.q"):
        gallery_scenario("adaptive_c", {"q": 1}, Backend.EXACT, 0)


@pytest.mark.parametrize(
    "name, params, path",
    [
        ("premise_random", {"seed": "abc"}, "model.parameters.seed"),
        ("premise_random", {"seed": -1}, "model.parameters.seed"),
        ("premise_random", {"sizes": 3}, "model.parameters.sizes"),
        ("premise_random", {"sizes": {"A": "two"}}, "model.parameters.sizes.A"),
        ("local_deterministic", {"p_c": 5}, "model.parameters.p_c"),
        ("local_deterministic", {"x": [[0, "a"], [1, 0]]}, "model.parameters.x.0.1"),
        ("outcome_revealing", {"x": "copy"}, "model.parameters.x"),
    ],
)
def test_mistyped_gallery_parameter(name, params, path):
    with pytest.raises(SchemaError) as info:
        gallery_scenario(name, params, Backend.EXACT, 0)
    assert info.value.path == path


def test_mistyped_parameter_in_document():
    valid, _ = gallery_scenario("premise_random", {}, Backend.EXACT, 0)
    doc = json.loads(emit_scenario(valid))
    doc["model"]["parameters"] = {"seed": "x"}
    with pytest.raises(SchemaError) as info:
        parse_scenario(encode(doc))
    assert info.value.path == "model.parameters.seed"


def test_ragged_response_table():
    with pytest.raises(SchemaError) as info:
        gallery_scenario("outcome_revealing", {"x": [[0, 1], [1]]}, Backend.EXACT, 0)
    assert info.value.path == "model.parameters.x"


# ---------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------


def sample_report() -> ReportDoc:
    return ReportDoc(
        backend=Backend.EXACT,
        tolerance=Fraction(0),
        seed=7,
        rows=(
            ReportRow("P(X|A,B)=P(X|A)", Fraction(1, 2), {"A": 0, "B": 1}, 2, False),
            ReportRow("objective", 0.1),
        ),
    )


def test_render_csv():
    lines = render_csv(sample_report()).split("\n")
    assert lines[0] == ",".join(REPORT_COLUMNS)
    assert lines[1] == f"P(X|A,B)=P(X|A),1/2,A=0;B=1,2,false,exact,0,7,{__version__}"
    assert lines[2] == f"objective,0.1,,0,,exact,0,7,{__version__}"
    assert lines[3] == ""


def test_render_markdown_escapes_bars():
    text = render_markdown(sample_report())
    assert "P(X\\|A,B)=P(X\\|A)" in text
    assert text.count("\n") == 4


# ---------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------


def test_gallery_command(runner):
    result = runner.invoke(cli, ["gallery", "adaptive_c", "--backend", "exact"])
    assert result.exit_code == 0, result.output
    rows = rows_of(result.stdout)
    assert rows["FR"]["deviation"] == "1/2"
    assert rows["FR"]["passed"] == "false"
    assert rows["NS"]["deviation"] == "0"
    assert rows["NS"]["passed"] == "true"


def test_gallery_param(runner):
    result = runner.invoke(cli, ["gallery", "adaptive_c", "--backend", "exact", "--param", "p_copy=1/2"])
    assert rows_of(result.stdout)["FR"]["deviation"] == "1/4"


def test_assert_exit_code(runner):
    failing = runner.invoke(cli, ["gallery", "adaptive_c", "--backend", "exact", "--assert"])
    assert failing.exit_code == 1
    passing = runner.invoke(cli, ["gallery", "pr_box", "--assert"])
    assert passing.exit_code == 0


def test_check_is_deterministic(runner, adaptive_file):
    first = runner.invoke(cli, ["check", str(adaptive_file)])
    second = runner.invoke(cli, ["check", str(adaptive_file)])
    assert first.exit_code == 0
    assert first.stdout == second.stdout
    rows = rows_of(first.stdout)
    assert set(rows) == {a.value for a in AssumptionId}
    assert rows["ST"]["backend"] == "exact"


def test_check_tolerance_flag(runner, adaptive_file):
    result = runner.invoke(cli, ["check", str(adaptive_file), "--tolerance", "0.75", "--assert"])
    assert result.exit_code == 0
    assert rows_of(result.stdout)["FR"]["tolerance"] == "0.75"


def test_check_writes_output_file(runner, adaptive_file, tmp_path):
    target = tmp_path / "report.md"
    result = runner.invoke(cli, ["check", str(adaptive_file), "--out", "md", "--output", str(target)])
    assert result.exit_code == 0
    assert result.stdout == ""
    assert target.read_text(encoding="utf-8").startswith("| check | deviation |")


def test_bad_document_exit_code(runner, tmp_path):
    path = tmp_path / "broken.json"
    path.write_bytes(b"{not json")
    result = runner.invoke(cli, ["check", str(path)])
    assert result.exit_code == 2
    assert result.stderr.startswith("error: ")


def test_missing_document_exit_code(runner, tmp_path):
    result = runner.invoke(cli, ["check", str(tmp_path / "absent.json")])
    assert result.exit_code == 2


def test_trace_command(runner, adaptive_file):
    result = runner.invoke(cli, ["trace", str(adaptive_file)])
    rows = rows_of(result.stdout)
    assert list(rows) == ["residual_chain_rule", "residual_st_step", "residual_ns_frprime_step", "residual_conclusion"]
    assert rows["residual_chain_rule"]["deviation"] == "0"
    assert rows["residual_st_step"]["deviation"] == "1/2"
    assert rows["residual_ns_frprime_step"]["passed"] == "true"


def test_sweep_certifies_with_configured_tolerance(monkeypatch):
    monkeypatch.setattr(theorem_lab, "premise_model_random", lambda seed, sizes, backend: adaptive_c_model(1))
    monkeypatch.setattr(config, "DEFAULT_TOLERANCE", 0.75)
    report = run_command("sweep", None, RunFlags(n=1, workers=1))
    rows = {row.check: row for row in report.rows}
    assert report.tolerance == 0.75
    assert rows["ST (max over 1 models)"].deviation == Fraction(1, 2)
    assert rows["ST (max over 1 models)"].passed is True


def test_sweep_command(runner):
    result = runner.invoke(cli, ["sweep", "--n", "5", "--seed", "2", "--assert"])
    assert result.exit_code == 0, result.output
    rows = rows_of(result.stdout)
    fr = rows["FR (max over 5 models)"]
    assert fr["witness"].startswith("seed=")
    assert fr["seed"] == "2"
    assert "ST (max over 5 models)" in rows


def test_search_command(runner):
    result = runner.invoke(cli, ["search", "--budget", "20", "--backend", "exact"])
    assert result.exit_code == 0, result.output
    rows = rows_of(result.stdout)
    assert rows["evaluations_used"]["deviation"] == "20"
    assert rows["objective (no_st)"]["backend"] == "float"
    assert rows["FR"]["passed"] == ""
    assert rows["NS"]["passed"] == "true"


@pytest.mark.parametrize(
    "args",
    [
        ["sweep", "--n", "20", "--seed", "4"],
        ["search", "--budget", "150", "--seed", "4"],
        ["search", "--mode", "full_premises", "--budget", "90", "--seed", "1"],
    ],
)
def test_sweep_and_search_reports_are_byte_identical(runner, args):
    first = runner.invoke(cli, args)
    second = runner.invoke(cli, args)
    assert first.exit_code == 0, first.output
    assert first.stdout_bytes == second.stdout_bytes


def test_search_workers_flag(runner):
    args = ["search", "--budget", "60", "--seed", "3"]
    serial = runner.invoke(cli, args)
    pooled = runner.invoke(cli, args + ["--workers", "2"])
    assert pooled.exit_code == 0, pooled.output
    assert pooled.stdout == serial.stdout


def test_gallery_emit_round_trip(runner):
    result = runner.invoke(cli, ["gallery", "outcome_revealing", "--backend", "exact", "--emit"])
    assert result.exit_code == 0
    doc = parse_scenario(result.stdout.encode("utf-8"))
    assert doc.model.name == "outcome_revealing"
    assert doc.options.backend is Backend.EXACT


def test_bad_param_exit_code(runner):
    result = runner.invoke(cli, ["gallery", "adaptive_c", "--param", "p_copy"])
    assert result.exit_code == 2


@pytest.mark.parametrize(
    "args",
    [
        ["premise_random", "--param", "seed=abc"],
        ["premise_random", "--param", "sizes=3"],
        ["local_deterministic", "--param", "p_c=5"],
    ],
)
def test_mistyped_param_exit_code(runner, args):
    result = runner.invoke(cli, ["gallery", *args])
    assert result.exit_code == 2
    assert result.stderr.startswith("error: ")
    assert "model.parameters." in result.stderr
