from __future__ import annotations

import json
from pathlib import Path

from safees.core.validators import CheckResult, DiagnosticsReport, RunSummary, TrajectoryRecord
from safees.exporters import one_pager


def _sample_report() -> DiagnosticsReport:
    """Two passing checks and one failure with details and a dict location."""
    return DiagnosticsReport(
        checks=[
            CheckResult(name="frequencies", passed=True, details={"omegas": ["10", "13"]}),
            CheckResult(name="invariance", passed=True, margin=0.0123, worst_location=1.5),
            CheckResult(
                name="lyapunov",
                passed=False,
                margin=-2.5e-4,
                worst_location={"run": 3, "at": 0.75},
                details={"increase": 2.5e-4},
            ),
        ]
    )


def test_render_contains_sections():
    """
    The text one-pager carries the title, overall verdict, one line per
    check and a failure section. Wording of the lines is not pinned.
    """
    report = _sample_report()
    text = one_pager.render_text_report(report, subtitle="smoke")

    assert "Safe ES Diagnostics" in text
    assert "smoke" in text
    assert "Overall: FAIL (1 of 3)" in text
    assert "Checks" in text
    assert "Failures" in text
    for name in ("frequencies", "invariance", "lyapunov"):
        assert name in text
    assert "run=3" in text
    assert "n/a" in text
    assert text.endswith("\n")


def test_passing_report_has_no_failure_section():
    report = DiagnosticsReport(checks=[CheckResult(name="minimizer", passed=True, margin=0.5)])
    text = one_pager.render_text_report(report)
    assert "Overall: PASS" in text
    assert "Failures" not in text


def test_export_roundtrip(tmp_path: Path):
    report = _sample_report()
    expected = one_pager.render_text_report(report, subtitle="smoke")

    target = tmp_path / "sub" / "report.txt"
    path = one_pager.export_one_pager(report, target, subtitle="smoke")

    assert path == target
    assert target.read_text(encoding="utf-8") == expected


def test_build_payload_is_json_ready():
    payload = one_pager.build_payload(_sample_report(), config={"name": "smoke"}, metadata={"seed": 0})

    assert payload["passed"] is False
    assert payload["report"]["checks"][2]["pass"] is False
    assert payload["config"] == {"name": "smoke"}
    assert payload["metadata"] == {"seed": 0}
    assert "generated_at" in payload
    json.dumps(payload)


def test_report_to_json_parses_back():
    parsed = json.loads(one_pager.report_to_json(_sample_report()))
    assert [c["name"] for c in parsed["report"]["checks"]] == ["frequencies", "invariance", "lyapunov"]
    assert "metadata" not in parsed


def test_dump_model_is_byte_stable(tmp_path: Path):
    summary = RunSummary(
        name="smoke",
        system="exact",
        theta_star=[-1.83, 0.0],
        records=[
            TrajectoryRecord(
                index=0, initial_theta_hat=[0.0, 0.0], final_theta_hat=[-1.8, 0.0],
                min_h=0.2, steps=50, wall_time=0.123,
            )
        ],
    )
    first = one_pager.dump_model(summary)
    assert first == one_pager.dump_model(summary.model_copy(deep=True))
    assert first.endswith("\n")
    assert "wall_time" not in first

    path = one_pager.write_model(summary, tmp_path / "summary.json")
    assert json.loads(path.read_text(encoding="utf-8"))["records"][0]["steps"] == 50


def test_report_to_pdf_creates_nonempty_pdf(tmp_path: Path):
    target = tmp_path / "report.pdf"
    path = one_pager.report_to_pdf(_sample_report(), target, metadata={"experiment": "smoke"})
    assert path == target
    assert path.suffix.lower() == ".pdf"
    assert path.read_bytes().startswith(b"%PDF")


def test_pdf_handles_many_checks(tmp_path: Path):
    checks = [CheckResult(name=f"check_{i}", passed=i % 2 == 0, details={"i": i}) for i in range(80)]
    path = one_pager.report_to_pdf(DiagnosticsReport(checks=checks), tmp_path / "long.pdf")
    assert path.stat().st_size > 0
