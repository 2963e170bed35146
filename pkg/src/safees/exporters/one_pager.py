from __future__ import annotations

"""
Summary and diagnostics export helpers.

This module provides:

- Byte-stable JSON for summaries and reports (`dump_model`, `write_model`)
- A JSON envelope around a `DiagnosticsReport` with a timestamp and metadata
- A plain-text one-pager of the report
- A one-page PDF of the report (via ReportLab)

Only the envelope and the PDF carry a timestamp; the
plain model dumps are identical across runs with the same inputs.
"""

import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

from pydantic import BaseModel
from reportlab.lib.pagesizes import letter  # type: ignore[import-untyped]
from reportlab.lib.units import inch  # type: ignore[import-untyped]
from reportlab.pdfgen import canvas  # type: ignore[import-untyped]

from ..core.validators import CheckResult, DiagnosticsReport

__all__ = [
    "dump_model",
    "write_model",
    "build_payload",
    "report_to_json",
    "render_text_report",
    "export_one_pager",
    "report_to_pdf",
]

PathLike = Union[str, Path]


# ---------------------------------------------------------------------------
# Internal helpers
# ---------------------------------------------------------------------------


def _normalize_mapping(payload: Any) -> Dict[str, Any]:
    """
    Convert a payload-like object into a JSON-ready dict.

    Pydantic models are dumped in JSON mode (by alias, so check results
    carry ``pass``); mappings are copied; anything else raises TypeError.
    """
    if payload is None:
        return {}
    if isinstance(payload, BaseModel):
        return payload.model_dump(mode="json", by_alias=True)
    if isinstance(payload, Mapping):
        return dict(payload)
    raise TypeError(f"Unsupported payload type for normalization: {type(payload)!r}")


def _format_margin(value: Optional[float]) -> str:
    if value is None or not math.isfinite(value):
        return "n/a"
    return f"{value:+.3e}"


def _format_location(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, Mapping):
        return ", ".join(f"{k}={_format_location(v)}" for k, v in value.items())
    if isinstance(value, (list, tuple)):
        return "(" + ", ".join(f"{float(v):.4g}" for v in value) + ")"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _check_line(check: CheckResult) -> str:
    verdict = "PASS" if check.passed else "FAIL"
    return (
        f"{check.name:<24} {verdict}  margin={_format_margin(check.margin)}  "
        f"at {_format_location(check.worst_location)}"
    )


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def dump_model(model: BaseModel) -> str:
    """Indented JSON with sorted keys and a trailing newline."""
    return json.dumps(_normalize_mapping(model), indent=2, sort_keys=True) + "\n"


def write_model(model: BaseModel, path: PathLike) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dump_model(model), encoding="utf-8")
    return out


def build_payload(
    report: DiagnosticsReport,
    *,
    config: Union[BaseModel, Mapping[str, Any], None] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """
    JSON-serialisable envelope around a report.

    Structure::

        {
            "generated_at": "<ISO-8601 UTC timestamp>",
            "passed": true,
            "report": {"checks": [...]},
            "config": {...},
            "metadata": {...}          # optional
        }
    """
    payload: Dict[str, Any] = {
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "passed": report.passed,
        "report": _normalize_mapping(report),
        "config": _normalize_mapping(config),
    }
    if metadata:
        payload["metadata"] = dict(metadata)
    return payload


def report_to_json(
    report: DiagnosticsReport,
    *,
    config: Union[BaseModel, Mapping[str, Any], None] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> str:
    return json.dumps(build_payload(report, config=config, metadata=metadata), indent=2)


# ---------------------------------------------------------------------------
# Plain-text one-pager
# ---------------------------------------------------------------------------


def render_text_report(
    report: DiagnosticsReport,
    *,
    title: str = "Safe ES Diagnostics",
    subtitle: Optional[str] = None,
) -> str:
    """
    Render the report as plain text: title, overall verdict, one line per
    check, then the failed checks with their details.
    """
    lines: List[str] = [title, "=" * len(title)]
    if subtitle:
        lines.append(subtitle)
    failed = report.failed()
    overall = "PASS" if report.passed else f"FAIL ({len(failed)} of {len(report.checks)})"
    lines.append(f"Overall: {overall}")
    lines.append("")
    lines.append("Checks")
    if not report.checks:
        lines.append("(none)")
    lines.extend(_check_line(check) for check in report.checks)
    if failed:
        lines.append("")
        lines.append("Failures")
        for idx, check in enumerate(failed, 1):
            details = ", ".join(f"{k}={v}" for k, v in sorted(check.details.items()))
            lines.append(f"{idx}. {check.name}: {details or '(no details)'}")
    return "\n".join(lines).strip() + "\n"


def export_one_pager(
    report: DiagnosticsReport,
    output_path: PathLike,
    *,
    title: str = "Safe ES Diagnostics",
    subtitle: Optional[str] = None,
) -> Path:
    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_text_report(report, title=title, subtitle=subtitle), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# PDF one-pager
# ---------------------------------------------------------------------------


def report_to_pdf(
    report: DiagnosticsReport,
    output_path: PathLike,
    *,
    title: str = "Safe ES Diagnostics",
    metadata: Optional[Mapping[str, Any]] = None,
) -> Path:
    """
    Render a one-page PDF summary using ReportLab.

    Layout (letter, portrait): title, timestamp, overall verdict, one bullet
    per check, failed-check details, optional metadata footer.
    """
    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)

    c = canvas.Canvas(str(path), pagesize=letter)
    c.setTitle(title)

    width, height = letter
    margin = inch
    y = height - margin

    c.setFont("Helvetica-Bold", 18)
    c.drawString(margin, y, title)
    y -= 0.4 * inch

    c.setFont("Helvetica", 12)
    c.drawString(margin, y, f"Generated: {datetime.now(timezone.utc).isoformat()}")
    y -= 0.3 * inch

    c.setFont("Helvetica-Bold", 14)
    failed = report.failed()
    c.drawString(margin, y, "Overall: PASS" if report.passed else f"Overall: FAIL ({len(failed)})")
    y -= 0.35 * inch

    c.setFont("Helvetica-Bold", 12)
    c.drawString(margin, y, "Checks")
    y -= 0.2 * inch
    y = _draw_bullets(c, [_check_line(check) for check in report.checks], y, margin, width)

    if failed:
        y -= 0.1 * inch
        c.setFont("Helvetica-Bold", 12)
        c.drawString(margin, y, "Failures")
        y -= 0.2 * inch
        items = [
            f"{check.name}: " + ", ".join(f"{k}={v}" for k, v in sorted(check.details.items()))
            for check in failed
        ]
        _draw_bullets(c, items, y, margin, width)

    if metadata:
        footer_y = margin
        c.setFont("Helvetica-Oblique", 9)
        for key, value in metadata.items():
            c.drawRightString(width - margin, footer_y, f"{key}: {value}")
            footer_y += 0.15 * inch

    c.showPage()
    c.save()
    return path


def _wrap_text(text: str, max_width: float, avg_char_width: float = 6.0) -> List[str]:
    """Greedy word wrap at roughly ``max_width / avg_char_width`` characters."""
    if not text:
        return [""]

    max_chars = max(int(max_width / avg_char_width), 1)
    lines: List[str] = []
    current: List[str] = []
    for word in text.split():
        tentative = " ".join(current + [word]) if current else word
        if len(tentative) > max_chars and current:
            lines.append(" ".join(current))
            current = [word]
        else:
            current.append(word)
    if current:
        lines.append(" ".join(current))
    return lines or [""]


def _draw_bullets(
    c: canvas.Canvas,
    items: Sequence[str],
    start_y: float,
    margin: float,
    page_width: float,
) -> float:
    """Draw wrapped bullet items and return the new y-coordinate; stops at the bottom margin."""
    y = start_y
    c.setFont("Helvetica", 10)
    if not items:
        c.drawString(margin + 10, y, "(none)")
        return y - 0.2 * inch

    available_width = page_width - (margin + 10) - margin
    for item in items:
        for idx, line in enumerate(_wrap_text(item, available_width, avg_char_width=5.5)):
            if y < margin + 0.5 * inch:
                c.drawString(margin + 10, y, "...")
                return y - 0.2 * inch
            c.drawString(margin + 10, y, ("• " + line) if idx == 0 else ("  " + line))
            y -= 0.18 * inch
    return y
