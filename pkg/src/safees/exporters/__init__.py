"""Export helpers: trajectory CSVs, JSON summaries and the diagnostics one-pager."""

from .csv_io import (
    read_trajectory_csv,
    trajectory_columns,
    write_trajectories,
    write_trajectory_csv,
)
from .one_pager import (
    build_payload,
    dump_model,
    export_one_pager,
    render_text_report,
    report_to_json,
    report_to_pdf,
    write_model,
)

__all__ = [
    "read_trajectory_csv",
    "trajectory_columns",
    "write_trajectories",
    "write_trajectory_csv",
    "build_payload",
    "dump_model",
    "export_one_pager",
    "render_text_report",
    "report_to_json",
    "report_to_pdf",
    "write_model",
]
