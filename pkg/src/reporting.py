"""
reporting.py  ·  experiment reports: data payload plus a console summary
------------------------------------------------------------------------
A ``Report`` is a pandas table of records, a flat summary, a config echo and
a set of named acceptance checks. Nothing in it depends on wall-clock time,
host or worker count, so the same config and seed give the same bytes.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Optional, Union

import pandas as pd
from rich.console import Console
from rich.table import Table

from src import __version__

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def version_string() -> str:
    return f"v{__version__}"


def _plain(value: Any) -> Any:
    """JSON-safe scalar: Fractions and numpy numbers become floats/ints, paths strings."""
    if isinstance(value, Fraction):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return value.item()
    return value


@dataclass
class Report:
    command: str
    records: pd.DataFrame
    summary: Dict[str, Any] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    checks: Dict[str, bool] = field(default_factory=dict)
    payload: Optional[str] = None  # replaces the records (e.g. a generated instance)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def metadata(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "version": version_string(),
            "command": self.command,
            "seed": self.config.get("seed"),
            "config": _plain(self.config),
        }

    def to_json(self) -> str:
        payload = {
            **self.metadata(),
            "summary": _plain(self.summary),
            "checks": _plain(self.checks),
            "records": _plain(self.records.to_dict(orient="records")),
        }
        return json.dumps(payload, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.records.to_csv(buf, index=False)
        return buf.getvalue()

    def render(self, fmt: str) -> str:
        if self.payload is not None:
            return self.payload
        return self.to_json() + "\n" if fmt == "json" else self.to_csv()

    def write(self, path: Union[str, Path], fmt: str) -> None:
        path = Path(path)
        path.write_text(self.render(fmt), encoding="utf-8")
        logger.info(f"Wrote {len(self.records)} {self.command} records to {path} ({fmt})")


def read_csv_records(source: Union[str, Path, io.StringIO]) -> pd.DataFrame:
    return pd.read_csv(source, float_precision="round_trip")


def read_json_report(text: str) -> Dict[str, Any]:
    return json.loads(text)


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.6g}"
    if isinstance(value, Fraction):
        return f"{float(value):.6g}"
    return str(value)


def render_summary(report: Report, console: Optional[Console] = None) -> None:
    """Summary and checks as rich tables on the (stderr) console."""
    console = console or Console(stderr=True)
    table = Table(title=f"{report.command} · {version_string()}", show_header=True, header_style="bold")
    table.add_column("metric")
    table.add_column("value", justify="right")
    for key, value in report.summary.items():
        table.add_row(key, _fmt(value))
    console.print(table)

    if report.checks:
        checks = Table(title="acceptance checks", show_header=True, header_style="bold")
        checks.add_column("check")
        checks.add_column("result")
        for name, ok in report.checks.items():
            checks.add_row(name, "[green]pass[/green]" if ok else "[red]FAIL[/red]")
        console.print(checks)
