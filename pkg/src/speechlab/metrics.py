"""Run metrics reports and plot-data emission.

A MetricsReport carries named step series and summary scalars for one run.
Wall-clock durations live in a separate timing block that is excluded from
the config digest and from report comparisons, so re-runs of the same
config produce equal reports.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class MetricsReport:
    run_id: str
    config_digest: str
    series: dict[str, list[tuple[int, float]]] = field(default_factory=dict)
    summary: dict[str, float] = field(default_factory=dict)
    complete: bool = False
    error: str | None = None
    timing: dict[str, float] = field(default_factory=dict)

    def add(self, series: str, step: int, value: float) -> None:
        points = self.series.setdefault(series, [])
        if points and step <= points[-1][0]:
            raise ValueError(f"series {series!r}: step {step} not after {points[-1][0]}")
        points.append((int(step), float(value)))

    def set_summary(self, name: str, value: float) -> None:
        self.summary[name] = float(value)

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "config_digest": self.config_digest,
                "series": {k: [[s, v] for s, v in pts] for k, pts in self.series.items()},
                "summary": self.summary, "complete": self.complete,
                "error": self.error, "timing": self.timing}

    @staticmethod
    def from_dict(d: dict) -> "MetricsReport":
        report = MetricsReport(run_id=d["run_id"], config_digest=d["config_digest"],
                               complete=d.get("complete", False), error=d.get("error"))
        report.series = {k: [(int(s), float(v)) for s, v in pts]
                         for k, pts in d.get("series", {}).items()}
        report.summary = dict(d.get("summary", {}))
        report.timing = dict(d.get("timing", {}))
        return report

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def load(path) -> "MetricsReport":
        with open(path, "r", encoding="utf-8") as f:
            return MetricsReport.from_dict(json.load(f))

    def comparable_dict(self) -> dict:
        """Report content with wall-clock timing stripped."""
        d = self.to_dict()
        d.pop("timing", None)
        return d


def emit_plot_data(reports: list[MetricsReport], path) -> int:
    """Write a long-format (run, series, step, value) table; lossless via
    repr round-trip of the float values. Returns the row count."""
    seen: dict[str, str] = {}
    for r in reports:
        if r.run_id in seen and seen[r.run_id] != r.config_digest:
            raise ValueError(f"conflicting reports for run id {r.run_id!r}")
        seen[r.run_id] = r.config_digest
    lines = ["run\tseries\tstep\tvalue"]
    for r in reports:
        for name in sorted(r.series):
            for step, value in r.series[name]:
                lines.append(f"{r.run_id}\t{name}\t{step}\t{value!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    return len(lines) - 1


def load_plot_data(path) -> list[tuple[str, str, int, float]]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline()
        if header.strip() != "run\tseries\tstep\tvalue":
            raise ValueError("unrecognized plot data header")
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            run, series, step, value = line.split("\t")
            rows.append((run, series, int(step), float(value)))
    return rows
