"""Study-report assembly and emission: one in-memory report renders the
aligned text table, the machine-readable TSV/JSON, and the two timing
plot-data files. Metric files are deterministic; wall times go only to the
timing files, which are expected to differ between runs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .experiments import ExperimentResult
from .metrics import MetricsReport

ROW_ORDER = ("TB", "SB", "MTL", "FT", "FTD", "FTE", "FR")
METHOD_LABELS = {
    "TB": "Target Baseline (TB)",
    "SB": "Source Baseline (SB)",
    "MTL": "Multi-task learning (MTL)",
    "FT": "Fine-tuned (FT)",
    "FTD": "Fine-tuned decoder (FTD)",
    "FTE": "Fine-tuned encoder (FTE)",
    "FR": "Feature reuse (FR)",
}
COLUMNS = (
    ("source", "map_score", "higher"),
    ("source", "min_ade", "lower"),
    ("source", "min_fde", "lower"),
    ("source", "miss_rate", "lower"),
    ("target", "map_score", "higher"),
    ("target", "min_ade", "lower"),
    ("target", "min_fde", "lower"),
    ("target", "miss_rate", "lower"),
)
COLUMN_NAMES = (
    "source.mAP", "source.minADE", "source.minFDE", "source.missRate",
    "target.mAP", "target.minADE", "target.minFDE", "target.missRate",
)


@dataclass
class MethodRow:
    method: str
    source: MetricsReport
    target: MetricsReport
    total_time: float
    target_stage_time: float | None


@dataclass
class StudyReport:
    rows: list[MethodRow]

    def __post_init__(self):
        order = [r.method for r in self.rows]
        if order != list(ROW_ORDER):
            raise ConfigError(f"study rows must be ordered {ROW_ORDER}, got {order}")

    @staticmethod
    def from_results(results: dict[str, ExperimentResult]) -> "StudyReport":
        missing = set(ROW_ORDER) - set(results)
        if missing:
            raise ConfigError(f"study incomplete, missing methods {sorted(missing)}")
        rows = [
            MethodRow(
                m,
                results[m].source_report,
                results[m].target_report,
                results[m].total_time,
                results[m].target_stage_time if m in ("FT", "FTD", "FTE", "FR") else None,
            )
            for m in ROW_ORDER
        ]
        return StudyReport(rows)

    def value(self, row: MethodRow, column: int) -> float:
        side, attr, _ = COLUMNS[column]
        return getattr(row.source if side == "source" else row.target, attr)

    def best_flags(self) -> list[list[bool]]:
        """Per row x column: is this value the column's best? Recomputed from
        the stored metrics, never persisted."""
        flags = [[False] * len(COLUMNS) for _ in self.rows]
        for c, (_, _, sense) in enumerate(COLUMNS):
            vals = [self.value(r, c) for r in self.rows]
            best = max(vals) if sense == "higher" else min(vals)
            for i, v in enumerate(vals):
                flags[i][c] = v == best
        return flags

    def to_table_text(self) -> str:
        flags = self.best_flags()
        label_w = max(len(METHOD_LABELS[r.method]) for r in self.rows)
        header1 = " " * label_w + " | " + "Source Dataset".center(4 * 11 + 3) + " | " + "Target Dataset".center(4 * 11 + 3)
        names = ["mAP", "minADE", "minFDE", "missRate"] * 2
        header2 = " " * label_w + " | " + " ".join(n.rjust(10) for n in names[:4]) + " | " + " ".join(
            n.rjust(10) for n in names[4:]
        )
        lines = [header1, header2, "-" * len(header2)]
        for i, row in enumerate(self.rows):
            cells = []
            for c in range(len(COLUMNS)):
                mark = "*" if flags[i][c] else " "
                cells.append(f"{self.value(row, c):9.4f}{mark}")
            line = METHOD_LABELS[row.method].ljust(label_w) + " | " + " ".join(cells[:4]) + " | " + " ".join(cells[4:])
            lines.append(line)
        return "\n".join(lines) + "\n"

    def to_tsv(self) -> str:
        lines = ["method\t" + "\t".join(COLUMN_NAMES)]
        for row in self.rows:
            vals = "\t".join(f"{self.value(row, c):.6f}" for c in range(len(COLUMNS)))
            lines.append(f"{row.method}\t{vals}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            row.method: {name: self.value(row, c) for c, name in enumerate(COLUMN_NAMES)}
            for row in self.rows
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def timing_total_csv(self) -> str:
        lines = ["method,total_seconds"]
        for row in self.rows:
            lines.append(f"{row.method},{row.total_time:.3f}")
        return "\n".join(lines) + "\n"

    def timing_target_stage_csv(self) -> str:
        lines = ["method,target_stage_seconds"]
        for row in self.rows:
            if row.target_stage_time is not None:
                lines.append(f"{row.method},{row.target_stage_time:.3f}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> dict[str, Path]:
        """Emit every artifact; returns name -> path. The .txt/.tsv/.json
        metric files are byte-deterministic for a fixed seed."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = {
            "table": out_dir / "study_report.txt",
            "tsv": out_dir / "study_report.tsv",
            "json": out_dir / "study_report.json",
            "timing_total": out_dir / "timing_total.csv",
            "timing_target_stage": out_dir / "timing_target_stage.csv",
        }
        files["table"].write_text(self.to_table_text())
        files["tsv"].write_text(self.to_tsv())
        files["json"].write_text(self.to_json())
        files["timing_total"].write_text(self.timing_total_csv())
        files["timing_target_stage"].write_text(self.timing_target_stage_csv())
        return files


def write_metrics_report(report: MetricsReport, path_prefix) -> tuple[Path, Path]:
    """Key=value text plus JSON, generated from the same in-memory report."""
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    text_path = prefix.with_suffix(".txt")
    json_path = prefix.with_suffix(".json")
    text_path.write_text(report.to_text())
    json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return text_path, json_path
