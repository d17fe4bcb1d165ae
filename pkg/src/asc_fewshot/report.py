"""Comparison tables over result CSVs: baseline vs regularized, per domain."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .errors import FormatError
from .io import ResultRow


@dataclass
class MethodComparison:
    method: str
    baseline: Dict[str, float] = field(default_factory=dict)
    regularized: Dict[str, float] = field(default_factory=dict)

    def delta(self, domain: str) -> Optional[float]:
        if domain in self.baseline and domain in self.regularized:
            return self.regularized[domain] - self.baseline[domain]
        return None

    @staticmethod
    def _average(cells: Dict[str, float]) -> Optional[float]:
        return sum(cells.values()) / len(cells) if cells else None

    @property
    def baseline_average(self) -> Optional[float]:
        return self._average(self.baseline)

    @property
    def regularized_average(self) -> Optional[float]:
        return self._average(self.regularized)


@dataclass
class ComparisonReport:
    domains: List[str]
    methods: List[MethodComparison]


def build_comparison(rows: List[ResultRow]) -> ComparisonReport:
    """Group result rows into per-method baseline/regularized grids."""
    if not rows:
        raise FormatError("no result rows to report")
    domains: List[str] = []
    methods: List[MethodComparison] = []
    by_name: Dict[str, MethodComparison] = {}
    for row in rows:
        if row.domain not in domains:
            domains.append(row.domain)
        comp = by_name.get(row.method)
        if comp is None:
            comp = MethodComparison(row.method)
            by_name[row.method] = comp
            methods.append(comp)
        cells = comp.regularized if row.asc else comp.baseline
        cells[row.domain] = row.mean_acc
    return ComparisonReport(domains, methods)


def render_comparison(report: ComparisonReport) -> str:
    """Aligned text table; accuracies as percentages, one delta line per pair."""
    label_w = max(len("method"), max((len(m.method) + 7 for m in report.methods), default=0))
    col_w = max(8, max((len(d) for d in report.domains), default=0) + 1)

    def fmt(value: Optional[float]) -> str:
        return "" if value is None else f"{100.0 * value:.2f}"

    def line(label: str, cells: List[Optional[float]]) -> str:
        return label.ljust(label_w) + "".join(fmt(c).rjust(col_w) for c in cells)

    header = "method".ljust(label_w) + "".join(d.rjust(col_w) for d in report.domains)
    header += "Ave.".rjust(col_w)
    out = [header, "-" * len(header)]
    for comp in report.methods:
        if comp.baseline:
            cells = [comp.baseline.get(d) for d in report.domains] + [comp.baseline_average]
            out.append(line(comp.method, cells))
        if comp.regularized:
            cells = [comp.regularized.get(d) for d in report.domains] + [comp.regularized_average]
            out.append(line(comp.method + " + ASC", cells))
        if comp.baseline and comp.regularized:
            deltas = [comp.delta(d) for d in report.domains]
            avg_delta = None
            if comp.baseline_average is not None and comp.regularized_average is not None:
                avg_delta = comp.regularized_average - comp.baseline_average
            out.append(line("  delta", deltas + [avg_delta]))
    return "\n".join(out)
