"""Relative-change tables between two result documents."""

from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal

from .errors import MissingMetric, ZeroBaseline

# lower is better for every composite score
DEFAULT_METRICS = ("dcs", "d_cluster", "d_avg", "ccs", "D_cluster", "D_avg")


@dataclass(frozen=True)
class DeltaRow:
    metric: str
    baseline: float
    ours: float
    delta_percent: float

    @property
    def rendered(self):
        return render_percent(self.delta_percent)

    def to_dict(self):
        return {"metric": self.metric, "baseline": self.baseline, "ours": self.ours,
                "delta_percent": self.delta_percent, "rendered": self.rendered}


def render_percent(value):
    """Two-decimal rendering with an explicit sign; ``-0.00`` prints as ``0.00``."""
    d = Decimal(repr(float(value))).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN)
    if d == 0:
        return "0.00%"
    return f"{d:+}%"


def metric_values(doc):
    """Flat metric map of a results document (its ``aggregate`` block if present)."""
    src = doc.get("aggregate", doc) if isinstance(doc, dict) else None
    if not isinstance(src, dict):
        raise MissingMetric("results document has no metric block")
    return {k: v for k, v in src.items() if isinstance(v, (int, float)) and not isinstance(v, bool)}


def delta_percent(baseline, ours):
    if baseline == 0:
        raise ZeroBaseline("baseline value is 0; relative change undefined")
    return (ours - baseline) / baseline * 100.0


def delta_report(baseline, ours, metrics=None):
    """Rows of ``(ours - baseline) / baseline * 100`` per metric.

    Negative values are improvements for lower-is-better metrics.
    """
    b, o = metric_values(baseline), metric_values(ours)
    if metrics is None:
        metrics = [m for m in DEFAULT_METRICS if m in b] or sorted(b)
    rows = []
    for m in metrics:
        for name, side in (("baseline", b), ("ours", o)):
            if m not in side:
                raise MissingMetric(f"metric {m!r} missing from {name} results")
        try:
            rows.append(DeltaRow(m, float(b[m]), float(o[m]), delta_percent(float(b[m]), float(o[m]))))
        except ZeroBaseline as exc:
            raise ZeroBaseline(f"{m}: {exc}") from None
    return rows


def slope_bias(doc):
    """``|1 - mean a|`` of an alignment results document, or None."""
    a = doc.get("mean_a") if isinstance(doc, dict) else None
    return None if a is None else abs(1.0 - float(a))


def format_table(rows):
    width = max([len(r.metric) for r in rows] + [6])
    lines = [f"{'metric':<{width}}  {'baseline':>14}  {'ours':>14}  {'delta':>9}"]
    for r in rows:
        lines.append(f"{r.metric:<{width}}  {r.baseline:>14.6g}  {r.ours:>14.6g}  {r.rendered:>9}")
    return "\n".join(lines)
