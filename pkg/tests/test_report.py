from decimal import Decimal

import pytest

from mirage_eval.errors import MissingMetric, ZeroBaseline
from mirage_eval.report import delta_percent, delta_report, format_table, render_percent, slope_bias

# published benchmark rows: baseline and ours per metric, and the printed relative change
PUBLISHED = {
    "dcs": (994.58, 64.205, "-93.54"),
    "ccs": (1.466e-3, 2.036e-4, "-86.11"),
    "d_cluster": (488.8, 31.19, "-93.62"),
    "d_avg": (505.8, 33.01, "-93.47"),
    "D_cluster": (6.840e-4, 9.812e-5, "-85.65"),
    "D_avg": (7.820e-4, 1.055e-4, "-86.52"),
}


def _docs():
    base = {"aggregate": {k: v[0] for k, v in PUBLISHED.items()}}
    ours = {"aggregate": {k: v[1] for k, v in PUBLISHED.items()}}
    return base, ours


@pytest.mark.parametrize("metric", ["dcs", "ccs", "d_cluster", "d_avg", "D_cluster"])
def test_published_deltas_render_exactly(metric):
    base, ours = _docs()
    (row,) = delta_report(base, ours, [metric])
    assert row.rendered == PUBLISHED[metric][2] + "%"


def test_published_deltas_within_a_hundredth():
    base, ours = _docs()
    for row in delta_report(base, ours):
        printed = Decimal(PUBLISHED[row.metric][2])
        assert abs(Decimal(row.rendered[:-1]) - printed) <= Decimal("0.01"), row.metric


def test_equal_values_render_zero():
    assert render_percent(delta_percent(3.0, 3.0)) == "0.00%"
    assert render_percent(-0.001) == "0.00%"
    # the shortest repr is rounded half-even, so 12.345 goes to the even digit
    assert render_percent(12.345) == "+12.34%"
    assert render_percent(12.355) == "+12.36%"


def test_errors():
    with pytest.raises(ZeroBaseline):
        delta_report({"dcs": 0.0}, {"dcs": 1.0})
    with pytest.raises(MissingMetric):
        delta_report({"dcs": 1.0}, {"ccs": 1.0}, ["dcs"])
    with pytest.raises(MissingMetric):
        delta_report([], {})


def test_table_and_slope_bias():
    base, ours = _docs()
    text = format_table(delta_report(base, ours))
    assert text.splitlines()[0].startswith("metric") and "-93.54%" in text
    assert slope_bias({"mean_a": 0.98}) == pytest.approx(0.02)
    assert slope_bias({}) is None
