#!/usr/bin/env python3
"""
Convergence Report Generator
Writes the observed-rate table of a convergence ladder as CSV and renders a
self-contained HTML report with per-rung errors, rates and the verdict.
"""

import csv
import logging
import math
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence

from jinja2 import Environment, select_autoescape

from verification import ERROR_QUANTITIES, RateTable

logger = logging.getLogger(__name__)

RATE_QUANTITIES = ('dG_u', 'dG_w', 'dG_T', 'L2_u', 'L2_w', 'L2_T', 'dG_p')

REPORT_TEMPLATE = """<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <title>{{ title }}</title>
    <style>
        * { margin: 0; padding: 0; box-sizing: border-box; }
        body {
            font-family: 'Segoe UI', Tahoma, Geneva, Verdana, sans-serif;
            line-height: 1.6;
            color: #2c3e50;
            background: #f4f6f9;
        }
        .report-container { max-width: 1200px; margin: 0 auto; padding: 20px; }
        .report-header {
            background: linear-gradient(135deg, #2c3e50 0%, #34495e 100%);
            color: white;
            padding: 32px;
            border-radius: 16px 16px 0 0;
        }
        .report-title { font-size: 2.2em; font-weight: 300; }
        .report-subtitle { opacity: 0.85; }
        .section { background: white; padding: 24px 32px; border-bottom: 1px solid #e6e9ee; }
        .section h2 { font-weight: 400; margin-bottom: 12px; }
        table { border-collapse: collapse; width: 100%; font-size: 0.92em; }
        th, td { padding: 6px 10px; text-align: right; border-bottom: 1px solid #eef0f3; }
        th { background: #f7f9fb; font-weight: 600; }
        td.label, th.label { text-align: left; }
        .verdict { display: inline-block; padding: 6px 18px; border-radius: 20px;
                   font-weight: 600; color: white; }
        .verdict.pass { background: #27ae60; }
        .verdict.fail { background: #c0392b; }
        .failures li { color: #c0392b; margin-left: 20px; }
        .meta td { text-align: left; }
        .footer { padding: 16px 32px; font-size: 0.85em; color: #7f8c8d; }
    </style>
</head>
<body>
<div class="report-container">
    <div class="report-header">
        <div class="report-title">{{ title }}</div>
        <div class="report-subtitle">{{ subtitle }}</div>
    </div>

    <div class="section">
        <h2>Verdict</h2>
        <span class="verdict {{ 'pass' if passed else 'fail' }}">{{ 'PASS' if passed else 'FAIL' }}</span>
        {% if failures %}
        <ul class="failures">
            {% for failure in failures %}<li>{{ failure }}</li>{% endfor %}
        </ul>
        {% endif %}
    </div>

    <div class="section">
        <h2>Errors at the final time</h2>
        <table>
            <tr>
                <th class="label">rung</th><th>{{ step_name }}</th><th>dofs</th>
                {% for q in quantities %}<th>{{ q }}</th>{% endfor %}
            </tr>
            {% for row in error_rows %}
            <tr>
                <td class="label">{{ row.label }}</td><td>{{ row.step }}</td><td>{{ row.dofs }}</td>
                {% for value in row.errors %}<td>{{ value }}</td>{% endfor %}
            </tr>
            {% endfor %}
        </table>
    </div>

    <div class="section">
        <h2>Observed rates</h2>
        <table>
            <tr>
                <th class="label">pair</th>
                {% for q in rate_quantities %}<th>{{ q }}</th>{% endfor %}
            </tr>
            {% for row in rate_rows %}
            <tr>
                <td class="label">{{ row.pair }}</td>
                {% for value in row.rates %}<td>{{ value }}</td>{% endfor %}
            </tr>
            {% endfor %}
            {% if slope_row %}
            <tr>
                <td class="label">log-linear slope</td>
                {% for value in slope_row %}<td>{{ value }}</td>{% endfor %}
            </tr>
            {% endif %}
        </table>
    </div>

    <div class="section">
        <h2>Run</h2>
        <table class="meta">
            {% for key, value in meta %}<tr><th class="label">{{ key }}</th><td>{{ value }}</td></tr>{% endfor %}
        </table>
    </div>

    <div class="footer">Generated {{ generated }}</div>
</div>
</body>
</html>
"""

_environment = Environment(autoescape=select_autoescape(default_for_string=True))


def _fmt(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ''
    return f"{value:.4e}"


def _step_value(table: RateTable, report) -> str:
    return f"{report.h:.4g}" if table.ladder == 'h' else str(report.degree)


def rate_columns(quantities: Sequence[str] = RATE_QUANTITIES) -> List[str]:
    return [f"rate_{q}" for q in quantities]


def write_rates_csv(path: str, table: RateTable,
                    quantities: Sequence[str] = RATE_QUANTITIES) -> str:
    """One row per rung; rate columns hold the rate from the previous rung to this one"""
    step_name = 'h' if table.ladder == 'h' else 'degree'
    header = [step_name, 'dofs'] + list(ERROR_QUANTITIES) + rate_columns(quantities)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i, report in enumerate(table.reports):
            row: List[Any] = [_step_value(table, report), report.n_dofs]
            row += [_fmt(report.error(q)) for q in ERROR_QUANTITIES]
            if i == 0:
                row += [''] * len(quantities)
            else:
                row += [table.format_rate(i - 1, q) for q in quantities]
            writer.writerow(row)
    logger.info("wrote rate table %s", path)
    return path


def render_convergence_report(config, table: RateTable, failures: Sequence[str],
                              quantities: Sequence[str] = RATE_QUANTITIES) -> str:
    conv = config.convergence
    error_rows = [{'label': r.label or str(i), 'step': _step_value(table, r), 'dofs': r.n_dofs,
                   'errors': [_fmt(r.error(q)) for q in ERROR_QUANTITIES]}
                  for i, r in enumerate(table.reports)]
    rate_rows = []
    for i in range(len(table.rates)):
        a, b = table.reports[i], table.reports[i + 1]
        rate_rows.append({'pair': f"{_step_value(table, a)} -> {_step_value(table, b)}",
                          'rates': [table.format_rate(i, q) for q in quantities]})
    slope_row = None
    if table.slopes:
        slope_row = ['' if table.slopes.get(q) is None else f"{table.slopes[q]:.3f}"
                     for q in quantities]
    region = next(iter(config.regions.values()))
    meta = [('configuration', config.source_path or config.name),
            ('config hash', config.config_hash()[:16]),
            ('case', conv.case), ('ladder', conv.ladder),
            ('degree' if conv.ladder == 'h' else 'mesh',
             config.degree if conv.ladder == 'h' else config.mesh.describe()),
            ('time step', config.time.dt), ('final time', config.time.t_final),
            ('Newmark beta, gamma', f"{config.time.beta}, {config.time.gamma}"),
            ('relaxation time tau', region.tau),
            ('rate margin', conv.rate_margin)]
    return _environment.from_string(REPORT_TEMPLATE).render(
        title=f"Convergence: {config.name}",
        subtitle=f"{conv.case} manufactured solution, "
                 f"{'mesh refinement' if conv.ladder == 'h' else 'degree refinement'}",
        passed=not failures, failures=list(failures),
        step_name='h' if table.ladder == 'h' else 'degree',
        quantities=ERROR_QUANTITIES, error_rows=error_rows,
        rate_quantities=quantities, rate_rows=rate_rows, slope_row=slope_row,
        meta=meta, generated=datetime.now().strftime('%Y-%m-%d %H:%M:%S'))


def write_convergence_report(path: str, config, table: RateTable, failures: Sequence[str],
                             quantities: Sequence[str] = RATE_QUANTITIES) -> str:
    html = render_convergence_report(config, table, failures, quantities)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(html)
    logger.info("wrote convergence report %s", path)
    return path


def summary_lines(table: RateTable, quantities: Sequence[str] = ('dG_u', 'dG_w', 'dG_T')
                  ) -> List[str]:
    """Plain-text rate lines for the console"""
    lines = []
    for i in range(len(table.rates)):
        a, b = table.reports[i], table.reports[i + 1]
        parts = [f"{q}={table.format_rate(i, q) or 'n/a'}" for q in quantities]
        lines.append(f"{_step_value(table, a)} -> {_step_value(table, b)}: " + "  ".join(parts))
    return lines


def error_summary(table: RateTable) -> Dict[str, float]:
    """Errors of the finest rung, keyed by quantity"""
    last = table.reports[-1]
    return {q: last.error(q) for q in ERROR_QUANTITIES}
