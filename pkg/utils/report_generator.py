import datetime
from pathlib import Path

import jinja2
import pandas as pd
import plotly.graph_objects as go

CHECK_REPORT_TEMPLATE = """# Property check report

Generated on {{ generation_date }} | seed {{ seed }} | overall: **{{ "PASS" if passed else "FAIL" }}**

{% if model %}
Model: preset `{{ model.preset }}`, {{ model.T }} layer(s), r_cut {{ model.radial.r_cut }} A, precision {{ model.precision }}
{% endif %}
{% for report in reports %}
## {{ report.suite }} ({{ "pass" if report.passed else "FAIL" }})

| check | violation | tolerance | status | note |
|---|---|---|---|---|
{% for r in report.results -%}
| {{ r.name }} | {{ "%.3e"|format(r.violation) }} | {{ "%.1e"|format(r.tolerance) }} | {{ "skipped" if r.skipped else ("ok" if r.ok else "FAIL") }}{{ " (expected fail)" if r.expected_fail else "" }} | {{ r.note }} |
{% endfor %}
{% if report.metrics %}
{% for key, value in report.metrics.items() -%}
- {{ key }}: {{ value }}
{% endfor %}
{% endif %}
{% endfor %}
{% if runtime %}
## Runtime

- Python {{ runtime.python }}, torch {{ runtime.libraries.torch }}, numpy {{ runtime.libraries.numpy }}
- {{ runtime.hardware.torch_threads }} torch threads, {{ runtime.hardware.memory_available_gb }} GB memory available
{% endif %}
"""


def render_check_report(reports, seed=0, model_spec=None, runtime=None):
    """
    Render property suite reports as markdown.

    Args:
        reports: List of SuiteReport objects
        seed: Seed the suites were run with
        model_spec: Optional ModelSpec for the header
        runtime: Optional dictionary from get_runtime_info()

    Returns:
        Markdown string
    """
    template = jinja2.Template(CHECK_REPORT_TEMPLATE, trim_blocks=True, lstrip_blocks=True)
    context = {
        "reports": reports,
        "passed": all(report.passed for report in reports),
        "seed": seed,
        "model": model_spec,
        "runtime": runtime,
        "generation_date": datetime.datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
    }
    return template.render(**context)


def create_scan_figure(table, x="coordinate", title="Energy scan"):
    """
    Line plot of the energy and every decomposition column of a scan table.
    Returns a Plotly figure.
    """
    fig = go.Figure()
    skip = {x, "status"}
    for column in table.columns:
        if column in skip or not pd.api.types.is_numeric_dtype(table[column]):
            continue
        fig.add_trace(go.Scatter(
            x=table[x],
            y=table[column],
            mode="lines",
            name=column,
        ))
    fig.update_layout(
        title=title,
        xaxis_title=x,
        yaxis_title="energy (eV)",
        height=450,
        margin=dict(l=10, r=10, t=40, b=10),
    )
    return fig


def create_training_figure(log):
    """
    Loss and RMSE curves of a training log DataFrame.
    Returns a Plotly figure.
    """
    fig = go.Figure()
    for column in ("loss", "energy_rmse", "force_rmse"):
        if column in log and log[column].notna().any():
            fig.add_trace(go.Scatter(x=log["epoch"], y=log[column], mode="lines", name=column))
    fig.update_layout(
        title="Training",
        xaxis_title="epoch",
        yaxis_type="log",
        height=450,
        margin=dict(l=10, r=10, t=40, b=10),
    )
    return fig


def write_figure(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(path), include_plotlyjs="cdn")
    return path
