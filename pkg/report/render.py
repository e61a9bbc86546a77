from __future__ import annotations
import logging
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
from jinja2 import Template

from analytics.metrics import k_in_block
from analytics.numerics import DenseMatrix, minmax_normalize
from data_sources.formats import to_gray8, write_pgm
from errors import DimensionMismatch, IndexOutOfRange

logger = logging.getLogger(__name__)

HTML_TMPL = """
<!doctype html>
<html lang="en">
<head>
  <meta charset="utf-8" />
  <title>LooseRoPE run - {{ title }}</title>
  <style>
    body { font-family: -apple-system, 'Segoe UI', Roboto, Arial, sans-serif; margin: 0; padding: 20px; background: #f5f5f5; color: #333; }
    .container { max-width: 1400px; margin: 0 auto; background: white; border-radius: 8px; padding: 24px; box-shadow: 0 2px 8px rgba(0,0,0,0.1); }
    h1 { margin: 0 0 8px 0; font-size: 26px; }
    h2 { font-size: 18px; margin-top: 28px; }
    .stats { display: flex; gap: 24px; flex-wrap: wrap; padding: 16px; background: #f9f9f9; border-radius: 6px; }
    .stat { min-width: 140px; }
    .stat-label { font-size: 12px; color: #666; text-transform: uppercase; }
    .stat-value { font-size: 22px; font-weight: 600; }
    table { border-collapse: collapse; width: 100%; font-size: 13px; }
    th, td { padding: 6px 10px; border-bottom: 1px solid #eee; text-align: right; }
    th { background: #fafafa; position: sticky; top: 0; }
    tr.inactive td { color: #999; }
    .verdict-success { color: #15803d; font-weight: 600; }
    .verdict-neglect, .verdict-suppression { color: #b45309; }
    .unresolved { color: #b91c1c; font-weight: 600; }
    pre { background: #f9f9f9; padding: 12px; font-size: 12px; overflow-x: auto; }
  </style>
</head>
<body>
<div class="container">
  <h1>LooseRoPE run</h1>
  <div class="stats">
    {% for label, value in stats %}
    <div class="stat"><div class="stat-label">{{ label }}</div><div class="stat-value">{{ value }}</div></div>
    {% endfor %}
  </div>

  {% if trace %}
  <h2>Steering {% if unresolved %}<span class="unresolved">(unresolved)</span>{% endif %}</h2>
  <table>
    <tr><th>attempt</th><th>&lambda;</th><th>R</th><th>verdict</th><th style="text-align:left">reasoning</th></tr>
    {% for a in trace %}
    <tr>
      <td>{{ a.attempt }}</td><td>{{ a.lambda }}</td>
      <td>{{ "%.4f"|format(a.ratio) if a.ratio is not none else "-" }}</td>
      <td class="verdict-{{ a.verdict }}">{{ a.verdict }}</td>
      <td style="text-align:left">{{ a.reasoning }}</td>
    </tr>
    {% endfor %}
  </table>
  {% endif %}

  <h2>Diagnostics</h2>
  <table>
    <tr><th>t</th><th>layer</th><th>active</th><th>R</th><th>entropy</th><th>r</th><th>k</th><th>K_in rotations</th></tr>
    {% for r in records %}
    <tr class="{{ '' if r.active else 'inactive' }}">
      <td>{{ r.t }}</td><td>{{ r.layer }}</td><td>{{ "yes" if r.active else "no" }}</td>
      <td>{{ "%.4f"|format(r.ratio) if r.ratio is not none else "-" }}</td>
      <td>{{ "%.4f"|format(r.entropy) }}</td>
      <td>[{{ "%.3f"|format(r.r_low) }}, {{ "%.3f"|format(r.r_high) }}]</td>
      <td>[{{ "%.3f"|format(r.k_low) }}, {{ "%.3f"|format(r.k_high) }}]</td>
      <td>{{ r.k_in_rotations }}</td>
    </tr>
    {% endfor %}
  </table>

  <h2>Configuration</h2>
  <pre>{{ config_json }}</pre>
</div>
</body>
</html>
"""


def render_run_report(
    records: List[Dict[str, Any]],
    out_path: Path,
    title: str,
    summary: Dict[str, Any],
    config_json: str = "",
    trace: List[Dict[str, Any]] | None = None,
    unresolved: bool = False,
) -> Path:
    """Render the HTML run report.

    Args:
        records: Per-(t, layer) diagnostic records
        out_path: Path to save HTML file
        title: Run label shown in the page title
        summary: Headline numbers (lambda, mean ratio, ...)
        config_json: Serialized PipelineConfig
        trace: Steering attempts, if the run was steered
        unresolved: Whether steering ran out of attempts
    """
    if not records:
        raise ValueError("No diagnostic records to render")

    def fmt(v):
        if v is None:
            return "-"
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    stats = [(k.replace("_", " "), fmt(v)) for k, v in summary.items()]
    html = Template(HTML_TMPL).render(
        title=title,
        stats=stats,
        records=records,
        trace=trace or [],
        unresolved=unresolved,
        config_json=config_json,
    )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(html, encoding="utf-8")
    logger.info(f"Saved HTML report: {out_path}")
    return out_path


def attention_map(weights: DenseMatrix, query_index: int, height: int, width: int) -> np.ndarray:
    """One query's attention over the input-image keys as a [0, 1] grid.

    The last height*width columns are taken as K_in, so both joint
    [T x 2T] weights and sliced [T x T_in] blocks work. A flat row maps to 0.5.
    """
    w = weights.values
    if not 0 <= query_index < w.shape[0]:
        raise IndexOutOfRange(f"query {query_index} outside {w.shape[0]} rows")
    t_in = height * width
    if w.shape[1] < t_in:
        raise DimensionMismatch(f"weights have {w.shape[1]} columns, grid needs {t_in}")
    row = k_in_block(weights, t_in, renormalize=False).values[query_index]
    return minmax_normalize(row.reshape(height, width))


def render_attention_map(weights: DenseMatrix, query_index: int, height: int, width: int, out_path: Path) -> Path:
    img = to_gray8(attention_map(weights, query_index, height, width))
    path = write_pgm(out_path, img)
    logger.info(f"Saved attention map for query {query_index}: {path}")
    return path
