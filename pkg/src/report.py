"""HTML report for welfare outputs."""

from __future__ import annotations

import html
import logging
import os
from typing import Any, Dict, Mapping, Optional

import pandas as pd
import plotly.graph_objs as go

from .config import ThemeConfig
from .data import COST_LABEL
from .provenance import header_lines

logger = logging.getLogger(__name__)


class WelfareReport:
    """Renders MU curves, binned VTT, attribute distributions and the summary table."""

    def __init__(self, title: str = 'Welfare measures'):
        self.title = title
        self.theme = ThemeConfig.DARK_THEME

    def _color(self, index: int) -> str:
        return ThemeConfig.MODE_COLORS[index % len(ThemeConfig.MODE_COLORS)]

    def _axis(self, title: str) -> Dict[str, Any]:
        return dict(
            title=dict(text=title, font=dict(color=self.theme['text_color'])),
            gridcolor=self.theme['grid_color'],
            tickcolor=self.theme['text_color'],
            tickfont=dict(color=self.theme['text_color']),
        )

    def _layout(self, fig: go.Figure, title: str, x_title: str, y_title: str, **extra) -> None:
        fig.update_layout(
            title=dict(text=title, font=dict(color=self.theme['text_color'], size=18)),
            xaxis=self._axis(x_title),
            yaxis=self._axis(y_title),
            plot_bgcolor=self.theme['plot_bg_color'],
            paper_bgcolor=self.theme['bg_color'],
            font=dict(color=self.theme['text_color']),
            showlegend=True,
            legend=dict(font=dict(color=self.theme['text_color'])),
            **extra,
        )

    def _create_mu_chart(self, plot_frame: pd.DataFrame, attribute: str) -> str:
        """MU against the attribute value, one trace per mode."""
        data = plot_frame[plot_frame['attribute'] == attribute]
        if data.empty:
            return ''
        fig = go.Figure()
        for i, (mode, group) in enumerate(data.groupby('mode', sort=False)):
            group = group.sort_values('attribute_value')
            fig.add_trace(go.Scatter(
                x=group['attribute_value'],
                y=group['mu'],
                mode='markers',
                name=str(mode),
                marker=dict(color=self._color(i), size=5, opacity=0.6),
            ))
        unit = 'CHF' if attribute == COST_LABEL else 'min'
        self._layout(fig, f"Marginal utility of {attribute}", f"{attribute} ({unit})", 'MU (x100)')
        return fig.to_html(include_plotlyjs='cdn', div_id=f"mu-{attribute.lower()}-chart")

    def _create_vtt_bin_chart(self, bins: pd.DataFrame) -> str:
        if bins.empty:
            return ''
        fig = go.Figure()
        for i, (mode, group) in enumerate(bins.groupby('alternative', sort=False)):
            fig.add_trace(go.Bar(
                x=group['bin'],
                y=group['mean'],
                name=str(mode),
                marker_color=self._color(i),
                hovertemplate="%{x}<br>VTT: %{y:.2f}<extra></extra>",
            ))
        self._layout(fig, 'Average VTT by travel time', 'Travel time (min)', 'VTT (CHF/min)',
                     barmode='group')
        return fig.to_html(include_plotlyjs='cdn', div_id='vtt-bins-chart')

    def _create_distribution_chart(self, plot_frame: pd.DataFrame, attribute: str) -> str:
        data = plot_frame[plot_frame['attribute'] == attribute]
        if data.empty:
            return ''
        fig = go.Figure()
        for i, (mode, group) in enumerate(data.groupby('mode', sort=False)):
            fig.add_trace(go.Histogram(
                x=group['attribute_value'],
                name=str(mode),
                marker_color=self._color(i),
                opacity=0.6,
            ))
        self._layout(fig, f"Distribution of {attribute}", attribute, 'Observations', barmode='overlay')
        return fig.to_html(include_plotlyjs='cdn', div_id=f"dist-{attribute.lower()}-chart")

    def _create_table(self, frame: Optional[pd.DataFrame], css_class: str) -> str:
        if frame is None or frame.empty:
            return '<p>No data available.</p>'
        return frame.to_html(classes=css_class, index=False, float_format=lambda v: f"{v:.3f}",
                             na_rep='-')

    def render(self, plot_frame: Optional[pd.DataFrame], bins: Optional[pd.DataFrame],
               per_mode: Optional[pd.DataFrame], design_stats: Optional[pd.DataFrame] = None,
               stamp: Optional[Mapping[str, Any]] = None) -> str:
        plot_frame = plot_frame if plot_frame is not None else pd.DataFrame(
            columns=['attribute_value', 'mode', 'attribute', 'mu'])
        bins = bins if bins is not None else pd.DataFrame(columns=['alternative', 'bin', 'mean'])

        sections = []
        attributes = list(pd.unique(plot_frame['attribute'])) if not plot_frame.empty else []
        mu_charts = ''.join(self._create_mu_chart(plot_frame, a) for a in attributes)
        sections.append(('Marginal utilities', mu_charts or '<p>No data available.</p>'))
        sections.append(('Value of travel time by trip length',
                         self._create_vtt_bin_chart(bins) or '<p>No data available.</p>'))
        dist_charts = ''.join(self._create_distribution_chart(plot_frame, a) for a in attributes)
        sections.append(('Attribute distributions', dist_charts or '<p>No data available.</p>'))
        sections.append(('Welfare summary', self._create_table(per_mode, 'summary-table')))
        if design_stats is not None:
            sections.append(('Attribute statistics', self._create_table(design_stats, 'summary-table')))

        body = ''.join(
            f'<div class="section"><h2>{html.escape(name)}</h2>{content}</div>'
            for name, content in sections
        )
        provenance_block = ''
        if stamp:
            provenance_block = ''.join(f"<!-- {html.escape(line)} -->\n" for line in header_lines(stamp))
        return f"""<!DOCTYPE html>
{provenance_block}<html lang="en">
<head>
    <meta charset="UTF-8">
    <meta name="viewport" content="width=device-width, initial-scale=1.0">
    <title>{html.escape(self.title)}</title>
    <style>
        body {{
            background-color: {self.theme['bg_color']};
            color: {self.theme['text_color']};
            font-family: 'Segoe UI', Tahoma, Geneva, Verdana, sans-serif;
            margin: 0;
            padding: 20px;
            line-height: 1.6;
        }}
        .container {{ max-width: 1200px; margin: 0 auto; }}
        .section {{
            margin-bottom: 30px;
            padding: 20px;
            background-color: {self.theme['plot_bg_color']};
            border-radius: 10px;
        }}
        .summary-table {{ border-collapse: collapse; width: 100%; }}
        .summary-table th, .summary-table td {{
            border: 1px solid {self.theme['table_border_color']};
            padding: 6px 10px;
            text-align: right;
        }}
    </style>
</head>
<body>
<div class="container">
<h1>{html.escape(self.title)}</h1>
{body}
</div>
</body>
</html>
"""


def build_report(mu_plot_frame: Optional[pd.DataFrame], binned_vtt: Optional[pd.DataFrame],
                 summary: Optional[pd.DataFrame], design_stats: Optional[pd.DataFrame] = None,
                 title: str = 'Welfare measures', stamp: Optional[Mapping[str, Any]] = None) -> str:
    """Self-contained HTML page (plotly from CDN); empty inputs render as 'No data available.'"""
    return WelfareReport(title).render(mu_plot_frame, binned_vtt, summary, design_stats, stamp)


def write_report(html_content: str, path: str) -> str:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(html_content)
    logger.info("Wrote report to %s", path)
    return path
