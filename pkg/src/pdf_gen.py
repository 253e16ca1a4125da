"""
pdf_gen.py — Styled PDF summary of a flat-wall benchmark using reportlab.
"""

from __future__ import annotations

import logging
from datetime import datetime
from pathlib import Path

import numpy as np
from reportlab.graphics.shapes import Drawing
from reportlab.lib.colors import HexColor
from reportlab.lib.enums import TA_LEFT
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import ParagraphStyle
from reportlab.lib.units import cm
from reportlab.platypus import HRFlowable, PageBreak, Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from src.errors import ReportWriteError

log = logging.getLogger(__name__)

ACCENT = HexColor("#7c6af7")
MUTED = HexColor("#6b7280")
RULE = HexColor("#1e1e28")

title_style = ParagraphStyle("Title2", fontName="Helvetica-Bold", fontSize=22, leading=28,
                             textColor=ACCENT, spaceAfter=6, alignment=TA_LEFT)
meta_style = ParagraphStyle("Meta", fontName="Helvetica", fontSize=8, leading=12,
                            textColor=MUTED, spaceAfter=16)
h2_style = ParagraphStyle("H2", fontName="Helvetica-Bold", fontSize=13, leading=18,
                          textColor=MUTED, spaceBefore=20, spaceAfter=6)
body_style = ParagraphStyle("Body2", fontName="Helvetica", fontSize=10, leading=16,
                            textColor=MUTED, spaceAfter=8, alignment=TA_LEFT)


def write_benchmark_pdf(report, path, panels: dict[str, Drawing]) -> Path:
    """Summary table (mean over seeds per distance/tilt cell) followed by the three panels."""
    path = Path(path)
    doc = SimpleDocTemplate(str(path), pagesize=A4,
                            leftMargin=2.5 * cm, rightMargin=2.5 * cm,
                            topMargin=2.5 * cm, bottomMargin=2.5 * cm)
    story = []

    story.append(Paragraph("Flat-wall depth error", title_style))
    ts = datetime.now().strftime("%B %d, %Y · %H:%M")
    cells = {(r.distance_m, r.tilt_deg) for r in report.records}
    seeds = len({r.seed for r in report.records})
    story.append(Paragraph(f"Generated by slsim · {ts} · {len(cells)} cells · {seeds} seeds", meta_style))
    story.append(HRFlowable(width="100%", thickness=0.5, color=ACCENT, spaceAfter=16))

    story.append(Paragraph("Per-cell summary", h2_style))
    story.append(_summary_table(report))

    if report.error_models:
        story.append(Paragraph("Error models", h2_style))
        for name, coeffs in report.error_models.items():
            terms = " + ".join(f"{c:g}·z^{i}" for i, c in enumerate(coeffs))
            story.append(Paragraph(f"<b>{name}</b>: sigma(z) = {terms} mm", body_style))

    story.append(PageBreak())
    for drawing in panels.values():
        story.append(drawing)
        story.append(Spacer(1, 12))

    story.append(HRFlowable(width="100%", thickness=0.5, color=RULE))
    try:
        doc.build(story)
    except OSError as e:
        raise ReportWriteError(path, e.strerror or str(e)) from e
    log.info(f"PDF summary → {path}")
    return path


def _summary_table(report) -> Table:
    rows = [["distance (m)", "tilt (deg)", "valid", "std (mm)", "mean (mm)"]]
    grouped: dict[tuple[float, float], list] = {}
    for r in report.records:
        grouped.setdefault((r.distance_m, r.tilt_deg), []).append(r)
    for (d, t), recs in sorted(grouped.items()):
        stds = [r.std_error_mm for r in recs if np.isfinite(r.std_error_mm)]
        means = [r.mean_error_mm for r in recs if np.isfinite(r.mean_error_mm)]
        rows.append([
            f"{d:g}", f"{t:g}",
            f"{np.mean([r.valid_fraction for r in recs]):.3f}",
            f"{np.mean(stds):.2f}" if stds else "–",
            f"{np.mean(means):+.2f}" if means else "–",
        ])
    table = Table(rows, repeatRows=1)
    table.setStyle(TableStyle([
        ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
        ("FONTNAME", (0, 1), (-1, -1), "Helvetica"),
        ("FONTSIZE", (0, 0), (-1, -1), 8),
        ("TEXTCOLOR", (0, 0), (-1, 0), ACCENT),
        ("LINEBELOW", (0, 0), (-1, 0), 0.5, ACCENT),
        ("ROWBACKGROUNDS", (0, 1), (-1, -1), [HexColor("#ffffff"), HexColor("#f3f3f8")]),
        ("ALIGN", (0, 0), (-1, -1), "RIGHT"),
    ]))
    return table
