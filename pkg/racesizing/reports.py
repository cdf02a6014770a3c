from __future__ import annotations

import math
from pathlib import Path

from reportlab.lib import colors
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import getSampleStyleSheet
from reportlab.pdfgen.canvas import Canvas
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

SIZING_TABLE_HEADER = ["Model", "N_p", "Battery mass [kg]", "Race time [s]", "Status", "Terminal SoC"]


class NumberedCanvas(Canvas):
    """Canvas that draws "Page X of Y" once the page count is known."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._saved_page_states = []

    def showPage(self):
        self._saved_page_states.append(dict(self.__dict__))
        self._startPage()

    def save(self):
        num_pages = len(self._saved_page_states)
        for state in self._saved_page_states:
            self.__dict__.update(state)
            self._draw_page_number(num_pages)
            super().showPage()
        super().save()

    def _draw_page_number(self, page_count):
        self.setFont("Helvetica", 8)
        self.drawRightString(self._pagesize[0] - 36, 12, f"Page {self._pageNumber} of {page_count}")


def _fmt(value, digits: int) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{value:.{digits}f}"


def build_sizing_table_data(curves: dict) -> tuple[list[list[str]], list[int]]:
    """Header plus one row per (model, N_p); returns the rows and the indices of each curve's argmin row."""
    data = [list(SIZING_TABLE_HEADER)]
    best_rows = []
    for label, curve in curves.items():
        argmin = curve.argmin_Np
        for e in curve.entries:
            data.append([
                label,
                str(e.N_p),
                _fmt(e.M_b, 1),
                _fmt(e.race_time, 3) if e.is_optimal else "-",
                e.status.value,
                _fmt(e.terminal_soc, 4),
            ])
            if e.N_p == argmin:
                best_rows.append(len(data) - 1)
    return data, best_rows


def write_sizing_pdf(path: str | Path, curves: dict, title: str, subtitle: str = "") -> Path:
    path = Path(path)
    doc = SimpleDocTemplate(
        str(path), pagesize=A4, leftMargin=36, rightMargin=36, topMargin=36, bottomMargin=36, title=title
    )
    styles = getSampleStyleSheet()
    title_style = styles["Title"]
    title_style.fontSize = 14
    normal = styles["Normal"]
    normal.fontSize = 8
    normal.leading = 10

    story = [Paragraph(f"<b>{title}</b>", title_style)]
    if subtitle:
        story.append(Paragraph(subtitle, normal))
    story.append(Spacer(1, 10))

    data, best_rows = build_sizing_table_data(curves)
    table = Table(data, repeatRows=1, colWidths=[90, 40, 90, 80, 100, 70])
    style = [
        ("BACKGROUND", (0, 0), (-1, 0), colors.black),
        ("TEXTCOLOR", (0, 0), (-1, 0), colors.white),
        ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
        ("FONTSIZE", (0, 0), (-1, -1), 8),
        ("GRID", (0, 0), (-1, -1), 0.25, colors.grey),
        ("ALIGN", (1, 1), (-1, -1), "RIGHT"),
        ("ROWBACKGROUNDS", (0, 1), (-1, -1), [colors.whitesmoke, colors.lightgrey]),
    ]
    for row in best_rows:
        style += [
            ("BACKGROUND", (0, row), (-1, row), colors.palegreen),
            ("FONTNAME", (0, row), (-1, row), "Helvetica-Bold"),
        ]
    table.setStyle(TableStyle(style))
    story.append(table)
    doc.build(story, canvasmaker=NumberedCanvas)
    return path
