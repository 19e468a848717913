"""
Artifact writers: CSV and JSON written atomically, and an Excel summary.
"""
import csv
import json
import logging
import os
import tempfile
from typing import Any, Dict, List, Sequence

from openpyxl import Workbook
from openpyxl.styles import Alignment, Font, PatternFill
from openpyxl.utils import get_column_letter

logger = logging.getLogger(__name__)

# Column order per experiment; every CSV starts with this header row.
FIELDNAMES: Dict[str, List[str]] = {
    'dot-error': ['trial', 'core_kind', 'b', 'h', 'abs_error'],
    'energy': ['kind', 'b_dac', 'b_adc', 'n_moduli', 'dac_energy_j', 'adc_energy_j', 'total_j'],
    'perr-curve': ['p', 'k', 'R', 'p_c', 'p_d', 'p_u', 'p_err'],
    'rrns-mc': ['p', 'k', 'R', 'trials', 'empirical', 'ci_low', 'ci_high', 'analytic'],
    'noise-sweep': ['p', 'k', 'R', 'p_err', 'accuracy'],
    'train': ['step', 'loss', 'accuracy'],
    'infer': ['core_kind', 'b', 'h', 'accuracy'],
    'hybrid-check': ['config', 'operation', 'cases', 'failures'],
    'verify': ['suite', 'cases', 'failures', 'verdict'],
}


def _atomic_write(path: str, write) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'w', newline='', encoding='utf-8') as f:
            write(f)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def export_rows_to_csv(rows: List[Dict], fieldnames: Sequence[str], output_file: str) -> str:
    """
    Write rows to CSV through a temp file in the target directory.

    Keys outside fieldnames are dropped.
    """
    def write(f):
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), extrasaction='ignore', lineterminator='\n')
        writer.writeheader()
        writer.writerows(rows)

    _atomic_write(output_file, write)
    logger.info(f"Exported {len(rows)} rows to {output_file}")
    return output_file


def export_json(data: Dict[str, Any], output_file: str) -> str:
    """Write JSON with sorted keys so identical runs give identical bytes."""
    def write(f):
        json.dump(data, f, sort_keys=True, indent=2, default=str)
        f.write('\n')

    _atomic_write(output_file, write)
    logger.info(f"Wrote {output_file}")
    return output_file


def export_rows_to_excel(rows: List[Dict], fieldnames: Sequence[str], output_file: str, title: str) -> str:
    """
    Export rows to an .xlsx sheet with a styled, frozen header row.

    Args:
        rows: Row dictionaries
        fieldnames: Column order
        output_file: Output workbook path
        title: Sheet title (truncated to Excel's 31 characters)
    """
    wb = Workbook()
    ws = wb.active
    ws.title = title[:31]

    header_fill = PatternFill(start_color="366092", end_color="366092", fill_type="solid")
    header_font = Font(bold=True, color="FFFFFF", size=11)
    header_alignment = Alignment(horizontal="center", vertical="center")

    for col_num, fieldname in enumerate(fieldnames, 1):
        cell = ws.cell(row=1, column=col_num, value=fieldname)
        cell.fill = header_fill
        cell.font = header_font
        cell.alignment = header_alignment

    widths = [len(name) for name in fieldnames]
    for row_num, row_data in enumerate(rows, 2):
        for col_num, fieldname in enumerate(fieldnames, 1):
            value = row_data.get(fieldname, '')
            ws.cell(row=row_num, column=col_num, value=value)
            widths[col_num - 1] = max(widths[col_num - 1], len(str(value)))

    for col_num, width in enumerate(widths, 1):
        ws.column_dimensions[get_column_letter(col_num)].width = min(width + 2, 50)

    ws.freeze_panes = 'A2'
    os.makedirs(os.path.dirname(os.path.abspath(output_file)), exist_ok=True)
    wb.save(output_file)
    logger.info(f"Exported {len(rows)} rows to {output_file}")
    return output_file


def format_summary_table(rows: List[Dict], fieldnames: Sequence[str], limit: int = 20) -> str:
    """Plain-text table of the first `limit` rows for the console."""
    shown = rows[:limit]

    def fmt(value: Any) -> str:
        if isinstance(value, float):
            return f"{value:.6g}"
        return str(value)

    cells = [[fmt(row.get(name, '')) for name in fieldnames] for row in shown]
    widths = [max([len(name)] + [len(c[i]) for c in cells]) for i, name in enumerate(fieldnames)]
    lines = ['  '.join(name.ljust(w) for name, w in zip(fieldnames, widths))]
    lines.append('  '.join('-' * w for w in widths))
    for c in cells:
        lines.append('  '.join(v.ljust(w) for v, w in zip(c, widths)))
    if len(rows) > limit:
        lines.append(f"... {len(rows) - limit} more rows")
    return '\n'.join(lines)
