import csv
import json
import logging
import sys
from typing import Any, Iterable, List, Optional, Sequence

import numpy as np
from marshmallow import Schema, fields

from bunchlab.errors import PrecisionError

logger = logging.getLogger(__name__)


# --- Custom fields for numpy payloads ---

class ComplexField(fields.Field):
    """Complex scalar as {"re": .., "im": ..}."""

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        z = complex(value)
        return {"re": z.real, "im": z.imag}

    def _deserialize(self, value, attr, data, **kwargs):
        return complex(value["re"], value.get("im", 0.0))


class ComplexMatrixField(fields.Field):
    """Dense matrix in the {rows, cols, re, im} file layout."""

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        a = np.atleast_2d(np.asarray(value, dtype=np.complex128))
        return {
            "rows": a.shape[0],
            "cols": a.shape[1],
            "re": a.real.ravel().tolist(),
            "im": a.imag.ravel().tolist(),
        }

    def _deserialize(self, value, attr, data, **kwargs):
        re = np.asarray(value["re"], dtype=np.float64)
        im = np.asarray(value.get("im") or np.zeros_like(re), dtype=np.float64)
        return (re + 1j * im).reshape(value["rows"], value["cols"])


class RealVectorField(fields.Field):

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        return [float(v) for v in np.asarray(value, dtype=np.float64).ravel()]

    def _deserialize(self, value, attr, data, **kwargs):
        return np.asarray(value, dtype=np.float64)


# --- Schemas ---

class PermanentValueSchema(Schema):
    """PermanentValue as mantissa, binary exponent and the plain double."""
    value = ComplexField()
    log2_scale = fields.Int()
    as_complex = fields.Method("dump_complex")

    def dump_complex(self, obj):
        try:
            z = obj.to_complex()
        except PrecisionError:
            return None
        return {"re": z.real, "im": z.imag}


class BunchingResultSchema(Schema):
    probability = fields.Float(required=True)
    engine_agreement = fields.Float()
    h_used = ComplexMatrixField()
    s_used = ComplexMatrixField()


class AnomalyReportSchema(Schema):
    n = fields.Int()
    perm_g = fields.Float()
    lambda_max_r = fields.Float()
    ratio = fields.Float()
    criterion_margin = fields.Float()
    anomalous = fields.Bool()
    laplace_deviation = fields.Float()
    tau_max = RealVectorField()


class BeamSplitterSchema(Schema):
    mode_a = fields.Int()
    mode_b = fields.Int()
    theta = fields.Float()
    phi = fields.Float()


class BsNetworkSchema(Schema):
    m = fields.Int()
    element_count = fields.Int()
    reconstruction_error = fields.Float()
    elements = fields.List(fields.Nested(BeamSplitterSchema))
    phases = RealVectorField()


class ViolationScanSummarySchema(Schema):
    points = fields.Method("count_points")
    perm_h = fields.Float()
    d_max = fields.Float()
    r_max = fields.Float()
    perm_at_max = fields.Float()
    quad_coeff = fields.Float()

    def count_points(self, obj):
        return int(len(obj.d))


class ReproductionCheckSchema(Schema):
    name = fields.Str()
    value = fields.Float()
    expected = fields.Float(allow_none=True)
    tolerance = fields.Float(allow_none=True)
    mode = fields.Str()
    passed = fields.Bool(allow_none=True)


class ReproductionReportSchema(Schema):
    all_passed = fields.Bool()
    gamma = fields.Float()
    engine_agreement = fields.Float()
    checks = fields.List(fields.Nested(ReproductionCheckSchema))
    anomaly = fields.Nested(AnomalyReportSchema)
    scan = fields.Nested(ViolationScanSummarySchema)
    reck_element_count = fields.Method("count_elements")
    notes = fields.List(fields.Str())

    def count_elements(self, obj):
        return obj.network.element_count


class SearchReportSchema(Schema):
    n = fields.Int()
    trials = fields.Int()
    sampler = fields.Str()
    seed = fields.Int()
    max_margin = fields.Float()
    max_relative_margin = fields.Float()
    positive_count = fields.Int()
    max_margin_index = fields.Int()
    best_index = fields.Int()
    histogram = fields.Method("dump_histogram")
    bin_edges = RealVectorField()
    best_matrix = ComplexMatrixField()

    def dump_histogram(self, obj):
        return [int(c) for c in obj.histogram]


class SuiteResultSchema(Schema):
    name = fields.Str()
    trials = fields.Int()
    failures = fields.Int()
    worst = fields.Float()
    passed = fields.Bool()
    detail = fields.Str()


class SelftestSummarySchema(Schema):
    seed = fields.Int()
    quick = fields.Bool()
    passed = fields.Bool()
    suites = fields.List(fields.Nested(SuiteResultSchema))


# --- Writers ---

def to_json(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=False)


def render_table(headers: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Plain left-aligned text table."""
    cells = [[str(h) for h in headers]] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _cell(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "PASS" if value else "FAIL"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.10g}"
    return str(value)


def scan_rows(scan, quadratic: Optional[np.ndarray] = None) -> List[List[str]]:
    """Rows of d, R, perm_HS, perm_H (and R_quadratic) rendered with %.17g."""
    rows = []
    for index, (d, r, p) in enumerate(zip(scan.d, scan.ratio, scan.perm_hs)):
        row = ['%.17g' % d, '%.17g' % r, '%.17g' % p, '%.17g' % scan.perm_h]
        if quadratic is not None:
            row.append('%.17g' % quadratic[index])
        rows.append(row)
    return rows


def write_scan_csv(scan, stream, quadratic: Optional[np.ndarray] = None) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    header = ["d", "R", "perm_HS", "perm_H"]
    if quadratic is not None:
        header.append("R_quadratic")
    writer.writerow(header)
    writer.writerows(scan_rows(scan, quadratic))


def emit(text: str, out: Optional[str] = None) -> None:
    """Writes a result document to a file, or to stdout when out is None."""
    if out:
        with open(out, "w", newline="") as f:
            f.write(text if text.endswith("\n") else text + "\n")
        logger.info(f"Wrote results to {out}")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
