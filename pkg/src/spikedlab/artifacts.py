"""Artifact writers and the schema validator for everything the CLI emits.

CSV artifacts start with one ``# {json}`` line carrying the artifact type, tool
version and full config; JSON-lines artifacts carry the same object as their
first record.  :func:`validate_file` checks either kind against the schemas
below.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import jsonschema

from spikedlab import __version__

NUM = {"type": "number"}
NUM_OR_NULL = {"type": ["number", "null"]}
STR = {"type": "string"}
INT = {"type": "integer"}

META_SCHEMA = {
    "type": "object",
    "required": ["artifact", "version", "config"],
    "properties": {
        "artifact": {"enum": ["spectrum", "detect", "phase", "moment", "rho-star", "thresholds"]},
        "version": STR,
        "config": {"type": "object"},
        "summary": {"type": "object"},
    },
}

CSV_COLUMNS = {
    "spectrum": ["stage", "kind", "lo", "hi", "value"],
    "phase": ["beta", "gamma_pca", "gamma_lower", "gamma_mle", "verdict"],
    "moment": ["lambda_or_beta", "gamma", "n", "trials", "estimate", "std_error", "diverged_count",
               "top1pct_mass", "reference", "reference_kind"],
}

ROW_SCHEMAS = {
    "spectrum": {
        "type": "object",
        "required": CSV_COLUMNS["spectrum"],
        "properties": {"stage": {"enum": ["before", "after"]}, "kind": {"enum": ["bin", "top"]},
                       "lo": NUM, "hi": NUM, "value": NUM},
    },
    "phase": {
        "type": "object",
        "required": CSV_COLUMNS["phase"],
        "properties": {"beta": NUM, "gamma_pca": NUM, "gamma_lower": NUM, "gamma_mle": NUM_OR_NULL,
                       "verdict": {"enum": ["contiguous", "pca_detects", "mle_detects", "open", ""]}},
    },
    "moment": {
        "type": "object",
        "required": CSV_COLUMNS["moment"],
        "properties": {"lambda_or_beta": NUM, "gamma": NUM_OR_NULL, "n": INT, "trials": INT,
                       "estimate": NUM, "std_error": NUM, "diverged_count": INT, "top1pct_mass": NUM,
                       "reference": NUM_OR_NULL, "reference_kind": STR},
    },
}

DETECT_TRIAL_SCHEMA = {
    "type": "object",
    "required": ["record", "detector", "params", "seed", "hypothesis", "statistic", "threshold",
                 "decision", "correlation", "wall_ms"],
    "properties": {
        "record": {"const": "trial"},
        "detector": STR,
        "params": {"type": "object"},
        "seed": {"type": "array", "items": INT, "minItems": 3, "maxItems": 3},
        "hypothesis": {"enum": ["spiked", "unspiked"]},
        "statistic": NUM_OR_NULL,
        "threshold": NUM_OR_NULL,
        "decision": {"enum": ["spiked", "unspiked"]},
        "correlation": NUM_OR_NULL,
        "wall_ms": NUM_OR_NULL,
    },
}

_RATE_CI = {"type": "object", "required": ["errors", "trials", "rate", "ci_low", "ci_high"]}
DETECT_SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["record", "type1", "type2", "total_error"],
    "properties": {"record": {"const": "summary"}, "type1": _RATE_CI, "type2": _RATE_CI, "total_error": NUM},
}

JSON_SCHEMAS = {
    "rho-star": {"type": "object", "required": ["rho_star", "tolerance"]},
    "thresholds": {"type": "object", "required": ["results"]},
}


def clean(value):
    """Make a value JSON-safe: non-finite floats become ``None``."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {k: clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean(v) for v in value]
    if hasattr(value, "item"):  # numpy scalar
        return clean(value.item())
    return value


def dumps(obj) -> str:
    return json.dumps(clean(obj), sort_keys=True, allow_nan=False)


def meta(artifact: str, config: dict, summary: dict | None = None) -> dict:
    out = {"artifact": artifact, "version": __version__, "config": config}
    if summary is not None:
        out["summary"] = summary
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def write_csv(artifact: str, config: dict, rows: list[dict], summary: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write("# " + dumps(meta(artifact, config, summary)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    cols = CSV_COLUMNS[artifact]
    w.writerow(cols)
    for row in rows:
        w.writerow([_fmt(clean(row.get(c))) for c in cols])
    return buf.getvalue()


def write_json(artifact: str, config: dict, payload: dict) -> str:
    return dumps(dict(meta(artifact, config), **payload)) + "\n"


def write_jsonl(artifact: str, config: dict, records: list[dict]) -> str:
    lines = [dumps(dict(meta(artifact, config), record="config"))]
    lines += [dumps(r) for r in records]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# validation


class SchemaError(ValueError):
    pass


def _coerce(text: str, spec: dict):
    kinds = spec.get("type")
    kinds = [kinds] if isinstance(kinds, str) else (kinds or [])
    if text == "" and "null" in kinds:
        return None
    if "integer" in kinds:
        try:
            return int(text)
        except ValueError:
            pass
    if "number" in kinds:
        try:
            return float(text)
        except ValueError:
            pass
    return text


def validate_text(text: str) -> str:
    """Validate one artifact; returns its type or raises :class:`SchemaError`."""
    try:
        if text.startswith("# "):
            head, _, body = text.partition("\n")
            header = json.loads(head[2:])
            jsonschema.validate(header, META_SCHEMA)
            kind = header["artifact"]
            reader = csv.reader(io.StringIO(body))
            cols = next(reader)
            if cols != CSV_COLUMNS[kind]:
                raise SchemaError(f"unexpected columns {cols}")
            props = ROW_SCHEMAS[kind]["properties"]
            for raw in reader:
                row = {c: _coerce(v, props[c]) for c, v in zip(cols, raw)}
                jsonschema.validate(row, ROW_SCHEMAS[kind])
            return kind
        lines = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not lines:
            raise SchemaError("empty artifact")
        jsonschema.validate(lines[0], META_SCHEMA)
        kind = lines[0]["artifact"]
        if kind == "detect":
            if lines[0].get("record") != "config":
                raise SchemaError("first JSON-lines record must be the config")
            for rec in lines[1:]:
                schema = DETECT_SUMMARY_SCHEMA if rec.get("record") == "summary" else DETECT_TRIAL_SCHEMA
                jsonschema.validate(rec, schema)
            if lines[-1].get("record") != "summary":
                raise SchemaError("detect artifacts end with a summary record")
        else:
            if len(lines) != 1:
                raise SchemaError("JSON artifacts hold a single object")
            jsonschema.validate(lines[0], JSON_SCHEMAS[kind])
        return kind
    except jsonschema.ValidationError as exc:
        raise SchemaError(exc.message) from exc
    except (json.JSONDecodeError, StopIteration, KeyError) as exc:
        raise SchemaError(f"malformed artifact: {exc}") from exc


def validate_file(path) -> str:
    return validate_text(Path(path).read_text())


# --------------------------------------------------------------------------
# gnuplot


def gnuplot_script(artifact: str, data_path: str) -> str:
    """A plain-text gnuplot script for a CSV artifact."""
    head = f'set datafile separator ","\nset datafile commentschars "#"\nset key autotitle columnhead\n'
    if artifact == "phase":
        return head + (
            'set xlabel "beta"\nset ylabel "gamma"\n'
            f'plot "{data_path}" using 1:2 with lines title "PCA", '
            f'"" using 1:3 with lines title "lower bound", "" using 1:4 with lines title "MLE"\n'
        )
    if artifact == "spectrum":
        return head + (
            'set style fill solid 0.5\nset xlabel "eigenvalue"\n'
            f'plot "{data_path}" using (($2 eq "bin" && $1 eq "before") ? ($3+$4)/2 : 1/0):5 '
            'with boxes title "before", '
            '"" using (($2 eq "bin" && $1 eq "after") ? ($3+$4)/2 : 1/0):5 with boxes title "after"\n'
        )
    if artifact == "moment":
        return head + (
            'set xlabel "lambda or beta"\nset ylabel "second moment"\n'
            f'plot "{data_path}" using 1:5:6 with yerrorbars title "estimate", '
            '"" using 1:9 with linespoints title "reference"\n'
        )
    raise ValueError(f"no gnuplot template for {artifact!r}")
