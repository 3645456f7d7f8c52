"""CSV ingestion of annual hydrological records and JSON model files.

Model files store every number as the shortest decimal string that
round-trips to the same double (``repr``), so write -> read -> write is
byte-identical.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataError, ValidationError
from .phmodel import FAMILIES, Categorical, Degenerate, ExponentialDensity, Poisson, model_validate

SCHEMA_VERSION = 1
REQUIRED = ("hydro_year_start", "inflow_hm3")
OPTIONAL = ("outflow_hm3", "stored_hm3")


@dataclass
class InflowSeries:
    """Annual records; hydrological year ``y`` runs from 1 Oct y to 30 Sep y+1."""

    years: np.ndarray
    inflow: np.ndarray
    outflow: np.ndarray = None
    stored: np.ndarray = None

    def __len__(self):
        return int(self.years.size)


def _number(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"row {row}: column {col!r} is not a number: {text!r}") from None
    if not np.isfinite(v):
        raise DataError(f"row {row}: column {col!r} is not finite")
    return v


def ingest(path, capacity=None):
    """Read and validate an annual series.

    Columns ``hydro_year_start,inflow_hm3[,outflow_hm3,stored_hm3]``;
    comma separated, UTF-8, '.' decimals, header required. Row numbers in
    error messages count the header as row 1.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        reader.fieldnames = header
        opt = [c for c in OPTIONAL if c in header]
        cols = {c: [] for c in REQUIRED + tuple(opt)}
        for rowno, rec in enumerate(reader, start=2):
            if None in rec or any(rec.get(c) is None for c in cols):
                raise DataError(f"row {rowno}: wrong number of fields")
            year = rec["hydro_year_start"].strip()
            if not year.lstrip("-").isdigit():
                raise DataError(f"row {rowno}: year {year!r} is not an integer")
            cols["hydro_year_start"].append(int(year))
            for c in cols:
                if c == "hydro_year_start":
                    continue
                v = _number(rec[c].strip(), rowno, c)
                if v < 0:
                    raise DataError(f"row {rowno}: negative volume in {c!r}")
                if c == "stored_hm3" and capacity is not None and v > capacity:
                    raise DataError(f"row {rowno}: stored volume {v} exceeds capacity {capacity}")
                cols[c].append(v)
            if len(cols["hydro_year_start"]) > 1:
                prev, cur = cols["hydro_year_start"][-2:]
                if cur == prev:
                    raise DataError(f"row {rowno}: duplicated year {cur}")
                if cur != prev + 1:
                    raise DataError(f"row {rowno}: year {cur} does not follow {prev} "
                                    "(years must increase by 1, gaps are not imputed)")
    if not cols["hydro_year_start"]:
        raise DataError(f"{path}: empty series")
    return InflowSeries(
        years=np.array(cols["hydro_year_start"], dtype=int),
        inflow=np.array(cols["inflow_hm3"]),
        outflow=np.array(cols["outflow_hm3"]) if "outflow_hm3" in cols else None,
        stored=np.array(cols["stored_hm3"]) if "stored_hm3" in cols else None,
    )


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------


def _enc(x):
    if isinstance(x, np.ndarray):
        return [_enc(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_enc(v) for v in x]
    return repr(float(x))


def _dec(x, where):
    if isinstance(x, list):
        return [_dec(v, where) for v in x]
    if isinstance(x, bool) or not isinstance(x, (str, int, float)):
        raise ValidationError(f"expected a decimal string, got {x!r}", where)
    try:
        return float(x)
    except ValueError:
        raise ValidationError(f"not a decimal: {x!r}", where) from None


def _emission_dict(law):
    if isinstance(law, Degenerate):
        return {"family": "degenerate", "value": _enc(law.value)}
    if isinstance(law, Poisson):
        return {"family": "poisson", "lambda": _enc(law.lam)}
    if isinstance(law, ExponentialDensity):
        return {"family": "exponential", "rate": _enc(law.rate)}
    if isinstance(law, Categorical):
        return {"family": "categorical", "alphabet": _enc(law.alphabet),
                "probs": _enc(law.probs)}
    raise TypeError(f"cannot serialize {law!r}")


def _emission_from(d, where):
    fam = d.get("family")
    if fam not in FAMILIES:
        raise ValidationError(f"unknown family {fam!r}", where)
    try:
        if fam == "degenerate":
            return Degenerate(_dec(d["value"], where))
        if fam == "poisson":
            return Poisson(_dec(d["lambda"], where))
        if fam == "exponential":
            return ExponentialDensity(_dec(d["rate"], where))
        return Categorical(tuple(_dec(d["alphabet"], where)), tuple(_dec(d["probs"], where)))
    except KeyError as exc:
        raise ValidationError(f"missing field {exc.args[0]!r}", where) from None


def model_to_dict(m, metadata=None):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "regimes": list(m.labels),
        "beta": _enc(m.beta),
        "jump": _enc(m.jump),
        "sojourn": [{"alpha": _enc(s.alpha), "T": _enc(s.T)} for s in m.sojourn],
        "emission": [_emission_dict(law) for law in m.emission],
    }
    if metadata:
        doc["fit"] = {k: (_enc(v) if isinstance(v, float) else v) for k, v in metadata.items()}
    return doc


def model_from_dict(doc):
    """Rebuild and validate a model; returns ``(model, fit_metadata)``."""
    if not isinstance(doc, dict):
        raise ValidationError("model file must hold a JSON object", "root")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {doc.get('schema_version')!r}",
                              "schema_version")
    try:
        sojourn = [(_dec(s["alpha"], f"sojourn[{k}].alpha"), _dec(s["T"], f"sojourn[{k}].T"))
                   for k, s in enumerate(doc["sojourn"])]
        emission = [_emission_from(e, f"emission[{k}]") for k, e in enumerate(doc["emission"])]
        model = model_validate(beta=_dec(doc["beta"], "beta"), jump=_dec(doc["jump"], "jump"),
                               sojourn=sojourn, emission=emission, labels=doc.get("regimes"))
    except KeyError as exc:
        raise ValidationError(f"missing field {exc.args[0]!r}", "root") from None
    return model, doc.get("fit", {})


def dumps_model(m, metadata=None):
    return json.dumps(model_to_dict(m, metadata), indent=2) + "\n"


def write_model(path, m, metadata=None):
    Path(path).write_text(dumps_model(m, metadata), encoding="utf-8")


def read_model(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    return model_from_dict(doc)


def format_number(x):
    """CSV cell text: shortest round-trip repr, 'nan'/'inf' spelled out."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def write_csv(fh, header, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([c if isinstance(c, str) else format_number(c) for c in r])
