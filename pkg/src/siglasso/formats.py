"""On-disk formats: JSON-Lines datasets, model JSON, prediction/importance CSVs, truth sidecars.

Every writer is byte-deterministic: JSON keys are sorted and floats are written with
``repr`` so a value survives a write/read round trip unchanged.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from pathlib import Path

import numpy as np

from .paths import IndividualRecord, SamplingGrid, TimeSeries
from .pipeline import Dataset, SigLassoModel
from .regression import PenaltyWeights
from .signature import sig_dim, words


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def _num(x):
    """JSON-safe float: non-finite values become ``None``."""
    x = float(x)
    return x if math.isfinite(x) else None


def _nums(a):
    return [[_num(v) for v in row] for row in np.asarray(a, dtype=float)] if np.ndim(a) == 2 else [
        _num(v) for v in np.asarray(a, dtype=float).reshape(-1)
    ]


def _floats(a):
    return np.array([np.nan if v is None else v for v in np.ravel(a)], dtype=float)


def dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_text(path, text):
    """Write through a temporary file so a crash never leaves a half-written output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- datasets

def record_to_json(rec):
    return {
        "id": rec.id,
        "feature_times": _nums(rec.features.times),
        "feature_values": _nums(rec.features.values),
        "target_times": _nums(rec.targets.times),
        "target_values": _nums(rec.targets.values),
    }


def record_from_json(obj):
    try:
        ft = np.asarray(obj["feature_times"], dtype=float)
        fv = np.asarray(obj["feature_values"], dtype=float).reshape(len(ft), -1)
        tt = np.asarray(obj["target_times"], dtype=float)
        tv = np.asarray(obj["target_values"], dtype=float).reshape(len(tt), -1)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed record {obj.get('id', '?')!r}: {exc}") from exc
    return IndividualRecord(TimeSeries(SamplingGrid(ft), fv), TimeSeries(SamplingGrid(tt), tv),
                            id=str(obj.get("id", "")))


def dataset_to_jsonl(records):
    return "".join(json.dumps(record_to_json(r), sort_keys=True) + "\n" for r in records)


def write_dataset(path, records):
    write_text(path, dataset_to_jsonl(records))


def read_dataset(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            records.append(record_from_json(obj))
    if not records:
        raise FormatError(f"{path}: no records")
    for i, rec in enumerate(records):
        if not rec.id:
            records[i] = IndividualRecord(rec.features, rec.targets, id=str(i))
    return Dataset(records)


# ---------------------------------------------------------------- models

def word_key(word):
    return ",".join(str(c) for c in word)


def model_to_json(model):
    """Sparse word-keyed coefficients; zero rows are omitted."""
    coefs = {}
    row = 0
    for k in range(model.N + 1):
        for w in words(model.d, k):
            if np.any(model.theta[row] != 0.0):
                coefs[word_key(w)] = [float(v) for v in model.theta[row]]
            row += 1
    return {
        "d": model.d,
        "N": model.N,
        "p": model.p,
        "weights": [float(v) for v in model.weights.lambdas],
        "intercept": [float(v) for v in model.intercept],
        "coefficients": coefs,
        "C": float(model.C),
        "time_augmented": bool(model.time_augmented),
        "normalization": model.normalization,
        "path_scale": float(model.path_scale),
    }


def model_from_json(obj):
    try:
        d, N, p = int(obj["d"]), int(obj["N"]), int(obj["p"])
        theta = np.zeros((sig_dim(d, N), p))
        index = {word_key(w): i for i, w in enumerate(w for k in range(N + 1) for w in words(d, k))}
        for key, vals in obj["coefficients"].items():
            theta[index[key]] = vals
        return SigLassoModel(
            N, d, p, PenaltyWeights(np.asarray(obj["weights"], dtype=float)), theta,
            np.asarray(obj["intercept"], dtype=float), float(obj.get("C", 0.0)),
            bool(obj.get("time_augmented", True)), str(obj.get("normalization", "prefix")),
            float(obj.get("path_scale", 1.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model: {exc!r}") from exc


def write_model(path, model):
    write_text(path, dumps(model_to_json(model)))


def read_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_json(json.load(fh))


# ---------------------------------------------------------------- CSV

def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ""
    return str(v)


def csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def predictions_csv(blocks):
    """``blocks``: iterable of ``(id, times, values)``; columns ``id,t,pred_1..pred_p``."""
    blocks = list(blocks)
    p = np.asarray(blocks[0][2]).reshape(len(blocks[0][1]), -1).shape[1] if blocks else 1
    rows = []
    for rid, times, values in blocks:
        values = np.asarray(values, dtype=float).reshape(len(times), -1)
        rows.extend([rid, float(t), *map(float, v)] for t, v in zip(times, values))
    return csv_text(["id", "t"] + [f"pred_{j + 1}" for j in range(p)], rows)


def read_predictions(path):
    """``{id: (times, values)}`` in file order; blank cells become NaN."""
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["id", "t"] or len(header) < 3:
            raise FormatError(f"{path}: expected header id,t,pred_1,...")
        acc = {}
        for row in reader:
            if len(row) != len(header):
                raise FormatError(f"{path}: row {row!r} has {len(row)} cells, expected {len(header)}")
            acc.setdefault(row[0], []).append([float(c) if c else np.nan for c in row[1:]])
    for rid, rows in acc.items():
        a = np.array(rows)
        out[rid] = (a[:, 0], a[:, 1:])
    return out


# ---------------------------------------------------------------- truth sidecar

def truth_to_json(samples, config=None):
    """Dense ground truth per individual; unobservable target entries are ``null``."""
    return {
        "config": config,
        "grid": _nums(samples[0].grid) if samples else [],
        "individuals": {
            s.record.id: {"features": _nums(s.features), "targets": _nums(s.targets)} for s in samples
        },
    }


def read_truth(path):
    """``{id: (times, values)}`` from a truth sidecar or from a JSON-Lines dataset's targets."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        obj = None
    if isinstance(obj, dict) and "individuals" in obj:
        grid = _floats(obj["grid"])
        out = {}
        for rid, entry in obj["individuals"].items():
            vals = np.array([[np.nan if v is None else v for v in row] for row in entry["targets"]], dtype=float)
            ok = np.all(np.isfinite(vals), axis=1)
            out[rid] = (grid[ok], vals[ok])
        return out
    return {r.id: (r.targets.times, r.targets.values) for r in read_dataset(path)}


def read_series_csv(path):
    """A regular-grid series CSV: header row, one sample per row, every column a channel."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise FormatError(f"{path}: empty file")
        try:
            rows = [[float(c) for c in row] for row in reader if row]
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: no samples")
    return header, np.array(rows)
