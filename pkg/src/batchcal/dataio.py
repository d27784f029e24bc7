"""Dataset ingestion and model/report serialization.

Dataset CSV schema: a header row, then one row per example.

* ``score`` column (real), or ``pred`` and ``label`` columns from which the
  score is ``|pred - label|``;
* zero or more group columns named ``group:<name>`` with values 0 or 1;
* an optional ``split`` column with values ``calib`` or ``test``.

Unrecognized columns are ignored. Scores are normalized into [0, 1] using
the calibration split's observed range (or explicit bounds) and jittered
with sub-seeds derived from one pipeline seed, so reading the same file
with the same options is fully reproducible.

Models and reports are JSON; floats round-trip exactly, so a saved model
evaluates bit-identically to the in-memory one.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import ConservativeFit
from .core import (
    Bucketed,
    Constant,
    GroupCollection,
    GroupLinear,
    GridError,
    ScoreTable,
    derive_seed,
    normalize_and_jitter,
)

__all__ = [
    "SchemaError",
    "ReadOptions",
    "Dataset",
    "read_dataset",
    "write_dataset",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
    "save_json",
    "write_csv",
]


class SchemaError(ValueError):
    """A dataset or model file that violates its schema."""


@dataclass(frozen=True)
class ReadOptions:
    jitter_eps: float = 1e-6
    seed: int = 0
    bounds: Optional[tuple[float, float]] = None
    # When the file has no split column: "none" keeps one table under the
    # key "all", "random" splits rows into calib/test by fraction and seed.
    split_fallback: str = "none"
    calib_fraction: float = 0.8


@dataclass(frozen=True)
class Dataset:
    groups: GroupCollection
    tables: dict
    residual_scores: bool

    def table(self, which: str) -> ScoreTable:
        if which in self.tables:
            return self.tables[which]
        if which in ("calib", "test") and "all" in self.tables:
            raise SchemaError(
                f"dataset has no {which!r} split; add a split column or use "
                "a random split"
            )
        raise SchemaError(f"dataset has no {which!r} table")


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise SchemaError(
            f"row {row}, column {column!r}: cannot parse {text!r} as a number"
        ) from None


def read_dataset(path, options: ReadOptions = ReadOptions()) -> Dataset:
    """Load a dataset CSV into normalized score tables.

    Raises :class:`SchemaError` naming the offending row and column on any
    schema violation.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header required") from None
        rows = list(reader)

    columns = {name: i for i, name in enumerate(header)}
    if len(columns) != len(header):
        raise SchemaError(f"{path}: duplicate column names in header")
    group_names = [name[len("group:"):] for name in header if name.startswith("group:")]
    group_cols = [columns[f"group:{name}"] for name in group_names]
    if not group_names:
        raise SchemaError(f"{path}: at least one 'group:<name>' column is required")

    residual = False
    if "score" in columns:
        score_col = columns["score"]
    elif "pred" in columns and "label" in columns:
        score_col = None
        residual = True
    else:
        raise SchemaError(
            f"{path}: need a 'score' column or both 'pred' and 'label' columns"
        )
    split_col = columns.get("split")

    n = len(rows)
    if n == 0:
        raise SchemaError(f"{path}: no data rows")
    raw = np.empty(n)
    membership = np.empty((n, len(group_names)), dtype=bool)
    split_labels = []
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise SchemaError(f"row {i}: expected {len(header)} fields, got {len(row)}")
        if residual:
            pred = _parse_float(row[columns["pred"]], i, "pred")
            label = _parse_float(row[columns["label"]], i, "label")
            raw[i - 1] = abs(pred - label)
        else:
            raw[i - 1] = _parse_float(row[score_col], i, "score")
        for j, col in enumerate(group_cols):
            value = row[col].strip()
            if value == "0":
                membership[i - 1, j] = False
            elif value == "1":
                membership[i - 1, j] = True
            else:
                raise SchemaError(
                    f"row {i}, column 'group:{group_names[j]}': group values "
                    f"must be 0 or 1, got {value!r}"
                )
        if split_col is not None:
            value = row[split_col].strip()
            if value not in ("calib", "test"):
                raise SchemaError(
                    f"row {i}, column 'split': expected 'calib' or 'test', got {value!r}"
                )
            split_labels.append(value)

    groups = GroupCollection(tuple(group_names))
    if split_col is not None:
        labels = np.array(split_labels)
        calib_idx = np.flatnonzero(labels == "calib")
        test_idx = np.flatnonzero(labels == "test")
        if calib_idx.size == 0 or test_idx.size == 0:
            raise SchemaError(f"{path}: each declared split needs at least one row")
    elif options.split_fallback == "random":
        rng = np.random.default_rng(derive_seed(options.seed, "split"))
        order = rng.permutation(n)
        n_calib = min(max(int(round(n * options.calib_fraction)), 1), n - 1)
        calib_idx = np.sort(order[:n_calib])
        test_idx = np.sort(order[n_calib:])
    else:
        scores, scale, n_clamped = normalize_and_jitter(
            raw, options.jitter_eps, derive_seed(options.seed, "jitter:all"),
            bounds=options.bounds,
        )
        table = ScoreTable(scores, membership, scale=scale, n_clamped=n_clamped)
        return Dataset(groups=groups, tables={"all": table}, residual_scores=residual)

    calib_scores, scale, calib_clamped = normalize_and_jitter(
        raw[calib_idx], options.jitter_eps,
        derive_seed(options.seed, "jitter:calib"), bounds=options.bounds,
    )
    test_scores, _, test_clamped = normalize_and_jitter(
        raw[test_idx], options.jitter_eps,
        derive_seed(options.seed, "jitter:test"), bounds=scale,
    )
    tables = {
        "calib": ScoreTable(
            calib_scores, membership[calib_idx], scale=scale, n_clamped=calib_clamped
        ),
        "test": ScoreTable(
            test_scores, membership[test_idx], scale=scale, n_clamped=test_clamped
        ),
    }
    return Dataset(groups=groups, tables=tables, residual_scores=residual)


def write_dataset(
    path,
    groups: GroupCollection,
    membership: np.ndarray,
    *,
    scores: Optional[np.ndarray] = None,
    pred: Optional[np.ndarray] = None,
    label: Optional[np.ndarray] = None,
    split: Optional[list] = None,
) -> None:
    """Write a dataset CSV in the schema :func:`read_dataset` accepts."""
    if (scores is None) == (pred is None or label is None):
        raise ValueError("provide either scores or both pred and label")
    header = []
    if scores is not None:
        header.append("score")
    else:
        header.extend(["pred", "label"])
    header.extend(f"group:{name}" for name in groups.names)
    if split is not None:
        header.append("split")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        n = membership.shape[0]
        for i in range(n):
            row = []
            if scores is not None:
                row.append(repr(float(scores[i])))
            else:
                row.append(repr(float(pred[i])))
                row.append(repr(float(label[i])))
            row.extend("1" if flag else "0" for flag in membership[i])
            if split is not None:
                row.append(split[i])
            writer.writerow(row)


# ---------------------------------------------------------------------------
# model serialization


def _base_to_json(base):
    if np.isscalar(base):
        return float(base)
    if isinstance(base, np.ndarray):
        return [float(v) for v in base]
    return model_to_dict(base)


def _base_from_json(obj):
    if isinstance(obj, (int, float)):
        return float(obj)
    if isinstance(obj, list):
        return np.asarray(obj, dtype=float)
    return model_from_dict(obj)


def model_to_dict(model) -> dict:
    if isinstance(model, Constant):
        return {"kind": "constant", "tau": float(model.tau)}
    if isinstance(model, GroupLinear):
        return {
            "kind": "group_linear",
            "base": _base_to_json(model.base),
            "lam": [float(v) for v in model.lam],
        }
    if isinstance(model, Bucketed):
        return {
            "kind": "bucketed",
            "m": model.m,
            "base": _base_to_json(model.base),
            "patches": [
                [g, v_idx / model.m, d_idx / model.m]
                for g, v_idx, d_idx in model.patches
            ],
        }
    if isinstance(model, ConservativeFit):
        return {
            "kind": "conservative",
            "tau_groups": [float(v) for v in model.tau_groups],
            "tau_marginal": float(model.tau_marginal),
            "rule": model.rule,
        }
    raise TypeError(f"cannot serialize model of type {type(model).__name__}")


def model_from_dict(obj: dict):
    try:
        kind = obj["kind"]
    except (TypeError, KeyError):
        raise SchemaError("model object has no 'kind' field") from None
    try:
        if kind == "constant":
            return Constant(float(obj["tau"]))
        if kind == "group_linear":
            return GroupLinear(base=_base_from_json(obj["base"]), lam=obj["lam"])
        if kind == "bucketed":
            m = int(obj["m"])
            patches = []
            for g, v, d in obj["patches"]:
                v_idx = _grid_value_to_index(v, m)
                d_idx = _grid_value_to_index(d, m, signed=True)
                patches.append((g, v_idx, d_idx))
            return Bucketed(m=m, base=_base_from_json(obj["base"]), patches=tuple(patches))
        if kind == "conservative":
            return ConservativeFit(
                tau_groups=obj["tau_groups"],
                tau_marginal=float(obj["tau_marginal"]),
                rule=obj.get("rule", "conservative"),
            )
    except GridError as exc:
        raise SchemaError(f"invalid bucketed model: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed {kind!r} model: {exc}") from exc
    raise SchemaError(f"unknown model kind {kind!r}")


def _grid_value_to_index(value, m: int, signed: bool = False) -> int:
    scaled = float(value) * m
    k = round(scaled)
    if abs(scaled - k) > 1e-9:
        raise SchemaError(f"value {value} is not a multiple of 1/{m}")
    if not signed and not 0 <= k <= m:
        raise SchemaError(f"grid value {value} outside [0, 1]")
    return int(k)


def save_model(path, model, *, header: dict) -> None:
    """Write a model file: shared header fields plus the model parameters."""
    payload = dict(header)
    payload["model"] = model_to_dict(model)
    save_json(path, payload)


def load_model(path) -> tuple[object, dict]:
    """Read a model file back; returns ``(model, header)``."""
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if "model" not in payload:
        raise SchemaError(f"{path}: missing 'model' field")
    model = model_from_dict(payload["model"])
    header = {k: v for k, v in payload.items() if k != "model"}
    return model, header


def save_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def write_csv(path, header: list, rows: list) -> None:
    """Write a plain table; floats are rendered with repr for exact
    round-trips and byte-stable output."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [repr(v) if isinstance(v, float) else v for v in row]
            )
