"""JSON and CSV persistence for plants and result rows."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .care import PlantSpec


def plant_to_dict(plant: PlantSpec) -> dict:
    out = {k: np.asarray(getattr(plant, k)).tolist()
           for k in ("A", "B", "Q", "R", "x_goal", "u_goal", "region_halfwidths")}
    out["lambda_discount"] = plant.lambda_discount
    out["region_basis"] = None if plant.region_basis is None else plant.region_basis.tolist()
    out["meta"] = plant.meta
    return out


def plant_from_dict(data: dict) -> PlantSpec:
    return PlantSpec(
        A=data["A"], B=data["B"], Q=data["Q"], R=data["R"],
        lambda_discount=data.get("lambda_discount", 0.0),
        x_goal=data.get("x_goal"), u_goal=data.get("u_goal"),
        region_halfwidths=data.get("region_halfwidths"),
        region_basis=data.get("region_basis"),
        meta=data.get("meta", {}),
    )


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)  # "inf", "nan" stay readable
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def rows_to_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    """CSV text with full-precision floats; column order follows the first row."""
    if columns is None:
        columns = list(rows[0]) if rows else []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def write_rows(rows: list[dict], out_dir, fmt: str = "csv", columns=None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        path = out_dir / "rows.csv"
        path.write_text(rows_to_csv(rows, columns))
    elif fmt == "json":
        path = out_dir / "rows.json"
        dump_json(rows, path)
    else:
        raise ValueError(f"unknown row format {fmt!r}")
    return path
