"""Model bundles, band tables and report documents.

A model bundle is one ``.npz`` file.  Its ``meta`` entry is a JSON string
holding the format version, model kind, split config, forest parameters
and provenance; the per-timestep forests are stacked into ``(H, ...)``
arrays so a bundle round-trips bit-exactly.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .conformal import QuantileStrategy
from .errors import SchemaMismatch
from .qrf import Forest, ForestParams
from .trajband import CteModel, ForestQuantiles, SplitConfig, SqboxModel

__all__ = [
    "FORMAT_VERSION",
    "fmt",
    "load_forest",
    "load_model",
    "read_json",
    "save_forest",
    "save_model",
    "to_jsonable",
    "write_band_csv",
    "write_json",
    "write_rows_csv",
]

FORMAT_VERSION = 1
_FOREST_KEYS = ("responses", "feature", "threshold", "left", "right", "start", "count", "leaf_rows", "n_nodes")


def fmt(x) -> str:
    """Six significant digits, the printed precision everywhere."""
    return f"{x:.6g}"


def to_jsonable(obj):
    """Recursively convert numpy scalars and arrays to plain Python."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(to_jsonable(doc), indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_band_csv(path, lo, hi) -> None:
    """``t, lo, hi`` rows with ``t`` starting at 1."""
    write_rows_csv(path, ["t", "lo", "hi"], ((t + 1, float(a), float(b)) for t, (a, b) in enumerate(zip(lo, hi))))


def _strategy_from(d: dict) -> QuantileStrategy:
    return QuantileStrategy(d["strategy"], d.get("ucb_confidence"))


def save_forest(path, forest: Forest) -> None:
    """Single forest as ``.npz``: params and shape in ``meta``, node arrays alongside."""
    meta = {"format_version": FORMAT_VERSION, "kind": "forest", "params": forest.params.to_dict(),
            "n_features": forest.n_features}
    with open(path, "wb") as fh:
        np.savez_compressed(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **forest.arrays())


def _read_bundle(path, kind: str):
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {k: z[k] for k in z.files if k != "meta"}
    except (OSError, ValueError, KeyError) as exc:
        raise SchemaMismatch(f"{path}: not a {kind} file ({exc})") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise SchemaMismatch(f"{path}: format version {meta.get('format_version')} != {FORMAT_VERSION}")
    missing = [k for k in _FOREST_KEYS if k not in arrays]
    if missing:
        raise SchemaMismatch(f"{path}: file lacks {missing}")
    return meta, arrays


def load_forest(path) -> Forest:
    meta, arrays = _read_bundle(path, "forest")
    if meta.get("kind") != "forest":
        raise SchemaMismatch(f"{path}: holds a {meta.get('kind')!r}, not a forest")
    return Forest(ForestParams(**meta["params"]), meta["n_features"], *(arrays[k] for k in _FOREST_KEYS))


def save_model(path, model, provenance: dict | None = None) -> None:
    """Write a fitted :class:`SqboxModel` or :class:`CteModel`."""
    if not isinstance(model.quantiles, ForestQuantiles):
        raise TypeError("only forest-backed models can be saved")
    forests = model.quantiles.forests
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": "sqbox" if isinstance(model, SqboxModel) else "cte",
        "config": model.config.to_dict(),
        "alpha_lo": model.alpha_lo,
        "alpha_hi": model.alpha_hi,
        "guaranteed": model.guaranteed,
        "horizon": len(forests),
        "n_features": forests[0].n_features,
        "forest_params": [f.params.to_dict() for f in forests],
        "provenance": provenance or {},
    }
    arrays = {}
    if isinstance(model, SqboxModel):
        meta["beta"] = model.beta
        arrays["sigma"] = model.sigma
    elif isinstance(model, CteModel):
        meta["c_hat"] = model.c_hat
    else:
        raise TypeError(f"cannot save {type(model).__name__}")
    for key in _FOREST_KEYS:
        arrays[key] = np.stack([f.arrays()[key] for f in forests])
    with open(path, "wb") as fh:
        np.savez_compressed(fh, meta=np.array(json.dumps(to_jsonable(meta), sort_keys=True)), **arrays)


def load_model(path):
    """Inverse of :func:`save_model`.  Raises :class:`SchemaMismatch`."""
    meta, arrays = _read_bundle(path, "model bundle")
    if meta.get("kind") not in ("sqbox", "cte"):
        raise SchemaMismatch(f"{path}: holds a {meta.get('kind')!r}, not a model")
    forests = tuple(
        Forest(ForestParams(**meta["forest_params"][t]), meta["n_features"],
               *(arrays[k][t] for k in _FOREST_KEYS))
        for t in range(meta["horizon"])
    )
    qm = ForestQuantiles(forests)
    c = meta["config"]
    config = SplitConfig(c["l"], c["m"], c["delta"], c["delta_prime"], _strategy_from(c))
    info = {"provenance": meta.get("provenance", {})}
    if meta["kind"] == "sqbox":
        return SqboxModel(qm, meta["alpha_lo"], meta["alpha_hi"], arrays["sigma"], meta["beta"],
                          meta["guaranteed"], config, info)
    if meta["kind"] == "cte":
        return CteModel(qm, meta["alpha_lo"], meta["alpha_hi"], meta["c_hat"], meta["guaranteed"], config, info)
    raise SchemaMismatch(f"{path}: unknown model kind {meta['kind']!r}")
