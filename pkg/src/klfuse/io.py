"""JSON interchange files for bundles, fused models and ground truth.

Floats are written with ``repr`` precision (shortest string that round-trips),
so reading a file back reproduces every parameter bit for bit.  Matrices are
stored row-major as nested lists.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .expfam import FAMILIES, check_compatible, diag_gaussian, dirichlet, normal_wishart
from .fusion import FusionResult, GlobalModel
from .synthgen import GroundTruth, LocalMixture

FORMAT_VERSION = 1


class FileFormatError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")


def component_to_record(c):
    if c.family == "diag_gaussian":
        return {"mean": c["mean"].tolist(), "variance": c["variance"].tolist()}
    if c.family == "dirichlet":
        return {"alpha": c["alpha"].tolist()}
    return {"m": c["m"].tolist(), "kappa": float(c["kappa"]), "W": c["W"].tolist(),
            "nu": float(c["nu"])}


def component_from_record(family, rec):
    if family == "diag_gaussian":
        return diag_gaussian(rec["mean"], rec["variance"])
    if family == "dirichlet":
        return dirichlet(rec["alpha"])
    if family == "normal_wishart":
        return normal_wishart(rec["m"], rec["kappa"], rec["W"], rec["nu"])
    raise ValueError(f"unknown family {family!r}")


@dataclass
class DatasetEntry:
    id: str
    components: list
    weights: list = None


@dataclass
class BundleFile:
    family: str
    dim: int
    datasets: list = field(default_factory=list)

    @property
    def bundles(self):
        return [d.components for d in self.datasets]

    @classmethod
    def from_bundles(cls, bundles, ids=None, weights=None):
        family, dim = check_compatible([c for b in bundles for c in b])
        ids = ids or [f"dataset_{j:03d}" for j in range(len(bundles))]
        weights = weights or [None] * len(bundles)
        return cls(family, dim, [DatasetEntry(i, list(b), w)
                                 for i, b, w in zip(ids, bundles, weights)])


def _dump(obj, path):
    path = Path(path)
    with path.open("w") as fh:
        json.dump(obj, fh, indent=1, allow_nan=False)
        fh.write("\n")


def _load(path):
    path = Path(path)
    try:
        with path.open() as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(path, f"invalid JSON ({exc})") from None


def _check_header(obj, path):
    if not isinstance(obj, dict) or obj.get("version") != FORMAT_VERSION:
        raise FileFormatError(path, f"expected a version {FORMAT_VERSION} object")
    family = obj.get("family")
    if family not in FAMILIES:
        raise FileFormatError(path, f"unknown family {family!r}")
    return family, int(obj["dim"])


def _parse_components(family, dim, records, path, where):
    out = []
    for i, rec in enumerate(records):
        try:
            c = component_from_record(family, rec)
        except (KeyError, TypeError, ValueError) as exc:
            raise FileFormatError(path, f"{where} component {i}: {exc}") from None
        if c.dim != dim:
            raise FileFormatError(path, f"{where} component {i}: dimension {c.dim} != {dim}")
        out.append(c)
    return out


def write_bundle_file(path, bundle_file):
    datasets = []
    for d in bundle_file.datasets:
        check_compatible(d.components + [d.components[0]])
        entry = {"id": d.id, "components": [component_to_record(c) for c in d.components]}
        if d.weights is not None:
            entry["weights"] = [float(w) for w in d.weights]
        datasets.append(entry)
    _dump({"version": FORMAT_VERSION, "family": bundle_file.family, "dim": bundle_file.dim,
           "datasets": datasets}, path)


def read_bundle_file(path):
    obj = _load(path)
    family, dim = _check_header(obj, path)
    datasets = []
    for k, entry in enumerate(obj.get("datasets", [])):
        comps = _parse_components(family, dim, entry.get("components", []), path, f"dataset {k}")
        if not comps:
            raise FileFormatError(path, f"dataset {k} has no components")
        weights = entry.get("weights")
        if weights is not None and len(weights) != len(comps):
            raise FileFormatError(path, f"dataset {k}: {len(weights)} weights for {len(comps)} components")
        datasets.append(DatasetEntry(str(entry.get("id", k)), comps, weights))
    if not datasets:
        raise FileFormatError(path, "no datasets")
    return BundleFile(family, dim, datasets)


def write_model_file(path, result, ids=None, extra=None):
    model = result.global_model
    family, dim = check_compatible(model.components)
    ids = ids or [f"dataset_{j:03d}" for j in range(len(result.assignments))]
    obj = {
        "version": FORMAT_VERSION,
        "family": family,
        "dim": dim,
        "components": [component_to_record(c) for c in model.components],
        "usage": [int(u) for u in model.usage],
        "assignments": [{"id": i, "row_to_col": [int(g) for g in a]}
                        for i, a in zip(ids, result.assignments)],
        "objective_trace": [float(v) for v in result.objective_trace],
        "iterations": int(result.iterations),
        "scale": float(result.scale),
    }
    if extra:
        obj.update(extra)
    _dump(obj, path)


def read_model_file(path):
    """Returns ``(FusionResult, raw_json_dict)``."""
    obj = _load(path)
    family, dim = _check_header(obj, path)
    comps = _parse_components(family, dim, obj.get("components", []), path, "global")
    if not comps:
        raise FileFormatError(path, "model has no components")
    assignments = [np.array(a["row_to_col"], dtype=int) for a in obj.get("assignments", [])]
    result = FusionResult(
        GlobalModel(comps, obj.get("usage")),
        assignments,
        list(obj.get("objective_trace", [])),
        int(obj.get("iterations", 0)),
        float(obj.get("scale", 1.0)),
    )
    return result, obj


def write_truth_file(path, config, truth, locals_, data_files):
    obj = {
        "version": FORMAT_VERSION,
        "config": {
            "G": config.G, "D": config.D, "J": config.J, "separation": config.separation,
            "hetero_noise": config.hetero_noise, "n_per_dataset": config.n_per_dataset,
            "seed": config.seed, "wishart_df": config.wishart_df,
        },
        "means": truth.means.tolist(),
        "covariances": truth.covariances.tolist(),
        "inclusion": truth.inclusion.tolist(),
        "datasets": [
            {"id": Path(f).stem, "file": Path(f).name, "subset": loc.subset.tolist(),
             "means": loc.means.tolist(), "covariances": loc.covariances.tolist(),
             "weights": loc.weights.tolist()}
            for loc, f in zip(locals_, data_files)
        ],
    }
    _dump(obj, path)


def read_truth_file(path):
    """Returns ``(GroundTruth, list of (id, LocalMixture), config dict)``."""
    obj = _load(path)
    if not isinstance(obj, dict) or obj.get("version") != FORMAT_VERSION:
        raise FileFormatError(path, f"expected a version {FORMAT_VERSION} truth file")
    try:
        truth = GroundTruth(np.array(obj["means"], dtype=float),
                            np.array(obj["covariances"], dtype=float),
                            np.array(obj["inclusion"], dtype=float))
        locals_ = [
            (d["id"], LocalMixture(np.array(d["subset"], dtype=int),
                                   np.array(d["means"], dtype=float),
                                   np.array(d["covariances"], dtype=float),
                                   np.array(d["weights"], dtype=float)))
            for d in obj.get("datasets", [])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(path, f"malformed truth file ({exc})") from None
    if truth.means.ndim != 2:
        raise FileFormatError(path, "means must be a (G, D) array")
    return truth, locals_, obj.get("config", {})


def write_data_file(path, X):
    np.savetxt(path, np.asarray(X, dtype=float), delimiter=",", fmt="%.17g")


def read_data_file(path):
    try:
        X = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FileFormatError(path, f"not a numeric CSV matrix ({exc})") from None
    if X.size == 0:
        raise FileFormatError(path, "empty data file")
    if not np.all(np.isfinite(X)):
        raise FileFormatError(path, "non-finite value")
    return X
