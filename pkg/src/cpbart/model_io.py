"""Model persistence and CSV ingestion for the command-line interface.

Models are stored as versioned JSON with trees as nested node records
(internal: {var, cut, left, right}; leaf: {value}). Floats survive the
round trip bitwise because JSON serialization uses the shortest exact
decimal representation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict

import numpy as np

from .hmc import HMCConfig
from .marginal import MarginalModel
from .sampler import Diagnostics, FitResult, GaussianDraw, PosteriorDraw
from .tree_mcmc import SamplerConfig
from .trees import Ensemble, Tree

__all__ = ["load_fit", "read_csv", "save_fit", "write_csv"]

FORMAT_VERSION = 1


class DataFormatError(ValueError):
    """Raised for malformed CSV input or model-schema mismatches."""


def _tree_to_record(tree: Tree, leaf_values: np.ndarray, node: int = 0):
    if tree.feature[node] < 0:
        return {"value": float(leaf_values[tree.leaf_index_of_node[node]])}
    return {
        "var": int(tree.feature[node]),
        "cut": float(tree.threshold[node]),
        "left": _tree_to_record(tree, leaf_values, int(tree.left[node])),
        "right": _tree_to_record(tree, leaf_values, int(tree.right[node])),
    }


def _tree_from_record(record) -> tuple[Tree, np.ndarray]:
    feature, threshold, left, right, values = [], [], [], [], []

    def walk(rec) -> int:
        idx = len(feature)
        if "value" in rec:
            feature.append(-1)
            threshold.append(np.nan)
            left.append(-1)
            right.append(-1)
            values.append(float(rec["value"]))
            return idx
        feature.append(int(rec["var"]))
        threshold.append(float(rec["cut"]))
        left.append(-1)
        right.append(-1)
        left[idx] = walk(rec["left"])
        right[idx] = walk(rec["right"])
        return idx

    walk(record)
    tree = Tree(
        feature=np.array(feature, dtype=np.intp),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.intp),
        right=np.array(right, dtype=np.intp),
    )
    return tree, np.array(values)


def save_fit(fit: FitResult, path: str) -> None:
    """Write a fitted model to a versioned JSON file."""
    config = asdict(fit.config)  # recurses into the nested HMC config
    draws = []
    for draw in fit.draws:
        ens = draw.ensemble
        rec = {
            "trees": [
                _tree_to_record(t, v) for t, v in zip(ens.trees, ens.leaf_values)
            ]
        }
        if fit.model == "cp-bart":
            rec["c"] = draw.c
        else:
            rec["sigma2"] = draw.sigma2
        draws.append(rec)
    payload = {
        "format_version": FORMAT_VERSION,
        "model": fit.model,
        "config": config,
        "columns": list(fit.columns) if fit.columns is not None else None,
        "scaling": fit.scaling.tolist(),
        "train_y_lo": fit.train_y_lo,
        "train_y_hi": fit.train_y_hi,
        "response_offset": fit.response_offset,
        "response_range": fit.response_range,
        "marginal": (
            None
            if fit.marginal is None
            else {
                "centers": fit.marginal.centers.tolist(),
                "bandwidth": fit.marginal.bandwidth,
                "support_lo": fit.marginal.support_lo,
                "support_hi": fit.marginal.support_hi,
            }
        ),
        "draws": draws,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_fit(path: str) -> FitResult:
    """Load a model saved by save_fit; reproduces predictions bitwise."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != FORMAT_VERSION:
        raise DataFormatError("unsupported model file version")
    config_rec = dict(payload["config"])
    config_rec["hmc"] = HMCConfig(**config_rec["hmc"])
    config_rec["move_probs"] = tuple(config_rec["move_probs"])
    config = SamplerConfig(**config_rec)
    marginal = None
    if payload["marginal"] is not None:
        m = payload["marginal"]
        marginal = MarginalModel(
            centers=np.array(m["centers"]),
            bandwidth=m["bandwidth"],
            support_lo=m["support_lo"],
            support_hi=m["support_hi"],
        )
    draws = []
    for rec in payload["draws"]:
        trees, values = zip(*(_tree_from_record(r) for r in rec["trees"]))
        ens = Ensemble(trees=tuple(trees), leaf_values=tuple(values))
        if payload["model"] == "cp-bart":
            c = float(rec["c"])
            draws.append(
                PosteriorDraw(ensemble=ens, c=c, s=(1.0 + config.m * c) ** -0.5)
            )
        else:
            draws.append(GaussianDraw(ensemble=ens, sigma2=float(rec["sigma2"])))
    diag = Diagnostics(
        c_trace=np.empty(0),
        tree_accept_rate=float("nan"),
        hmc_accept_rate=float("nan"),
        final_step_size=float("nan"),
        seconds=0.0,
    )
    return FitResult(
        model=payload["model"],
        draws=draws,
        marginal=marginal,
        scaling=np.array(payload["scaling"]),
        columns=tuple(payload["columns"]) if payload["columns"] is not None else None,
        config=config,
        diagnostics=diag,
        train_y_lo=payload["train_y_lo"],
        train_y_hi=payload["train_y_hi"],
        response_offset=payload["response_offset"],
        response_range=payload["response_range"],
    )


def read_csv(path: str) -> tuple[list[str], np.ndarray]:
    """Read a numeric CSV with a header row; returns (columns, matrix)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty CSV file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"row {lineno} has {len(row)} fields")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DataFormatError(f"non-numeric value in row {lineno}") from None
    if not rows:
        raise DataFormatError("CSV has no data rows")
    return [h.strip() for h in header], np.array(rows)


def write_csv(path: str, columns, matrix) -> None:
    """Write a matrix as CSV with a header row and full float precision."""
    matrix = np.atleast_2d(np.asarray(matrix))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])
