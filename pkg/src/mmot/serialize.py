"""File formats: space/density JSON, coupling CSV, potential JSON, reports.

All JSON is written with sorted keys and a fixed indent so repeated runs of
the same configuration produce byte-identical files (wall-time fields are the
documented exception). Coupling dumps are CSV with one header row and one
line per entry above the dump threshold.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .coupling import Coupling
from .sinkhorn import Potential, SolveReport
from .space import Density, DiscreteSpace

__all__ = [
    "space_to_json",
    "space_from_json",
    "dump_space",
    "load_space",
    "dump_coupling_csv",
    "load_coupling_csv",
    "dump_potential",
    "load_potential",
    "write_json",
    "solve_report_payload",
    "DEFAULT_DUMP_THRESHOLD",
]

DEFAULT_DUMP_THRESHOLD = 1e-12


def space_to_json(density: Density) -> dict:
    space = density.space
    euclidean = space.points.ndim == 1 and np.allclose(
        space.metric, np.abs(space.points[:, None] - space.points[None, :])
    )
    return {
        "points": space.points.tolist(),
        "ref_weights": space.ref_weights.tolist(),
        "weights": density.weights.tolist(),
        "metric": "euclidean-1d" if euclidean else space.metric.tolist(),
    }


def space_from_json(payload: dict) -> tuple[DiscreteSpace, Density]:
    points = np.asarray(payload["points"], dtype=float)
    ref = np.asarray(payload["ref_weights"], dtype=float)
    metric = payload["metric"]
    if metric == "euclidean-1d":
        metric = np.abs(points[:, None] - points[None, :])
    else:
        metric = np.asarray(metric, dtype=float)
    space = DiscreteSpace(points=points, metric=metric, ref_weights=ref)
    density = Density(space, np.asarray(payload["weights"], dtype=float))
    return space, density


def dump_space(density: Density, path) -> None:
    write_json(path, space_to_json(density))


def load_space(path) -> tuple[DiscreteSpace, Density]:
    with open(path) as fh:
        return space_from_json(json.load(fh))


def dump_coupling_csv(coupling: Coupling, path, threshold: float = DEFAULT_DUMP_THRESHOLD) -> None:
    n = coupling.n_marginals
    header = [f"i{k + 1}" for k in range(n)] + ["mass"]
    entries = np.argwhere(coupling.mass > threshold)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for idx in entries:
            writer.writerow([*(int(i) for i in idx), repr(float(coupling.mass[tuple(idx)]))])


def load_coupling_csv(path, space: DiscreteSpace, n_marginals: int) -> Coupling:
    mass = np.zeros((space.size,) * n_marginals)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != n_marginals + 1:
            raise ValueError(
                f"coupling file has {len(header) - 1} index columns, expected {n_marginals}"
            )
        for row in reader:
            idx = tuple(int(v) for v in row[:-1])
            mass[idx] = float(row[-1])
    total = mass.sum()
    if total <= 0:
        raise ValueError("coupling file carries no mass")
    return Coupling(space, n_marginals, mass / total)


def dump_potential(potential: Potential, path, epsilon: float | None = None) -> None:
    payload = {"values": potential.values.tolist()}
    if epsilon is not None:
        payload["epsilon"] = epsilon
    write_json(path, payload)


def load_potential(path, space: DiscreteSpace) -> Potential:
    with open(path) as fh:
        payload = json.load(fh)
    return Potential(space, np.asarray(payload["values"], dtype=float))


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def solve_report_payload(report: SolveReport, wall_time: float | None = None) -> dict:
    payload = {
        "epsilon": report.epsilon,
        "iterations": report.iterations,
        "marginal_error": report.marginal_error,
        "primal": report.primal,
        "dual": report.dual,
        "gap": report.gap,
        "converged": report.converged,
        "normalization_defect": report.normalization_defect,
        "stages": [[eps, sweeps] for eps, sweeps in report.stages],
        "potential": report.potential.values.tolist(),
    }
    if wall_time is not None:
        payload["wall_time_s"] = wall_time
    return payload
