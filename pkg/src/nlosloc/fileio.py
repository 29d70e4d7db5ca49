"""File formats and atomic writes for the command-line tools.

All floats in emitted files are serialized with 9 significant digits; all
writes go through a temp-file-plus-rename so partial files never appear.
Formats:

* scenario: JSON ``{format, field, anchors[], sensors[], connectivity,
  radius?, seed}`` with coordinates as [x, y] pairs;
* measurements: CSV ``i,j,distance,kind,weight``;
* bounds: CSV ``i,j,lower,upper,consistent``;
* positions: CSV ``id,x,y[,true_x,true_y,sq_error]``;
* manifest: JSON run record referencing which command produced what.

CSV files may carry leading ``#`` comment lines (used to reference the run
manifest); readers here skip them.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from . import __version__
from .errors import InvalidInputError
from .geometry import DistanceBounds, MeasurementKind, Point2, RangeMeasurement
from .simulate import Connectivity, Scenario

SCENARIO_TAG = "nlosloc-scenario/1"
MANIFEST_TAG = "nlosloc-manifest/1"


def fmt(value: float) -> str:
    """9-significant-digit float formatting used in every emitted file."""
    return format(float(value), ".9g")


def _round9(obj):
    if isinstance(obj, float):
        return float(fmt(obj))
    if isinstance(obj, dict):
        return {k: _round9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round9(v) for v in obj]
    return obj


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, doc: dict) -> None:
    atomic_write_text(path, json.dumps(_round9(doc), indent=1) + "\n")


# -- scenario ------------------------------------------------------------


def scenario_to_dict(scenario: Scenario) -> dict:
    doc = {
        "format": SCENARIO_TAG,
        "field": list(scenario.field),
        "anchors": [[p.x, p.y] for p in scenario.anchors],
        "sensors": [[p.x, p.y] for p in scenario.sensors_truth],
        "connectivity": scenario.connectivity.value,
        "seed": scenario.seed,
    }
    if scenario.radius is not None:
        doc["radius"] = scenario.radius
    return doc


def write_scenario(path: str, scenario: Scenario) -> None:
    write_json(path, scenario_to_dict(scenario))


def read_scenario(path: str) -> Scenario:
    with open(path) as handle:
        doc = json.load(handle)
    if doc.get("format") != SCENARIO_TAG:
        raise InvalidInputError(f"{path}: not a scenario file")
    return Scenario(
        field=tuple(doc["field"]),
        anchors=tuple(Point2(x, y) for x, y in doc["anchors"]),
        sensors_truth=tuple(Point2(x, y) for x, y in doc["sensors"]),
        connectivity=Connectivity(doc["connectivity"]),
        radius=doc.get("radius"),
        seed=int(doc["seed"]),
    )


# -- CSV tables ----------------------------------------------------------


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[str]], manifest_ref: str | None) -> str:
    lines = []
    if manifest_ref:
        lines.append(f"# manifest: {manifest_ref}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_measurements(path: str, measurements: Sequence[RangeMeasurement], manifest_ref=None) -> None:
    rows = (
        [str(m.i), str(m.j), fmt(m.distance), m.kind.value, fmt(m.weight)]
        for m in measurements
    )
    atomic_write_text(path, _csv_text(["i", "j", "distance", "kind", "weight"], rows, manifest_ref))


def read_measurements(path: str) -> list[RangeMeasurement]:
    out = []
    with open(path, newline="") as handle:
        filtered = (line for line in handle if not line.startswith("#"))
        reader = csv.DictReader(filtered)
        for rec in reader:
            out.append(
                RangeMeasurement(
                    i=int(rec["i"]),
                    j=int(rec["j"]),
                    distance=float(rec["distance"]),
                    kind=MeasurementKind(rec.get("kind", "unknown")),
                    weight=float(rec.get("weight", 1.0)),
                )
            )
    return out


def write_bounds(path: str, bounds: Sequence[DistanceBounds], manifest_ref=None) -> None:
    rows = (
        [str(b.i), str(b.j), fmt(b.lower), fmt(b.upper), "true" if b.consistent else "false"]
        for b in bounds
    )
    atomic_write_text(path, _csv_text(["i", "j", "lower", "upper", "consistent"], rows, manifest_ref))


def read_bounds(path: str) -> list[DistanceBounds]:
    out = []
    with open(path, newline="") as handle:
        filtered = (line for line in handle if not line.startswith("#"))
        for rec in csv.DictReader(filtered):
            out.append(
                DistanceBounds(
                    i=int(rec["i"]),
                    j=int(rec["j"]),
                    lower=float(rec["lower"]),
                    upper=float(rec["upper"]),
                    consistent=rec["consistent"] == "true",
                )
            )
    return out


def write_positions(
    path: str,
    positions: Mapping[int, Point2],
    truth: Mapping[int, Point2] | None = None,
    manifest_ref=None,
) -> None:
    header = ["id", "x", "y"]
    if truth is not None:
        header += ["true_x", "true_y", "sq_error"]
    rows = []
    for node in sorted(positions):
        p = positions[node]
        row = [str(node), fmt(p.x), fmt(p.y)]
        if truth is not None:
            t = truth[node]
            row += [fmt(t.x), fmt(t.y), fmt(p.distance_to(t) ** 2)]
        rows.append(row)
    atomic_write_text(path, _csv_text(header, rows, manifest_ref))


# -- run manifest ----------------------------------------------------------


@dataclass
class RunManifest:
    command: str
    args: dict
    seeds: dict
    outputs: list[str]
    elapsed_seconds: float

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_TAG,
            "tool": "nlosloc",
            "version": __version__,
            "command": self.command,
            "args": self.args,
            "seeds": self.seeds,
            "outputs": self.outputs,
            "timing": {"elapsed_seconds": self.elapsed_seconds},
        }


def write_manifest(path: str, manifest: RunManifest) -> None:
    write_json(path, manifest.to_dict())
