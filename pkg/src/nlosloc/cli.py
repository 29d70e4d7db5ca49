"""Command-line front end.

Subcommands: ``generate`` (scenario files), ``bounds`` (per-edge interval
table), ``localize`` (single-shot estimation), ``simulate`` (seeded Monte
Carlo batches). Every run writes a manifest JSON capturing command, flags,
seeds, version, and timing; data files reference it. Exit codes: 0 success,
2 input error, 3 degraded solve (artifacts still written).
"""

from __future__ import annotations

import argparse
import os
import sys
import time


from . import __version__
from .builders import AnchorPrior, CoefficientMode
from .errors import InvalidInputError
from .estimator import EstimatorConfig, Formulation, Variant, localize
from .fileio import (
    RunManifest,
    fmt,
    read_bounds,
    read_measurements,
    read_scenario,
    write_bounds,
    write_json,
    write_manifest,
    write_measurements,
    write_positions,
    scenario_to_dict,
)
from .geometry import MeasurementKind, NoiseBoundPolicy, RangeMeasurement, derive_bounds
from .simulate import (
    Connectivity,
    NoiseModel,
    ScenarioParams,
    Scenario,
    paper_scenario,
    random_scenario,
    run_batch,
)
from .solver import SolverSettings


def _parse_nu(text: str) -> NoiseBoundPolicy:
    """--nu accepts ``sigma:<k>``, ``abs:<v>``, or a bare absolute value."""
    if text.startswith("sigma:"):
        return NoiseBoundPolicy(mode="sigma-multiple", value=float(text[6:]))
    if text.startswith("abs:"):
        return NoiseBoundPolicy(mode="absolute", value=float(text[4:]))
    return NoiseBoundPolicy(mode="absolute", value=float(text))


def _parse_noise(text: str) -> NoiseModel:
    """--noise ``sigma=0.01,bias=0:0.5,frac=1.0`` (any subset, any order)."""
    sigma, bias, frac = 0.01, (0.0, 0.5), 1.0
    for part in filter(None, text.split(",")):
        key, _, value = part.partition("=")
        if key == "sigma":
            sigma = float(value)
        elif key == "bias":
            lo, _, hi = value.partition(":")
            bias = (float(lo), float(hi))
        elif key == "frac":
            frac = float(value)
        else:
            raise InvalidInputError(f"unknown noise field {key!r}")
    return NoiseModel(sigma=sigma, nlos_bias=bias, nlos_fraction=frac)


def _parse_connectivity(text: str) -> tuple[Connectivity, float | None]:
    if text.startswith("radius:"):
        return Connectivity.RADIUS_LIMITED, float(text[7:])
    return Connectivity(text), None


def _estimator_config(args) -> EstimatorConfig:
    solver = SolverSettings(gap_tol=args.tol, feas_tol=args.tol)
    return EstimatorConfig(
        formulation=Formulation.FULLSDP if args.formulation == "fullsdp" else Formulation.ESDP,
        variant=Variant.UNCERTAIN_ANCHORS if args.variant == "uncertain" else Variant.KNOWN_ANCHORS,
        mode=CoefficientMode.PAPER_LITERAL if args.coeff == "paper" else CoefficientMode.MIDPOINT,
        noise_policy=_parse_nu(args.nu),
        sigma=args.sigma,
        solver=solver,
        refine=args.refine,
    )


def _exact_measurements(scenario: Scenario) -> list[RangeMeasurement]:
    truth = scenario.truth
    return [
        RangeMeasurement(i=i, j=j, distance=truth[i].distance_to(truth[j]),
                         kind=MeasurementKind.UNKNOWN)
        for i, j in scenario.edges()
    ]


def cmd_generate(args) -> int:
    t0 = time.perf_counter()
    connectivity, radius = _parse_connectivity(args.connectivity)
    if args.paper_layout:
        scenario = paper_scenario(args.seed, n_sensors=args.sensors)
        if connectivity is not scenario.connectivity or radius is not None:
            scenario = Scenario(
                field=scenario.field, anchors=scenario.anchors,
                sensors_truth=scenario.sensors_truth,
                connectivity=connectivity, radius=radius, seed=scenario.seed,
            )
    else:
        scenario = random_scenario(
            args.seed, args.sensors, args.random_anchors,
            connectivity=connectivity, radius=radius,
        )
    doc = scenario_to_dict(scenario)
    doc["manifest"] = os.path.basename(args.out) + ".manifest.json"
    write_json(args.out, doc)
    manifest = RunManifest(
        command="generate",
        args={
            "seed": args.seed, "sensors": args.sensors,
            "paper_layout": bool(args.paper_layout),
            "random_anchors": args.random_anchors,
            "connectivity": args.connectivity, "out": args.out,
        },
        seeds={"scenario": scenario.seed},
        outputs=[args.out],
        elapsed_seconds=time.perf_counter() - t0,
    )
    write_manifest(args.out + ".manifest.json", manifest)
    return 0


def cmd_bounds(args) -> int:
    t0 = time.perf_counter()
    scenario = read_scenario(args.scenario)
    measurements = (
        read_measurements(args.measurements) if args.measurements else _exact_measurements(scenario)
    )
    policy = _parse_nu(args.nu)
    bounds = derive_bounds(measurements, scenario.anchor_positions, policy, args.sigma)
    manifest_path = args.out + ".manifest.json"
    write_bounds(args.out, bounds, manifest_ref=os.path.basename(manifest_path))
    write_manifest(
        manifest_path,
        RunManifest(
            command="bounds",
            args={"scenario": args.scenario, "measurements": args.measurements,
                  "nu": args.nu, "sigma": args.sigma, "out": args.out},
            seeds={"scenario": scenario.seed},
            outputs=[args.out],
            elapsed_seconds=time.perf_counter() - t0,
        ),
    )
    return 0


def cmd_localize(args) -> int:
    t0 = time.perf_counter()
    scenario = read_scenario(args.scenario)
    measurements = (
        read_measurements(args.measurements) if args.measurements else _exact_measurements(scenario)
    )
    bounds = read_bounds(args.bounds) if args.bounds else None
    config = _estimator_config(args)
    priors = None
    if args.variant == "uncertain":
        priors = [
            AnchorPrior(j=j, estimate=p, radius=args.anchor_radius,
                        enforce_ball=args.enforce_ball)
            for j, p in sorted(scenario.anchor_positions.items())
        ]
    report = localize(
        measurements,
        anchors=scenario.anchor_positions,
        priors=priors,
        truth=scenario.truth if args.with_truth else None,
        config=config,
        bounds=bounds,
    )
    os.makedirs(args.out, exist_ok=True)
    manifest_name = "manifest.json"
    doc = report.to_json_dict()
    doc["manifest"] = manifest_name
    write_json(os.path.join(args.out, "report.json"), doc)
    positions = dict(report.positions)
    positions.update(report.anchor_estimates)
    truth = {k: scenario.truth[k] for k in positions} if args.with_truth else None
    write_positions(
        os.path.join(args.out, "positions.csv"), positions, truth, manifest_ref=manifest_name
    )
    write_manifest(
        os.path.join(args.out, manifest_name),
        RunManifest(
            command="localize",
            args={
                "scenario": args.scenario, "measurements": args.measurements,
                "bounds": args.bounds,
                "formulation": args.formulation, "variant": args.variant,
                "coeff": args.coeff, "nu": args.nu, "sigma": args.sigma,
                "refine": args.refine, "tol": args.tol,
                "anchor_radius": args.anchor_radius, "enforce_ball": args.enforce_ball,
                "with_truth": args.with_truth, "out": args.out,
            },
            seeds={"scenario": scenario.seed},
            outputs=["report.json", "positions.csv"],
            elapsed_seconds=time.perf_counter() - t0,
        ),
    )
    status = report.solver_diag.get("status")
    print(f"status={status} mse={report.mse if report.mse is not None else 'n/a'}")
    return 0 if status == "optimal" else 3


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    noise = _parse_noise(args.noise)
    if args.paper_experiment:
        params = ScenarioParams(layout="paper")
    else:
        scenario = read_scenario(args.scenario)
        connectivity = scenario.connectivity
        params = ScenarioParams(
            layout="random",
            n_sensors=scenario.n_sensors,
            n_anchors=len(scenario.anchors),
            field=scenario.field,
            connectivity=connectivity,
            radius=scenario.radius,
        )
    config = _estimator_config(args)
    batch = run_batch(
        params, noise, config, args.trials, args.master_seed,
        anchor_priors_radius=args.anchor_radius if args.variant == "uncertain" else None,
        enforce_ball=args.enforce_ball,
    )

    os.makedirs(args.out_dir, exist_ok=True)
    manifest_name = "manifest.json"
    doc = batch.to_json_dict()
    doc["manifest"] = manifest_name
    write_json(os.path.join(args.out_dir, "batch.json"), doc)

    scatter_lines = ["# manifest: " + manifest_name, "trial,id,true_x,true_y,est_x,est_y,sq_error"]
    outputs = ["batch.json", "scatter.csv"]
    for trial in batch.trials:
        name = f"trial-{trial.index:03d}-positions.csv"
        truth = {k: trial.scenario.truth[k] for k in trial.report.positions}
        write_positions(
            os.path.join(args.out_dir, name),
            trial.report.positions,
            truth,
            manifest_ref=manifest_name,
        )
        outputs.append(name)
        for node in sorted(trial.report.positions):
            p = trial.report.positions[node]
            t = truth[node]
            scatter_lines.append(
                f"{trial.index},{node},{fmt(t.x)},{fmt(t.y)},{fmt(p.x)},{fmt(p.y)},"
                f"{fmt(p.distance_to(t) ** 2)}"
            )
    from .fileio import atomic_write_text

    atomic_write_text(os.path.join(args.out_dir, "scatter.csv"), "\n".join(scatter_lines) + "\n")
    write_manifest(
        os.path.join(args.out_dir, manifest_name),
        RunManifest(
            command="simulate",
            args={
                "paper_experiment": bool(args.paper_experiment), "scenario": args.scenario,
                "trials": args.trials, "master_seed": args.master_seed,
                "noise": args.noise, "formulation": args.formulation,
                "variant": args.variant, "coeff": args.coeff, "nu": args.nu,
                "sigma": args.sigma, "refine": args.refine, "tol": args.tol,
                "out_dir": args.out_dir,
            },
            seeds={
                "master": args.master_seed,
                "trials": [[t.seed, t.measure_seed] for t in batch.trials],
            },
            outputs=outputs,
            elapsed_seconds=time.perf_counter() - t0,
        ),
    )
    statuses = {t.solver_status for t in batch.trials}
    print(f"trials={len(batch.trials)} mean_mse={batch.mse_mean} statuses={sorted(statuses)}")
    return 0 if statuses <= {"optimal"} else 3


def _add_estimator_flags(sub) -> None:
    sub.add_argument("--formulation", choices=["fullsdp", "esdp"], default="esdp")
    sub.add_argument("--variant", choices=["known", "uncertain"], default="known")
    sub.add_argument("--coeff", choices=["paper", "midpoint"], default="midpoint")
    sub.add_argument("--nu", default="sigma:3", help="error cap: sigma:<k>, abs:<v>, or <v>")
    sub.add_argument("--sigma", type=float, default=0.01,
                     help="LOS noise std dev used to resolve sigma:<k> caps")
    sub.add_argument("--refine", action="store_true", help="gradient-descent polish")
    sub.add_argument("--tol", type=float, default=1e-7, help="solver gap/feasibility tolerance")
    sub.add_argument("--anchor-radius", type=float, default=0.0,
                     help="prior radius for the uncertain variant")
    sub.add_argument("--enforce-ball", action="store_true",
                     help="enforce the anchor uncertainty ball as a constraint")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlosloc",
        description="Sensor localization from mixed LOS/NLOS ranges via semidefinite relaxation",
    )
    parser.add_argument("--version", action="version", version=f"nlosloc {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("generate", help="write a scenario file")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--sensors", type=int, default=80)
    group = gen.add_mutually_exclusive_group(required=True)
    group.add_argument("--paper-layout", action="store_true",
                       help="18 fixed anchors in the 40 m x 40 m reference field")
    group.add_argument("--random-anchors", type=int, metavar="M",
                       help="M uniformly random anchors")
    gen.add_argument("--connectivity", default="full",
                     help="full | sensor-anchor-only | radius:<R>")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    bnd = subs.add_parser("bounds", help="write the per-edge bounds table")
    bnd.add_argument("--scenario", required=True)
    bnd.add_argument("--measurements", help="CSV of measurements; default: exact distances")
    bnd.add_argument("--nu", default="sigma:3")
    bnd.add_argument("--sigma", type=float, default=0.01)
    bnd.add_argument("--out", required=True)
    bnd.set_defaults(func=cmd_bounds)

    loc = subs.add_parser("localize", help="single-shot estimation from a scenario")
    loc.add_argument("--scenario", required=True)
    loc.add_argument("--measurements", help="CSV of measurements; default: exact distances")
    loc.add_argument("--bounds", help="precomputed bounds CSV; bypasses bound derivation")
    loc.add_argument("--with-truth", action="store_true",
                     help="score against the scenario's true positions")
    _add_estimator_flags(loc)
    loc.add_argument("--out", required=True, help="output directory")
    loc.set_defaults(func=cmd_localize)

    sim = subs.add_parser("simulate", help="seeded Monte Carlo batch")
    group = sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--paper-experiment", action="store_true",
                       help="80 sensors, 18 reference anchors, full connectivity")
    group.add_argument("--scenario", help="scenario file supplying layout parameters")
    sim.add_argument("--trials", type=int, default=1)
    sim.add_argument("--master-seed", type=int, default=0)
    sim.add_argument("--noise", default="sigma=0.01,bias=0:0.5,frac=1.0")
    _add_estimator_flags(sim)
    sim.add_argument("--out-dir", required=True)
    sim.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInputError, FileNotFoundError, PermissionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
