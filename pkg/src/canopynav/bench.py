"""Benchmark suites: the standardized mission matrix and its reports.

A suite is a list of scenario rows. Running one executes every flight,
writes each flight log to disk, then derives all reporting from those
logs alone, so `replay` on the emitted files reproduces the report
exactly. Flights may run in a worker pool; the reduce is ordered by
scenario index and flight index, so reports are byte-identical for any
worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import metrics
from .forest import ForestScene
from .mission import (
    OPTIMIZED,
    ORIGINAL,
    ForestSpec,
    NanInjection,
    ScenarioConfig,
    build_scene,
    config_from_dict,
    read_log,
    run_mission,
    variant_field_diff,
    write_log,
)

# The only fields allowed to differ between a paired Original/Optimized
# row: the row name and the four system switches.
PAIRED_ROW_FIELDS = frozenset(
    {
        "name",
        "variant.search_optimization",
        "variant.nan_recovery",
        "variant.gravity_init",
        "variant.forget_after",
    }
)

MEDIUM_FOREST = ForestSpec(
    density_per_ha=1040.0,
    branch_level="Medium",
    bounds=((0.0, -15.0), (60.0, 15.0)),
    seed=7,
    clearings=((0.0, 0.0), (60.0, 0.0)),
)
DIFFICULT_FOREST = ForestSpec(
    density_per_ha=2220.0,
    branch_level="High",
    bounds=((0.0, -15.0), (60.0, 15.0)),
    seed=11,
    clearings=((0.0, 0.0), (60.0, 0.0)),
)

# One leaf-disturbance and fault profile per forest: denser woods mean
# more foliage kicked up by the downwash and more chances for a bad
# corridor solve.
_CELLS = (
    ("medium", MEDIUM_FOREST, "Occasionally", 0.15, 1.0, 100),
    ("medium", MEDIUM_FOREST, "Occasionally", 0.15, 2.0, 200),
    ("difficult", DIFFICULT_FOREST, "Often", 0.15, 1.0, 300),
    ("difficult", DIFFICULT_FOREST, "Often", 0.15, 2.0, 400),
)


def default_suite(repeats: int = 15) -> list[ScenarioConfig]:
    """The standard matrix: two forests, two speeds, both variants."""
    rows = []
    for label, forest, leaves, nan_rate, v_target, seed in _CELLS:
        for variant in (ORIGINAL, OPTIMIZED):
            rows.append(
                ScenarioConfig(
                    name=f"{label}-{v_target:g}mps-{variant.name}",
                    forest=forest,
                    variant=variant,
                    v_target=v_target,
                    repeats=repeats,
                    seed=seed,
                    leaf_profile=leaves,
                    nan_injection=NanInjection(rate_per_min=nan_rate),
                )
            )
    return rows


def assert_paired_rows(suite: list[ScenarioConfig]) -> None:
    """Check that variant pairs differ only in the system switches.

    Rows sharing every non-variant field are treated as an intended
    Original-vs-Optimized comparison; anything else leaking into their
    diff (or a third row with the same profile) is a configuration bug
    that would silently invalidate the comparison.
    """
    groups: dict[str, list[ScenarioConfig]] = {}
    for cfg in suite:
        doc = dataclasses.asdict(cfg)
        doc.pop("name")
        doc.pop("variant")
        groups.setdefault(json.dumps(doc, sort_keys=True), []).append(cfg)
    for rows in groups.values():
        if len(rows) == 1:
            continue
        if len(rows) > 2:
            names = [r.name for r in rows]
            raise ValueError(f"more than two rows share one mission profile: {names}")
        a, b = rows
        if a.variant == b.variant:
            raise ValueError(
                f"rows {a.name!r} and {b.name!r} duplicate the same variant"
            )
        diff = set(variant_field_diff(a, b))
        if diff - PAIRED_ROW_FIELDS:
            raise ValueError(
                f"paired rows {a.name!r}/{b.name!r} differ beyond the variant "
                f"switches: {sorted(diff - PAIRED_ROW_FIELDS)}"
            )


def flight_log_path(out_dir: str | Path, scenario_name: str, flight_index: int) -> Path:
    return Path(out_dir) / "logs" / scenario_name / f"flight_{flight_index:02d}.jsonl"


_SCENES: dict[ForestSpec, ForestScene] = {}


def _run_one(job: tuple[ScenarioConfig, int, str]) -> str:
    """Worker body: fly one mission and write its log. Returns the path."""
    cfg, flight_index, log_path = job
    scene = _SCENES.get(cfg.forest)
    if scene is None:
        scene = _SCENES.setdefault(cfg.forest, build_scene(cfg.forest))
    records = run_mission(cfg, flight_index, scene)
    write_log(records, log_path)
    return log_path


def run_suite(
    suite: list[ScenarioConfig], out_dir: str | Path, workers: int | None = None
) -> dict:
    """Execute a suite and emit logs plus JSON/CSV reports under out_dir.

    Mission failures are data, not errors; this returns the report dict
    regardless of how the flights went.
    """
    if not suite:
        raise ValueError("empty suite")
    assert_paired_rows(suite)
    out = Path(out_dir)
    jobs = [
        (cfg, j, str(flight_log_path(out, cfg.name, j)))
        for cfg in suite
        for j in range(cfg.repeats)
    ]
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(jobs) <= 1:
        for job in jobs:
            _run_one(job)
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            list(pool.map(_run_one, jobs, chunksize=1))
    report = assemble_report(suite, out)
    write_report(report, out)
    return report


def assemble_report(suite: list[ScenarioConfig], out_dir: str | Path) -> dict:
    """Derive the full report from the logs on disk, in suite order."""
    rows = []
    flights = []
    for cfg in suite:
        per_flight = []
        for j in range(cfg.repeats):
            records = read_log(flight_log_path(out_dir, cfg.name, j))
            m = metrics.compute(records)
            per_flight.append(m)
            flights.append({"scenario": cfg.name, "flight": j, **m.to_dict()})
        row = {
            "scenario": cfg.name,
            "variant": cfg.variant.name,
            "density_per_ha": cfg.forest.density_per_ha,
            "branch_level": cfg.forest.branch_level,
            "v_target": cfg.v_target,
            "leaf_profile": cfg.leaf_profile,
        }
        row.update(metrics.aggregate(per_flight))
        rows.append(row)
    return {
        "suite": [json.loads(cfg.to_json()) for cfg in suite],
        "rows": rows,
        "flights": flights,
    }


_ROW_COLUMNS = (
    "scenario", "variant", "density_per_ha", "branch_level", "v_target",
    "leaf_profile", "flights", "successes", "success_rate",
    "mean_t_true", "mean_v_p2p", "mean_v_true", "mean_t_extra",
    "collisions_total", "collisions_in_failed", "leaf_dodges_total",
    "emergency_stops_total", "emergency_stop_seconds_total",
    "failures_leaves", "failures_nan_sfc", "failures_unstable", "failures_tree",
)


def _csv_cell(value) -> object:
    return "" if value is None else value


def write_report(report: dict, out_dir: str | Path) -> None:
    """Write report.json plus the aggregate and per-flight CSV tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")

    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_ROW_COLUMNS)
        for row in report["rows"]:
            flat = dict(row)
            for cause, count in row["failure_causes"].items():
                flat[f"failures_{cause.lower()}"] = count
            writer.writerow([_csv_cell(flat.get(col)) for col in _ROW_COLUMNS])

    with open(out / "flights.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("scenario",) + metrics.FLIGHT_CSV_COLUMNS)
        for rec in report["flights"]:
            m = metrics.MissionMetrics(
                **{k: v for k, v in rec.items() if k not in ("scenario", "flight")}
            )
            row = metrics.flight_csv_row(rec["flight"], m)
            writer.writerow([rec["scenario"]] + [_csv_cell(v) for v in row])


def replay_report(out_dir: str | Path) -> dict:
    """Rebuild the report purely from the logs stored under out_dir.

    The suite definition is read back from report.json, so this needs a
    directory produced by run_suite. Useful for re-deriving metrics after
    the fact without re-flying anything.
    """
    out = Path(out_dir)
    with open(out / "report.json") as fh:
        stored = json.load(fh)
    suite = [config_from_dict(doc) for doc in stored["suite"]]
    return assemble_report(suite, out)


def suite_from_json(text: str) -> list[ScenarioConfig]:
    """Parse a suite file: either a list of configs or {"suite": [...]}."""
    doc = json.loads(text)
    if isinstance(doc, dict):
        doc = doc["suite"]
    if not isinstance(doc, list):
        raise ValueError("suite file must hold a list of scenario configs")
    return [config_from_dict(item) for item in doc]


def suite_to_json(suite: list[ScenarioConfig]) -> str:
    return json.dumps(
        {"suite": [json.loads(cfg.to_json()) for cfg in suite]},
        sort_keys=True,
        indent=2,
    ) + "\n"
