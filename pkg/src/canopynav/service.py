"""HTTP face of the flight stack.

Every capability the command line exposes goes through this app, so the
CLI, tests, and any remote caller all exercise one code path. Endpoints
are synchronous: a benchmark request blocks until the suite lands, which
is the behavior a batch driver wants. Run it with uvicorn for a real
server, or mount it in-process through httpx's ASGI transport.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from . import __version__, bench, metrics, mission
from .forest import ForestScene
from .mission import ForestSpec, ScenarioConfig, config_from_dict


class RunRequest(BaseModel):
    """One mission: a full scenario config document plus a flight index."""

    model_config = ConfigDict(extra="forbid")

    config: dict
    flight: int = Field(default=0, ge=0)
    log_path: str | None = None
    include_log: bool = False


class BenchRequest(BaseModel):
    """A suite run. Omitting `suite` selects the standard benchmark matrix."""

    model_config = ConfigDict(extra="forbid")

    out_dir: str
    suite: list[dict] | None = None
    repeats: int | None = Field(default=None, ge=1)
    workers: int | None = Field(default=None, ge=1)


class ReplayRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    out_dir: str


class GenForestRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    forest: dict
    out_path: str | None = None


def _parse_config(doc: dict) -> ScenarioConfig:
    try:
        return config_from_dict(doc)
    except (TypeError, ValueError, KeyError) as exc:
        raise HTTPException(status_code=422, detail=f"bad scenario config: {exc}")


def create_app() -> FastAPI:
    app = FastAPI(title="canopynav", version=__version__)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/run")
    def run(req: RunRequest) -> dict:
        cfg = _parse_config(req.config)
        records = mission.run_mission(cfg, req.flight)
        m = metrics.compute(records)
        out = {
            "outcome": records[-1]["outcome"],
            "metrics": m.to_dict(),
            "failure_cause": None if m.success else metrics.classify_failure(records),
        }
        if req.log_path is not None:
            mission.write_log(records, req.log_path)
            out["log_path"] = req.log_path
        if req.include_log:
            out["log"] = records
        return out

    @app.post("/bench")
    def run_bench(req: BenchRequest) -> dict:
        if req.suite is not None:
            if req.repeats is not None:
                raise HTTPException(
                    status_code=422,
                    detail="repeats applies to the default suite; explicit suites carry their own",
                )
            suite = [_parse_config(doc) for doc in req.suite]
        else:
            suite = bench.default_suite(req.repeats) if req.repeats else bench.default_suite()
        try:
            bench.assert_paired_rows(suite)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return bench.run_suite(suite, req.out_dir, workers=req.workers)

    @app.post("/replay")
    def replay(req: ReplayRequest) -> dict:
        out = Path(req.out_dir)
        if not (out / "report.json").exists():
            raise HTTPException(status_code=404, detail=f"no report.json under {req.out_dir}")
        with open(out / "report.json") as fh:
            stored = json.load(fh)
        rebuilt = bench.replay_report(out)
        return {"report": rebuilt, "matches_stored": rebuilt == stored}

    @app.post("/gen-forest")
    def gen_forest(req: GenForestRequest) -> dict:
        try:
            spec = ForestSpec(**{
                k: bench.respec_tuples(k, v) for k, v in req.forest.items()
            })
            scene = mission.build_scene(spec)
        except (TypeError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=f"bad forest spec: {exc}")
        doc = scene.to_json()
        out = {
            "trees": len(scene.trees),
            "capsules": int(scene.capsules().count),
            "realized_density": scene.realized_density,
            "complexity": scene.complexity,
        }
        if req.out_path is not None:
            path = Path(req.out_path)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(doc)
            out["out_path"] = req.out_path
        else:
            out["scene"] = json.loads(doc)
        return out

    return app


app = create_app()
