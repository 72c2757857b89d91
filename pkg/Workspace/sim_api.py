#!/usr/bin/env python3
"""
Swarm Payload Simulator - Run Service API
REST interface for queuing scenario runs in the background, with a SQLite
registry of runs, their metrics and acceptance verdicts
"""

import json
import os
import shutil
import sqlite3
import sys
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from fastapi import BackgroundTasks, FastAPI, HTTPException, Query
from pydantic import BaseModel
import uvicorn

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from sim_engine import run_scenario
from sim_types import (SCENARIO_PRESETS, ConfigError, SimConfig, SimError,
                       SlackEquilibriumError, load_config, setup_logging)
from swarm_analysis import (analytic_stability_roots, compute_mission_metrics, emit_outputs,
                            evaluate_acceptance)

load_dotenv('.env.sim')

# Configuration from environment variables
API_HOST = os.getenv('SIM_API_HOST', '0.0.0.0')
API_PORT = int(os.getenv('SIM_API_PORT', 8010))
DB_PATH = os.getenv('SIM_DB_PATH', '/tmp/swarm_sim_runs.db')
OUTPUT_DIR = os.getenv('SIM_OUTPUT_DIR', 'sim_output')
LOG_LEVEL = os.getenv('SIM_LOG_LEVEL', 'INFO')
LOG_FILE = os.getenv('SIM_LOG_FILE', '/tmp/swarm_sim_api.log')

setup_logging(LOG_LEVEL, LOG_FILE)
logger = logging.getLogger(__name__)

RUN_COLUMNS = ['id', 'preset', 'scenario', 'status', 'fixed_step', 'overrides', 'output_dir',
               'metrics', 'verdicts', 'error', 'created_at', 'finished_at']


# FastAPI models
class RunRequest(BaseModel):
    preset: Optional[str] = None
    overrides: Optional[Dict[str, Any]] = None
    fixed_step: bool = False


class RunRecord(BaseModel):
    id: int
    preset: Optional[str] = None
    scenario: str
    status: str
    fixed_step: bool
    overrides: Optional[Dict[str, Any]] = None
    output_dir: Optional[str] = None
    metrics: Optional[Dict[str, Any]] = None
    verdicts: Optional[Dict[str, bool]] = None
    error: Optional[str] = None
    created_at: str
    finished_at: Optional[str] = None


# Initialize FastAPI
app = FastAPI(
    title="Swarm Payload Simulator Run Service",
    description="REST API for running cable-slung payload transport scenarios with a SQLite run registry",
    version="1.0.0"
)


class DatabaseManager:
    """SQLite registry of simulation runs"""

    def __init__(self, db_path: str):
        self.db_path = db_path
        self.init_database()

    def init_database(self):
        """Initialize SQLite database with the runs table"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                preset TEXT,
                scenario TEXT NOT NULL,
                status TEXT NOT NULL,
                fixed_step INTEGER NOT NULL,
                overrides TEXT,
                output_dir TEXT,
                metrics TEXT,
                verdicts TEXT,
                error TEXT,
                created_at TEXT NOT NULL,
                finished_at TEXT
            )
        ''')
        cursor.execute('CREATE INDEX IF NOT EXISTS idx_runs_status ON runs(status)')

        conn.commit()
        conn.close()
        logger.info("✓ Run registry initialized")

    def create_run(self, preset: Optional[str], scenario: str, fixed_step: bool,
                   overrides: Optional[Dict[str, Any]]) -> int:
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute('''
            INSERT INTO runs (preset, scenario, status, fixed_step, overrides, created_at)
            VALUES (?, ?, ?, ?, ?, ?)
        ''', (preset, scenario, "queued", int(fixed_step),
              json.dumps(overrides) if overrides is not None else None,
              datetime.now().isoformat()))

        run_id = cursor.lastrowid
        conn.commit()
        conn.close()

        logger.info(f"✓ Run {run_id} queued ({scenario})")
        return run_id

    def update_run(self, run_id: int, **fields):
        """Update selected columns; dict values are stored as JSON"""
        if not fields:
            return
        assignments = ", ".join(f"{name} = ?" for name in fields)
        values = [json.dumps(value) if isinstance(value, dict) else value
                  for value in fields.values()]
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()
        cursor.execute(f"UPDATE runs SET {assignments} WHERE id = ?", (*values, run_id))
        conn.commit()
        conn.close()

    def _to_record(self, row) -> Dict[str, Any]:
        record = dict(zip(RUN_COLUMNS, row))
        for name in ('overrides', 'metrics', 'verdicts'):
            if record[name] is not None:
                record[name] = json.loads(record[name])
        record['fixed_step'] = bool(record['fixed_step'])
        return record

    def get_run(self, run_id: int) -> Optional[Dict[str, Any]]:
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()
        cursor.execute(f"SELECT {', '.join(RUN_COLUMNS)} FROM runs WHERE id = ?", (run_id,))
        row = cursor.fetchone()
        conn.close()
        return self._to_record(row) if row else None

    def get_runs(self, status: Optional[str] = None, limit: int = 100) -> List[Dict[str, Any]]:
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        query = f"SELECT {', '.join(RUN_COLUMNS)} FROM runs WHERE 1=1"
        params: List[Any] = []
        if status:
            query += " AND status = ?"
            params.append(status)
        query += " ORDER BY id DESC LIMIT ?"
        params.append(limit)

        cursor.execute(query, params)
        rows = cursor.fetchall()
        conn.close()
        return [self._to_record(row) for row in rows]

    def delete_run(self, run_id: int) -> bool:
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()
        cursor.execute("DELETE FROM runs WHERE id = ?", (run_id,))
        affected = cursor.rowcount
        conn.commit()
        conn.close()
        return affected > 0

    def get_run_counts(self) -> Dict[str, int]:
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()
        cursor.execute("SELECT status, COUNT(*) FROM runs GROUP BY status")
        counts = {status: count for status, count in cursor.fetchall()}
        conn.close()
        counts["total"] = sum(counts.values())
        return counts


# Global instances
db_manager = None


def execute_run(run_id: int, config: SimConfig, fixed_step: bool):
    """Background task: simulate, score and write outputs for one run"""
    out_dir = Path(OUTPUT_DIR) / f"run_{run_id:05d}"
    db_manager.update_run(run_id, status="running")
    try:
        log = run_scenario(config, fixed_step=fixed_step)
        metrics = compute_mission_metrics(log, config)
        verdicts = evaluate_acceptance(metrics, config)
        emit_outputs(log, metrics, verdicts, config, out_dir)
        db_manager.update_run(run_id, status="finished", output_dir=str(out_dir),
                              metrics=metrics.to_dict(), verdicts=verdicts,
                              finished_at=datetime.now().isoformat())
        logger.info(f"✓ Run {run_id} finished")
    except SimError as e:
        logger.error(f"✗ Run {run_id} failed: {e}")
        db_manager.update_run(run_id, status="failed", error=str(e),
                              finished_at=datetime.now().isoformat())
    except Exception as e:
        logger.error(f"✗ Run {run_id} crashed: {e}")
        db_manager.update_run(run_id, status="failed", error=f"internal error: {e}",
                              finished_at=datetime.now().isoformat())


# API Endpoints

@app.on_event("startup")
async def startup_event():
    """Initialize the run registry on startup"""
    global db_manager
    db_manager = DatabaseManager(DB_PATH)
    logger.info("✓ Swarm simulator run service started successfully")


@app.on_event("shutdown")
async def shutdown_event():
    logger.info("✓ Swarm simulator run service shutdown complete")


@app.get("/status")
async def get_status():
    """Service status with run counts"""
    counts = db_manager.get_run_counts() if db_manager else {"total": 0}
    return {
        "status": "running" if db_manager else "starting",
        "database": DB_PATH,
        "output_dir": OUTPUT_DIR,
        "run_counts": counts,
        "timestamp": datetime.now().isoformat()
    }


@app.get("/scenarios")
async def get_scenarios():
    """Bundled presets with their goal, attitude and events"""
    scenarios = []
    for name in sorted(SCENARIO_PRESETS):
        config = load_config(preset=name)
        scenario = config.scenario
        scenarios.append({
            "name": name,
            "goal": list(config.controller.goal),
            "desired_azimuth_deg": config.controller.desired_azimuth_deg,
            "desired_elevation_deg": config.controller.desired_elevation_deg,
            "controller_mode": config.controller.mode,
            "total_time": scenario.total_time,
            "obstacles": [list(obstacle) for obstacle in config.environment.obstacles],
            "wind": scenario.wind.model_dump() if scenario.wind else None,
            "failure": scenario.failure.model_dump() if scenario.failure else None,
        })
    return scenarios


@app.post("/runs", response_model=RunRecord)
async def create_run(request: RunRequest, background_tasks: BackgroundTasks):
    """Queue a scenario run"""
    if not db_manager:
        raise HTTPException(status_code=503, detail="Database not available")

    try:
        config = load_config(preset=request.preset, overrides=request.overrides)
    except ConfigError as e:
        raise HTTPException(status_code=400, detail=str(e))

    run_id = db_manager.create_run(request.preset, config.scenario.name, request.fixed_step,
                                   request.overrides)
    background_tasks.add_task(execute_run, run_id, config, request.fixed_step)
    return db_manager.get_run(run_id)


@app.get("/runs", response_model=List[RunRecord])
async def get_runs(status: Optional[str] = Query(None, description="queued, running, finished or failed"),
                   limit: int = Query(100, ge=1, le=1000)):
    """List runs, newest first"""
    if not db_manager:
        raise HTTPException(status_code=503, detail="Database not available")
    try:
        return db_manager.get_runs(status, limit)
    except Exception as e:
        logger.error(f"Database run query error: {e}")
        raise HTTPException(status_code=500, detail=f"Failed to fetch runs: {str(e)}")


@app.get("/runs/{run_id}", response_model=RunRecord)
async def get_run(run_id: int):
    if not db_manager:
        raise HTTPException(status_code=503, detail="Database not available")
    record = db_manager.get_run(run_id)
    if record is None:
        raise HTTPException(status_code=404, detail=f"Run {run_id} not found")
    return record


@app.delete("/runs/{run_id}")
async def delete_run(run_id: int):
    """Delete a run and its output directory"""
    if not db_manager:
        raise HTTPException(status_code=503, detail="Database not available")

    try:
        record = db_manager.get_run(run_id)
        if record is None or not db_manager.delete_run(run_id):
            raise HTTPException(status_code=404, detail=f"Run {run_id} not found")
        if record["output_dir"]:
            shutil.rmtree(record["output_dir"], ignore_errors=True)
        return {
            "success": True,
            "message": f"Run {run_id} deleted",
            "timestamp": datetime.now().isoformat()
        }
    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"Database run delete error: {e}")
        raise HTTPException(status_code=500, detail=f"Failed to delete run: {str(e)}")


@app.get("/stability")
async def get_stability(preset: Optional[str] = Query(None),
                        gamma: Optional[float] = Query(None, description="Equilibrium cable length (m)")):
    """Analytic hover stability roots; no simulation"""
    try:
        config = load_config(preset=preset)
        return analytic_stability_roots(config, gamma).to_dict()
    except (ConfigError, SlackEquilibriumError) as e:
        raise HTTPException(status_code=400, detail=str(e))


if __name__ == "__main__":
    print("="*60)
    print("Swarm Payload Simulator Run Service")
    print("="*60)
    print(f"API will be available at: http://localhost:{API_PORT}")
    print(f"Documentation: http://localhost:{API_PORT}/docs")
    print(f"Database: {DB_PATH}")
    print(f"Outputs: {OUTPUT_DIR}")
    print("="*60)

    uvicorn.run(app, host=API_HOST, port=API_PORT, log_level="info")
