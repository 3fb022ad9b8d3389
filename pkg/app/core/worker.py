import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from ..exceptions import ContractViolationError, LabError
from ..persistence import append_row
from .builder import ShootConfig, build_subcritical, build_supercritical
from .evolution import EvolveConfig, evolve
from .grid import FieldState
from .modulation import modulate
from .solitons import Regime, SolitonFamily, SolitonParams, elliptic_residual, soliton_state
from .spectrum import assemble_linearized, certify_spectrum

logger = logging.getLogger(__name__)

JOB_TIMING_FILE = "job_timings.csv"
JOB_TIMING_COLUMNS = ["timestamp", "job_type", "wait_time_ms", "execution_time_ms", "total_time_ms"]


class JobType(Enum):
    SOLITON = "soliton"
    EVOLVE = "evolve"
    MODULATE = "modulate"
    SPECTRUM = "spectrum"
    MULTISOLITON = "multisoliton"


@dataclass
class Job:
    type: JobType
    payload: dict
    enqueued_at: float = field(default_factory=time.time)


@dataclass
class JobResult:
    job: Job
    value: Any = None
    error: Optional[BaseException] = None
    wait_time: float = 0.0
    execution_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.error is None


def write_job_timing(timing_file: Path, job_type: JobType, wait_time: float, execution_time: float, timestamp: str):
    """Append job timing information to a CSV file."""
    try:
        append_row(timing_file, {
            "timestamp": timestamp,
            "job_type": job_type.name,
            "wait_time_ms": f"{wait_time * 1000:.2f}",
            "execution_time_ms": f"{execution_time * 1000:.2f}",
            "total_time_ms": f"{(wait_time + execution_time) * 1000:.2f}",
        }, JOB_TIMING_COLUMNS)
    except OSError as e:
        logger.error(f"Failed to write job timing to {timing_file}: {e}", exc_info=True)


def _require(job: Job, *keys: str):
    missing = [k for k in keys if k not in job.payload]
    if missing:
        raise ContractViolationError(f"{job.type.name} job missing {missing} in payload")


def _run(job: Job) -> Any:
    payload = job.payload
    if job.type == JobType.SOLITON:
        _require(job, "params", "grid")
        params: SolitonParams = payload["params"]
        state = soliton_state(params, payload["grid"], payload.get("t", 0.0))
        return state, elliptic_residual(params, payload["grid"])

    elif job.type == JobType.EVOLVE:
        _require(job, "initial", "config")
        initial: FieldState = payload["initial"]
        cfg: EvolveConfig = payload["config"]
        return evolve(initial, cfg)

    elif job.type == JobType.MODULATE:
        _require(job, "state", "family")
        return modulate(payload["state"], payload["family"], payload.get("mode"))

    elif job.type == JobType.SPECTRUM:
        _require(job, "p", "omega")
        assembly = assemble_linearized(payload["p"], payload["omega"], payload.get("grid"))
        return certify_spectrum(assembly, strict=payload.get("strict", True))

    elif job.type == JobType.MULTISOLITON:
        _require(job, "family", "t0", "final_times", "config")
        family: SolitonFamily = payload["family"]
        workers = payload.get("max_workers", 1)
        if family.regime == Regime.SUBCRITICAL:
            return build_subcritical(family, payload["t0"], payload["final_times"], payload["config"], workers)
        return build_supercritical(
            family,
            payload["t0"],
            payload["final_times"],
            payload["config"],
            payload.get("shoot_config") or ShootConfig(),
            workers,
            strict=payload.get("strict", True),
        )

    raise ContractViolationError(f"Unhandled job type: {job.type}")


def dispatch(job: Job, timing_file: Optional[Path] = None) -> JobResult:
    """Runs one job, recording its wait and execution time."""
    dispatch_start_time = time.time()
    wait_time = dispatch_start_time - job.enqueued_at
    timestamp = datetime.now().isoformat()
    logger.info(f"Dispatching job: {job.type.name} (waited {wait_time * 1000:.2f}ms)")
    result = JobResult(job, wait_time=wait_time)
    try:
        result.value = _run(job)
    except LabError as e:
        logger.error(f"Job {job.type.name} failed: {e}")
        result.error = e
    except Exception as e:
        logger.error(f"Error processing job {job.type.name}: {e}", exc_info=True)
        result.error = e
    result.execution_time = time.time() - dispatch_start_time
    if timing_file is not None:
        write_job_timing(timing_file, job.type, wait_time, result.execution_time, timestamp)
    if result.ok:
        logger.info(f"Job {job.type.name} executed in {result.execution_time * 1000:.2f}ms")
    return result


class JobRunner:
    """Runs independent jobs on a thread pool; results come back in submission order."""

    def __init__(self, max_workers: int = 1, timing_dir: Optional[Path] = None):
        self.max_workers = max(1, max_workers)
        self.timing_file = None if timing_dir is None else Path(timing_dir) / JOB_TIMING_FILE

    def make_job(self, job_type: JobType, payload: dict) -> Job:
        job = Job(type=job_type, payload=payload)
        logger.debug(f"Enqueuing job: {job.type.name}")
        return job

    def run(self, jobs: list[Job]) -> list[JobResult]:
        if not jobs:
            return []
        pending = len(jobs)
        if pending > 1:
            logger.info(f"Job runner has {pending} pending: {[j.type.name for j in jobs[:5]]}")
        with ThreadPoolExecutor(max_workers=self.max_workers, thread_name_prefix="LabWorker") as pool:
            return list(pool.map(lambda job: dispatch(job, self.timing_file), jobs))

    def run_one(self, job_type: JobType, payload: dict) -> JobResult:
        return dispatch(self.make_job(job_type, payload), self.timing_file)
