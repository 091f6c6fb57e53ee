"""Evaluation fabric: objectives, a master-worker pool, and record replay.

Objectives are deterministic functions of (configuration, budget, seed). Two
families make the system runnable without training anything: a synthetic
learning-curve objective with published constants, and replay of frozen
per-configuration learning-curve records.
"""

from __future__ import annotations

import hashlib
import json
import math
import queue
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .configspace import ConfigurationSpace, SpaceError, parse_space

__all__ = [
    "Job", "JobResult", "Objective", "WorkerKilled", "WorkerPool",
    "SyntheticCurveObjective", "SYNTHETIC_CONSTANTS", "synthetic_space",
    "ReplayBundle", "ReplayObjective", "load_replay", "ReplayError",
    "SocketObjective", "ObjectiveServer", "SleepObjective",
]


@dataclass(frozen=True)
class Job:
    job_id: int
    configuration: dict[str, Any]
    budget: int
    seed: int


@dataclass(frozen=True)
class JobResult:
    job_id: int
    loss: float
    status: str = "ok"  # 'ok' | 'crashed'
    learning_curve: list[float] | None = None
    predictions: np.ndarray | None = None
    wall_time: float = 0.0


class Objective:
    """Deterministic evaluation backend; subclasses override _evaluate."""

    space: ConfigurationSpace

    def evaluate(self, job: Job) -> JobResult:
        start = time.monotonic()
        try:
            result = self._evaluate(job)
        except WorkerKilled:
            raise
        except Exception:
            return JobResult(job_id=job.job_id, loss=1.0, status="crashed",
                             wall_time=time.monotonic() - start)
        return result

    def _evaluate(self, job: Job) -> JobResult:
        raise NotImplementedError


# -- synthetic learning-curve objective --------------------------------------

# Published constants: two Gaussian wells on the unit-cube encoding define the
# asymptotic loss surface; the decay exponent is affine in the first coordinate.
SYNTHETIC_CONSTANTS = {
    "base": 0.5,
    "well1_center": (0.2, 0.7, 0.4),
    "well1_depth": 0.45,
    "well1_width": 0.12,
    "well2_center": (0.8, 0.2, 0.6),
    "well2_depth": 0.3,
    "well2_width": 0.1,
    "f0": 0.9,
    "gamma_lo": 0.3,
    "gamma_hi": 1.5,
    "noise_scale": 0.01,
    "active_dims": 3,  # wells live in the leading coordinates only
}

_SYNTHETIC_SPACE_DOC = {
    "name": "synthetic3",
    "hyperparameters": [
        {"name": "x1", "type": "float", "range": [0.0, 1.0], "default": 0.5},
        {"name": "x2", "type": "float", "range": [0.0, 1.0], "default": 0.5},
        {"name": "x3", "type": "float", "range": [0.0, 1.0], "default": 0.5},
    ],
}


def synthetic_space() -> ConfigurationSpace:
    return parse_space(_SYNTHETIC_SPACE_DOC)


def _stable_seed(*parts: Any) -> int:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


class SyntheticCurveObjective(Objective):
    """loss(c, b) = f_inf(c) + (f0 - f_inf(c)) * b^-gamma(c) + noise.

    f_inf is a two-well Gaussian surface over the unit-cube encoding; gamma
    varies affinely with the first coordinate. Deterministic given
    (configuration, budget, seed).
    """

    def __init__(self, noise: bool = True, dataset_seed: int = 0,
                 space: ConfigurationSpace | None = None) -> None:
        self.space = space if space is not None else synthetic_space()
        self.noise = noise
        self.dataset_seed = dataset_seed
        self._cache: dict[str, tuple[float, float]] = {}
        c = SYNTHETIC_CONSTANTS
        rng = np.random.default_rng(dataset_seed)
        d = min(len(self.space), int(c["active_dims"]))
        self._n_active = d
        if dataset_seed == 0:
            self._c1 = np.resize(np.array(c["well1_center"]), d)
            self._c2 = np.resize(np.array(c["well2_center"]), d)
        else:
            self._c1 = rng.uniform(0.1, 0.9, size=d)
            self._c2 = rng.uniform(0.1, 0.9, size=d)

    def asymptotic_loss(self, config: Mapping[str, Any]) -> float:
        z = self.space.to_unit_cube(config)[:self._n_active]
        c = SYNTHETIC_CONSTANTS
        w1 = c["well1_depth"] * math.exp(
            -float(np.sum((z - self._c1) ** 2)) / (2 * c["well1_width"] ** 2))
        w2 = c["well2_depth"] * math.exp(
            -float(np.sum((z - self._c2) ** 2)) / (2 * c["well2_width"] ** 2))
        return c["base"] - w1 - w2

    def optimum(self) -> dict[str, Any]:
        vec = np.full(len(self.space), 0.5)
        vec[:self._n_active] = self._c1
        return self.space.from_unit_cube(vec)

    def decay_exponent(self, config: Mapping[str, Any]) -> float:
        z = self.space.to_unit_cube(config)
        c = SYNTHETIC_CONSTANTS
        return c["gamma_lo"] + (c["gamma_hi"] - c["gamma_lo"]) * float(z[0])

    def _features(self, config: Mapping[str, Any]) -> tuple[str, float, float]:
        key = self.space.config_key(config)
        feat = self._cache.get(key)
        if feat is None:
            feat = (self.asymptotic_loss(config), self.decay_exponent(config))
            if len(self._cache) < 100_000:
                self._cache[key] = feat
        return (key, *feat)

    def curve(self, config: Mapping[str, Any], budget: int, seed: int) -> list[float]:
        c = SYNTHETIC_CONSTANTS
        key, f_inf, gamma = self._features(config)
        epochs = np.arange(1, budget + 1, dtype=float)
        losses = f_inf + (c["f0"] - f_inf) * epochs ** (-gamma)
        if self.noise:
            rng = np.random.default_rng(
                _stable_seed("synth", self.dataset_seed, key, seed))
            losses = losses + c["noise_scale"] * rng.standard_normal(budget)
        return losses.tolist()

    def loss_at(self, config: Mapping[str, Any], epoch: int, seed: int) -> float:
        return self.curve(config, epoch, seed)[-1]

    def _evaluate(self, job: Job) -> JobResult:
        curve = self.curve(job.configuration, job.budget, job.seed)
        return JobResult(job_id=job.job_id, loss=curve[-1], learning_curve=curve,
                         wall_time=float(job.budget))


# -- replay of frozen learning-curve records ---------------------------------

class ReplayError(ValueError):
    """Invalid replay bundle or unrecorded configuration in strict mode."""


@dataclass
class ReplayBundle:
    dataset_name: str
    space: ConfigurationSpace
    b_max: int
    n_validation_instances: int
    n_classes: int
    # (config key) -> list of record dicts (one per seed), each holding
    # val/train/test curves and optionally per-budget adaptive curves.
    records: dict[str, list[dict[str, Any]]] = field(default_factory=dict)
    configs: dict[str, dict[str, Any]] = field(default_factory=dict)

    def record_for(self, config: Mapping[str, Any], seed: int) -> dict[str, Any]:
        key = self.space.config_key(config)
        entries = self.records.get(key)
        if not entries:
            raise ReplayError(f"configuration not recorded: {key}")
        return entries[seed % len(entries)]


def load_replay(path: str) -> ReplayBundle:
    """Load and validate a replay bundle from its JSON schema."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for fld in ("dataset", "b_max", "records"):
        if fld not in doc:
            raise ReplayError(f"replay bundle missing field {fld!r}")
    if "space_inline" in doc:
        space = parse_space(doc["space_inline"])
    else:
        import os
        space_path = doc["space"]
        if not os.path.isabs(space_path):
            space_path = os.path.join(os.path.dirname(os.path.abspath(path)), space_path)
        with open(space_path, encoding="utf-8") as fh:
            space = parse_space(fh.read())
    b_max = int(doc["b_max"])
    if not doc["records"]:
        raise ReplayError("replay bundle has no records")
    bundle = ReplayBundle(
        dataset_name=doc["dataset"], space=space, b_max=b_max,
        n_validation_instances=int(doc.get("n_validation_instances", 200)),
        n_classes=int(doc.get("n_classes", 2)))
    for rec in doc["records"]:
        config = rec["config"]
        try:
            space.validate_config(config)
        except SpaceError as exc:
            raise ReplayError(f"invalid recorded configuration: {exc}") from exc
        for curve_name in ("val_curve", "train_curve", "test_curve"):
            curve = rec.get(curve_name)
            if curve is None:
                continue
            if len(curve) < b_max:
                raise ReplayError(
                    f"{curve_name} too short: {len(curve)} < b_max={b_max}")
            if any(not (0.0 <= a <= 1.0) for a in curve):
                raise ReplayError(f"{curve_name} accuracy out of [0, 1]")
        if "val_curve" not in rec:
            raise ReplayError("record missing val_curve")
        key = space.config_key(config)
        bundle.records.setdefault(key, []).append(rec)
        bundle.configs[key] = dict(config)
    return bundle


class ReplayObjective(Objective):
    """Replays recorded validation curves; loss = 1 - accuracy at the budget.

    strict mode errors on unrecorded configurations; surrogate mode answers
    with the nearest recorded configuration in the unit-cube encoding.
    """

    def __init__(self, bundle: ReplayBundle, mode: str = "strict",
                 emit_predictions: bool = False) -> None:
        if mode not in ("strict", "surrogate"):
            raise ValueError(f"unknown replay mode {mode!r}")
        self.bundle = bundle
        self.space = bundle.space
        self.mode = mode
        self.emit_predictions = emit_predictions
        self._keys = sorted(bundle.configs)
        self._encoded = np.array(
            [self.space.to_unit_cube(bundle.configs[k]) for k in self._keys])
        # True labels synthesized once per dataset, deterministically.
        rng = np.random.default_rng(_stable_seed("labels", bundle.dataset_name))
        self.true_labels = rng.integers(
            bundle.n_classes, size=bundle.n_validation_instances)

    def _lookup(self, config: Mapping[str, Any], seed: int) -> dict[str, Any]:
        key = self.space.config_key(config)
        entries = self.bundle.records.get(key)
        if entries:
            return entries[seed % len(entries)]
        if self.mode == "strict":
            raise ReplayError(f"configuration not recorded: {key}")
        vec = self.space.to_unit_cube(config)
        idx = int(np.argmin(np.sum((self._encoded - vec) ** 2, axis=1)))
        entries = self.bundle.records[self._keys[idx]]
        return entries[seed % len(entries)]

    def accuracy_at(self, config: Mapping[str, Any], budget: int, seed: int,
                    curve: str = "val_curve") -> float:
        rec = self._lookup(config, seed)
        return float(rec[curve][budget - 1])

    def _synthesize_predictions(self, accuracy: float, config_key: str,
                                budget: int, seed: int) -> np.ndarray:
        n = self.bundle.n_validation_instances
        k = self.bundle.n_classes
        rng = np.random.default_rng(_stable_seed("preds", config_key, budget, seed))
        n_correct = int(round(accuracy * n))
        correct = np.zeros(n, dtype=bool)
        correct[rng.permutation(n)[:n_correct]] = True
        peak = 0.8
        probs = np.full((n, k), (1.0 - peak) / max(k - 1, 1))
        for i in range(n):
            if correct[i]:
                cls = int(self.true_labels[i])
            else:
                others = [c for c in range(k) if c != self.true_labels[i]]
                cls = others[int(rng.integers(len(others)))] if others else 0
            probs[i, cls] = peak
        if k == 1:
            probs[:] = 1.0
        return probs

    def _evaluate(self, job: Job) -> JobResult:
        rec = self._lookup(job.configuration, job.seed)
        curve_acc = rec["val_curve"][:job.budget]
        loss = 1.0 - float(curve_acc[job.budget - 1])
        predictions = None
        if self.emit_predictions:
            key = self.space.config_key(job.configuration)
            predictions = self._synthesize_predictions(
                float(curve_acc[job.budget - 1]), key, job.budget, job.seed)
        return JobResult(job_id=job.job_id, loss=loss,
                         learning_curve=[1.0 - a for a in curve_acc],
                         predictions=predictions, wall_time=float(job.budget))


class SleepObjective(Objective):
    """Fixed-cost objective for scheduling/throughput harnesses."""

    def __init__(self, duration: float, space: ConfigurationSpace | None = None) -> None:
        self.space = space if space is not None else synthetic_space()
        self.duration = duration

    def _evaluate(self, job: Job) -> JobResult:
        time.sleep(self.duration)
        return JobResult(job_id=job.job_id, loss=0.5, wall_time=self.duration)


# -- master-worker pool ------------------------------------------------------

class WorkerKilled(RuntimeError):
    """Raised inside a worker to simulate its death; the job is re-queued."""


_SENTINEL = object()


class WorkerPool:
    """Thread-backed worker pool pulling jobs from a shared queue.

    Workers are stateless; the only shared medium is the job/result channel.
    A dying worker's job is re-queued once, then marked crashed.
    """

    def __init__(self, objective: Objective, n_workers: int = 1) -> None:
        if n_workers < 1:
            raise ValueError("n_workers must be >= 1")
        self.objective = objective
        self.n_workers = n_workers

    def run_jobs(self, jobs: Sequence[Job]) -> list[JobResult]:
        """Evaluate all jobs; results returned in job submission order."""
        if self.n_workers == 1:
            return [self._attempt(job) for job in jobs]
        job_q: queue.Queue = queue.Queue()
        result_q: queue.Queue = queue.Queue()
        for job in jobs:
            job_q.put((job, 0))

        def worker() -> None:
            while True:
                try:
                    item = job_q.get_nowait()
                except queue.Empty:
                    return
                job, attempts = item
                try:
                    result = self.objective.evaluate(job)
                except WorkerKilled:
                    if attempts == 0:
                        job_q.put((job, 1))
                    else:
                        result_q.put(JobResult(job_id=job.job_id, loss=1.0,
                                               status="crashed"))
                    return  # worker dies
                result_q.put(result)

        threads = [threading.Thread(target=worker, daemon=True)
                   for _ in range(self.n_workers)]
        for t in threads:
            t.start()
        results: dict[int, JobResult] = {}
        pending = len(jobs)
        while pending > 0:
            if not any(t.is_alive() for t in threads) and result_q.empty():
                # all workers died with jobs still queued: respawn one worker
                t = threading.Thread(target=worker, daemon=True)
                threads.append(t)
                t.start()
                continue
            try:
                res = result_q.get(timeout=0.05)
            except queue.Empty:
                continue
            results[res.job_id] = res
            pending -= 1
        for t in threads:
            t.join(timeout=1.0)
        return [results[job.job_id] for job in jobs]

    def _attempt(self, job: Job) -> JobResult:
        try:
            return self.objective.evaluate(job)
        except WorkerKilled:
            try:
                return self.objective.evaluate(job)  # single re-queue
            except WorkerKilled:
                return JobResult(job_id=job.job_id, loss=1.0, status="crashed")


# -- socket worker protocol --------------------------------------------------
# One JSON object per line. Request: {job_id, config, budget, seed}.
# Response: {job_id, loss, status, curve?}.

class ObjectiveServer:
    """Hosts an objective over a local TCP socket for external workers."""

    def __init__(self, objective: Objective, host: str = "127.0.0.1",
                 port: int = 0) -> None:
        obj = objective

        class Handler(socketserver.StreamRequestHandler):
            def handle(self) -> None:
                for line in self.rfile:
                    req = json.loads(line)
                    job = Job(job_id=req["job_id"], configuration=req["config"],
                              budget=req["budget"], seed=req.get("seed", 0))
                    result = obj.evaluate(job)
                    resp = {"job_id": result.job_id, "loss": result.loss,
                            "status": result.status}
                    if result.learning_curve is not None:
                        resp["curve"] = result.learning_curve
                    self.wfile.write((json.dumps(resp) + "\n").encode())
                    self.wfile.flush()

        self._server = socketserver.ThreadingTCPServer((host, port), Handler)
        self._server.daemon_threads = True
        self.address = self._server.server_address
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def __enter__(self) -> "ObjectiveServer":
        self._thread.start()
        return self

    def __exit__(self, *exc: Any) -> None:
        self._server.shutdown()
        self._server.server_close()


class SocketObjective(Objective):
    """Evaluates jobs by delegating to a remote objective over the wire."""

    def __init__(self, address: tuple[str, int],
                 space: ConfigurationSpace) -> None:
        self.address = address
        self.space = space
        self._lock = threading.Lock()
        self._sock: socket.socket | None = None
        self._reader = None

    def _connect(self) -> None:
        self._sock = socket.create_connection(self.address)
        self._reader = self._sock.makefile("rb")

    def _evaluate(self, job: Job) -> JobResult:
        with self._lock:
            if self._sock is None:
                self._connect()
            req = {"job_id": job.job_id, "config": job.configuration,
                   "budget": job.budget, "seed": job.seed}
            assert self._sock is not None and self._reader is not None
            self._sock.sendall((json.dumps(req) + "\n").encode())
            line = self._reader.readline()
        if not line:
            raise ConnectionError("objective server closed the connection")
        resp = json.loads(line)
        return JobResult(job_id=resp["job_id"], loss=resp["loss"],
                         status=resp.get("status", "ok"),
                         learning_curve=resp.get("curve"))

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None
