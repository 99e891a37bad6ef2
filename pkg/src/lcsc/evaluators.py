"""Fitness evaluators: map merged weights to a scalar where lower is better.

Evaluators are plain callables ``TensorMap -> float``. Three kinds ship:

* ``analytic_quadratic``: 0.5 * curvature * ||weights - target||^2, summed
  over all tensors. Exact, fast, used throughout the tests and simulations.
* ``external_process``: runs a user command on a freshly written container
  file and parses the final stdout line as JSON ``{"metric": <finite real>}``.
  This is the integration point for real samplers and scorers.
* ``trajectory_replay``: replays scores recorded from a previous run, keyed
  by a digest of the exact weight bytes. Lets search plumbing be exercised
  hermetically without recomputing an expensive metric.

External command contract: the command is an argv template in which every
occurrence of ``{checkpoint}`` is replaced by the container path. The process
must exit 0 and print, as its last stdout line, a JSON object with a finite
``metric``. Runs are capped at 3600 seconds by default; the
``LCSC_EVAL_TIMEOUT_SECS`` environment variable overrides any configured
timeout. Temporary containers get unique names (a process-wide counter), so
concurrent evaluations never collide, and are deleted even on failure.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import shlex
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .containers import TensorMap, encode_tensor_map, load_checkpoint

__all__ = [
    "EvaluatorError",
    "QuadraticEvaluator",
    "ExternalEvaluator",
    "ReplayEvaluator",
    "EvaluatorHandle",
    "weights_digest",
    "DEFAULT_TIMEOUT_SECS",
    "TIMEOUT_ENV_VAR",
]

DEFAULT_TIMEOUT_SECS = 3600.0
TIMEOUT_ENV_VAR = "LCSC_EVAL_TIMEOUT_SECS"


class EvaluatorError(RuntimeError):
    """An evaluation could not produce a finite metric."""

    def __init__(self, message: str, stderr: str | None = None, returncode: int | None = None):
        super().__init__(message)
        self.stderr = stderr
        self.returncode = returncode


def weights_digest(weights: TensorMap) -> str:
    """Hex digest of the canonical container encoding of the weights."""
    return hashlib.sha256(encode_tensor_map(weights)).hexdigest()


class QuadraticEvaluator:
    """0.5 * curvature * squared distance to a target TensorMap."""

    def __init__(self, target: TensorMap, curvature: float = 1.0):
        if curvature <= 0:
            raise ValueError(f"curvature must be positive, got {curvature}")
        self.target = target
        self.curvature = float(curvature)

    def __call__(self, weights: TensorMap) -> float:
        if weights.schema() != self.target.schema():
            raise EvaluatorError(
                "weights do not match the quadratic target schema: "
                f"{weights.names} vs {self.target.names}"
            )
        total = 0.0
        for name in weights.names:
            diff = weights[name].astype(np.float64) - self.target[name].astype(np.float64)
            total += float(np.sum(diff * diff))
        return 0.5 * self.curvature * total


def _resolve_timeout(configured: float | None) -> float:
    env = os.environ.get(TIMEOUT_ENV_VAR)
    if env is not None:
        try:
            return float(env)
        except ValueError as exc:
            raise EvaluatorError(f"{TIMEOUT_ENV_VAR} is not a number: {env!r}") from exc
    if configured is not None:
        return configured
    return DEFAULT_TIMEOUT_SECS


class ExternalEvaluator:
    """Score weights by running an external command on a container file."""

    _counter = itertools.count()
    _counter_lock = threading.Lock()

    def __init__(self, cmd, workdir, timeout: float | None = None):
        if isinstance(cmd, str):
            cmd = shlex.split(cmd)
        self.cmd = [str(c) for c in cmd]
        if not any("{checkpoint}" in c for c in self.cmd):
            raise ValueError("external command must contain a {checkpoint} placeholder")
        self.workdir = Path(workdir)
        self.timeout = timeout

    def _next_path(self) -> Path:
        with self._counter_lock:
            n = next(self._counter)
        return self.workdir / f"eval-{n:08d}.st"

    def __call__(self, weights: TensorMap) -> float:
        self.workdir.mkdir(parents=True, exist_ok=True)
        path = self._next_path()
        path.write_bytes(encode_tensor_map(weights))
        try:
            argv = [c.replace("{checkpoint}", str(path)) for c in self.cmd]
            timeout = _resolve_timeout(self.timeout)
            try:
                proc = subprocess.run(
                    argv, capture_output=True, text=True, timeout=timeout
                )
            except subprocess.TimeoutExpired as exc:
                raise EvaluatorError(
                    f"evaluator command timed out after {timeout}s: {argv}"
                ) from exc
            except OSError as exc:
                raise EvaluatorError(f"evaluator command failed to start: {exc}") from exc
            if proc.returncode != 0:
                raise EvaluatorError(
                    f"evaluator command exited {proc.returncode}: {argv}",
                    stderr=proc.stderr,
                    returncode=proc.returncode,
                )
            lines = [line for line in proc.stdout.splitlines() if line.strip()]
            if not lines:
                raise EvaluatorError("evaluator produced no stdout", stderr=proc.stderr)
            try:
                payload = json.loads(lines[-1])
            except json.JSONDecodeError as exc:
                raise EvaluatorError(
                    f"final stdout line is not JSON: {lines[-1]!r}", stderr=proc.stderr
                ) from exc
            if not isinstance(payload, dict) or "metric" not in payload:
                raise EvaluatorError(f"evaluator output missing 'metric': {payload!r}")
            metric = payload["metric"]
            if not isinstance(metric, (int, float)) or isinstance(metric, bool) or not math.isfinite(metric):
                raise EvaluatorError(f"evaluator metric is not a finite number: {metric!r}")
            return float(metric)
        finally:
            path.unlink(missing_ok=True)


class ReplayEvaluator:
    """Replay recorded metrics keyed by a digest of the exact weights."""

    def __init__(self, table: dict[str, float]):
        self.table = dict(table)

    @classmethod
    def recording(cls, inner: Callable[[TensorMap], float]) -> "ReplayEvaluator":
        """A replay table that fills itself by delegating to ``inner``."""
        replay = cls({})
        replay._inner = inner
        return replay

    _inner: Callable[[TensorMap], float] | None = None

    def __call__(self, weights: TensorMap) -> float:
        digest = weights_digest(weights)
        if digest in self.table:
            return self.table[digest]
        if self._inner is not None:
            score = float(self._inner(weights))
            self.table[digest] = score
            return score
        raise EvaluatorError(f"no recorded metric for weights digest {digest[:12]}...")

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({"format_version": 1, "metrics": self.table}, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ReplayEvaluator":
        raw = json.loads(Path(path).read_text())
        return cls(raw["metrics"])


@dataclass(frozen=True)
class EvaluatorHandle:
    """Serializable evaluator description, as it appears in run configs."""

    kind: str
    params: dict

    def build(self) -> Callable[[TensorMap], float]:
        if self.kind == "analytic_quadratic":
            target = load_checkpoint(self.params["target"]).weights
            return QuadraticEvaluator(target, float(self.params.get("curvature", 1.0)))
        if self.kind == "external_process":
            return ExternalEvaluator(
                self.params["cmd"],
                self.params.get("workdir", "."),
                timeout=self.params.get("timeout"),
            )
        if self.kind == "trajectory_replay":
            return ReplayEvaluator.load(self.params["table"])
        raise ValueError(f"unknown evaluator kind {self.kind!r}")

    @classmethod
    def from_config(cls, raw: dict) -> "EvaluatorHandle":
        if not isinstance(raw, dict) or "kind" not in raw:
            raise ValueError("evaluator config must be an object with a 'kind'")
        params = {k: v for k, v in raw.items() if k != "kind"}
        return cls(raw["kind"], params)
