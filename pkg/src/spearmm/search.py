"""Black-box search over merge configurations.

A small fixed-hyperparameter Gaussian process (squared-exponential kernel,
length-scale 0.2 per unit-normalized dimension, observation noise 1e-6, prior
mean equal to the running mean of observed objectives, signal variance equal
to their running variance) drives expected-improvement proposals over a seeded
candidate set. The first ``init_points`` proposals come from a seeded Latin
hypercube. Trials run strictly sequentially; evaluator failures score -inf and
the search continues.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .checkpoint_io import Checkpoint, aligned_pairs, load_checkpoint, save_checkpoint
from .errors import EvaluatorError, ValidationError
from .merger import apply_plan
from .metrics import ScoredRow
from .planner import Policy, build_plan

SEARCHABLE_DIMS = ("frac_mlp", "frac_attn", "t")

#: Callable evaluators receive (merged_checkpoint_path, trial_config) and
#: return (domain_score, general_score).
EvaluatorFn = Callable[[str, dict], tuple[float, float]]


@dataclass(frozen=True)
class SearchDim:
    name: str
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.name not in SEARCHABLE_DIMS:
            raise ValidationError(f"search dimension must be one of {SEARCHABLE_DIMS}, got {self.name!r}")
        if not (0.0 <= self.lo < self.hi <= 1.0):
            raise ValidationError(f"dimension {self.name}: need 0 <= lo < hi <= 1, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[SearchDim, ...]
    budget: int = 20
    init_points: int = 8
    seed: int = 0

    def __post_init__(self):
        if not self.dims:
            raise ValidationError("search space needs at least one dimension")
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate search dimensions: {names}")
        if self.budget < 1 or self.init_points < 1:
            raise ValidationError("budget and init_points must be positive")

    def to_unit(self, config: dict[str, float]) -> np.ndarray:
        return np.array([(config[d.name] - d.lo) / (d.hi - d.lo) for d in self.dims])

    def from_unit(self, point: np.ndarray) -> dict[str, float]:
        return {d.name: float(d.lo + p * (d.hi - d.lo)) for d, p in zip(self.dims, point)}


@dataclass
class SearchTrial:
    index: int
    config: dict[str, float]
    domain_score: float = 0.0
    general_score: float = 0.0
    objective: float = float("-inf")
    plan_digest: str = ""
    failed: bool = False
    error: str = ""


# --- Gaussian-process surrogate -------------------------------------------

KERNEL_LENGTH_SCALE = 0.2
OBSERVATION_NOISE = 1e-6


class GpSurrogate:
    """Interpolating GP with fixed kernel hyperparameters (no tuning)."""

    def __init__(self, length_scale: float = KERNEL_LENGTH_SCALE, noise: float = OBSERVATION_NOISE):
        self.length_scale = length_scale
        self.noise = noise
        self._x: np.ndarray | None = None

    def _kernel(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        sq_dist = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
        return self._amplitude * np.exp(-0.5 * sq_dist / self.length_scale**2)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "GpSurrogate":
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        self._prior_mean = float(y.mean())
        self._amplitude = max(float(y.var()), 1e-12)
        self._x = x
        cov = self._kernel(x, x) + self.noise * np.eye(len(x))
        self._chol = np.linalg.cholesky(cov)
        self._alpha = np.linalg.solve(self._chol.T, np.linalg.solve(self._chol, y - self._prior_mean))
        return self

    def predict(self, xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation (variance clipped at 0)."""
        xq = np.atleast_2d(np.asarray(xq, dtype=np.float64))
        cross = self._kernel(self._x, xq)
        mean = self._prior_mean + cross.T @ self._alpha
        v = np.linalg.solve(self._chol, cross)
        var = np.clip(self._amplitude - (v**2).sum(axis=0), 0.0, None)
        return mean, np.sqrt(var)


def expected_improvement(mean, stdev, best_so_far: float):
    """EI = (mean - best) * Phi(z) + stdev * phi(z); max(mean - best, 0) at stdev 0."""
    mean = np.asarray(mean, dtype=np.float64)
    stdev = np.asarray(stdev, dtype=np.float64)
    if np.any(stdev < 0):
        raise ValidationError("stdev must be non-negative")
    improvement = mean - best_so_far
    safe = np.where(stdev > 0, stdev, 1.0)
    z = improvement / safe
    ei = improvement * ndtr(z) + stdev * np.exp(-0.5 * z**2) / np.sqrt(2 * np.pi)
    out = np.where(stdev > 0, ei, np.maximum(improvement, 0.0))
    return float(out) if out.ndim == 0 else out


# --- proposal logic --------------------------------------------------------

def _latin_hypercube(n: int, d: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(1,)))
    points = np.empty((n, d))
    for j in range(d):
        points[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return points


def _candidate_points(space: SearchSpace, trial_index: int, incumbent: np.ndarray | None) -> np.ndarray:
    """1024 seeded candidates: 768 uniform plus 256 multi-scale jitters of the incumbent."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(space.seed), spawn_key=(2, trial_index)))
    d = len(space.dims)
    uniform = rng.random((768, d))
    if incumbent is None:
        local = rng.random((256, d))
    else:
        scales = np.repeat([0.02, 0.05, 0.1, 0.2], 64)[:, None]
        local = np.clip(incumbent[None, :] + scales * rng.standard_normal((256, d)), 0.0, 1.0)
    return np.vstack([uniform, local])


def propose_next(history: Sequence[SearchTrial], space: SearchSpace) -> dict[str, float]:
    """Next configuration to try.

    Latin-hypercube points for the first ``init_points`` trials; afterwards the
    EI argmax over seeded candidates, falling back to a seeded uniform draw
    when the observed objectives carry no signal (all equal or all failed).
    """
    index = len(history)
    d = len(space.dims)
    if index < space.init_points:
        table = _latin_hypercube(space.init_points, d, space.seed)
        return space.from_unit(table[index])

    ok = [tr for tr in history if not tr.failed]
    objectives = np.array([tr.objective for tr in ok])
    if len(ok) < 2 or np.ptp(objectives) == 0.0:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=int(space.seed), spawn_key=(3, index)))
        return space.from_unit(rng.random(d))

    x = np.array([space.to_unit(tr.config) for tr in ok])
    incumbent = x[int(np.argmax(objectives))]
    candidates = _candidate_points(space, index, incumbent)
    gp = GpSurrogate().fit(x, objectives)
    mean, stdev = gp.predict(candidates)
    ei = expected_improvement(mean, stdev, float(objectives.max()))
    return space.from_unit(candidates[int(np.argmax(ei))])


# --- evaluators ------------------------------------------------------------

def checkpoint_distance(a: Checkpoint, b: Checkpoint) -> float:
    """Aggregate Frobenius distance over aligned tensors."""
    alignment = aligned_pairs(a, b)
    total = 0.0
    for ra, rb in alignment.pairs:
        diff = ra.data.astype(np.float64) - rb.data.astype(np.float64)
        total += float(np.sum(diff * diff))
    return float(np.sqrt(total))


def make_proxy_evaluator(base: Checkpoint, adapted: Checkpoint) -> EvaluatorFn:
    """Parameter-space stand-in scoring.

    general = 1 - d(merged, base) / d(adapted, base) and
    domain = 1 - d(merged, adapted) / d(adapted, base), both clamped to [0,1];
    distances are aggregate Frobenius over aligned tensors.
    """
    denom = checkpoint_distance(adapted, base)

    def evaluate(merged_path: str, config: dict) -> tuple[float, float]:
        merged = load_checkpoint(merged_path)
        if denom == 0.0:
            return 1.0, 1.0
        general = 1.0 - checkpoint_distance(merged, base) / denom
        domain = 1.0 - checkpoint_distance(merged, adapted) / denom
        return min(max(domain, 0.0), 1.0), min(max(general, 0.0), 1.0)

    return evaluate


class EvaluatorFailure(Exception):
    """One trial's evaluation failed; the search records it and moves on."""


def make_command_evaluator(command: str, timeout: float = 600.0) -> EvaluatorFn:
    """Wrap an external command invoked as `<cmd> --model <path>`.

    The command must print a JSON object {"domain_score": x, "general_score": y}
    with both values in [0, 1] to stdout.
    """
    argv_base = shlex.split(command)
    if not argv_base:
        raise EvaluatorError("empty evaluator command")

    def evaluate(merged_path: str, config: dict) -> tuple[float, float]:
        argv = argv_base + ["--model", str(merged_path)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
        except subprocess.TimeoutExpired as exc:
            raise EvaluatorFailure(f"evaluator timed out after {timeout}s") from exc
        except OSError as exc:
            raise EvaluatorFailure(f"evaluator could not be launched: {exc}") from exc
        if proc.returncode != 0:
            raise EvaluatorFailure(f"evaluator exited {proc.returncode}: {proc.stderr.strip()[:500]}")
        try:
            payload = json.loads(proc.stdout.strip())
        except json.JSONDecodeError as exc:
            raise EvaluatorFailure(f"evaluator printed invalid JSON: {exc}") from exc
        try:
            domain = float(payload["domain_score"])
            general = float(payload["general_score"])
        except (TypeError, KeyError, ValueError) as exc:
            raise EvaluatorFailure(f"evaluator JSON missing numeric scores: {exc}") from exc
        if not (0.0 <= domain <= 1.0 and 0.0 <= general <= 1.0):
            raise EvaluatorFailure(f"evaluator scores out of [0, 1]: {domain}, {general}")
        return domain, general

    return evaluate


def resolve_evaluator(spec, base: Checkpoint, adapted: Checkpoint, timeout: float = 600.0) -> EvaluatorFn:
    if callable(spec):
        return spec
    if spec == "proxy":
        return make_proxy_evaluator(base, adapted)
    if isinstance(spec, str) and spec.strip():
        return make_command_evaluator(spec, timeout=timeout)
    raise EvaluatorError(f"cannot resolve evaluator {spec!r}")


# --- the search loop -------------------------------------------------------

def evaluate_config(
    base: Checkpoint,
    adapted: Checkpoint,
    scored: Sequence[ScoredRow],
    policy: Policy,
    evaluator: EvaluatorFn,
    workdir: Path,
    config: dict[str, float] | None = None,
) -> tuple[float, float, str]:
    """Plan, merge, write a temporary checkpoint, and score it.

    Returns (domain_score, general_score, plan_digest); raises
    EvaluatorFailure when the evaluator misbehaves.
    """
    plan = build_plan(scored, policy)
    merged = apply_plan(base, adapted, plan)
    merged_path = workdir / "merged.safetensors"
    save_checkpoint(merged, merged_path, dtype_policy="force_f32")
    domain, general = evaluator(str(merged_path), dict(config or {}))
    return float(domain), float(general), plan.config_digest


def run_search(
    base: Checkpoint,
    adapted: Checkpoint,
    scored: Sequence[ScoredRow],
    space: SearchSpace,
    evaluator,
    lam: float = 0.5,
    base_policy: Policy | None = None,
    evaluator_timeout: float = 600.0,
) -> tuple[SearchTrial, list[SearchTrial]]:
    """Run exactly ``space.budget`` sequential trials; return (best, history).

    Each trial builds a plan from its configuration, merges, writes a
    temporary checkpoint, and invokes the evaluator. The objective is
    lam * general + (1 - lam) * domain; ties go to the earliest trial. Failed
    trials stay in the history with objective -inf; if every trial fails the
    search errors out.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lambda must lie in [0, 1], got {lam}")
    policy = base_policy if base_policy is not None else Policy.preset("balanced")
    evaluate = resolve_evaluator(evaluator, base, adapted, timeout=evaluator_timeout)

    history: list[SearchTrial] = []
    best: SearchTrial | None = None
    with tempfile.TemporaryDirectory(prefix="spearmm-search-") as tmp:
        workdir = Path(tmp)
        for index in range(space.budget):
            config = propose_next(history, space)
            trial = SearchTrial(index=index, config=config)
            trial_policy = policy.with_config(
                frac_mlp=config.get("frac_mlp"),
                frac_attn=config.get("frac_attn"),
                t=config.get("t"),
            )
            try:
                domain, general, digest = evaluate_config(
                    base, adapted, scored, trial_policy, evaluate, workdir, config
                )
            except EvaluatorFailure as exc:
                trial.failed = True
                trial.error = str(exc)
            else:
                trial.domain_score = domain
                trial.general_score = general
                trial.objective = lam * general + (1.0 - lam) * domain
                trial.plan_digest = digest
            history.append(trial)
            if not trial.failed and (best is None or trial.objective > best.objective):
                best = trial

    if best is None:
        raise EvaluatorError(f"all {space.budget} trials failed; last error: {history[-1].error}")
    return best, history
