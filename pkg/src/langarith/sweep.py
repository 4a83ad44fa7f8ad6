"""Grid search over the interpolation weight against an external evaluator.

The evaluator is a subprocess contract, not linked code: the configured
command runs once per grid point with ``{checkpoint}`` replaced by the
merged checkpoint path, receives ``{"lambda", "target_language", "mode"}``
as JSON on stdin, and must print ``{"score": <float>}`` (higher is better)
to stdout and exit 0.  A failing evaluation is recorded with score -inf and
never aborts the other grid points.

Also hosts the static related-language lookup used to pick the second
merge operand in zero-shot setups.
"""

from __future__ import annotations

import json
import math
import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import SweepError, UnknownLanguageError
from .tensor_store import TensorMap, save_checkpoint
from .vector_core import DeltaVector, la_merge
from .ties import TiesConfig, ties_merge

__all__ = [
    "RELATED_LANGUAGES",
    "related_language",
    "SweepConfig",
    "SweepEntry",
    "SweepReport",
    "lambda_grid",
    "run_sweep",
    "select_best",
    "ENTRIES_FILENAME",
    "SUMMARY_FILENAME",
]

# Static related-language table (13 pairs).
RELATED_LANGUAGES = {
    "ar": "sw",
    "bg": "ru",
    "de": "fr",
    "el": "es",
    "es": "fr",
    "fr": "es",
    "hi": "ur",
    "ru": "bg",
    "sw": "ar",
    "tr": "bg",
    "ur": "hi",
    "vi": "ru",
    "zh": "ar",
}

ENTRIES_FILENAME = "sweep_entries.jsonl"
SUMMARY_FILENAME = "sweep_summary.json"

_GRID_EPS = 1e-9


def related_language(code: str) -> str:
    """Look up the paired related language for one of the 13 known codes."""
    try:
        return RELATED_LANGUAGES[code]
    except KeyError:
        known = ", ".join(sorted(RELATED_LANGUAGES))
        raise UnknownLanguageError(
            f"unknown language code {code!r} (known: {known})"
        ) from None


@dataclass(frozen=True)
class SweepConfig:
    """Grid bounds, evaluator command template and execution knobs."""

    grid_start: float
    grid_stop: float
    evaluator: str
    step: float = 0.05
    max_concurrency: int = 1
    workdir: str = "."
    mode: str = "la"
    target_language: str = ""
    ties_top_k: float = 0.2
    tie_break: str = "center"
    clean: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.grid_start) and math.isfinite(self.grid_stop)):
            raise ValueError("grid bounds must be finite")
        if self.grid_start > self.grid_stop:
            raise ValueError(
                f"grid_start {self.grid_start} > grid_stop {self.grid_stop}"
            )
        if not (self.step > _GRID_EPS):
            raise ValueError(f"step must be positive, got {self.step!r}")
        if self.mode not in ("la", "ties"):
            raise ValueError(f"mode must be 'la' or 'ties', got {self.mode!r}")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if "{checkpoint}" not in self.evaluator:
            raise ValueError("evaluator command must contain '{checkpoint}'")
        if self.tie_break != "center":
            raise ValueError(f"unknown tie_break rule {self.tie_break!r}")
        if self.mode == "ties" and not (0.0 < self.ties_top_k <= 1.0):
            raise ValueError(f"ties_top_k must be in (0, 1], got {self.ties_top_k!r}")

    def to_dict(self) -> dict:
        return {
            "grid_start": self.grid_start,
            "grid_stop": self.grid_stop,
            "step": self.step,
            "evaluator": self.evaluator,
            "max_concurrency": self.max_concurrency,
            "workdir": str(self.workdir),
            "mode": self.mode,
            "target_language": self.target_language,
            "ties_top_k": self.ties_top_k,
            "tie_break": self.tie_break,
            "clean": self.clean,
        }


@dataclass(frozen=True)
class SweepEntry:
    lam: float
    score: float  # -inf for failed evaluations
    checkpoint_path: str
    evaluator_exit: int

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "score": self.score if math.isfinite(self.score) else None,
            "checkpoint": self.checkpoint_path,
            "evaluator_exit": self.evaluator_exit,
        }


@dataclass(frozen=True)
class SweepReport:
    entries: tuple[SweepEntry, ...]
    best_lambda: float
    best_score: float
    config: SweepConfig

    def to_summary_dict(self) -> dict:
        return {
            "best_lambda": self.best_lambda,
            "best_score": self.best_score,
            "entries": len(self.entries),
            "failed": sum(1 for e in self.entries if not math.isfinite(e.score)),
            "config": self.config.to_dict(),
        }

    def write(self, workdir) -> tuple[Path, Path]:
        """Persist entries as JSON-lines plus a summary JSON; returns paths."""
        workdir = Path(workdir)
        entries_path = workdir / ENTRIES_FILENAME
        with open(entries_path, "w", encoding="utf-8") as f:
            for entry in self.entries:
                f.write(json.dumps(entry.to_dict()) + "\n")
        summary_path = workdir / SUMMARY_FILENAME
        with open(summary_path, "w", encoding="utf-8") as f:
            json.dump(self.to_summary_dict(), f, indent=2)
            f.write("\n")
        return entries_path, summary_path


def lambda_grid(cfg: SweepConfig) -> list[float]:
    """Inclusive grid start..stop; values rounded to 9 decimal places."""
    values = []
    i = 0
    while True:
        v = cfg.grid_start + i * cfg.step
        if v > cfg.grid_stop + _GRID_EPS:
            break
        values.append(round(v, 9))
        i += 1
    return values


def _select(entries: Sequence[SweepEntry]) -> SweepEntry:
    finite = [e for e in entries if math.isfinite(e.score)]
    if not finite:
        raise SweepError("no grid point produced a finite score")
    # Max score; ties resolved toward the centered merge, then the smaller
    # weight.  The center distance is rounded at the grid's own resolution
    # so that e.g. 0.3 and 0.7 really are equidistant despite float64
    # subtraction error.  Order-independent by construction.
    return min(
        finite, key=lambda e: (-e.score, round(abs(e.lam - 0.5), 9), e.lam)
    )


def select_best(report: SweepReport) -> tuple[float, float]:
    """(best_lambda, best_score) per the centered tie rule."""
    best = _select(report.entries)
    return best.lam, best.score


def _parse_score(stdout: str) -> float:
    payload = json.loads(stdout.strip())
    if not isinstance(payload, dict):
        raise ValueError("evaluator output must be a JSON object")
    score = payload["score"]
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        raise ValueError("evaluator score must be a number")
    score = float(score)
    if not math.isfinite(score):
        raise ValueError("evaluator score must be finite")
    return score


def _evaluate(cfg: SweepConfig, lam: float, checkpoint: Path) -> tuple[float, int]:
    tokens = [
        t.replace("{checkpoint}", str(checkpoint))
        for t in shlex.split(cfg.evaluator)
    ]
    request = json.dumps(
        {"lambda": lam, "target_language": cfg.target_language, "mode": cfg.mode}
    )
    try:
        proc = subprocess.run(
            tokens, input=request, capture_output=True, text=True
        )
    except OSError:
        return float("-inf"), 127
    if proc.returncode != 0:
        return float("-inf"), proc.returncode
    try:
        return _parse_score(proc.stdout), 0
    except (ValueError, KeyError, json.JSONDecodeError):
        return float("-inf"), 0


def _merged_for(
    pre: TensorMap, t1: DeltaVector, t2: DeltaVector,
    cfg: SweepConfig, lam: float, force: bool,
) -> TensorMap:
    if cfg.mode == "la":
        return la_merge(pre, t1, t2, lam, force=force)
    ties_cfg = TiesConfig(
        top_k_fraction=cfg.ties_top_k,
        lam=lam,
        lambda_range=(cfg.grid_start, cfg.grid_stop),
    )
    return ties_merge(pre, [t1, t2], ties_cfg, force=force)


def run_sweep(
    pre: TensorMap,
    t1: DeltaVector,
    t2: DeltaVector,
    cfg: SweepConfig,
    *,
    force: bool = False,
) -> SweepReport:
    """Merge, persist and evaluate every grid point; assemble the report.

    Merged checkpoints land in the workdir as
    ``merged_lambda_<value>.safetensors`` and are kept unless ``cfg.clean``.
    The report is also persisted there (entries JSONL + summary JSON).
    """
    grid = lambda_grid(cfg)
    workdir = Path(cfg.workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    def job(lam: float) -> SweepEntry:
        merged = _merged_for(pre, t1, t2, cfg, lam, force)
        path = workdir / f"merged_lambda_{lam}.safetensors"
        save_checkpoint(merged, path)
        score, exit_code = _evaluate(cfg, lam, path)
        if cfg.clean:
            path.unlink(missing_ok=True)
        return SweepEntry(lam, score, str(path), exit_code)

    if cfg.max_concurrency == 1 or len(grid) == 1:
        entries = [job(lam) for lam in grid]
    else:
        with ThreadPoolExecutor(max_workers=cfg.max_concurrency) as pool:
            entries = list(pool.map(job, grid))

    best = _select(entries)
    report = SweepReport(
        entries=tuple(entries),
        best_lambda=best.lam,
        best_score=best.score,
        config=cfg,
    )
    report.write(workdir)
    return report
