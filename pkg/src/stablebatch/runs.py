"""Training-run trajectories and their on-disk formats.

Two formats are supported:

* CSV with header ``step,tokens,loss`` plus a JSON sidecar holding
  ``{model_size, batch_size, meta}`` (same stem, ``.json`` suffix);
* JSONL, metadata object on the first line, one ``{step, tokens, loss}``
  record per following line.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import RunParseError
from .jsonio import dumps, fmt_float, write_json


@dataclass
class TrainingRun:
    """A (step, tokens, loss) trajectory at a fixed batch size."""

    model_size: float
    batch_size: float
    steps: np.ndarray
    tokens: np.ndarray
    losses: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.int64)
        self.tokens = np.asarray(self.tokens, dtype=float)
        self.losses = np.asarray(self.losses, dtype=float)
        if not (self.steps.shape == self.tokens.shape == self.losses.shape) or self.steps.ndim != 1:
            raise ValueError("steps, tokens and losses must be 1-d arrays of equal length")
        if self.model_size <= 0 or self.batch_size <= 0:
            raise ValueError("model_size and batch_size must be positive")
        problem = validate_records(self.steps, self.tokens, self.losses, self.batch_size)
        if problem is not None:
            idx, msg = problem
            raise ValueError(f"record {idx}: {msg}")

    @classmethod
    def from_records(cls, model_size, batch_size, records, meta=None):
        arr = list(records)
        steps = [r[0] for r in arr]
        tokens = [r[1] for r in arr]
        losses = [r[2] for r in arr]
        return cls(model_size, batch_size, steps, tokens, losses, dict(meta or {}))

    @property
    def records(self):
        return list(zip(self.steps.tolist(), self.tokens.tolist(), self.losses.tolist()))

    def __len__(self):
        return len(self.steps)

    def metadata(self):
        return {"model_size": self.model_size, "batch_size": self.batch_size, "meta": self.meta}


def validate_records(steps, tokens, losses, batch_size):
    """Return ``(index, message)`` for the first bad record, else None."""
    for i in range(len(steps)):
        if not (math.isfinite(losses[i]) and losses[i] > 0):
            return i, f"loss must be finite and positive, got {losses[i]!r}"
        if i > 0 and steps[i] <= steps[i - 1]:
            return i, "steps must be strictly increasing"
        if i > 0 and tokens[i] <= tokens[i - 1]:
            return i, "tokens must be strictly increasing"
        expected = steps[i] * batch_size
        if abs(tokens[i] - expected) > 1.0 + 1e-12 * expected:
            return i, f"tokens {tokens[i]!r} != step x batch_size ({expected!r})"
    return None


def sidecar_path(csv_path):
    return Path(csv_path).with_suffix(".json")


def write_csv(run, path):
    """Write ``run`` as CSV plus JSON sidecar; returns the CSV path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["step,tokens,loss"]
    for s, t, l in zip(run.steps, run.tokens, run.losses):
        lines.append(f"{int(s)},{fmt_float(t)},{fmt_float(l)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_json(run.metadata(), sidecar_path(path))
    return path


def read_csv(path, batch_size=None, model_size=None):
    path = Path(path)
    side = sidecar_path(path)
    meta = {}
    if side.exists():
        info = json.loads(side.read_text(encoding="utf-8"))
        batch_size = info.get("batch_size", batch_size)
        model_size = info.get("model_size", model_size)
        meta = info.get("meta", {}) or {}
    if batch_size is None or model_size is None:
        raise RunParseError(path, 0, "missing sidecar with batch_size/model_size")
    steps, tokens, losses = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["step", "tokens", "loss"]:
            raise RunParseError(path, 1, "expected header 'step,tokens,loss'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                steps.append(int(row[0]))
                tokens.append(float(row[1]))
                losses.append(float(row[2]))
            except (ValueError, IndexError):
                raise RunParseError(path, lineno, f"malformed row {row!r}") from None
            problem = validate_records(steps[-2:], tokens[-2:], losses[-2:], batch_size)
            if problem is not None:
                raise RunParseError(path, lineno, problem[1])
    return TrainingRun(model_size, batch_size, steps, tokens, losses, meta)


def write_jsonl(run, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = [dumps(run.metadata(), indent=0).replace("\n", "")]
    for s, t, l in zip(run.steps, run.tokens, run.losses):
        out.append(f'{{"step": {int(s)}, "tokens": {fmt_float(t)}, "loss": {fmt_float(l)}}}')
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return path


def read_jsonl(path):
    path = Path(path)
    steps, tokens, losses = [], [], []
    info = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RunParseError(path, lineno, f"invalid JSON: {exc.msg}") from None
            if info is None:
                if "batch_size" not in obj or "model_size" not in obj:
                    raise RunParseError(path, lineno, "first line must hold run metadata")
                info = obj
                continue
            try:
                steps.append(int(obj["step"]))
                tokens.append(float(obj["tokens"]))
                losses.append(float(obj["loss"]))
            except (KeyError, TypeError, ValueError):
                raise RunParseError(path, lineno, "record needs step, tokens and loss") from None
            problem = validate_records(steps[-2:], tokens[-2:], losses[-2:], info["batch_size"])
            if problem is not None:
                raise RunParseError(path, lineno, problem[1])
    if info is None:
        raise RunParseError(path, 1, "empty file")
    return TrainingRun(info["model_size"], info["batch_size"], steps, tokens, losses, info.get("meta") or {})


def read_run(path):
    """Dispatch on suffix: ``.jsonl`` or CSV."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix == ".jsonl":
        return read_jsonl(path)
    return read_csv(path)
