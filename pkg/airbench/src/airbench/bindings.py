"""Handle-based access to the engine CLI.

Each call shells out to ``air`` with files in a scratch directory and parses
the documented outputs back into numpy arrays.  Engine failures surface as
:class:`EngineError` carrying the CLI exit code (2 schema violation,
3 cross-reference failure, 4 numeric divergence).
"""

from __future__ import annotations

import csv
import json
import os
import shutil
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._airm import read_airm, write_airm

METRICS_TWO_MAPS = ("cc", "spearman")
METRICS_MAP_FIXATIONS = ("nss", "auc-judd")
METRICS_POINTS = ("edr",)
METRICS_VECTORS = ("pearson",)


class BindingsError(Exception):
    """Base class for binding-layer errors."""


class UsageError(BindingsError):
    """The handle was used after close, or inputs are malformed."""


class EngineError(BindingsError):
    """The engine CLI rejected the request."""

    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(f"engine exited with code {code}: {message.strip()}")


def _cli_command() -> list[str]:
    override = os.environ.get("AIRBENCH_CLI")
    if override:
        return override.split()
    exe = shutil.which("air")
    if exe:
        return [exe]
    return [sys.executable, "-m", "air.cli"]


def _as_map_file(x, path: Path, which: str) -> str:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise UsageError(f"{which} needs a dense 2-D map, got shape {arr.shape}")
    write_airm(arr, path)
    return str(path)


def _as_points_file(x, path: Path, which: str) -> str:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise UsageError(f"{which} needs an (n, 2) or (n, 3) point list, "
                         f"got shape {arr.shape}")
    payload = [
        {"x": float(p[0]), "y": float(p[1]),
         "t": float(p[2]) if arr.shape[1] == 3 else 0.0}
        for p in arr
    ]
    path.write_text(json.dumps(payload))
    return str(path)


def _as_vector_file(x, path: Path) -> str:
    arr = np.asarray(x, dtype=np.float64).ravel()
    path.write_text(json.dumps([float(v) for v in arr]))
    return str(path)


@dataclass
class StepScore:
    step: int
    op: str
    aire: float | None
    n_sets: int
    fallback_used: bool


class BoundHandle:
    """A corpus opened for scoring; valid until :meth:`close`.

    Not shareable across threads: each handle owns one scratch directory and
    calls are not synchronized.  A handle opened without a corpus
    (``BoundHandle(None)``) supports :meth:`b_metrics` only.
    """

    def __init__(self, corpus_dir: str | Path | None):
        if corpus_dir is not None:
            corpus_dir = Path(corpus_dir)
            if not (corpus_dir / "scenes.json").exists():
                raise UsageError(f"{corpus_dir} does not look like a corpus "
                                 f"(missing scenes.json)")
        self._corpus = corpus_dir
        self._scratch = tempfile.TemporaryDirectory(prefix="airbench-")
        self._closed = False
        self._counter = 0

    # -- lifecycle -----------------------------------------------------------

    def close(self) -> None:
        if not self._closed:
            self._scratch.cleanup()
            self._closed = True

    def __enter__(self) -> "BoundHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _workdir(self) -> Path:
        if self._closed:
            raise UsageError("handle is closed")
        self._counter += 1
        work = Path(self._scratch.name) / f"call{self._counter:06d}"
        work.mkdir()
        return work

    def _corpus_dir(self) -> str:
        if self._corpus is None:
            raise UsageError("this handle was opened without a corpus")
        return str(self._corpus)

    def _run(self, *args: str) -> str:
        proc = subprocess.run(
            [*_cli_command(), *args], capture_output=True, text=True
        )
        if proc.returncode != 0:
            raise EngineError(proc.returncode, proc.stderr or proc.stdout)
        return proc.stdout

    # -- calls -----------------------------------------------------------------

    def b_aire(self, attention, question_id: str) -> list[StepScore]:
        """Score a dense 2-D attention array against one question's steps."""
        work = self._workdir()
        maps_dir = work / "maps"
        maps_dir.mkdir()
        _as_map_file(attention, maps_dir / f"{question_id}.airm", "b_aire")
        out = work / "scores"
        self._run("score", "--corpus", self._corpus_dir(), "--maps", str(maps_dir),
                  "--question", question_id, "--out", str(out))
        rows = []
        with open(out / "scores.csv", newline="") as f:
            for rec in csv.DictReader(f):
                rows.append(StepScore(
                    step=int(rec["step"]),
                    op=rec["op"],
                    aire=None if rec["aire"] == "" else float(rec["aire"]),
                    n_sets=int(rec["n_sets"]),
                    fallback_used=rec["fallback_used"] == "true",
                ))
        return rows

    def b_targets(self, question_id: str) -> dict:
        """Per-step proposal weights plus the mined negative boxes and map."""
        work = self._workdir()
        out = work / "targets"
        self._run("targets", "--corpus", self._corpus_dir(),
                  "--question", question_id, "--out", str(out))
        payload = json.loads((out / f"{question_id}.json").read_text())
        return {
            "steps": [np.asarray(s["weights"], dtype=np.float64)
                      for s in payload["steps"]],
            "all_zero": [bool(s["all_zero"]) for s in payload["steps"]],
            "neg_boxes": np.asarray(payload["neg_boxes"], dtype=np.float64).reshape(-1, 4),
            "neg_map": read_airm(out / f"{question_id}_neg.airm"),
            "meta": payload["meta"],
        }

    def b_metrics(self, a, b, which: str, edr_eps: float = 9.0) -> float:
        """One comparison metric computed by the engine.

        ``cc``/``spearman`` take two 2-D arrays, ``nss``/``auc-judd`` a 2-D
        array plus an (n, 2) or (n, 3) point list, ``edr`` two point lists,
        ``pearson`` two 1-D vectors.
        """
        work = self._workdir()
        if which in METRICS_TWO_MAPS:
            args = [_as_map_file(a, work / "a.airm", which),
                    _as_map_file(b, work / "b.airm", which)]
        elif which in METRICS_MAP_FIXATIONS:
            args = [_as_map_file(a, work / "a.airm", which),
                    _as_points_file(b, work / "b.json", which)]
        elif which in METRICS_POINTS:
            args = [_as_points_file(a, work / "a.json", which),
                    _as_points_file(b, work / "b.json", which)]
        elif which in METRICS_VECTORS:
            args = [_as_vector_file(a, work / "a.json"),
                    _as_vector_file(b, work / "b.json")]
        else:
            raise UsageError(f"unknown metric {which!r}")
        out = self._run("metric", which, *args, "--edr-eps", str(edr_eps))
        return float(out.strip())


def open_corpus(path: str | Path) -> BoundHandle:
    """Open a corpus directory for repeated scoring calls."""
    return BoundHandle(path)


def b_aire(corpus: str | Path, attention, question_id: str) -> list[StepScore]:
    """One-shot convenience wrapper around :meth:`BoundHandle.b_aire`."""
    with open_corpus(corpus) as h:
        return h.b_aire(attention, question_id)


def b_targets(corpus: str | Path, question_id: str) -> dict:
    with open_corpus(corpus) as h:
        return h.b_targets(question_id)


def b_metrics(a, b, which: str, edr_eps: float = 9.0) -> float:
    """Metric evaluation without a corpus (scratch handle)."""
    with BoundHandle(None) as h:
        return h.b_metrics(a, b, which, edr_eps)
