"""Corpus directory layout and cross-reference validation.

A corpus root holds::

    scenes.json       {image_id: scene graph}
    programs.json     {question_id: [{"text","deps"}]}
    questions.json    {question_id: {"image_id": ...}}   (optional iff 1 scene)
    fixations.json    optional
    proposals.json    optional, {image_id: [[x,y,w,h], ...]}
    cooc.csv          optional (rebuilt from the scenes when absent)
    maps/<source>/<question_id>.airm   optional attention sources

Every program must resolve to a scene and every fixation sequence to a
program; violations raise :class:`CrossRefError`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .attention import FixationSequence, load_fixations
from .errors import CrossRefError, SchemaError
from .program_ir import AliasTable, ReasoningProgram, load_programs
from .scene_graph import (
    BoundingBox,
    CoOccurrenceTable,
    SceneGraph,
    StepROIs,
    build_cooccurrence,
    load_scenes,
    resolve_rois,
)


@dataclass
class Corpus:
    root: Path
    scenes: dict[str, SceneGraph]
    programs: dict[str, ReasoningProgram]
    question_image: dict[str, str]
    cooc: CoOccurrenceTable
    fixations: dict[str, FixationSequence] | None = None
    proposals: dict[str, list[BoundingBox]] | None = None
    skipped_questions: list[str] = field(default_factory=list)
    _roi_cache: dict[tuple[str, int], list[StepROIs]] = field(default_factory=dict)

    @property
    def question_ids(self) -> list[str]:
        return sorted(self.programs)

    def scene_of(self, qid: str) -> SceneGraph:
        return self.scenes[self.question_image[qid]]

    def rois(self, qid: str, k: int = 20) -> list[StepROIs]:
        key = (qid, k)
        if key not in self._roi_cache:
            self._roi_cache[key] = resolve_rois(
                self.programs[qid], self.scene_of(qid), self.cooc, k=k
            )
        return self._roi_cache[key]

    def proposals_of(self, qid: str) -> list[BoundingBox]:
        """Region proposals for a question's image; the scene's own object
        boxes stand in when no proposals file is shipped."""
        image_id = self.question_image[qid]
        if self.proposals and image_id in self.proposals:
            return self.proposals[image_id]
        return [o.box for o in self.scenes[image_id].objects]

    @classmethod
    def load(
        cls,
        root: str | Path,
        aliases: AliasTable | None = None,
        lenient: bool = False,
    ) -> "Corpus":
        root = Path(root)
        scenes_path = root / "scenes.json"
        programs_path = root / "programs.json"
        if not scenes_path.exists():
            raise SchemaError(f"missing {scenes_path}")
        if not programs_path.exists():
            raise SchemaError(f"missing {programs_path}")
        scenes = load_scenes(scenes_path)
        programs, skipped = load_programs(programs_path, aliases=aliases, lenient=lenient)

        question_image = _load_question_image(root / "questions.json", programs, scenes)
        for qid in programs:
            img = question_image.get(qid)
            if img is None:
                raise CrossRefError(f"question {qid!r} has no image mapping")
            if img not in scenes:
                raise CrossRefError(f"question {qid!r} references unknown image {img!r}")

        fixations = None
        fx_path = root / "fixations.json"
        if fx_path.exists():
            fixations = load_fixations(fx_path)
            for qid, seq in fixations.items():
                if qid not in programs:
                    if qid in skipped:
                        continue
                    raise CrossRefError(f"fixations for unknown question {qid!r}")
                scene = scenes[question_image[qid]]
                for f in seq.fixations:
                    if not (0 <= f.x < scene.width and 0 <= f.y < scene.height):
                        raise SchemaError(
                            f"fixation ({f.x},{f.y}) outside scene {scene.image_id}"
                        )

        proposals = None
        pr_path = root / "proposals.json"
        if pr_path.exists():
            proposals = _load_proposals(pr_path, scenes)

        cooc_path = root / "cooc.csv"
        if cooc_path.exists():
            cooc = CoOccurrenceTable.from_csv(cooc_path)
        else:
            cooc = build_cooccurrence(list(scenes.values()))

        return cls(root, scenes, programs, question_image, cooc,
                   fixations, proposals, skipped)

    def maps_dir(self, source: str) -> Path:
        return self.root / "maps" / source


def _load_question_image(
    path: Path, programs: dict[str, ReasoningProgram], scenes: dict[str, SceneGraph]
) -> dict[str, str]:
    if path.exists():
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise SchemaError(f"cannot read questions {path}: {e}") from e
        if not isinstance(raw, dict):
            raise SchemaError("questions.json must map question_id -> record")
        out = {}
        for qid, rec in raw.items():
            if not isinstance(rec, dict) or "image_id" not in rec:
                raise SchemaError(f"questions[{qid!r}] needs an image_id")
            out[qid] = str(rec["image_id"])
        return out
    if len(scenes) == 1:
        only = next(iter(scenes))
        return {qid: only for qid in programs}
    raise CrossRefError(
        "questions.json is required when the corpus has more than one scene"
    )


def _load_proposals(
    path: Path, scenes: dict[str, SceneGraph]
) -> dict[str, list[BoundingBox]]:
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise SchemaError(f"cannot read proposals {path}: {e}") from e
    out: dict[str, list[BoundingBox]] = {}
    for image_id, boxes in raw.items():
        if image_id not in scenes:
            raise CrossRefError(f"proposals for unknown image {image_id!r}")
        try:
            out[image_id] = [BoundingBox(*(float(v) for v in b)) for b in boxes]
        except (TypeError, ValueError) as e:
            raise SchemaError(f"proposals[{image_id!r}]: {e}") from e
    return out
