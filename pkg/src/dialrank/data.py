"""Synthetic dialog dataset: latent scenes, questions, candidate answers.

Each dialog owns a small scene of objects with color, kind, and count
attributes. Object features are a deterministic attribute encoding plus
seeded noise; captions name the first two objects; questions ask about
color or count, and a configurable fraction use a pronoun that can only be
resolved through the previous turn. Candidate sets mix the true answer,
hard distractors that share its surface form, and easy fillers from other
answer types. Everything is reproducible from (config, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig

COLORS = ["red", "blue", "green", "yellow", "black", "white"]
KINDS = ["cat", "dog", "bird", "car", "tree", "ball", "hat", "cup"]
COUNTS = ["one", "two", "three", "four"]

_COLOR_OFFSET = 0
_KIND_OFFSET = len(COLORS)
_COUNT_OFFSET = len(COLORS) + len(KINDS)


class DataError(ValueError):
    """Structurally invalid dataset content."""


@dataclass
class SceneObject:
    kind: str
    color: str
    count: str


@dataclass
class Scene:
    objects: list[SceneObject]

    def by_kind(self, kind: str) -> SceneObject:
        for obj in self.objects:
            if obj.kind == kind:
                return obj
        raise KeyError(kind)


@dataclass
class Turn:
    question: list[str]
    candidates: list[list[str]]
    gt_index: int
    relevance: list[float]
    answer: list[str]


@dataclass
class DialogRecord:
    dialog_id: int
    object_features: np.ndarray  # [n_objects x d]
    caption: list[str]
    turns: list[Turn] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "dialog_id": self.dialog_id,
            "object_features": self.object_features.tolist(),
            "caption": self.caption,
            "turns": [
                {
                    "question": t.question,
                    "candidates": t.candidates,
                    "gt_index": t.gt_index,
                    "relevance": t.relevance,
                    "answer": t.answer,
                }
                for t in self.turns
            ],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "DialogRecord":
        try:
            turns = [
                Turn(
                    question=list(t["question"]),
                    candidates=[list(c) for c in t["candidates"]],
                    gt_index=int(t["gt_index"]),
                    relevance=[float(r) for r in t["relevance"]],
                    answer=list(t["answer"]),
                )
                for t in obj["turns"]
            ]
            rec = cls(
                dialog_id=int(obj["dialog_id"]),
                object_features=np.asarray(obj["object_features"], dtype=np.float64),
                caption=list(obj["caption"]),
                turns=turns,
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed dialog record: {exc}") from exc
        return validate_record(rec)


def validate_record(rec: DialogRecord) -> DialogRecord:
    if rec.object_features.ndim != 2:
        raise DataError(f"object features must be [n x d], got shape {rec.object_features.shape}")
    for t_idx, t in enumerate(rec.turns):
        C = len(t.candidates)
        if not (0 <= t.gt_index < C):
            raise DataError(f"dialog {rec.dialog_id} turn {t_idx}: gt_index {t.gt_index} out of range")
        if len(t.relevance) != C:
            raise DataError(
                f"dialog {rec.dialog_id} turn {t_idx}: {len(t.relevance)} relevance values for {C} candidates"
            )
        if t.relevance[t.gt_index] <= 0:
            raise DataError(f"dialog {rec.dialog_id} turn {t_idx}: ground truth has zero relevance")
        if any(r < 0 or r > 1 for r in t.relevance):
            raise DataError(f"dialog {rec.dialog_id} turn {t_idx}: relevance outside [0, 1]")
        if t.answer != t.candidates[t.gt_index]:
            raise DataError(f"dialog {rec.dialog_id} turn {t_idx}: answer differs from gt candidate")
    return rec


# question / answer surface forms ----------------------------------------


def color_question(kind: str, pronoun: bool) -> list[str]:
    return ["what", "color", "is", "it"] if pronoun else ["what", "color", "is", "the", kind]


def count_question(kind: str, pronoun: bool) -> list[str]:
    return ["how", "many", "of", "them"] if pronoun else ["how", "many", kind]


def answer_forms(qtype: str, obj: SceneObject) -> dict:
    """Short, descriptive, and synonym phrasings of the true answer."""
    if qtype == "color":
        return {
            "short": [obj.color],
            "long": ["the", obj.kind, "is", obj.color],
            "synonym_of_short": ["it", "is", obj.color],
        }
    return {
        "short": [obj.count],
        "long": ["there", "are", obj.count, obj.kind],
        "synonym_of_short": [obj.count, "of", "them"],
    }


def oracle_answer_forms(scene: Scene, question: list[str], referent_kind: str | None) -> list[list[str]]:
    """Re-derive every acceptable answer for a question from the scene alone.

    ``referent_kind`` resolves pronoun questions; explicit questions carry
    their kind in the surface form. Used by tests to confirm generated
    ground truths agree with the latent scene.
    """
    if question[:4] == ["what", "color", "is", "it"]:
        qtype, kind = "color", referent_kind
    elif question[:3] == ["what", "color", "is"]:
        qtype, kind = "color", question[4]
    elif question[:4] == ["how", "many", "of", "them"]:
        qtype, kind = "count", referent_kind
    elif question[:2] == ["how", "many"]:
        qtype, kind = "count", question[2]
    else:
        raise ValueError(f"unrecognized question form: {question}")
    if kind is None:
        raise ValueError("pronoun question without a referent")
    obj = scene.by_kind(kind)
    forms = answer_forms(qtype, obj)
    return [forms["short"], forms["long"], forms["synonym_of_short"]]


def _distractor_pool(qtype: str, scene: Scene, obj: SceneObject, gt_forms: dict,
                     descriptive: bool) -> tuple[list, list]:
    """(hard, easy) distractor candidates for a question about ``obj``.

    Hard distractors share the ground truth's surface form: wrong attribute
    values for the asked object and true statements about the scene's other
    objects. In descriptive mode the hard pool is descriptive too, so the
    form alone never identifies the answer. Easy fillers come from the
    other answer types.
    """
    taken = {tuple(f) for f in gt_forms.values()}
    hard, easy = [], []

    def offer(pool, form):
        if tuple(form) not in taken:
            taken.add(tuple(form))
            pool.append(form)

    if qtype == "color":
        for c in COLORS:
            if descriptive:
                offer(hard, ["the", obj.kind, "is", c])
            else:
                offer(hard, [c])
                offer(hard, ["it", "is", c])
        for other in scene.objects:
            offer(hard, ["the", other.kind, "is", other.color])
        for c in COLORS:
            offer(easy, [c] if descriptive else ["the", obj.kind, "is", c])
            offer(easy, ["it", "is", c])
        for w in COUNTS:
            offer(easy, [w])
        for kind in KINDS:
            for c in COLORS:
                offer(easy, ["the", kind, "is", c])
    else:
        for w in COUNTS:
            if descriptive:
                offer(hard, ["there", "are", w, obj.kind])
            else:
                offer(hard, [w])
                offer(hard, [w, "of", "them"])
        for other in scene.objects:
            offer(hard, ["there", "are", other.count, other.kind])
        for w in COUNTS:
            offer(easy, [w] if descriptive else ["there", "are", w, obj.kind])
            offer(easy, [w, "of", "them"])
        for c in COLORS:
            offer(easy, [c])
        for kind in KINDS:
            for w in COUNTS:
                offer(easy, ["there", "are", w, kind])
    for kind in KINDS:
        offer(easy, ["a", kind])
    return hard, easy


def generate_scenes(config: RunConfig, seed: int) -> list[Scene]:
    """Latent scenes only; the dataset generator builds records from these."""
    config.validate()
    if config.n_objects > len(KINDS):
        raise DataError(f"at most {len(KINDS)} distinct object kinds available, asked for {config.n_objects}")
    rng = np.random.default_rng([seed, 101])
    scenes = []
    for _ in range(config.n_dialogs):
        kinds = rng.choice(len(KINDS), size=config.n_objects, replace=False)
        objects = [
            SceneObject(
                kind=KINDS[kid],
                color=COLORS[rng.integers(len(COLORS))],
                count=COUNTS[rng.integers(len(COUNTS))],
            )
            for kid in kinds
        ]
        scenes.append(Scene(objects))
    return scenes


def scene_features(scene: Scene, d: int) -> np.ndarray:
    """Noise-free attribute encoding, one row per object.

    Each attribute value sets a fixed position (wrapped into d), so a
    linear readout of the features can recover color, kind, and count.
    """
    feats = np.zeros((len(scene.objects), d))
    for i, obj in enumerate(scene.objects):
        for pos in (
            _COLOR_OFFSET + COLORS.index(obj.color),
            _KIND_OFFSET + KINDS.index(obj.kind),
            _COUNT_OFFSET + COUNTS.index(obj.count),
        ):
            feats[i, pos % d] += 1.0
    return feats


def generate_synthetic_dataset(config: RunConfig, seed: int) -> list[DialogRecord]:
    """Build the full dialog dataset for (config, seed); fully deterministic."""
    scenes = generate_scenes(config, seed)
    rng = np.random.default_rng([seed, 202])
    records = []
    for dialog_id, scene in enumerate(scenes):
        feats = scene_features(scene, config.d)
        feats += rng.normal(0.0, config.feature_noise, feats.shape)
        named = scene.objects[: min(2, len(scene.objects))]
        caption = ["a", "scene", "with"]
        for j, obj in enumerate(named):
            if j:
                caption.append("and")
            caption += ["a", obj.color, obj.kind]
        record = DialogRecord(dialog_id=dialog_id, object_features=feats, caption=caption)
        prev_obj = None
        for t in range(config.turns_per_dialog):
            qtype = "color" if rng.random() < 0.5 else "count"
            pronoun = prev_obj is not None and rng.random() < config.pronoun_fraction
            if pronoun:
                obj = prev_obj
            else:
                obj = scene.objects[int(rng.integers(len(scene.objects)))]
            question = color_question(obj.kind, pronoun) if qtype == "color" else count_question(obj.kind, pronoun)
            forms = answer_forms(qtype, obj)
            gt = forms["long"] if config.descriptive_answers else forms["short"]
            synonym = forms["short"] if config.descriptive_answers else forms["synonym_of_short"]
            candidates = [gt]
            relevance = [1.0]
            if config.synonym_relevance > 0:
                candidates.append(synonym)
                relevance.append(config.synonym_relevance)
            hard, easy = _distractor_pool(qtype, scene, obj, forms, config.descriptive_answers)
            seen = {tuple(c) for c in candidates}
            pool = hard + easy
            for form in pool:
                if len(candidates) >= config.n_candidates:
                    break
                key = tuple(form)
                if key in seen:
                    continue
                seen.add(key)
                candidates.append(form)
                relevance.append(0.0)
            if len(candidates) < config.n_candidates:
                raise DataError(
                    f"candidate pool exhausted: built {len(candidates)} of {config.n_candidates}"
                )
            perm = rng.permutation(len(candidates))
            candidates = [candidates[i] for i in perm]
            relevance = [relevance[i] for i in perm]
            gt_index = int(np.where(perm == 0)[0][0])
            record.turns.append(
                Turn(
                    question=question,
                    candidates=candidates,
                    gt_index=gt_index,
                    relevance=relevance,
                    answer=candidates[gt_index],
                )
            )
            prev_obj = obj
        records.append(validate_record(record))
    return records


# file formats -------------------------------------------------------------


def save_dataset(records, path) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec.to_json_dict()) + "\n")


def load_dataset(path) -> list[DialogRecord]:
    records = []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            records.append(DialogRecord.from_json_dict(obj))
    if not records:
        raise DataError(f"{path}: no dialog records")
    return records


def vocab_corpus(records):
    """Token sequences that feed vocabulary construction: captions,
    questions, and correct answers (never distractors)."""
    for rec in records:
        yield rec.caption
        for t in rec.turns:
            yield t.question
            yield t.answer
