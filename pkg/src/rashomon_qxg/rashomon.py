"""Model populations, validation Rashomon sets, and explanation collection."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .artifacts import write_csv
from .attribution import FeatureRanking, pick_relevant_object_gnn, to_ranking, tree_shap
from .calculi import CalculiConfig
from .errors import InputError, NoCandidatesError, TrainingError
from .gbdt import TrainConfig, log_loss, pick_relevant_object, train_gbdt
from .graph_net import GnnConfig, GraphBatch, train_gnn
from .qxg import QXG, build_qxg, extract_star_graph, num_pair_features, star_features
from .scene import Scene

log = logging.getLogger(__name__)


class ModelClass(str, Enum):
    PAIR = "pair"
    GRAPH = "graph"


class CriterionMode(str, Enum):
    LOSS_ADDITIVE = "loss_additive"
    PERFORMANCE_RELATIVE = "performance_relative"


@dataclass(frozen=True)
class RashomonCriterion:
    mode: CriterionMode = CriterionMode.PERFORMANCE_RELATIVE
    epsilon: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "mode", CriterionMode(self.mode))
        if not self.epsilon > 0:
            raise InputError(f"epsilon must be > 0, got {self.epsilon}")

    def admits(self, candidate: "ModelRecord", reference: "ModelRecord") -> bool:
        # inclusive on both sides of the tolerance
        if self.mode is CriterionMode.LOSS_ADDITIVE:
            return candidate.val_loss <= reference.val_loss + self.epsilon
        return candidate.val_score >= (1.0 - self.epsilon) * reference.val_score

    def describe(self) -> str:
        return f"criterion={self.mode.value} epsilon={self.epsilon!r}"


@dataclass(frozen=True)
class ModelRecord:
    model_id: str
    seed: int
    val_loss: float
    val_score: float
    model: object = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class RashomonSet:
    criterion: RashomonCriterion
    population: tuple[ModelRecord, ...]
    member_index: tuple[int, ...]
    reference_index: int

    @property
    def members(self) -> list[ModelRecord]:
        return [self.population[i] for i in self.member_index]

    @property
    def reference(self) -> ModelRecord:
        return self.population[self.reference_index]

    def manifest_rows(self):
        chosen = set(self.member_index)
        for i, r in enumerate(self.population):
            yield [r.model_id, r.seed, r.val_loss, r.val_score, i in chosen]


def select_rashomon(population, criterion: RashomonCriterion = RashomonCriterion()) -> RashomonSet:
    """Members admitted against the best model; the first best wins ties."""
    population = tuple(population)
    if not population:
        raise InputError("empty population")
    if criterion.mode is CriterionMode.LOSS_ADDITIVE:
        ref = min(range(len(population)), key=lambda i: (population[i].val_loss, i))
    else:
        ref = min(range(len(population)), key=lambda i: (-population[i].val_score, i))
    members = tuple(i for i, r in enumerate(population) if criterion.admits(r, population[ref]))
    return RashomonSet(criterion, population, members, ref)


def write_manifest(rset: RashomonSet, path, comments=()) -> None:
    write_csv(path, ["model_id", "seed", "val_loss", "val_score", "member"], rset.manifest_rows(),
              list(comments) + [rset.criterion.describe()])


# --- encoded data -----------------------------------------------------------


@dataclass
class EncodedSplit:
    """Scenes of one split with their QXGs and both model-class encodings."""

    scenes: list[Scene]
    qxgs: list[QXG]
    num_frames: int

    def pair_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """Every ego spoke, labelled with its scene's action."""
        X, y = [], []
        for scene, g in zip(self.scenes, self.qxgs):
            _, rows = star_features(extract_star_graph(g, scene.ego.object_id), self.num_frames)
            X.append(rows)
            y += [scene.action.index] * len(rows)
        if not y:
            return np.zeros((0, num_pair_features(self.num_frames)), dtype=np.int64), np.zeros(0, dtype=np.int64)
        return np.vstack(X), np.asarray(y, dtype=np.int64)

    def graphs(self) -> tuple[list[GraphBatch], list[int]]:
        out, labels = [], []
        for scene, g in zip(self.scenes, self.qxgs):
            try:
                out.append(GraphBatch.from_qxg(g, scene.ego.object_id))
            except NoCandidatesError:
                log.info("scene %s has no ego spokes; left out of graph training", scene.scene_id)
                continue
            labels.append(scene.action.index)
        return out, labels


def encode_split(scenes, calculi: CalculiConfig = CalculiConfig()) -> EncodedSplit:
    scenes = list(scenes)
    T = scenes[0].num_frames if scenes else 5
    return EncodedSplit(scenes, [build_qxg(s, calculi) for s in scenes], T)


# --- populations ------------------------------------------------------------


def derive_seed(master_seed: int, model_class: ModelClass, index: int) -> int:
    code = list(ModelClass).index(ModelClass(model_class))
    return int(np.random.SeedSequence([master_seed, code, index]).generate_state(1)[0])


def _fit(task):
    model_class, model_id, seed, cfg, train, val = task
    try:
        if model_class is ModelClass.PAIR:
            (X, y), (vX, vy) = train, val
            model = train_gbdt(X, y, vX, vy, replace(cfg, seed=seed))
            scores = model.raw_scores(vX)
            return ModelRecord(model_id, seed, log_loss(scores, vy), float(np.mean(scores.argmax(axis=1) == vy)), model)
        (G, y), (vG, vy) = train, val
        res = train_gnn(G, y, vG, vy, replace(cfg, seed=seed))
        return ModelRecord(model_id, seed, res.val_loss, res.val_accuracy, res.model)
    except Exception as exc:  # noqa: BLE001 - re-raised with the failing seed named
        raise TrainingError(f"{model_id} (seed {seed}) failed: {exc}") from exc


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def train_population(train: EncodedSplit, val: EncodedSplit, model_class, num_models: int, base_config=None,
                     master_seed: int = 0, jobs: int = 1, seeds=None) -> list[ModelRecord]:
    """Train ``num_models`` models on the fixed split, one derived seed each."""
    model_class = ModelClass(model_class)
    if num_models < 2:
        raise InputError("a population needs at least 2 models")
    if seeds is None:
        seeds = [derive_seed(master_seed, model_class, i) for i in range(num_models)]
    elif len(seeds) != num_models:
        raise InputError("one seed per model required")
    if model_class is ModelClass.PAIR:
        cfg = base_config or TrainConfig()
        data = (train.pair_rows(), val.pair_rows())
    else:
        cfg = base_config or GnnConfig()
        data = (train.graphs(), val.graphs())
    tasks = [(model_class, f"{model_class.value}-{i:03d}", int(s), cfg, *data) for i, s in enumerate(seeds)]
    return _map(_fit, tasks, jobs)


# --- explanations -------------------------------------------------------------


@dataclass(frozen=True)
class ExplanationRecord:
    scene_id: str
    model_id: str
    model_class: str
    chosen_object: str
    correct: bool | None  # None when the scene carries no annotation
    ranking: FeatureRanking
    attribution: np.ndarray


def explain_scene(model, model_class: ModelClass, scene: Scene, qxg: QXG, ig_steps: int = 128) -> tuple[str, np.ndarray]:
    """Chosen object and the attribution of its features for the observed action."""
    actor = scene.ego.object_id
    if model_class is ModelClass.PAIR:
        star = extract_star_graph(qxg, actor)
        chosen, _ = pick_relevant_object(model, star, scene.action, scene.num_frames)
        ids, X = star_features(star, scene.num_frames)
        phi, _ = tree_shap(model, X[ids.index(chosen)], scene.action)
        return chosen, phi
    chosen, results = pick_relevant_object_gnn(model, qxg, actor, scene.action, ig_steps)
    return chosen, results[chosen].attribution


def _explain_member(task):
    record, model_class, split, ig_steps = task
    out, skipped = [], []
    for scene, g in zip(split.scenes, split.qxgs):
        try:
            chosen, attr = explain_scene(record.model, model_class, scene, g, ig_steps)
        except NoCandidatesError as exc:
            skipped.append((scene.scene_id, record.model_id, str(exc)))
            continue
        correct = None if scene.relevant_object is None else chosen == scene.relevant_object
        out.append(ExplanationRecord(scene.scene_id, record.model_id, model_class.value, chosen, correct, to_ranking(attr), attr))
    return out, skipped


def collect_explanations(rset: RashomonSet, split: EncodedSplit, model_class, ig_steps: int = 128, jobs: int = 1):
    """One record per (member, scene); returns ``(records, skipped)``.

    Records are ordered by scene, then by member order.
    """
    model_class = ModelClass(model_class)
    missing = [s.scene_id for s in split.scenes if s.relevant_object is None]
    if missing:
        raise InputError(f"scenes without a relevant-object annotation: {missing[:3]}")
    results = _map(_explain_member, [(m, model_class, split, ig_steps) for m in rset.members], jobs)
    records, skipped = [], []
    for recs, skips in results:
        records += recs
        skipped += skips
    for scene_id, model_id, reason in skipped:
        log.warning("skipped %s for %s: %s", scene_id, model_id, reason)
    order = {s.scene_id: i for i, s in enumerate(split.scenes)}
    member_pos = {m.model_id: i for i, m in enumerate(rset.members)}
    records.sort(key=lambda r: (order[r.scene_id], member_pos[r.model_id]))
    return records, skipped


def write_attribution_matrix(records, path, feature_names, comments=()) -> None:
    columns = ["scene_id", "model_id", "model_class", "correct", "chosen_object"] + list(feature_names)
    rows = ([r.scene_id, r.model_id, r.model_class, r.correct, r.chosen_object] + [float(v) for v in r.attribution] for r in records)
    write_csv(path, columns, rows, comments)


def mean_correctness(records) -> float:
    flags = [r.correct for r in records if r.correct is not None]
    return float(np.mean(flags)) if flags else math.nan

