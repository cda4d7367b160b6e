"""Configuration and stage orchestration.

Every stage reads and writes files in one artifact directory, so any stage
can be rerun on its own:

    gen -> qxg -> train-pair / train-graph -> select -> explain -> agree -> report
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .agreement import CONDITIONS, agreement_by_group
from .artifacts import header_line, read_csv, sha256_file, write_csv, write_text
from .attribution import to_ranking
from .calculi import CalculiConfig
from .errors import ConfigError, QxgError, StageError
from .gbdt import GbdtModel, TrainConfig
from .graph_net import GnnConfig, GnnModel
from .qxg import QXG, build_qxg, feature_names
from .rashomon import (
    EncodedSplit,
    ExplanationRecord,
    ModelClass,
    ModelRecord,
    RashomonCriterion,
    RashomonSet,
    collect_explanations,
    select_rashomon,
    train_population,
    write_attribution_matrix,
    write_manifest,
)
from .report import emit_report
from .scene_gen import GenConfig, generate_dataset, load_scenes, save_scenes

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
# keys that change where or how fast results are produced, never what they are
NON_SEMANTIC_KEYS = ("output_dir", "jobs")


@dataclass(frozen=True)
class PipelineConfig:
    master_seed: int = 0
    generator: GenConfig = field(default_factory=GenConfig)
    calculi: CalculiConfig = field(default_factory=CalculiConfig)
    pair_model: TrainConfig = field(default_factory=TrainConfig)
    graph_model: GnnConfig = field(default_factory=GnnConfig)
    pair_population: int = 100
    graph_population: int = 116
    criterion: RashomonCriterion = field(default_factory=RashomonCriterion)
    k_max: int = 20
    ig_steps: int = 128
    model_classes: tuple[str, ...] = ("pair", "graph")
    output_dir: str = "runs/default"
    jobs: int = 1

    def __post_init__(self):
        if self.generator.seed != self.master_seed:
            object.__setattr__(self, "generator", replace(self.generator, seed=self.master_seed))
        object.__setattr__(self, "model_classes", tuple(ModelClass(c).value for c in self.model_classes))
        if self.k_max < 1 or self.ig_steps < 1 or self.jobs < 1:
            raise ConfigError("k_max, ig_steps and jobs must be >= 1")
        if min(self.pair_population, self.graph_population) < 2:
            raise ConfigError("populations need at least 2 models")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["criterion"] = {"mode": self.criterion.mode.value, "epsilon": self.criterion.epsilon}
        d["generator"].pop("seed")
        for key in ("pair_model", "graph_model"):
            d[key].pop("seed")
        return json.loads(json.dumps(d))  # tuples -> lists

    def config_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in NON_SEMANTIC_KEYS}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def header(self) -> str:
        return header_line(self.config_hash())

    def population(self, model_class) -> int:
        return self.pair_population if ModelClass(model_class) is ModelClass.PAIR else self.graph_population

    def model_config(self, model_class):
        return self.pair_model if ModelClass(model_class) is ModelClass.PAIR else self.graph_model


_SECTIONS = {"generator": GenConfig, "calculi": CalculiConfig, "pair_model": TrainConfig, "graph_model": GnnConfig,
             "criterion": RashomonCriterion}


def config_from_dict(d: dict) -> PipelineConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    known = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    kwargs = {}
    for key, value in d.items():
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            allowed = {f.name for f in fields(cls)} - {"seed"}
            bad = sorted(set(value) - allowed)
            if bad:
                raise ConfigError(f"unknown keys in {key!r}: {bad}")
            try:
                kwargs[key] = cls(**value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {key!r} section: {exc}") from None
        else:
            kwargs[key] = value
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> PipelineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return config_from_dict(data or {})


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


# --- stage helpers ------------------------------------------------------------


def _scenes_path(out: Path) -> Path:
    return out / "scenes.jsonl"


def _qxgs_path(out: Path) -> Path:
    return out / "qxgs.jsonl"


def load_splits(out: Path) -> dict[str, EncodedSplit]:
    ds = load_scenes(_scenes_path(out))
    graphs = {}
    with open(_qxgs_path(out), encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                g = QXG.from_json(json.loads(line))
                graphs[g.scene_id] = g
    splits = {}
    for name in SPLITS:
        scenes = ds.subset(name)
        T = scenes[0].num_frames if scenes else ds.scenes[0].num_frames
        splits[name] = EncodedSplit(scenes, [graphs[s.scene_id] for s in scenes], T)
    return splits


def _model_path(out: Path, model_id: str) -> Path:
    return out / "models" / f"{model_id}.json"


def _load_model(out: Path, model_class: ModelClass, model_id: str):
    text = _model_path(out, model_id).read_text(encoding="utf-8")
    return GbdtModel.from_json(text) if model_class is ModelClass.PAIR else GnnModel.from_json(text)


def _read_population(path) -> list[ModelRecord]:
    _, rows = read_csv(path)
    return [ModelRecord(r["model_id"], int(r["seed"]), float(r["val_loss"]), float(r["val_score"])) for r in rows]


def _read_records(path, model_class: str) -> list[ExplanationRecord]:
    _, rows = read_csv(path)
    fixed = ("scene_id", "model_id", "model_class", "correct", "chosen_object")
    out = []
    for r in rows:
        scores = np.asarray([float(v) for k, v in r.items() if k not in fixed])
        correct = None if r["correct"] == "" else r["correct"] == "1"
        out.append(ExplanationRecord(r["scene_id"], r["model_id"], model_class, r["chosen_object"], correct, to_ranking(scores), scores))
    return out


# --- stages ---------------------------------------------------------------------


def stage_gen(cfg: PipelineConfig, out: Path) -> None:
    ds = generate_dataset(cfg.generator)
    out.mkdir(parents=True, exist_ok=True)
    save_scenes(ds, _scenes_path(out), header=cfg.header()[2:])


def stage_qxg(cfg: PipelineConfig, out: Path) -> None:
    ds = load_scenes(_scenes_path(out))
    lines = [cfg.header()]
    lines += [json.dumps(build_qxg(s, cfg.calculi).to_json(), sort_keys=True) for s in ds.scenes]
    write_text(_qxgs_path(out), "\n".join(lines) + "\n")


def stage_train(cfg: PipelineConfig, out: Path, model_class) -> None:
    model_class = ModelClass(model_class)
    splits = load_splits(out)
    pop = train_population(splits["train"], splits["val"], model_class, cfg.population(model_class),
                           cfg.model_config(model_class), cfg.master_seed, cfg.jobs)
    for r in pop:
        write_text(_model_path(out, r.model_id), r.model.to_json() + "\n")
    write_csv(out / f"population_{model_class.value}.csv", ["model_id", "seed", "val_loss", "val_score"],
              ([r.model_id, r.seed, r.val_loss, r.val_score] for r in pop), [cfg.header()])


def stage_select(cfg: PipelineConfig, out: Path, classes) -> None:
    for c in classes:
        pop = _read_population(out / f"population_{c}.csv")
        write_manifest(select_rashomon(pop, cfg.criterion), out / f"rashomon_{c}.csv", [cfg.header()])


def stage_explain(cfg: PipelineConfig, out: Path, classes) -> None:
    test = load_splits(out)["test"]
    names = feature_names(test.num_frames)
    for c in classes:
        mc = ModelClass(c)
        pop = _read_population(out / f"population_{c}.csv")
        _, manifest = read_csv(out / f"rashomon_{c}.csv")
        members = {r["model_id"] for r in manifest if r["member"] == "1"}
        records = [replace(r, model=_load_model(out, mc, r.model_id)) for r in pop if r.model_id in members]
        rset = RashomonSet(cfg.criterion, tuple(records), tuple(range(len(records))), 0)
        recs, skipped = collect_explanations(rset, test, mc, cfg.ig_steps, cfg.jobs)
        write_attribution_matrix(recs, out / f"attributions_{c}.csv", names, [cfg.header()])
        write_csv(out / f"explain_skipped_{c}.csv", ["scene_id", "model_id", "reason"], skipped, [cfg.header()])


def stage_agree(cfg: PipelineConfig, out: Path, classes) -> None:
    records = []
    for c in classes:
        records += _read_records(out / f"attributions_{c}.csv", c)
    groups = {(g.model_class, g.condition): g for g in agreement_by_group(records, cfg.k_max)}
    topk, wrows = [], []
    for c in classes:
        for cond in CONDITIONS:
            g = groups.get((c, cond))
            if g is None or g.empty:
                wrows.append([c, cond, None, None, None, None, 0, 0 if g is None else g.n_skipped])
                continue
            for k, (m, s) in enumerate(zip(g.kappa_mean, g.kappa_std), start=1):
                topk.append([c, cond, k, float(m), float(s), g.n_scenes])
            wrows.append([c, cond, g.w_mean, g.w_std, g.w_min, g.w_max, g.n_scenes, g.n_skipped])
    write_csv(out / "agreement_topk.csv", ["model_class", "condition", "k", "kappa_mean", "kappa_std", "n_scenes"], topk, [cfg.header()])
    write_csv(out / "agreement_w.csv", ["model_class", "condition", "mean", "std", "min", "max", "n_scenes", "n_skipped"], wrows, [cfg.header()])


def stage_report(cfg: PipelineConfig, out: Path) -> None:
    emit_report(out, cfg.header(), cfg.k_max)


def write_checksums(cfg: PipelineConfig, out: Path) -> None:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "tool": "rashomon-qxg",
        "config_hash": cfg.config_hash(),
        "artifacts": {p.relative_to(out).as_posix(): sha256_file(p) for p in files},
    }
    write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def prepare_output(cfg: PipelineConfig, out) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"{out} is not writable")
        write_text(out / "config.yaml", f"{cfg.header()}\n{dump_config(cfg)}")
    except OSError as exc:
        raise StageError("setup", exc) from exc
    return out


def run_stage(name: str, fn, *args) -> None:
    log.info("stage %s", name)
    try:
        fn(*args)
    except (QxgError, OSError, KeyError, ValueError) as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(name, exc) from exc
    write_checksums(args[0], args[1])


def run_pipeline(cfg: PipelineConfig, out=None) -> Path:
    """Run every stage in order; returns the artifact directory."""
    out = prepare_output(cfg, out or cfg.output_dir)
    classes = list(cfg.model_classes)
    run_stage("gen", stage_gen, cfg, out)
    run_stage("qxg", stage_qxg, cfg, out)
    for c in classes:
        run_stage(f"train-{c}", stage_train, cfg, out, c)
    run_stage("select", stage_select, cfg, out, classes)
    run_stage("explain", stage_explain, cfg, out, classes)
    run_stage("agree", stage_agree, cfg, out, classes)
    run_stage("report", stage_report, cfg, out)
    return out

