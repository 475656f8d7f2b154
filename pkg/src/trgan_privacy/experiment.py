"""Config-driven study: phantoms -> split -> TrGAN training -> per-checkpoint evaluation.

Stage seeds are derived from the master seed as the first four bytes
(little-endian) of ``sha256(f"{master}/{stage}")``; repeat-specific stages use
the stage name ``r{repeat}/{name}``. Re-running a single stage therefore needs
only the master seed.
"""
from __future__ import annotations

import contextlib
import csv
import dataclasses
import hashlib
import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import __version__
from .attacks import (AttackNetConfig, AttackResult, AttackScenario, discriminator_attack,
                      generator_attack)
from .metrics import FidelityScore, PrivacyUtilityPoint, privacy_protection, utility_augmentation, \
    utility_synthetic
from .radiomics import (DegenerateFeatureError, correlation_accuracy, correlation_mse,
                        feature_correlations, radiomic_features)
from .segmenter import SegConfig, SegmenterNet, save_segmenter, train_segmenter
from .trgan import Checkpoint, TrganConfig, generate_population, load_checkpoint, save_checkpoint, \
    train_trgan
from .volume import PhantomConfig, Sample, Volume, generate_phantom, split_dataset

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc


def stage_seed(master: int, name: str) -> int:
    digest = hashlib.sha256(f"{master}/{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass(frozen=True)
class SplitSpec:
    dataset_size: int = 16
    holdout: int = 8
    attack_n: int = 16
    attack_m: int = 8


@dataclass(frozen=True)
class EvaluationSpec:
    cadence: int = 50
    generator_attack_step: Optional[int] = None  # None: final checkpoint
    fidelity_masks: str = "predicted"  # or "conditioning"
    augmentation: bool = False
    augmentation_real: int = 4  # size of the real-only set I2
    repeats: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    trgan: TrganConfig = field(default_factory=TrganConfig)
    segmenter: SegConfig = field(default_factory=SegConfig)
    attack: AttackNetConfig = field(default_factory=AttackNetConfig)
    evaluation: EvaluationSpec = field(default_factory=EvaluationSpec)
    output_dir: str = "runs/experiment"
    seed: int = 0

    def validate(self):
        s = self.split
        n_train = s.dataset_size - s.holdout
        if not 0 < s.holdout < s.dataset_size:
            raise ValueError("holdout must be in (0, dataset_size)")
        if not 0 < s.attack_m < s.attack_n:
            raise ValueError("attack needs 0 < m < n")
        if s.attack_m > n_train:
            raise ValueError(f"attack m={s.attack_m} exceeds training-set size {n_train}")
        if s.attack_n - s.attack_m > s.holdout:
            raise ValueError(f"attack needs {s.attack_n - s.attack_m} non-members, only "
                             f"{s.holdout} held out")
        if self.evaluation.cadence < 1 or self.evaluation.repeats < 1:
            raise ValueError("cadence and repeats must be >= 1")
        if self.evaluation.fidelity_masks not in ("predicted", "conditioning"):
            raise ValueError("fidelity_masks must be 'predicted' or 'conditioning'")
        if self.evaluation.augmentation and not 0 < self.evaluation.augmentation_real < n_train:
            raise ValueError("augmentation_real must be in (0, training-set size)")
        if tuple(self.phantom.dims) != tuple(self.trgan.dims):
            raise ValueError(f"phantom dims {self.phantom.dims} != trgan dims {self.trgan.dims}")
        self.phantom.validate()
        self.trgan.validate()
        self.segmenter.validate()
        self.attack.validate()

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"phantom": PhantomConfig, "split": SplitSpec, "trgan": TrganConfig,
             "segmenter": SegConfig, "attack": AttackNetConfig, "evaluation": EvaluationSpec}


def _build(cls, values: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    return cls(**values)


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc or {})
    unknown = set(doc) - set(_SECTIONS) - {"output_dir", "seed"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {name: _build(cls, doc.get(name) or {}) for name, cls in _SECTIONS.items()}
    if "output_dir" in doc:
        kwargs["output_dir"] = str(doc["output_dir"])
    if "seed" in doc:
        kwargs["seed"] = int(doc["seed"])
    return ExperimentConfig(**kwargs)


def load_config(path, seed: Optional[int] = None, steps: Optional[int] = None,
                out: Optional[str] = None) -> ExperimentConfig:
    """Read a YAML or JSON config file and apply command-line overrides."""
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        doc = json.loads(text)
    else:
        import yaml
        doc = yaml.safe_load(text)
    config = config_from_dict(doc)
    if seed is not None:
        config = dataclasses.replace(config, seed=int(seed))
    if steps is not None:
        config = dataclasses.replace(config, trgan=dataclasses.replace(config.trgan, total_steps=int(steps)))
    if out is not None:
        config = dataclasses.replace(config, output_dir=str(out))
    return config


def resolved_trgan_config(config: ExperimentConfig, repeat: int = 0) -> TrganConfig:
    return dataclasses.replace(config.trgan, checkpoint_interval=config.evaluation.cadence,
                               seed=stage_seed(config.seed, f"r{repeat}/trgan"))


# --- data --------------------------------------------------------------------

@dataclass
class Datasets:
    train: list[Sample]
    holdout: list[Sample]
    scenario: AttackScenario


def build_datasets(config: ExperimentConfig) -> Datasets:
    phantom = dataclasses.replace(config.phantom, seed=stage_seed(config.seed, "phantoms"))
    samples = [generate_phantom(phantom, i) for i in range(config.split.dataset_size)]
    by_id = {s.id: s for s in samples}
    split = split_dataset([s.id for s in samples], config.split.holdout,
                          stage_seed(config.seed, "split"))
    train = [by_id[i] for i in split.train_ids]
    holdout = [by_id[i] for i in split.holdout_ids]
    m = config.split.attack_m
    scenario = AttackScenario.build(train[:m], holdout[:config.split.attack_n - m])
    return Datasets(train=train, holdout=holdout, scenario=scenario)


# --- evaluation --------------------------------------------------------------

@dataclass
class CheckpointEvaluation:
    point: PrivacyUtilityPoint
    discriminator: AttackResult


def _features(volumes: Sequence[Volume], masks):
    out = []
    for v, m in zip(volumes, masks):
        if m.count() > 0:
            out.append(radiomic_features(v, m))
    return out


def fidelity_score(real: Sequence[Sample], synthetic: Sequence[Volume], synthetic_masks) -> Optional[FidelityScore]:
    """Correlation fidelity, or None when either population is too small or degenerate."""
    real_vec = _features([s.volume for s in real], [s.mask for s in real])
    syn_vec = _features(synthetic, synthetic_masks)
    try:
        real_corr = feature_correlations(real_vec)
        syn_corr = feature_correlations(syn_vec)
    except (ValueError, DegenerateFeatureError) as exc:
        log.warning("fidelity undefined: %s", exc)
        return None
    return FidelityScore(correlation_accuracy=correlation_accuracy(real_corr, syn_corr),
                         correlation_mse=correlation_mse(real_corr, syn_corr))


def train_reference_segmenter(config: ExperimentConfig, datasets: Datasets) -> SegmenterNet:
    seg = dataclasses.replace(config.segmenter, seed=stage_seed(config.seed, "reference-segmenter"))
    return train_segmenter([s.volume for s in datasets.train], [s.mask for s in datasets.train], seg)


def _match_repeat(checkpoint: Checkpoint, config: ExperimentConfig) -> int:
    for r in range(config.evaluation.repeats):
        if resolved_trgan_config(config, r).digest() == checkpoint.config_digest:
            return r
    raise ValueError(f"checkpoint config digest {checkpoint.config_digest} matches no repeat "
                     "of this experiment config; refusing to evaluate")


def evaluate_checkpoint(checkpoint: Checkpoint, datasets: Datasets, config: ExperimentConfig,
                        reference: Optional[SegmenterNet] = None) -> CheckpointEvaluation:
    """Fidelity, utility (synthetic-trained segmenter) and critic-attack privacy at one checkpoint."""
    repeat = _match_repeat(checkpoint, config)
    gen, disc = checkpoint.build(resolved_trgan_config(config, repeat))
    masks = [s.mask for s in datasets.train]
    synthetic = generate_population(gen, masks, stage_seed(config.seed, f"r{repeat}/synthesis"))

    if config.evaluation.fidelity_masks == "predicted":
        if reference is None:
            reference = train_reference_segmenter(config, datasets)
        syn_masks = [reference.segment(v) for v in synthetic]
    else:
        syn_masks = masks
    fidelity = fidelity_score(datasets.train, synthetic, syn_masks)

    seg = dataclasses.replace(config.segmenter,
                              seed=stage_seed(config.seed, f"r{repeat}/segmenter/{checkpoint.step}"))
    s_syn = train_segmenter(synthetic, masks, seg)
    utility = utility_synthetic(s_syn, datasets.holdout, seg.threshold)

    disc_result = discriminator_attack(disc, datasets.scenario, config.trgan.omega, checkpoint.step)
    auc = disc_result.auc
    point = PrivacyUtilityPoint(step=checkpoint.step, utility=utility, privacy=privacy_protection(auc),
                                fidelity=fidelity, auc=auc)
    return CheckpointEvaluation(point=point, discriminator=disc_result)


def augmentation_utility(gen, datasets: Datasets, config: ExperimentConfig) -> dict:
    """Gain in holdout DSC from adding synthetic volumes (from I1 masks) to real I2."""
    n_real = config.evaluation.augmentation_real
    i1, i2 = datasets.train[:-n_real], datasets.train[-n_real:]
    synthetic = generate_population(gen, [s.mask for s in i1], stage_seed(config.seed, "aug/synthesis"))
    seg = dataclasses.replace(config.segmenter, seed=stage_seed(config.seed, "aug/segmenter"))
    aug = train_segmenter(synthetic + [s.volume for s in i2], [s.mask for s in i1] + [s.mask for s in i2], seg)
    base = train_segmenter([s.volume for s in i2], [s.mask for s in i2], seg)
    gain = utility_augmentation(aug, base, datasets.holdout, seg.threshold)
    return {"utility_augmentation": gain, "n_synthetic": len(i1), "n_real": len(i2)}


# --- report ------------------------------------------------------------------

POINT_COLUMNS = ("repeat", "step", "auc", "privacy", "utility", "correlation_accuracy",
                 "correlation_mse", "auc_below_half")


def _fmt(x) -> str:
    if x is None:
        return "nan"
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class Report:
    points: list[list[PrivacyUtilityPoint]]
    attacks: dict[str, AttackResult]
    augmentation: Optional[dict] = None
    manifest: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0


def write_points_table(points: Sequence[Sequence[PrivacyUtilityPoint]], path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(POINT_COLUMNS) + "\n")
        for r, seq in enumerate(points):
            for p in seq:
                fid = p.fidelity
                row = (r, p.step, p.auc, p.privacy, p.utility,
                       None if fid is None else fid.correlation_accuracy,
                       None if fid is None else fid.correlation_mse, p.auc < 0.5)
                fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_points_table(path) -> list[list[PrivacyUtilityPoint]]:
    out: dict[int, list[PrivacyUtilityPoint]] = {}
    with open(path, encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            acc, mse = float(row["correlation_accuracy"]), float(row["correlation_mse"])
            fid = None if np.isnan(acc) else FidelityScore(acc, mse)
            out.setdefault(int(row["repeat"]), []).append(PrivacyUtilityPoint(
                step=int(row["step"]), utility=float(row["utility"]), privacy=float(row["privacy"]),
                fidelity=fid, auc=float(row["auc"])))
    return [out[k] for k in sorted(out)]


def save_report(report: Report, out_dir) -> Path:
    out = Path(out_dir)
    write_points_table(report.points, out / "points.csv")
    attack_files = {}
    for kind, res in sorted(report.attacks.items()):
        name = f"attack_{kind}.json"
        res.save(out / name)
        attack_files[kind] = name
    doc = {"points_table": "points.csv", "attacks": attack_files,
           "attack_summaries": {k: r.summary() for k, r in sorted(report.attacks.items())},
           "augmentation": report.augmentation, "manifest": report.manifest,
           "config": report.config, "versions": report.versions,
           "wall_clock_s": report.wall_clock_s}
    path = out / "report.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    return path


def load_report(path) -> Report:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    base = path.parent
    attacks = {k: AttackResult.load(base / v) for k, v in doc.get("attacks", {}).items()}
    return Report(points=read_points_table(base / doc["points_table"]), attacks=attacks,
                  augmentation=doc.get("augmentation"), manifest=doc.get("manifest", []),
                  config=doc.get("config", {}), versions=doc.get("versions", {}),
                  wall_clock_s=doc.get("wall_clock_s", 0.0))


def _versions() -> dict:
    import scipy
    return {"trgan_privacy": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "torch": torch.__version__}


def run_experiment(config: ExperimentConfig) -> Report:
    """Run the whole study and persist the report, tables, checkpoints and figures."""
    from .figures import emit_figures

    started = time.perf_counter()
    with stage("config"):
        config.validate()
        out = Path(config.output_dir)
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    with stage("phantoms"):
        datasets = build_datasets(config)
    with stage("reference-segmenter"):
        reference = train_reference_segmenter(config, datasets)
        save_segmenter(reference, out / "checkpoints" / "reference_segmenter")

    points: list[list[PrivacyUtilityPoint]] = []
    attacks: dict[str, AttackResult] = {}
    augmentation = None
    for repeat in range(config.evaluation.repeats):
        tcfg = resolved_trgan_config(config, repeat)
        with stage(f"trgan-training/r{repeat}"):
            checkpoints = train_trgan(datasets.train, tcfg)
            for ck in checkpoints:
                save_checkpoint(ck, out / "checkpoints" / f"trgan_r{repeat}_step{ck.step:06d}")
        seq = []
        for ck in checkpoints:
            with stage(f"evaluate/r{repeat}/step{ck.step}"):
                ev = evaluate_checkpoint(ck, datasets, config, reference)
            seq.append(ev.point)
        points.append(seq)
        if repeat > 0:
            continue
        target = config.evaluation.generator_attack_step
        chosen = checkpoints[-1] if target is None else next(
            (c for c in checkpoints if c.step == target), None)
        if chosen is None:
            raise StageError("generator-attack", f"no checkpoint at step {target}")
        gen, disc = chosen.build(tcfg)
        with stage("discriminator-attack"):
            attacks["discriminator"] = discriminator_attack(disc, datasets.scenario,
                                                            config.trgan.omega, chosen.step)
        with stage("generator-attack"):
            acfg = dataclasses.replace(config.attack, seed=stage_seed(config.seed, "attack"))
            attacks["generator"] = generator_attack(gen, datasets.scenario, acfg, chosen.step)
        if config.evaluation.augmentation:
            with stage("augmentation"):
                augmentation = augmentation_utility(gen, datasets, config)

    report = Report(points=points, attacks=attacks, augmentation=augmentation,
                    config=config.to_dict(), versions=_versions())
    with stage("figures"):
        report.manifest = emit_figures(report, out) + ["points.csv"] + \
            [f"attack_{kind}.json" for kind in sorted(attacks)]
    report.wall_clock_s = time.perf_counter() - started
    save_report(report, out)
    return report


def evaluate_checkpoint_file(checkpoint_path, config: ExperimentConfig) -> CheckpointEvaluation:
    with stage("load-checkpoint"):
        ck = load_checkpoint(checkpoint_path)
    with stage("phantoms"):
        datasets = build_datasets(config)
    with stage("evaluate"):
        return evaluate_checkpoint(ck, datasets, config)
