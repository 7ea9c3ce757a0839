"""Run configuration, staged training, evaluation protocols and check suites."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import synth
from .errors import ConfigError, ContractError, NumericError
from .layers import Module
from .losses import cross_entropy, neg_pearson_loss
from .metrics import accuracy, auc, pearson_metric, write_metric_rows
from .networks import CNN1D, RSTAN, STAN, DeepRPPG, get_preset
from .optim import Adam
from .serialization import load_checkpoint, save_checkpoint
from .tensor import backward, no_grad, softmax

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
CONFIG_DIR = Path(__file__).parent / "configs"
MODELS = ("stan", "stan-no-attention", "rstan", "deep-rppg", "cnn1d", "early-fusion-flatten", "early-fusion-concat")
TASKS = ("binary", "five-class")
PROTOCOLS = ("holdout", "loso", "kfold", "cross-distribution")
FUSION_OF = {"rstan": "vfe", "early-fusion-flatten": "early-flatten", "early-fusion-concat": "early-concat"}


@dataclass
class RunConfig:
    task: str = "binary"
    model: str = "rstan"
    preset: str = "toy"
    lr: float = 2e-4
    lr_rppg: float | None = None  # stage-1 learning rate; None means lr
    gamma: float = 0.8
    decay_epochs: int = 10
    lambda_rppg: float = 0.5
    epochs_rppg: int = 20
    epochs_cls: int = 15
    epochs_joint: int = 10
    batch_size: int = 4
    seed: int = 0
    manifest: str | None = None  # None: generate the default synthetic set in memory
    data_seed: int = 0
    protocol: str = "holdout"
    k: int = 5
    fold: int | None = None  # train a single fold of loso/kfold
    sampler: str = "downsampled"
    clip_length: int = 64
    omit_first: int = 10
    rppg_all_labels: bool = True  # stage 1 uses every pain level of the training subjects
    eval_train: bool = False
    run_dir: str = "runs"
    version: int = CONFIG_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version!r}")
        for name, value, allowed in (("task", self.task, TASKS), ("model", self.model, MODELS),
                                     ("protocol", self.protocol, PROTOCOLS)):
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        if self.sampler not in ("downsampled", "random64", "multisegment"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if self.batch_size < 1 or min(self.epochs_rppg, self.epochs_cls, self.epochs_joint) < 0:
            raise ConfigError("batch_size must be >= 1 and epoch counts >= 0")
        if self.lr <= 0 or (self.lr_rppg is not None and self.lr_rppg <= 0):
            raise ConfigError("learning rates must be positive")
        if self.lambda_rppg < 0:
            raise ConfigError("lambda_rppg must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Read a JSON config; a bare name such as ``rstan_toy`` picks a shipped one."""
        path = Path(path)
        if not path.exists() and (CONFIG_DIR / f"{path.name}.json").exists():
            path = CONFIG_DIR / f"{path.name}.json"
        if not path.exists():
            raise ConfigError(f"no config file {str(path)!r}; shipped configs: {shipped_configs()}")
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @property
    def run_id(self) -> str:
        d = self.to_dict()
        d.pop("run_dir")
        return f"{self.model}-{hashlib.sha1(json.dumps(d, sort_keys=True).encode()).hexdigest()[:10]}"

    @property
    def num_classes(self) -> int:
        return 2 if self.task == "binary" else synth.NUM_LEVELS

    @property
    def label_map(self) -> dict:
        return {0: 0, 4: 1} if self.task == "binary" else {i: i for i in range(synth.NUM_LEVELS)}

    def sampler_config(self) -> synth.SamplerConfig:
        return synth.SamplerConfig(self.sampler, self.clip_length, self.omit_first)


def shipped_configs() -> list[str]:
    return sorted(p.stem for p in CONFIG_DIR.glob("*.json"))


@dataclass
class RunRecord:
    run_id: str
    config: RunConfig
    rows: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    final: dict = field(default_factory=dict)  # fold -> {metric: value}


# ---------------------------------------------------------------------------
# data

@lru_cache(maxsize=4)
def _generated(seed: int, distribution: str) -> tuple:
    cfg = synth.GeneratorConfig(seed=seed)
    if distribution == "B":
        cfg = synth.distribution_b(cfg)
    return tuple(synth.generate_dataset(cfg))


def load_samples(config: RunConfig, distribution: str = "A") -> list:
    if config.manifest and distribution == "A":
        return synth.load_dataset(config.manifest)
    return list(_generated(config.data_seed, distribution))


def folds_for(config: RunConfig, subjects) -> list[synth.Fold]:
    if config.protocol == "loso":
        folds = synth.split_loso(subjects)
    elif config.protocol in ("kfold", "holdout", "cross-distribution"):
        folds = synth.split_kfold(subjects, config.k, seed=config.data_seed)
        if config.protocol != "kfold":
            folds = folds[:1]
    else:
        raise ConfigError(f"unknown protocol {config.protocol!r}")
    if config.fold is not None:
        if not 0 <= config.fold < len(folds):
            raise ContractError(f"fold {config.fold} out of range for {len(folds)} folds")
        return [folds[config.fold]]
    return folds


def _clipset(samples, config: RunConfig, subjects, labels=None, keep_all_labels=False) -> synth.ClipSet:
    subjects = set(subjects)
    lm = config.label_map
    chosen = [s for s in samples if s.subject_id in subjects and (keep_all_labels or s.label in lm)]
    if not chosen:
        raise ContractError("no samples for the requested subjects/labels")
    label_map = None if keep_all_labels else lm
    return synth.build_clips(chosen, config.sampler_config(), seed=config.seed, label_map=label_map)


# ---------------------------------------------------------------------------
# models

def build_model(config: RunConfig) -> Module:
    cfg = get_preset(config.preset, clip_length=config.clip_length)
    if config.model == "stan":
        return STAN(cfg, config.num_classes, config.seed)
    if config.model == "stan-no-attention":
        return STAN(cfg, config.num_classes, config.seed, attention=False)
    if config.model == "deep-rppg":
        return DeepRPPG(cfg, config.seed)
    if config.model == "cnn1d":
        return CNN1D(config.num_classes, length=config.clip_length, seed=config.seed)
    return RSTAN(cfg, config.num_classes, config.seed, fusion=FUSION_OF[config.model])


def _logits(model, x):
    if isinstance(model, CNN1D):
        return model(x)
    out = model(x)
    return out.logits if hasattr(out, "logits") else out[0]


def _inputs(model, cs: synth.ClipSet):
    return cs.pulses if isinstance(model, CNN1D) else cs.clips


def predict_scores(model, cs: synth.ClipSet, batch: int = 20) -> np.ndarray:
    """Class probabilities per clip, eval mode, no tape."""
    model.eval()
    x = _inputs(model, cs)
    out = []
    with no_grad():
        for i in range(0, len(cs), batch):
            out.append(softmax(_logits(model, x[i:i + batch]), -1).data)
    return np.concatenate(out)


def video_level(probs: np.ndarray, cs: synth.ClipSet) -> tuple[np.ndarray, np.ndarray]:
    """Average clip probabilities per source video (multisegment)."""
    ids, inv = np.unique(cs.source, return_inverse=True)
    p = np.zeros((len(ids), probs.shape[1]))
    np.add.at(p, inv, probs)
    p /= np.bincount(inv)[:, None]
    labels = np.zeros(len(ids), dtype=int)
    labels[inv] = cs.labels
    return p, labels


def classification_metrics(model, cs: synth.ClipSet) -> dict:
    probs, labels = video_level(predict_scores(model, cs), cs)
    m = {"accuracy": accuracy(probs.argmax(1), labels)}
    if probs.shape[1] == 2 and len(set(labels.tolist())) == 2:
        m["auc"] = auc(probs[:, 1], labels)
    return m


def rppg_metrics(model, cs: synth.ClipSet, batch: int = 20) -> dict:
    rppg = model.rppg if isinstance(model, RSTAN) else model
    rppg.eval()
    rs = []
    with no_grad():
        for i in range(0, len(cs), batch):
            pred, _ = rppg(cs.clips[i:i + batch])
            rs += [pearson_metric(p, t) for p, t in zip(pred.data, cs.pulses[i:i + batch])]
    return {"pearson": float(np.mean(rs))}


# ---------------------------------------------------------------------------
# training

class _Stage:
    def __init__(self, name, module, epochs, lr, loss_fn, data, config):
        self.name, self.module, self.epochs, self.lr = name, module, epochs, lr
        self.loss_fn, self.data, self.config = loss_fn, data, config


def _run_stage(st: _Stage, fold_idx: int, stage_idx: int, config: RunConfig, evaluate_fn, ckpt_path: Path,
               full_model: Module, emit, run_id: str) -> None:
    opt = Adam(st.module.named_parameters(), lr=st.lr, gamma=config.gamma, step_epochs=config.decay_epochs)
    n = len(st.data)
    for epoch in range(st.epochs):
        opt.set_epoch(epoch)
        st.module.train()
        rng = np.random.default_rng([config.seed, fold_idx, stage_idx, epoch])
        perm = rng.permutation(n)
        losses = []
        for i in range(0, n, config.batch_size):
            idx = perm[i:i + config.batch_size]
            opt.zero_grad()
            try:
                loss = st.loss_fn(st.module, st.data.subset(idx))
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError(f"loss became {value}")
                backward(loss)
                opt.step()
            except NumericError as e:
                good = ckpt_path if ckpt_path.exists() else "none yet"
                raise NumericError(f"{st.name} stage, epoch {epoch}: {e}; last good checkpoint: {good}") from e
            losses.append(value)
        save_checkpoint(ckpt_path, full_model.state_dict())
        base = dict(run_id=run_id, stage=st.name, epoch=epoch, fold=fold_idx)
        epoch_rows = [dict(base, split="train", metric="loss", value=float(np.mean(losses)))]
        for split, metrics in evaluate_fn(st.name).items():
            for k, v in metrics.items():
                epoch_rows.append(dict(base, split=split, metric=k, value=v))
        emit(epoch_rows)
        log.info("fold %d %s epoch %d loss %.4f", fold_idx, st.name, epoch, np.mean(losses))


def _rppg_loss(module, b):
    pred, _ = module(b.clips)
    return neg_pearson_loss(pred, b.pulses, degenerate="neutral")


def _cls_loss(module, b):
    return cross_entropy(_logits(module, _inputs(module, b)), b.labels)


def joint_loss(lambda_rppg: float):
    def f(module, b):
        out = module(b.clips)
        return cross_entropy(out.logits, b.labels) + lambda_rppg * neg_pearson_loss(
            out.rppg_pred, b.pulses, degenerate="neutral")
    return f


def train_fold(config: RunConfig, samples, fold: synth.Fold, fold_idx: int, run_dir: Path, emit) -> tuple:
    model = build_model(config)
    train_cs = _clipset(samples, config, fold.train_subjects)
    test_cs = _clipset(samples, config, fold.test_subjects)
    ckpt = run_dir / f"fold{fold_idx}.ckpt"
    lr_rppg = config.lr_rppg or config.lr

    def evaluate_fn(stage):
        out = {}
        if stage == "rppg":
            out["test"] = rppg_metrics(model, test_cs)
        else:
            out["test"] = classification_metrics(model, test_cs)
            if config.eval_train:
                out["train"] = classification_metrics(model, train_cs)
            if stage == "joint":
                out["test"].update(rppg_metrics(model, test_cs))
        return out

    stages = []
    if config.model == "deep-rppg":
        rppg_cs = _clipset(samples, config, fold.train_subjects, keep_all_labels=config.rppg_all_labels)
        stages.append(_Stage("rppg", model, config.epochs_rppg, lr_rppg, _rppg_loss, rppg_cs, config))
    elif config.model in FUSION_OF:
        rppg_cs = _clipset(samples, config, fold.train_subjects, keep_all_labels=config.rppg_all_labels)
        stages.append(_Stage("rppg", model.rppg, config.epochs_rppg, lr_rppg, _rppg_loss, rppg_cs, config))
        stages.append(_Stage("cls", model.stan, config.epochs_cls, config.lr, _cls_loss, train_cs, config))
        stages.append(_Stage("joint", model, config.epochs_joint, config.lr, joint_loss(config.lambda_rppg),
                             train_cs, config))
    elif config.model == "cnn1d":
        stages.append(_Stage("cls", model, config.epochs_cls, config.lr, _cls_loss, train_cs, config))
    else:
        # single-branch classifiers get the same number of classification epochs as rSTAN's stages 2+3
        stages.append(_Stage("cls", model, config.epochs_cls + config.epochs_joint, config.lr, _cls_loss,
                             train_cs, config))

    def staged_eval(stage):
        # a stage that trains a sub-module of rSTAN is scored with that sub-module
        if stage == "cls" and isinstance(model, RSTAN):
            out = {"test": classification_metrics(model.stan, test_cs)}
            if config.eval_train:
                out["train"] = classification_metrics(model.stan, train_cs)
            return out
        return evaluate_fn(stage)

    for i, st in enumerate(stages):
        _run_stage(st, fold_idx, i, config, staged_eval, ckpt, model, emit, config.run_id)
    if not stages or all(st.epochs == 0 for st in stages):
        save_checkpoint(ckpt, model.state_dict())
    final = rppg_metrics(model, test_cs) if config.model == "deep-rppg" else classification_metrics(model, test_cs)
    meta = dict(fold=fold_idx, test_subjects=fold.test_subjects, train_subjects=fold.train_subjects,
                protocol=config.protocol, task=config.task, model=config.model)
    (run_dir / f"fold{fold_idx}.json").write_text(json.dumps(meta, indent=1))
    return model, ckpt, final


def train(config: RunConfig, samples=None) -> RunRecord:
    """Train every fold of ``config.protocol``; writes checkpoints, metadata
    and ``metrics.csv`` under ``run_dir/run_id``."""
    samples = load_samples(config) if samples is None else samples
    run_dir = Path(config.run_dir) / config.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    config.save(run_dir / "config.json")
    csv_path = run_dir / "metrics.csv"
    if csv_path.exists():
        csv_path.unlink()
    record = RunRecord(config.run_id, config)
    subjects = sorted({s.subject_id for s in samples})
    folds = folds_for(config, subjects)
    fold_ids = [config.fold] if config.fold is not None else range(len(folds))

    def emit(rows):
        write_metric_rows(csv_path, rows)
        record.rows.extend(rows)

    for fold_idx, fold in zip(fold_ids, folds):
        _, ckpt, final = train_fold(config, samples, fold, fold_idx, run_dir, emit)
        record.checkpoints.append(str(ckpt))
        record.final[fold_idx] = final
        emit([dict(run_id=config.run_id, stage="final", epoch=-1, split="test", fold=fold_idx, metric=k, value=v)
              for k, v in final.items()])
    if len(record.final) > 1:
        emit([dict(run_id=config.run_id, stage="final", epoch=-1, split="test", fold="mean", metric=k, value=v)
              for k, v in _aggregate(record.final).items()])
    return record


def _aggregate(per_fold: dict) -> dict:
    keys = set.intersection(*(set(m) for m in per_fold.values()))
    return {k: float(np.mean([m[k] for m in per_fold.values()])) for k in sorted(keys)}


# ---------------------------------------------------------------------------
# evaluation

def load_run_model(checkpoint) -> tuple[Module, RunConfig, dict]:
    checkpoint = Path(checkpoint)
    cfg_path = checkpoint.parent / "config.json"
    meta_path = checkpoint.with_suffix(".json")
    if not cfg_path.exists() or not meta_path.exists():
        raise ContractError(f"{checkpoint}: expected config.json and {meta_path.name} beside the checkpoint")
    config = RunConfig.load(cfg_path)
    model = build_model(config)
    model.load_state_dict(load_checkpoint(checkpoint))
    model.eval()
    return model, config, json.loads(meta_path.read_text())


def evaluate(checkpoint, manifest=None, protocol: str | None = None, task: str | None = None,
             samples=None) -> dict:
    """Metrics of a trained fold checkpoint on its held-out subjects.

    ``protocol="cross-distribution"`` instead scores every subject of the
    shifted generator (or of ``manifest`` when given).
    """
    model, config, meta = load_run_model(checkpoint)
    protocol = protocol or meta["protocol"]
    task = task or meta["task"]
    if task != meta["task"]:
        raise ContractError(f"checkpoint was trained for task {meta['task']!r}, asked to evaluate {task!r}")
    if protocol not in PROTOCOLS:
        raise ContractError(f"unknown protocol {protocol!r}")
    if protocol == "cross-distribution":
        if samples is None:
            samples = synth.load_dataset(manifest) if manifest else load_samples(config, distribution="B")
        subjects = sorted({s.subject_id for s in samples})
    else:
        if protocol != meta["protocol"]:
            raise ContractError(f"checkpoint belongs to a {meta['protocol']!r} fold, cannot evaluate under {protocol!r}")
        if samples is None:
            samples = synth.load_dataset(manifest) if manifest else load_samples(config)
        subjects = meta["test_subjects"]
        missing = set(subjects) - {s.subject_id for s in samples}
        if missing:
            raise ContractError(f"fold subjects {sorted(missing)} not present in the dataset")
    cs = _clipset(samples, config, subjects)
    if config.model == "deep-rppg":
        return rppg_metrics(model, cs)
    m = classification_metrics(model, cs)
    if isinstance(model, RSTAN):
        m.update(rppg_metrics(model, cs))
    return m


def export_scores(checkpoint, samples=None) -> tuple[np.ndarray, np.ndarray]:
    """Video-level class-1 scores and labels on a fold's test subjects (binary task)."""
    model, config, meta = load_run_model(checkpoint)
    samples = load_samples(config) if samples is None else samples
    cs = _clipset(samples, config, meta["test_subjects"])
    probs, labels = video_level(predict_scores(model, cs), cs)
    return probs[:, -1], labels


# ---------------------------------------------------------------------------
# input-structure comparison

STRUCTURES = ("downsampled", "random64", "multisegment")


def compare_input_structures(config: RunConfig, structures=STRUCTURES, samples=None, out_csv=None) -> list[dict]:
    """Train STAN under each sampling structure on identical k-fold splits.

    Returns one row per (structure, fold) with the fold's test accuracy.
    """
    samples = load_samples(config) if samples is None else samples
    if min(len(s.frames) for s in samples) < 128:
        raise ContractError("input-structure comparison needs at least 128 raw frames per clip")
    table = []
    for structure in structures:
        cfg = RunConfig.from_dict(dict(config.to_dict(), model="stan", sampler=structure, protocol="kfold"))
        rec = train(cfg, samples)
        for fold_idx, m in sorted(rec.final.items()):
            table.append(dict(structure=structure, fold=fold_idx, seed=config.seed, accuracy=m["accuracy"]))
    if out_csv is not None:
        import csv

        with open(out_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["structure", "fold", "seed", "accuracy"], lineterminator="\n")
            w.writeheader()
            w.writerows(table)
    return table
