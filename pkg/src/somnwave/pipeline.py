"""End-to-end orchestration: load, featurize, split, select, train, evaluate."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.pipeline import Pipeline

from somnwave import __version__
from somnwave.config import config_from_dict
from somnwave.edf import EdfFile, Hypnogram, discover_recordings, load_hypnogram
from somnwave.evaluation import (
    MetricsReport,
    assert_no_leakage,
    evaluate,
    kfold_plan,
    rows_for,
    subject_split,
)
from somnwave.exceptions import DataError
from somnwave.features import FeatureMatrix, assemble_features
from somnwave.model.ensemble import SoftVotingEnsemble
from somnwave.preprocess import (
    bandpass_filter,
    is_artifact,
    preprocess_recording,
    segment_epochs,
    zscore_normalize,
)
from somnwave.select import PCAReducer, RFECVSelector
from somnwave.stages import SCORED_STAGES, SleepStage

logger = logging.getLogger(__name__)


# --- data loading -----------------------------------------------------------

def select_recordings(recordings, max_subjects=0):
    """Keep recordings of the first ``max_subjects`` subjects in sorted order."""
    if not max_subjects:
        return list(recordings)
    subjects = sorted({r.subject for r in recordings})[:max_subjects]
    keep = set(subjects)
    return [r for r in recordings if r.subject in keep]


def load_recording_epochs(rec, cfg):
    """Parse and preprocess one recording; returns ``(epochs, stats)``."""
    try:
        edf = EdfFile(rec.psg)
        trace = edf.read_signal(cfg.data.channel)
        hyp = load_hypnogram(rec.hypnogram, edf.header.duration_s())
        epochs, stats = preprocess_recording(
            trace, hyp, rec.subject, rec.night,
            filter_spec=cfg.preprocess.filter_spec(),
            policy=cfg.preprocess.artifact_policy(),
            wake_margin=cfg.preprocess.wake_margin,
        )
    except DataError as exc:
        if rec.psg.name in str(exc):
            raise
        raise type(exc)(f"{rec.psg.name}: {exc}") from exc
    return epochs, stats


def _featurize_recording(args):
    rec, cfg = args
    epochs, stats = load_recording_epochs(rec, cfg)
    fm = assemble_features(epochs, cfg.features.dwt, cfg.features.cwt)
    return fm, stats


def concat_features(parts):
    parts = [p for p in parts if len(p)]
    if not parts:
        raise DataError("no epochs survived preprocessing")
    first = parts[0]
    return FeatureMatrix(
        X=np.vstack([p.X for p in parts]),
        columns=first.columns,
        subjects=np.concatenate([p.subjects for p in parts]),
        nights=np.concatenate([p.nights for p in parts]),
        indices=np.concatenate([p.indices for p in parts]),
        stages=np.concatenate([p.stages for p in parts]),
    )


@dataclass
class Dataset:
    features: FeatureMatrix
    inputs: list
    stats: dict


def load_dataset(cfg, data_dir=None, jobs=None):
    """Discover, preprocess and featurize every selected recording.

    Recordings are processed by a pool of ``jobs`` workers; results are
    merged in recording order so the output does not depend on scheduling.
    """
    data_dir = Path(data_dir) if data_dir else cfg.data_dir()
    recordings = select_recordings(discover_recordings(data_dir), cfg.data.max_subjects)
    if not recordings:
        raise DataError(f"no PSG/hypnogram pairs found under {data_dir}")
    jobs = jobs or cfg.jobs
    work = [(rec, cfg) for rec in recordings]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_featurize_recording, work))
    else:
        results = [_featurize_recording(w) for w in work]
    stats = {rec.key: st for rec, (_, st) in zip(recordings, results)}
    inputs = [p for rec in recordings for p in (rec.psg, rec.hypnogram)]
    return Dataset(concat_features([fm for fm, _ in results]), inputs, stats)


# --- model pipeline ---------------------------------------------------------

def build_classifier(cfg):
    specs = cfg.model.specs(cfg.seed)
    if len(specs) == 1:
        return specs[0].build()
    members = [(spec.kind, spec.build()) for spec in specs]
    return SoftVotingEnsemble(members, weights=cfg.model.weights or None)


def build_pipeline(cfg):
    sel = cfg.select
    steps = [
        ("select", RFECVSelector(sel.n_folds, sel.step, sel.n_estimators, sel.max_depth,
                                 cfg.seed) if sel.rfecv else "passthrough"),
        ("pca", PCAReducer(sel.variance_target) if sel.pca else "passthrough"),
        ("clf", build_classifier(cfg)),
    ]
    return Pipeline(steps)


def fit_pipeline(pipe, fm):
    params = {}
    if isinstance(pipe.named_steps["select"], RFECVSelector):
        params["select__groups"] = fm.groups
    return pipe.fit(fm.X, fm.y, **params)


def majority_accuracy(y_train, y_test):
    values, counts = np.unique(y_train, return_counts=True)
    return float(np.mean(np.asarray(y_test) == values[np.argmax(counts)]))


def run_fold(cfg, fm, train_ids, test_ids, fold_id):
    """Fit on training subjects only and score the held-out subjects."""
    train = rows_for(fm.groups, train_ids)
    test = rows_for(fm.groups, test_ids)
    assert_no_leakage(fm.groups, train, test)
    train_fm = fm.subset(train)
    test_fm = fm.subset(test)
    pipe = fit_pipeline(build_pipeline(cfg), train_fm)
    pred = pipe.predict(test_fm.X)
    classes = [int(s) for s in SCORED_STAGES]
    report = evaluate(test_fm.y, pred, classes, fold=str(fold_id))
    report.extra = {
        "train_subjects": sorted(map(str, train_ids)),
        "test_subjects": sorted(map(str, test_ids)),
        "n_train": int(train.sum()),
        "n_test": int(test.sum()),
        "majority_accuracy": majority_accuracy(train_fm.y, test_fm.y),
    }
    return pipe, report


@dataclass
class ExperimentResult:
    mode: str
    reports: list
    plan: dict = field(default_factory=dict)

    def summary(self):
        keys = ("accuracy", "macro_f1", "kappa")
        out = {k: float(np.mean([getattr(r, k) for r in self.reports])) for k in keys}
        out["majority_accuracy"] = float(np.mean(
            [r.extra.get("majority_accuracy", 0.0) for r in self.reports]))
        out["n_folds"] = len(self.reports)
        return out

    def to_dict(self):
        return {"mode": self.mode, "plan": self.plan, "summary": self.summary(),
                "folds": [r.to_dict() for r in self.reports]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mode"], [MetricsReport.from_dict(f) for f in d["folds"]],
                   d.get("plan", {}))


def run_experiment(cfg, fm):
    """Holdout or subject-grouped k-fold evaluation, as configured."""
    subjects = sorted(set(fm.groups), key=str)
    reports = []
    if cfg.evaluation.mode == "holdout":
        plan = subject_split(subjects, tuple(cfg.evaluation.ratios), cfg.seed)
        plan.check_disjoint()
        pipe, report = run_fold(cfg, fm, plan.train, plan.test, "test")
        val = rows_for(fm.groups, plan.val)
        if val.any():
            val_report = evaluate(fm.y[val], pipe.predict(fm.X[val]),
                                  [int(s) for s in SCORED_STAGES], fold="val")
            report.extra["val_accuracy"] = val_report.accuracy
            report.extra["val_macro_f1"] = val_report.macro_f1
        reports.append(report)
        plan_dict = {"train": list(plan.train), "val": list(plan.val), "test": list(plan.test)}
    else:
        folds = kfold_plan(subjects, cfg.evaluation.k, cfg.seed)
        for i, (train_ids, test_ids) in enumerate(folds):
            logger.info("fold %d/%d: %d test subjects", i + 1, len(folds), len(test_ids))
            _, report = run_fold(cfg, fm, train_ids, test_ids, i)
            reports.append(report)
        plan_dict = {"folds": [list(t) for _, t in folds]}
    return ExperimentResult(cfg.evaluation.mode, reports, plan_dict)


# --- bundles and scoring ----------------------------------------------------

def bundle_payload(pipe, cfg, columns):
    sel = pipe.named_steps["select"]
    pca = pipe.named_steps["pca"]
    clf = pipe.named_steps["clf"]
    return {
        "software_version": __version__,
        "config": cfg.to_dict(),
        "feature_columns": tuple(columns),
        "classes": [int(c) for c in clf.classes_],
        "selection": sel.model_ if isinstance(sel, RFECVSelector) else None,
        "pca": pca.model_ if isinstance(pca, PCAReducer) else None,
        "classifier": clf,
    }


def pipeline_from_payload(payload):
    sel = payload["selection"]
    pca = payload["pca"]
    return Pipeline([
        ("select", RFECVSelector.from_model(sel) if sel is not None else "passthrough"),
        ("pca", PCAReducer.from_model(pca) if pca is not None else "passthrough"),
        ("clf", payload["classifier"]),
    ])


@dataclass
class ScoredNight:
    indices: np.ndarray
    stages: list
    proba: np.ndarray
    classes: list
    artifact: list


def score_psg(psg_path, payload, channel=None):
    """Stage every 30 s epoch of a PSG file with a bundled model."""
    cfg = config_from_dict(payload["config"])
    channel = channel or cfg.data.channel
    edf = EdfFile(psg_path)
    trace = edf.read_signal(channel)
    n_epochs = int(len(trace) // (trace.fs * 30))
    placeholder = Hypnogram((SleepStage.W,) * n_epochs, source="unscored")
    filtered = bandpass_filter(trace, cfg.preprocess.filter_spec())
    epochs = segment_epochs(zscore_normalize(filtered), placeholder, "score", "",
                            reference=filtered)
    policy = cfg.preprocess.artifact_policy()
    fm = assemble_features(epochs, cfg.features.dwt, cfg.features.cwt)
    pipe = pipeline_from_payload(payload)
    proba = pipe.predict_proba(fm.X)
    classes = payload["classes"]
    stages = [SleepStage(classes[i]) for i in np.argmax(proba, axis=1)]
    return ScoredNight(fm.indices, stages, proba, classes,
                       [is_artifact(ep, policy) for ep in epochs])


# --- run manifest -----------------------------------------------------------

def sha256_file(path, chunk=1 << 20):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(chunk), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    software_version: str = __version__

    def add_inputs(self, paths):
        for p in paths:
            self.inputs[str(p)] = sha256_file(p)

    def add_output(self, path):
        self.outputs[str(path)] = sha256_file(path)

    def time(self, stage, start):
        self.timings[stage] = round(time.perf_counter() - start, 3)

    def write(self, path):
        """Write atomically via a temporary file and rename."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps({
            "software_version": self.software_version,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "timings_s": self.timings,
        }, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)
        return path

    @staticmethod
    def verify(path):
        """Re-hash every listed output; returns the paths that no longer match."""
        data = json.loads(Path(path).read_text())
        return [p for p, digest in data["outputs"].items()
                if not Path(p).exists() or sha256_file(p) != digest]
