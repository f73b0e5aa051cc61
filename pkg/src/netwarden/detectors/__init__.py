"""Five one-class detectors behind a single orientation contract:
higher score = more anomalous, with a quantile-calibrated threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptySpace, TooFewScores
from ..features import NormalizationStats
from .autoencoder import Autoencoder
from .elliptic import EllipticEnvelope
from .iforest import (
    IsolationForest,
    anomaly_score_from_mean_path,
    average_path_normalizer,
    harmonic,
)
from .lof import LocalOutlierFactor
from .ocsvm import OneClassSVM

KINDS = ("if", "ee", "lof", "osvm", "ae")

DETECTOR_CLASSES = {
    "if": IsolationForest,
    "ee": EllipticEnvelope,
    "lof": LocalOutlierFactor,
    "osvm": OneClassSVM,
    "ae": Autoencoder,
}

MODEL_FORMAT_VERSION = 1

__all__ = [
    "KINDS", "DETECTOR_CLASSES", "IsolationForest", "EllipticEnvelope",
    "LocalOutlierFactor", "OneClassSVM", "Autoencoder",
    "anomaly_score_from_mean_path", "average_path_normalizer", "harmonic",
    "calibrate_threshold", "make_detector", "default_search_space",
    "random_search", "SearchResult", "TrainedModel",
]


def make_detector(kind: str, params: dict | None = None):
    if kind not in DETECTOR_CLASSES:
        raise ValueError("unknown detector kind %r" % kind)
    return DETECTOR_CLASSES[kind](**(params or {}))


def calibrate_threshold(scores: np.ndarray, target_fpr: float) -> float:
    """Empirical (1 - target_fpr) quantile of benign validation scores.

    flag(x) := score(x) > threshold, so re-flagging the calibration set
    exceeds the target rate by at most 1/n.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 50:
        raise TooFewScores("need at least 50 calibration scores, got %d"
                           % scores.size)
    if not 0 <= target_fpr < 1:
        raise ValueError("target_fpr must be in [0, 1)")
    return float(np.quantile(scores, 1.0 - target_fpr))


def default_search_space(kind: str, d: int) -> dict:
    """Per-kind hyperparameter ranges for random search."""
    if kind == "if":
        return {"n_trees": ("choice", [50, 100, 200]),
                "subsample_size": ("choice", [128, 256, 512])}
    if kind == "ee":
        return {"ridge": ("loguniform", 1e-8, 1e-2)}
    if kind == "lof":
        return {"k": ("randint", 5, 51)}
    if kind == "osvm":
        return {"nu": ("uniform", 0.02, 0.3),
                "gamma": ("loguniform", 0.1 / max(d, 1), 10.0 / max(d, 1))}
    if kind == "ae":
        return {"learning_rate": ("loguniform", 1e-4, 1e-2),
                "epochs": ("choice", [50, 100]),
                "batch_size": ("choice", [32, 64])}
    raise ValueError("unknown detector kind %r" % kind)


def _sample_params(space: dict, rng: np.random.Generator) -> dict:
    params = {}
    for name, spec in space.items():
        tag = spec[0]
        if tag == "uniform":
            params[name] = float(rng.uniform(spec[1], spec[2]))
        elif tag == "loguniform":
            params[name] = float(np.exp(rng.uniform(np.log(spec[1]),
                                                    np.log(spec[2]))))
        elif tag == "randint":
            params[name] = int(rng.integers(spec[1], spec[2]))
        elif tag == "choice":
            params[name] = spec[1][int(rng.integers(len(spec[1])))]
        elif tag == "fixed":
            params[name] = spec[1]
        else:
            raise ValueError("unknown space entry %r" % (spec,))
    return params


def _kfold_indices(n: int, folds: int, seed: int):
    order = np.random.default_rng(seed).permutation(n)
    sizes = np.full(folds, n // folds)
    sizes[: n % folds] += 1
    start = 0
    for size in sizes:
        val = order[start:start + size]
        train = np.concatenate([order[:start], order[start + size:]])
        yield train, val
        start += size


@dataclass
class SearchTrial:
    params: dict
    fold_fpr: list[float]
    fold_auc: list[float] | None
    score_variance: float

    @property
    def mean_fpr(self) -> float:
        return float(np.mean(self.fold_fpr))

    @property
    def mean_auc(self) -> float | None:
        return float(np.mean(self.fold_auc)) if self.fold_auc else None


@dataclass
class SearchResult:
    kind: str
    best_params: dict
    trials: list[SearchTrial]
    criterion: str  # "fpr" or "auc"


def random_search(kind: str, space: dict, X: np.ndarray, folds: int = 5,
                  budget: int = 20, seed: int = 0, target_fpr: float = 0.02,
                  anomalies: np.ndarray | None = None) -> SearchResult:
    """Sample `budget` configurations and 5-fold cross-validate each on
    benign data.

    Selection minimizes the mean held-out false-positive rate at the
    quantile-calibrated threshold, tie-broken by lower pooled score
    variance. If labeled anomalies are supplied the criterion switches to
    the highest mean validation AUC.
    """
    if not space:
        raise EmptySpace("empty hyperparameter space")
    from ..evaluation import auc as auc_fn  # local import, avoids a cycle

    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    trials: list[SearchTrial] = []
    for _ in range(budget):
        params = _sample_params(space, rng)
        fold_fpr: list[float] = []
        fold_auc: list[float] = []
        pooled: list[np.ndarray] = []
        for train_idx, val_idx in _kfold_indices(n, folds, seed):
            det = make_detector(kind, params)
            det.fit(X[train_idx])
            train_scores = det.score(X[train_idx])
            theta = float(np.quantile(train_scores, 1.0 - target_fpr))
            val_scores = det.score(X[val_idx])
            fold_fpr.append(float((val_scores > theta).mean()))
            pooled.append(val_scores)
            if anomalies is not None:
                anom_scores = det.score(anomalies)
                scores = np.concatenate([val_scores, anom_scores])
                labels = np.concatenate([np.zeros(len(val_scores)),
                                         np.ones(len(anom_scores))])
                fold_auc.append(auc_fn(scores, labels))
        trials.append(SearchTrial(
            params=params,
            fold_fpr=fold_fpr,
            fold_auc=fold_auc if anomalies is not None else None,
            score_variance=float(np.var(np.concatenate(pooled))),
        ))
    if anomalies is not None:
        best = max(range(len(trials)),
                   key=lambda t: (trials[t].mean_auc,
                                  -trials[t].score_variance))
        criterion = "auc"
    else:
        best = min(range(len(trials)),
                   key=lambda t: (trials[t].mean_fpr,
                                  trials[t].score_variance))
        criterion = "fpr"
    return SearchResult(kind=kind, best_params=trials[best].params,
                        trials=trials, criterion=criterion)


@dataclass
class TrainedModel:
    """A fitted detector plus everything needed to score new data:
    decision threshold, feature manifest, and normalization stats."""

    kind: str
    detector: object
    threshold: float
    target_fpr: float
    manifest_mode: str
    manifest_names: tuple[str, ...]
    manifest_hash: str
    norm_stats: NormalizationStats | None = None
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def score(self, X: np.ndarray) -> np.ndarray:
        return self.detector.score(X)

    def flag(self, X: np.ndarray) -> np.ndarray:
        return self.score(X) > self.threshold

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "hyperparams": self.detector.get_params(),
            "state": self.detector.state_dict(),
            "threshold": self.threshold,
            "target_fpr": self.target_fpr,
            "manifest": {
                "mode": self.manifest_mode,
                "names": list(self.manifest_names),
                "hash": self.manifest_hash,
            },
            "normalization": (self.norm_stats.to_dict()
                              if self.norm_stats else None),
            "seed": self.seed,
        }

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True,
                      separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        # unknown top-level fields are tolerated for forward compatibility
        kind = d["kind"]
        det = DETECTOR_CLASSES[kind].from_state(d["hyperparams"], d["state"])
        stats = d.get("normalization")
        return cls(
            kind=kind,
            detector=det,
            threshold=float(d["threshold"]),
            target_fpr=float(d.get("target_fpr", 0.0)),
            manifest_mode=d["manifest"]["mode"],
            manifest_names=tuple(d["manifest"]["names"]),
            manifest_hash=d["manifest"]["hash"],
            norm_stats=NormalizationStats.from_dict(stats) if stats else None,
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def load(cls, path: str) -> "TrainedModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
