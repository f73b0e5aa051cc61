"""Metrics, labeled evaluation, time-window sweeps and latency benchmarks.

Binary metrics treat every non-Normal label as the positive (anomalous)
class. Identities are computed exactly from the confusion counts and 0/0
cases are reported as None (undefined), never as 0.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import LabelVocabularyMismatch, SingleClass

LABEL_NORMAL = "Normal"
LABEL_VOCABULARY = ("Normal", "DDoS", "Scan", "Attack", "C&C", "Download",
                    "HeartBeat")


def binary_metrics(tp: int, fp: int, tn: int, fn: int) -> dict:
    """The six-metric family from confusion counts; 0/0 -> None."""
    total = tp + fp + tn + fn
    div = lambda a, b: (a / b) if b > 0 else None
    return {
        "precision": div(tp, tp + fp),
        "accuracy": div(tp + tn, total),
        "recall": div(tp, tp + fn),
        "fpr": div(fp, fp + tn),
        "f1": div(2 * tp, 2 * tp + fp + fn),
    }


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the rank statistic, ties counted 1/2.

    Equals trapezoidal integration of the ROC over thresholds at every
    distinct score.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(labels.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < labels.size:
        j = i
        while j + 1 < labels.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # average rank for ties
        i = j + 1
    pos_rank_sum = ranks[labels].sum()
    u = pos_rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(scores: np.ndarray, labels: np.ndarray) -> list:
    """(fpr, tpr) at every distinct score threshold, plus the corners."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    pts = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < labels.size:
        j = i
        while (j + 1 < labels.size
               and scores[order[j + 1]] == scores[order[i]]):
            j += 1
        for idx in order[i:j + 1]:
            if labels[idx]:
                tp += 1
            else:
                fp += 1
        pts.append((fp / n_neg, tp / n_pos))
        i = j + 1
    return pts


@dataclass
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float | None
    accuracy: float | None
    recall: float | None
    fpr: float | None
    f1: float | None
    auc: float | None
    per_class_recall: dict
    roc: list = field(default_factory=list)
    timing: dict | None = None  # filled only by the latency benchmark
    unmatched_labels: int = 0

    METRIC_NAMES = ("precision", "accuracy", "recall", "fpr", "f1", "auc")

    def metrics_row(self) -> list:
        fmt = lambda v: "NA" if v is None else "%.4f" % (100.0 * v)
        return [fmt(getattr(self, m)) for m in self.METRIC_NAMES]

    def to_dict(self) -> dict:
        return {
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn,
                       "fn": self.fn},
            "metrics": {m: getattr(self, m) for m in self.METRIC_NAMES},
            "per_class_recall": dict(sorted(self.per_class_recall.items())),
            "unmatched_labels": self.unmatched_labels,
        }


def evaluate_scores(scores: np.ndarray, flags: np.ndarray,
                    labels: list[str], roc: bool = True,
                    unmatched: int = 0) -> EvalReport:
    """Build an EvalReport from raw scores, flag decisions and labels."""
    bad = sorted(set(labels) - set(LABEL_VOCABULARY))
    if bad:
        raise LabelVocabularyMismatch("unknown labels: %s" % bad)
    labels_arr = np.asarray(labels)
    positive = labels_arr != LABEL_NORMAL
    flags = np.asarray(flags).astype(bool)
    tp = int(np.sum(flags & positive))
    fp = int(np.sum(flags & ~positive))
    tn = int(np.sum(~flags & ~positive))
    fn = int(np.sum(~flags & positive))
    m = binary_metrics(tp, fp, tn, fn)
    per_class = {}
    for cls in sorted(set(labels_arr[positive])):
        mask = labels_arr == cls
        per_class[cls] = float(flags[mask].mean())
    has_both = positive.any() and (~positive).any()
    return EvalReport(
        tp=tp, fp=fp, tn=tn, fn=fn,
        auc=auc(scores, positive) if has_both else None,
        per_class_recall=per_class,
        roc=roc_points(scores, positive) if (roc and has_both) else [],
        unmatched_labels=unmatched,
        **m,
    )


def evaluate(model, matrix, roc: bool = True) -> EvalReport:
    """Score a labeled FeatureMatrix with a TrainedModel and report."""
    from .pipeline import project_for_model  # deferred, avoids a cycle

    if matrix.labels is None:
        raise LabelVocabularyMismatch("matrix has no label column")
    X = project_for_model(model, matrix)
    scores = model.score(X)
    flags = scores > model.threshold
    return evaluate_scores(scores, flags, matrix.labels, roc=roc)


def format_metric_table(rows: list[tuple], first_column: str) -> str:
    """Aligned plain-text table: one row per entry, six metric columns."""
    header = [first_column, "Precision(%)", "Accuracy(%)", "Recall(%)",
              "FPR(%)", "F1-Score(%)", "AUC(%)"]
    table = [header] + [[str(name)] + report.metrics_row()
                        for name, report in rows]
    widths = [max(len(r[c]) for r in table) for c in range(len(header))]
    lines = []
    for r in table:
        lines.append("  ".join(val.rjust(w) for val, w in zip(r, widths)))
    return "\n".join(lines)


# --- label sidecar files -------------------------------------------------

LABEL_FILE_COLUMNS = ("src_ip", "dst_ip", "src_port", "dst_port", "protocol",
                      "window_start", "window_end", "label")


@dataclass(frozen=True)
class LabelRow:
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: int
    window_start: float
    window_end: float
    label: str


def write_label_file(rows: list[LabelRow], path: str) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(LABEL_FILE_COLUMNS) + "\n")
        for r in rows:
            fh.write("%s,%s,%d,%d,%d,%s,%s,%s\n" % (
                r.src_ip, r.dst_ip, r.src_port, r.dst_port, r.protocol,
                repr(r.window_start), repr(r.window_end), r.label))


def read_label_file(path: str) -> list[LabelRow]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != LABEL_FILE_COLUMNS:
            raise LabelVocabularyMismatch(
                "label file columns %r do not match %r"
                % (header, list(LABEL_FILE_COLUMNS)))
        for line in fh:
            line = line.strip()
            if not line:
                continue
            p = line.split(",")
            rows.append(LabelRow(p[0], p[1], int(p[2]), int(p[3]), int(p[4]),
                                 float(p[5]), float(p[6]), p[7]))
    return rows


class LabelIndex:
    """Joins flows/packets to label rows by directed 5-tuple plus window
    overlap; unmatched instances default to Normal and are counted."""

    def __init__(self, rows: list[LabelRow]):
        self._by_key: dict = {}
        for r in rows:
            key = (r.src_ip, r.dst_ip, r.src_port, r.dst_port, r.protocol)
            self._by_key.setdefault(key, []).append(r)
        self.unmatched = 0

    def _candidates(self, key: tuple):
        return self._by_key.get(key, ())

    def label_for_packet(self, p) -> str:
        key = (p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.protocol)
        for r in self._candidates(key):
            if r.window_start <= p.ts <= r.window_end:
                return r.label
        self.unmatched += 1
        return LABEL_NORMAL

    def label_for_flow(self, rec) -> str:
        k = rec.key
        keys = [(k.src_ip, k.dst_ip, k.src_port, k.dst_port, k.protocol)]
        if rec.mode == "bi":
            keys.append((k.dst_ip, k.src_ip, k.dst_port, k.src_port,
                         k.protocol))
        best = None
        best_overlap = 0.0
        for key in keys:
            for r in self._candidates(key):
                overlap = (min(r.window_end, rec.last_ts)
                           - max(r.window_start, rec.first_ts))
                if overlap >= 0 and (best is None or overlap > best_overlap):
                    best = r
                    best_overlap = overlap
        if best is None:
            self.unmatched += 1
            return LABEL_NORMAL
        return best.label


# --- time-window sweep ---------------------------------------------------

TW_SWEEP_DEFAULT = ("default", 300.0, 100.0, 10.0, 1.0)


def tw_sweep(capture_path: str, labels_path: str, kind: str,
             tw_list=TW_SWEEP_DEFAULT, mode: str = "uni_flow",
             idle_timeout: float = 15.0, target_fpr: float = 0.02,
             seed: int = 0, params: dict | None = None,
             train_fraction: float = 0.7) -> list[tuple]:
    """Re-meter, re-extract, re-train and re-evaluate per time window.

    Within each window setting, benign rows are split (seeded) into a
    training part and an evaluation part; anomalies are evaluation-only.
    Returns (tw, EvalReport) pairs in the order given.
    """
    from .pipeline import extract_matrix, train_model
    from .features import FeatureMatrix

    results = []
    for pos, tw in enumerate(tw_list):
        tw_val = None if (tw == "default" or tw is None) else float(tw)
        X = extract_matrix(capture_path, mode=mode, tw=tw_val,
                           idle_timeout=idle_timeout,
                           labels_path=labels_path)
        labels = np.asarray(X.labels)
        benign_idx = np.flatnonzero(labels == LABEL_NORMAL)
        anom_idx = np.flatnonzero(labels != LABEL_NORMAL)
        rng = np.random.default_rng([seed, pos])
        perm = rng.permutation(len(benign_idx))
        cut = int(len(benign_idx) * train_fraction)
        train_rows = benign_idx[perm[:cut]]
        eval_rows = np.concatenate([benign_idx[perm[cut:]], anom_idx])
        train = FeatureMatrix(values=X.values[train_rows], names=X.names,
                              mode=X.mode)
        model = train_model(train, kind=kind, params=params,
                            target_fpr=target_fpr, seed=seed)
        testm = FeatureMatrix(values=X.values[eval_rows], names=X.names,
                              mode=X.mode,
                              labels=[X.labels[i] for i in eval_rows])
        results.append((tw, evaluate(model, testm, roc=False)))
    return results


# --- detection-delay benchmark -------------------------------------------

@dataclass
class LatencyReport:
    mode: str
    n: int
    p50_ms: float
    p95_ms: float
    p99_ms: float
    throughput_pps: float | None = None
    tw_floor_s: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def _percentiles_ms(samples_s: list[float]) -> tuple[float, float, float]:
    arr = np.asarray(samples_s) * 1e3
    p50, p95, p99 = np.percentile(arr, [50, 95, 99])
    return float(p50), float(p95), float(p99)


def delay_benchmark_packets(capture_path: str, model,
                            max_packets: int | None = None) -> LatencyReport:
    """Per-packet decode+featurize+score latency, one packet at a time,
    plus sustained batched throughput over the same capture."""
    from .pcap import decode_frame, iter_raw_frames
    from .features import PACKET_MANIFEST, PacketContext, packet_features
    from .pipeline import model_column_indices

    frames = []
    for ts, raw, link_type in iter_raw_frames(capture_path):
        frames.append((ts, bytes(raw), link_type))
        if max_packets is not None and len(frames) >= max_packets:
            break

    stats = model.norm_stats
    mean, std = stats.mean, stats.std
    cols = model_column_indices(model)
    kept = [PACKET_MANIFEST.names.index(n) for n in stats.kept_names]

    # latency path: strictly one packet end to end at a time
    ctx = PacketContext()
    samples = []
    perf = time.perf_counter
    for ts, raw, link_type in frames:
        t0 = perf()
        rec = decode_frame(raw, link_type, ts=ts)
        vec = packet_features(rec, ctx)
        z = (vec[kept] - mean) / std
        model.score(z[cols][None, :])
        samples.append(perf() - t0)

    # throughput path: the same work, chunked scoring
    ctx = PacketContext()
    t0 = perf()
    chunk: list[np.ndarray] = []
    done = 0
    for ts, raw, link_type in frames:
        rec = decode_frame(raw, link_type, ts=ts)
        chunk.append(packet_features(rec, ctx))
        if len(chunk) == 2048:
            Z = (np.vstack(chunk)[:, kept] - mean) / std
            model.score(Z[:, cols])
            done += len(chunk)
            chunk = []
    if chunk:
        Z = (np.vstack(chunk)[:, kept] - mean) / std
        model.score(Z[:, cols])
        done += len(chunk)
    elapsed = perf() - t0
    p50, p95, p99 = _percentiles_ms(samples)
    return LatencyReport(mode="packet", n=len(frames), p50_ms=p50,
                         p95_ms=p95, p99_ms=p99,
                         throughput_pps=done / elapsed if elapsed else None)


def delay_benchmark_flows(capture_path: str, model, tw: float,
                          idle_timeout: float = 15.0) -> LatencyReport:
    """Flow-path residual latency: featurize+score per emitted flow; the
    time window itself lower-bounds total detection delay."""
    from .pcap import open_capture
    from .flows import FlowMeter, MeterConfig
    from .features import DEFAULT_MANIFESTS, flow_features
    from .pipeline import model_column_indices

    manifest = DEFAULT_MANIFESTS[model.manifest_mode]
    stats = model.norm_stats
    mean, std = stats.mean, stats.std
    kept = [manifest.names.index(n) for n in stats.kept_names]
    cols = model_column_indices(model)
    direction = "uni" if model.manifest_mode == "uni_flow" else "bi"
    m = FlowMeter(MeterConfig(direction_mode=direction, tw_seconds=tw,
                              idle_timeout=idle_timeout))
    samples = []
    perf = time.perf_counter
    reader = open_capture(capture_path)

    def handle(rec):
        t0 = perf()
        vec = flow_features(rec, manifest)
        z = (vec[kept] - mean) / std
        model.score(z[cols][None, :])
        samples.append(perf() - t0)

    for pkt in reader:
        for rec in m.feed(pkt):
            handle(rec)
    for rec in m.finish():
        handle(rec)
    p50, p95, p99 = _percentiles_ms(samples)
    return LatencyReport(mode=model.manifest_mode, n=len(samples),
                         p50_ms=p50, p95_ms=p95, p99_ms=p99, tw_floor_s=tw)
