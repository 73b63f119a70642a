"""Analysis layer: pose/motion-conditioned aggregation and report output.

Per-video metric records are grouped into degree bins along a pose axis or
the head-motion score, averaged per method, crossed into reference-pose vs
target-pose matrices, and serialized as a schema-versioned JSON report plus
CSV/TSV tables ready for plotting. Empty bins are emitted as null, never 0:
a Frechet distance of 0 is a meaningful value.

Everything here is read-only over the records and deterministic: aggregates
are recomputable from the per-video rows, and the report body contains no
timestamps (those live in the run metadata next to it).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

REPORT_SCHEMA_VERSION = 1

#: record field read for each binnable axis
AXIS_FIELDS = {
    "pose-yaw": "pose_yaw",
    "pose-pitch": "pose_pitch",
    "pose-roll": "pose_roll",
    "motion": "motion_score",
}


@dataclass(frozen=True)
class BinSpec:
    """Ordered degree edges over one axis. Bin i covers [edges[i],
    edges[i+1]); the first and last bins are open-ended, so out-of-range
    values land in the end bins instead of disappearing."""

    axis: str
    edges: tuple

    def __post_init__(self):
        if self.axis not in AXIS_FIELDS:
            raise ValueError(f"axis must be one of {sorted(AXIS_FIELDS)}, got {self.axis!r}")
        edges = tuple(float(e) for e in self.edges)
        if len(edges) < 2:
            raise ValueError("need at least two edges")
        if any(a >= b for a, b in zip(edges, edges[1:])):
            raise ValueError("edges must be strictly increasing")
        object.__setattr__(self, "edges", edges)

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    def bin_index(self, value: float) -> int:
        idx = int(np.searchsorted(self.edges, value, side="right")) - 1
        return min(max(idx, 0), self.n_bins - 1)

    def labels(self) -> list[str]:
        return [f"[{self.edges[i]:g}, {self.edges[i + 1]:g})" for i in range(self.n_bins)]

    @classmethod
    def default_pose(cls, axis: str = "pose-yaw") -> "BinSpec":
        return cls(axis=axis, edges=tuple(range(-90, 91, 10)))

    @classmethod
    def default_motion(cls) -> "BinSpec":
        return cls(axis="motion", edges=tuple(range(0, 181, 10)))


def histogram(values, spec: BinSpec) -> dict:
    """Per-bin counts and ratios; ratios sum to 1 for non-empty input."""
    vals = np.asarray(list(values), dtype=np.float64)
    counts = [0] * spec.n_bins
    for v in vals:
        counts[spec.bin_index(v)] += 1
    total = int(vals.size)
    ratios = [c / total for c in counts] if total else [0.0] * spec.n_bins
    return {"axis": spec.axis, "edges": list(spec.edges), "counts": counts,
            "ratios": ratios, "total": total}


def _value(record, key: str):
    if isinstance(record, dict):
        return record.get(key)
    return getattr(record, key, None)


def metric_vs_bin(records, metric: str, spec: BinSpec) -> dict:
    """Per-bin mean of one metric, keyed by the spec's axis statistic.

    Bins that receive no records are reported as null means with count 0,
    distinguishable from a genuine 0.0 mean.
    """
    buckets: list[list[float]] = [[] for _ in range(spec.n_bins)]
    for rec in records:
        stat = _value(rec, AXIS_FIELDS[spec.axis])
        val = _value(rec, metric)
        if stat is None or val is None:
            continue
        buckets[spec.bin_index(float(stat))].append(float(val))
    # exactly-rounded sums keep the result independent of record order
    means = [math.fsum(b) / len(b) if b else None for b in buckets]
    counts = [len(b) for b in buckets]
    return {"axis": spec.axis, "metric": metric, "edges": list(spec.edges),
            "means": means, "counts": counts}


def pose_confusion_matrix(records, metric: str,
                          ref_spec: BinSpec, tgt_spec: BinSpec | None = None) -> dict:
    """Cell (i, j) holds the mean metric over records whose reference pose
    falls in ref bin i and target pose in tgt bin j; unpopulated cells are
    null. Records must carry ``pose_ref`` and ``pose_tgt``."""
    tgt_spec = tgt_spec or ref_spec
    buckets: dict[tuple[int, int], list[float]] = {}
    for rec in records:
        ref = _value(rec, "pose_ref")
        tgt = _value(rec, "pose_tgt")
        val = _value(rec, metric)
        if ref is None or tgt is None or val is None:
            continue
        key = (ref_spec.bin_index(float(ref)), tgt_spec.bin_index(float(tgt)))
        buckets.setdefault(key, []).append(float(val))
    cells = [[(math.fsum(buckets[(i, j)]) / len(buckets[(i, j)])) if (i, j) in buckets else None
              for j in range(tgt_spec.n_bins)] for i in range(ref_spec.n_bins)]
    counts = [[len(buckets.get((i, j), ())) for j in range(tgt_spec.n_bins)]
              for i in range(ref_spec.n_bins)]
    return {"metric": metric, "ref_edges": list(ref_spec.edges),
            "tgt_edges": list(tgt_spec.edges), "means": cells,
            "counts": counts}


def trend_trace(per_frame: dict, pose_yaw) -> dict:
    """Frame-aligned table of per-frame metric series against the yaw trace,
    for single-video trend plots. All series must share the yaw length;
    longer series are rejected rather than silently cut."""
    yaw = np.asarray(pose_yaw, dtype=np.float64).reshape(-1)
    t = yaw.shape[0]
    columns = {"frame": list(range(t)), "pose_yaw": yaw.tolist()}
    for name, series in sorted(per_frame.items()):
        arr = np.asarray(series, dtype=np.float64).reshape(-1)
        if arr.shape[0] != t:
            raise ValueError(f"series {name!r} has {arr.shape[0]} frames, pose has {t}")
        columns[name] = arr.tolist()
    return columns


@dataclass
class MetricReport:
    """Per-video records plus aggregates and provenance. ``body()`` is the
    canonical, timestamp-free content used for serialization and
    determinism comparisons."""

    records: list[dict]
    per_method: dict = field(default_factory=dict)
    by_motion: dict = field(default_factory=dict)
    by_pose: dict = field(default_factory=dict)
    confusions: dict = field(default_factory=dict)
    histograms: dict = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def body(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "provenance": self.provenance,
            "records": self.records,
            "aggregates": {
                "per_method": self.per_method,
                "by_motion": self.by_motion,
                "by_pose": self.by_pose,
                "confusions": self.confusions,
                "histograms": self.histograms,
            },
            "failures": self.failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.body(), sort_keys=True, indent=1)

    def self_check(self) -> None:
        """Every aggregate must be recomputable from the per-video records."""
        recomputed = aggregate(self.records,
                               motion_spec=_spec_from(self.provenance.get("motion_bins")),
                               pose_spec=_spec_from(self.provenance.get("pose_bins")),
                               provenance=self.provenance,
                               failures=self.failures)
        if recomputed.body() != self.body():
            raise AssertionError("report aggregates do not match their records")


def _spec_from(serialized) -> BinSpec | None:
    if not serialized:
        return None
    return BinSpec(axis=serialized["axis"], edges=tuple(serialized["edges"]))


def _metric_keys(records) -> list[str]:
    skip = {"video_id", "fake_id", "method", "label", "split",
            "pose_ref", "pose_tgt", "pose_yaw", "pose_pitch", "pose_roll",
            "motion_score", "cpbd_no_edges"}
    keys = set()
    for rec in records:
        for key, val in rec.items():
            if key in skip or val is None:
                continue
            if isinstance(val, (int, float)) and not isinstance(val, bool):
                keys.add(key)
    return sorted(keys)


def aggregate(records, motion_spec: BinSpec | None = None,
              pose_spec: BinSpec | None = None,
              provenance: dict | None = None,
              failures: list[dict] | None = None) -> MetricReport:
    """Materialize the full report from per-video records.

    Means are per method; binned views and confusion matrices are emitted
    for every numeric metric present. Deterministic: output depends only on
    record content, not ordering.
    """
    records = [dict(rec) for rec in records]
    records.sort(key=lambda r: (str(r.get("method")), str(r.get("video_id")), str(r.get("fake_id"))))
    motion_spec = motion_spec or BinSpec.default_motion()
    pose_spec = pose_spec or BinSpec.default_pose()
    metrics = _metric_keys(records)
    methods = sorted({str(rec.get("method")) for rec in records}) if records else []

    per_method = {}
    by_motion = {}
    by_pose = {}
    confusions = {}
    for method in methods:
        subset = [r for r in records if str(r.get("method")) == method]
        stats = {}
        for metric in metrics:
            vals = [float(r[metric]) for r in subset
                    if r.get(metric) is not None and np.isfinite(r[metric])]
            stats[metric] = {
                "mean": (math.fsum(vals) / len(vals) if vals else None),
                "count": len(vals),
            }
        per_method[method] = stats
        by_motion[method] = {m: metric_vs_bin(subset, m, motion_spec) for m in metrics}
        by_pose[method] = {m: metric_vs_bin(subset, m, pose_spec) for m in metrics}
        if any(r.get("pose_ref") is not None and r.get("pose_tgt") is not None for r in subset):
            confusions[method] = {m: pose_confusion_matrix(subset, m, pose_spec)
                                  for m in metrics}

    histograms = {}
    motion_values = [r["motion_score"] for r in records if r.get("motion_score") is not None]
    if motion_values:
        histograms["motion"] = histogram(motion_values, motion_spec)
    yaw_values = [r["pose_yaw"] for r in records if r.get("pose_yaw") is not None]
    if yaw_values:
        histograms["pose-yaw"] = histogram(yaw_values, pose_spec)

    prov = dict(provenance or {})
    prov.setdefault("motion_bins", {"axis": motion_spec.axis, "edges": list(motion_spec.edges)})
    prov.setdefault("pose_bins", {"axis": pose_spec.axis, "edges": list(pose_spec.edges)})

    return MetricReport(records=records, per_method=per_method, by_motion=by_motion,
                        by_pose=by_pose, confusions=confusions, histograms=histograms,
                        failures=list(failures or []), provenance=prov)


# ------------------------------------------------------------ file output


def write_report(report: MetricReport, out_dir: Path, run_meta: dict | None = None) -> Path:
    """Write report.json (canonical, timestamp-free body), run_meta.json
    (timestamps and environment), per-video CSV, and per-method summary CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    report_path.write_text(report.to_json())
    if run_meta is not None:
        (out_dir / "run_meta.json").write_text(json.dumps(run_meta, sort_keys=True, indent=1))

    metrics = _metric_keys(report.records)
    with open(out_dir / "records.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        head = ["video_id", "fake_id", "method", "pose_yaw", "motion_score"] + metrics
        writer.writerow(head)
        for rec in report.records:
            writer.writerow([_csv_cell(rec.get(k)) for k in head])

    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method"] + metrics)
        for method in sorted(report.per_method):
            row = [method]
            for metric in metrics:
                cell = report.per_method[method].get(metric, {})
                row.append(_csv_cell(cell.get("mean")))
            writer.writerow(row)
    return report_path


def _csv_cell(value):
    if value is None:
        return ""  # empty cell marks "absent", distinct from 0
    return value


def write_binned_tsv(path: Path, binned: dict) -> None:
    """Plot-ready TSV of one metric_vs_bin result: bin edges, mean, count.
    Empty bins keep an empty mean cell."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("bin_low\tbin_high\tmean\tcount\n")
        edges = binned["edges"]
        for i, (mean, count) in enumerate(zip(binned["means"], binned["counts"])):
            mean_cell = "" if mean is None else repr(mean)
            fh.write(f"{edges[i]:g}\t{edges[i + 1]:g}\t{mean_cell}\t{count}\n")


def write_trend_tsv(path: Path, trace: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(trace.keys())
    length = len(trace["frame"])
    with open(path, "w") as fh:
        fh.write("\t".join(names) + "\n")
        for i in range(length):
            fh.write("\t".join(str(trace[n][i]) for n in names) + "\n")


def export_feature_matrix(path: Path, ids, features, labels=None) -> None:
    """Raw feature matrix export for external projection tools (one row per
    clip: id, optional label, then the feature values)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    feats = np.asarray(features)
    with open(path, "w") as fh:
        for i, clip_id in enumerate(ids):
            label = "" if labels is None else str(labels[i])
            row = "\t".join(repr(float(v)) for v in feats[i])
            fh.write(f"{clip_id}\t{label}\t{row}\n")
