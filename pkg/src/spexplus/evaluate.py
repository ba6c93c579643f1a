"""Batch evaluation over a manifest: SI-SDR, improvement, condition
breakdown, and 5 dB histogram buckets.

Evaluation always runs on full-length signals (no 4 s cropping); only the
reference can be cropped or loop-tiled to a requested duration to study how
much enrollment audio the embedding needs.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .loss import si_sdr_value
from .simulate import dataset_root, load_example, load_manifest

BUCKET_DB = 5.0


class IdentityBaseline:
    """Pass-through 'model' that returns the mixture unchanged.

    Scoring it gives exactly the unprocessed-mixture numbers, which makes it
    a useful pipeline smoke test: its SI-SDR improvement is 0 by definition.
    """

    def infer(self, mixture, reference):
        return np.asarray(mixture, dtype=np.float32).copy()


@dataclass
class EvalRow:
    example_id: str
    si_sdr_in: float
    si_sdr_out: float
    si_sdri: float
    condition: str


@dataclass
class EvalReport:
    rows: list
    aggregates: dict  # condition -> {count, si_sdr_in, si_sdr_out, si_sdri}
    histogram: list  # (bucket_lo, count) over si_sdr_out
    ref_duration_s: float | None = None

    def mean_si_sdri(self):
        return self.aggregates["all"]["si_sdri"]


def _fit_reference(samples, duration_s, sample_rate):
    """Crop a long reference or loop-tile a short one to the target length."""
    n = int(round(duration_s * sample_rate))
    if len(samples) >= n:
        return samples[:n]
    reps = int(np.ceil(n / len(samples)))
    return np.tile(samples, reps)[:n]


def _check_reference_length(model, n_samples):
    cfg = getattr(model, "config", None)
    if cfg is None:
        return
    frames = cfg.frames(n_samples) if n_samples >= cfg.L1 else 0
    need = cfg.min_reference_frames()
    if n_samples < cfg.L3 or frames < need:
        raise ValueError(
            f"reference of {n_samples} samples yields {frames} frames; "
            f"{need} frames are needed for {cfg.N_R} pooling stages")


def evaluate(model, manifest_path, ref_duration_s=None):
    """Score `model` on every example of the manifest, in manifest order."""
    rows_in = load_manifest(manifest_path)
    root = dataset_root(manifest_path)
    rows = []
    for row in rows_in:
        ex = load_example(root, row)
        ref = ex.reference.samples
        if ref_duration_s is not None:
            ref = _fit_reference(ref, ref_duration_s, ex.reference.sample_rate)
        _check_reference_length(model, len(ref))
        si_in = si_sdr_value(ex.mixture.samples, ex.target.samples)
        estimate = model.infer(ex.mixture.samples, ref)
        si_out = si_sdr_value(estimate, ex.target.samples)
        rows.append(EvalRow(
            example_id=ex.example_id,
            si_sdr_in=si_in,
            si_sdr_out=si_out,
            si_sdri=si_out - si_in,
            condition=ex.condition,
        ))
    return EvalReport(rows=rows, aggregates=_aggregate(rows),
                      histogram=_histogram(rows), ref_duration_s=ref_duration_s)


def _aggregate(rows):
    out = {}
    conditions = sorted({r.condition for r in rows})
    for cond in conditions + ["all"]:
        subset = rows if cond == "all" else [r for r in rows if r.condition == cond]
        if not subset:
            continue
        out[cond] = {
            "count": len(subset),
            "si_sdr_in": float(np.mean([r.si_sdr_in for r in subset])),
            "si_sdr_out": float(np.mean([r.si_sdr_out for r in subset])),
            "si_sdri": float(np.mean([r.si_sdri for r in subset])),
        }
    if "all" not in out:
        out["all"] = {"count": 0, "si_sdr_in": 0.0, "si_sdr_out": 0.0, "si_sdri": 0.0}
    return out


def _histogram(rows):
    if not rows:
        return []
    los = [BUCKET_DB * np.floor(r.si_sdr_out / BUCKET_DB) for r in rows]
    counts = {}
    for lo in los:
        counts[lo] = counts.get(lo, 0) + 1
    lo_min, lo_max = min(counts), max(counts)
    buckets = []
    lo = lo_min
    while lo <= lo_max:
        buckets.append((float(lo), counts.get(lo, 0)))
        lo += BUCKET_DB
    return buckets


def report_write(report, path, fmt="csv"):
    """Write a report deterministically; floats carry 4 decimals."""
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown report format {fmt!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        _write_csv(report, path)
    else:
        _write_jsonl(report, path)


def _write_csv(report, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("id,si_sdr_in,si_sdr_out,si_sdri,condition\n")
        for r in report.rows:
            f.write("%s,%.4f,%.4f,%.4f,%s\n" % (
                r.example_id, r.si_sdr_in, r.si_sdr_out, r.si_sdri, r.condition))
        f.write("\n# aggregates\n")
        f.write("condition,count,si_sdr_in,si_sdr_out,si_sdri\n")
        for cond, agg in report.aggregates.items():
            f.write("%s,%d,%.4f,%.4f,%.4f\n" % (
                cond, agg["count"], agg["si_sdr_in"], agg["si_sdr_out"], agg["si_sdri"]))
        f.write("\n# histogram of si_sdr_out (5 dB buckets)\n")
        f.write("bucket_lo,bucket_hi,count\n")
        for lo, count in report.histogram:
            f.write("%.1f,%.1f,%d\n" % (lo, lo + BUCKET_DB, count))


def _write_jsonl(report, path):
    def fmt4(x):
        return round(float(x), 4)

    with open(path, "w", encoding="utf-8") as f:
        for r in report.rows:
            f.write(json.dumps({
                "kind": "utterance", "id": r.example_id,
                "si_sdr_in": fmt4(r.si_sdr_in), "si_sdr_out": fmt4(r.si_sdr_out),
                "si_sdri": fmt4(r.si_sdri), "condition": r.condition,
            }) + "\n")
        for cond, agg in report.aggregates.items():
            f.write(json.dumps({
                "kind": "aggregate", "condition": cond, "count": agg["count"],
                "si_sdr_in": fmt4(agg["si_sdr_in"]),
                "si_sdr_out": fmt4(agg["si_sdr_out"]),
                "si_sdri": fmt4(agg["si_sdri"]),
            }) + "\n")
        for lo, count in report.histogram:
            f.write(json.dumps({
                "kind": "histogram_bucket", "bucket_lo": lo,
                "bucket_hi": lo + BUCKET_DB, "count": count,
            }) + "\n")
