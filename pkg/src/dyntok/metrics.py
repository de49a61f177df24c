"""Bits-per-character aggregation and plot-data emission.

All denominators count Unicode scalar values of the underlying text, so a
report recombines exactly: the char-weighted average of any partition's
per-bucket BPC equals the global BPC.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .codec import TokenStream
from .entropy import EntropyTrace
from .vocab import Vocabulary


class MetricsError(ValueError):
    pass


class BpcBucket(NamedTuple):
    bpc: float
    token_count: int
    char_count: int


@dataclass(frozen=True)
class BpcReport:
    global_bpc: float
    per_length: dict[int, BpcBucket]  # token surface length -> stats
    per_group: dict[int, BpcBucket]  # iteration tag -> stats
    n_chars: int
    n_tokens: int


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float


def _bucketize(keys: np.ndarray, bits: np.ndarray, lens: np.ndarray) -> dict[int, BpcBucket]:
    size = int(keys.max()) + 1
    bit_sums = np.bincount(keys, weights=bits, minlength=size)
    tok_counts = np.bincount(keys, minlength=size)
    char_sums = np.bincount(keys, weights=lens, minlength=size)
    out: dict[int, BpcBucket] = {}
    for key in np.nonzero(tok_counts)[0]:
        out[int(key)] = BpcBucket(
            bpc=float(bit_sums[key] / char_sums[key]),
            token_count=int(tok_counts[key]),
            char_count=int(char_sums[key]),
        )
    return out


def bpc_report(stream: TokenStream, nll: EntropyTrace, vocab: Vocabulary) -> BpcReport:
    """Global, per-surface-length, and per-iteration-group BPC from a surprisal trace."""
    if nll.kind != "nll":
        raise MetricsError(
            f"bpc needs a surprisal trace, got kind {nll.kind!r} (unit confusion guard)"
        )
    if len(nll) != len(stream):
        raise MetricsError(
            f"trace has {len(nll)} values but stream has {len(stream)} tokens"
        )
    if len(stream) == 0:
        raise MetricsError("empty stream has no characters to normalize by")
    ids = np.asarray(stream.ids, dtype=np.int64)
    surface_lens = np.asarray(vocab.surface_lengths, dtype=np.int64)
    groups_by_id = np.asarray([t.iteration for t in vocab.tokens], dtype=np.int64)
    if int(ids.max()) >= len(vocab):
        raise MetricsError("stream contains ids outside the vocabulary")
    bits = nll.values
    lens = surface_lens[ids]
    n_chars = int(lens.sum())
    return BpcReport(
        global_bpc=float(bits.sum() / n_chars),
        per_length=_bucketize(lens, bits, lens),
        per_group=_bucketize(groups_by_id[ids], bits, lens),
        n_chars=n_chars,
        n_tokens=len(stream),
    )


def fit_slope(points: Sequence[tuple[float, float]]) -> SlopeFit:
    """OLS of bpc against log10(vocab size)."""
    if len(points) < 2:
        raise MetricsError("need at least 2 points")
    sizes = [p[0] for p in points]
    if len(set(sizes)) < 2:
        raise MetricsError("need at least 2 distinct vocab sizes")
    x = np.log10(np.asarray(sizes, dtype=np.float64))
    y = np.asarray([p[1] for p in points], dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    residuals = y - (slope * x + intercept)
    ss_res = float(np.sum(residuals**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return SlopeFit(slope=float(slope), intercept=float(intercept), r2=r2)


def improvement_table(a: Sequence[float], b: Sequence[float]) -> list[float]:
    """Percent improvement of a over b, position-wise: 100*(b-a)/b."""
    if len(a) != len(b):
        raise MetricsError("improvement_table needs equal-length inputs")
    out = []
    for a_i, b_i in zip(a, b):
        if b_i == 0:
            raise MetricsError("division by zero bpc")
        out.append(100.0 * (b_i - a_i) / b_i)
    return out


def report_to_dict(report: BpcReport) -> dict:
    return {
        "global_bpc": report.global_bpc,
        "per_length": {
            str(k): {"bpc": v.bpc, "token_count": v.token_count, "char_count": v.char_count}
            for k, v in sorted(report.per_length.items())
        },
        "per_group": {
            str(k): {"bpc": v.bpc, "token_count": v.token_count, "char_count": v.char_count}
            for k, v in sorted(report.per_group.items())
        },
        "n_chars": report.n_chars,
        "n_tokens": report.n_tokens,
    }


def report_from_dict(data: dict) -> BpcReport:
    def buckets(field: dict) -> dict[int, BpcBucket]:
        return {
            int(k): BpcBucket(v["bpc"], v["token_count"], v["char_count"])
            for k, v in field.items()
        }

    try:
        return BpcReport(
            global_bpc=float(data["global_bpc"]),
            per_length=buckets(data["per_length"]),
            per_group=buckets(data["per_group"]),
            n_chars=int(data["n_chars"]),
            n_tokens=int(data["n_tokens"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MetricsError(f"malformed report ({exc})") from exc


def save_report(report: BpcReport, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report_to_dict(report), f, indent=2, sort_keys=True)
        f.write("\n")


def load_report(path) -> BpcReport:
    with open(path, "r", encoding="utf-8") as f:
        return report_from_dict(json.load(f))


def emit_size_series_csv(series: dict[str, Sequence[tuple[float, float]]], path) -> None:
    """Rows (vocab_size, bpc, series); series alphabetical, sizes ascending."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["vocab_size", "bpc", "series"])
        for name in sorted(series):
            for size, bpc in sorted(series[name]):
                w.writerow([_fmt(size), _fmt(bpc), name])


def emit_length_csv(report: BpcReport, path) -> None:
    """Rows (length, bpc, count) from the per-length partition."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["length", "bpc", "count"])
        for length in sorted(report.per_length):
            bucket = report.per_length[length]
            w.writerow([length, _fmt(bucket.bpc), bucket.token_count])


def emit_group_matrix_csv(stage_reports: Sequence[tuple[int, BpcReport]], path) -> None:
    """Rows (group, stage, bpc): one row per populated iteration-group per stage."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["group", "stage", "bpc"])
        for stage, report in sorted(stage_reports, key=lambda item: item[0]):
            for group in sorted(report.per_group):
                w.writerow([group, stage, _fmt(report.per_group[group].bpc)])


def emit_plot_data(
    out_dir,
    *,
    size_series: dict[str, Sequence[tuple[float, float]]] | None = None,
    length_report: BpcReport | None = None,
    stage_reports: Sequence[tuple[int, BpcReport]] | None = None,
) -> list[str]:
    """Write whichever plot-ready CSVs the given inputs support; returns paths."""
    written = []
    if size_series:
        path = os.path.join(out_dir, "bpc_by_size.csv")
        emit_size_series_csv(size_series, path)
        written.append(path)
    if length_report is not None:
        path = os.path.join(out_dir, "bpc_by_length.csv")
        emit_length_csv(length_report, path)
        written.append(path)
    if stage_reports:
        path = os.path.join(out_dir, "bpc_by_group_stage.csv")
        emit_group_matrix_csv(stage_reports, path)
        written.append(path)
    return written


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isfinite(x) and x == int(x):
            return str(int(x))
        return repr(x)
    return str(x)
