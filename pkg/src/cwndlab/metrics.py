"""Time-series collection, CSV export, and the baseline-vs-agent comparison."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .simnet import US_PER_SECOND


class MetricsError(Exception):
    pass


class NonMonotonicTimestamp(MetricsError):
    """Appended sample does not advance the series clock."""


class ConfigMismatch(MetricsError):
    """Runs being compared were produced under different topology configs."""


class IoFailure(MetricsError):
    pass


@dataclass
class TraceSeries:
    """Ordered (time, value) samples with strictly increasing timestamps."""

    name: str
    times: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def record(self, t: int, v: float) -> None:
        if self.times and t <= self.times[-1]:
            raise NonMonotonicTimestamp(
                f"{self.name}: t={t} after t={self.times[-1]}"
            )
        self.times.append(t)
        self.values.append(v)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def empty(self) -> bool:
        return not self.times

    def mean(self) -> float:
        """Plain mean of the samples; 0.0 for an empty series (check `empty`)."""
        if not self.values:
            return 0.0
        return sum(self.values) / len(self.values)

    def renamed(self, name: str) -> "TraceSeries":
        return TraceSeries(name, list(self.times), list(self.values))


def record(series: TraceSeries, t: int, v: float) -> None:
    series.record(t, v)


def time_weighted_mean(series: TraceSeries, end_time_us: int) -> float:
    """Mean of a sample-and-hold signal from its first positive sample to end.

    Zero-valued samples mean "no measurement yet" and are skipped at the
    front; a fully empty (or all-zero) series averages to 0.0.
    """
    points = [(t, v) for t, v in zip(series.times, series.values) if v > 0]
    if not points:
        return 0.0
    total = 0.0
    span = end_time_us - points[0][0]
    if span <= 0:
        return points[-1][1]
    for i, (t, v) in enumerate(points):
        t_next = points[i + 1][0] if i + 1 < len(points) else end_time_us
        total += v * (t_next - t)
    return total / span


def throughput_over(
    delivered: TraceSeries, window_us: int, end_time_us: Optional[int] = None
) -> TraceSeries:
    """Windowed rate series (Mbps) from a cumulative delivered-bytes trace.

    Window k covers (k*w, (k+1)*w] and is stamped at its right edge. Every
    window divides by the full window length, so
    sum(values) * window_us / 8 recovers total bytes exactly.
    """
    if window_us <= 0:
        raise MetricsError("window must be > 0")
    if end_time_us is None:
        end_time_us = delivered.times[-1] if delivered.times else window_us
    n_windows = max(1, -(-end_time_us // window_us))
    per_window = [0] * n_windows
    prev = 0.0
    for t, cum in zip(delivered.times, delivered.values):
        idx = min((max(t - 1, 0)) // window_us, n_windows - 1)
        per_window[idx] += int(cum - prev)
        prev = cum
    out = TraceSeries(f"{delivered.name}_mbps" if delivered.name else "throughput_mbps")
    for k, nbytes in enumerate(per_window):
        # bits per microsecond == megabits per second
        out.record((k + 1) * window_us, nbytes * 8 / window_us)
    return out


@dataclass
class RunResult:
    """Summary of one evaluation run, computed from its recorded traces."""

    controller: str
    seed: int
    config_fingerprint: tuple
    duration_us: int
    delivered_bytes: int
    drops: int
    mean_latency_ms: float
    mean_throughput_mbps: float


def run_result(
    controller: str,
    seed: int,
    config_fingerprint: tuple,
    duration_us: int,
    delivered_bytes: int,
    drops: int,
    rtt_ms_series: TraceSeries,
) -> RunResult:
    return RunResult(
        controller=controller,
        seed=seed,
        config_fingerprint=config_fingerprint,
        duration_us=duration_us,
        delivered_bytes=delivered_bytes,
        drops=drops,
        mean_latency_ms=time_weighted_mean(rtt_ms_series, duration_us),
        mean_throughput_mbps=delivered_bytes * 8 / duration_us,
    )


@dataclass
class ComparisonSummary:
    baseline_label: str
    candidate_label: str
    mean_latency_ms_baseline: float
    mean_latency_ms_candidate: float
    mean_throughput_mbps_baseline: float
    mean_throughput_mbps_candidate: float
    mean_drops_baseline: float
    mean_drops_candidate: float
    latency_improvement_pct: float
    throughput_improvement_pct: float
    seeds: list[int]

    def _labels(self) -> tuple[str, str]:
        base, cand = self.baseline_label, self.candidate_label
        if base == cand:
            base = f"{base}_baseline"
        return base, cand

    def kv_lines(self) -> list[str]:
        base, cand = self._labels()
        return [
            f"seeds={','.join(str(s) for s in self.seeds)}",
            f"mean_latency_ms_{base}={self.mean_latency_ms_baseline!r}",
            f"mean_latency_ms_{cand}={self.mean_latency_ms_candidate!r}",
            f"mean_throughput_mbps_{base}={self.mean_throughput_mbps_baseline!r}",
            f"mean_throughput_mbps_{cand}={self.mean_throughput_mbps_candidate!r}",
            f"mean_drops_{base}={self.mean_drops_baseline!r}",
            f"mean_drops_{cand}={self.mean_drops_candidate!r}",
            f"latency_improvement_pct={self.latency_improvement_pct!r}",
            f"throughput_improvement_pct={self.throughput_improvement_pct!r}",
        ]

    def text_lines(self) -> list[str]:
        base, cand = self._labels()
        rows = [
            ("", "latency_ms", "throughput_mbps", "drops"),
            (
                base,
                f"{self.mean_latency_ms_baseline:.3f}",
                f"{self.mean_throughput_mbps_baseline:.4f}",
                f"{self.mean_drops_baseline:.1f}",
            ),
            (
                cand,
                f"{self.mean_latency_ms_candidate:.3f}",
                f"{self.mean_throughput_mbps_candidate:.4f}",
                f"{self.mean_drops_candidate:.1f}",
            ),
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = [
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
            for row in rows
        ]
        lines.append("")
        lines.append(f"latency improvement:    {self.latency_improvement_pct:.2f}%")
        lines.append(f"throughput improvement: {self.throughput_improvement_pct:.2f}%")
        return lines


def _mean(xs: Iterable[float]) -> float:
    xs = list(xs)
    return sum(xs) / len(xs) if xs else 0.0


def summarize(
    candidate_runs: list[RunResult], baseline_runs: list[RunResult]
) -> ComparisonSummary:
    """Cross-seed means and improvement percentages, candidate vs baseline."""
    if not candidate_runs or not baseline_runs:
        raise MetricsError("need at least one run per algorithm")
    fingerprints = {r.config_fingerprint for r in candidate_runs + baseline_runs}
    if len(fingerprints) != 1:
        raise ConfigMismatch("runs use different topology configurations")
    if sorted(r.seed for r in candidate_runs) != sorted(r.seed for r in baseline_runs):
        raise ConfigMismatch("seed lists differ between algorithms")
    lat_b = _mean(r.mean_latency_ms for r in baseline_runs)
    lat_c = _mean(r.mean_latency_ms for r in candidate_runs)
    thr_b = _mean(r.mean_throughput_mbps for r in baseline_runs)
    thr_c = _mean(r.mean_throughput_mbps for r in candidate_runs)
    return ComparisonSummary(
        baseline_label=baseline_runs[0].controller,
        candidate_label=candidate_runs[0].controller,
        mean_latency_ms_baseline=lat_b,
        mean_latency_ms_candidate=lat_c,
        mean_throughput_mbps_baseline=thr_b,
        mean_throughput_mbps_candidate=thr_c,
        mean_drops_baseline=_mean(r.drops for r in baseline_runs),
        mean_drops_candidate=_mean(r.drops for r in candidate_runs),
        latency_improvement_pct=100.0 * (lat_b - lat_c) / lat_b if lat_b else 0.0,
        throughput_improvement_pct=100.0 * (thr_c - thr_b) / thr_b if thr_b else 0.0,
        seeds=sorted(r.seed for r in candidate_runs),
    )


def export_csv(
    series_set: list[TraceSeries], path, time_label: str = "time_us"
) -> None:
    """Write aligned CSV: union of timestamps, empty cells where a series
    has no sample, floats in shortest round-trip form, LF line endings."""
    all_times = sorted({t for s in series_set for t in s.times})
    lookups = [dict(zip(s.times, s.values)) for s in series_set]
    lines = [",".join([time_label] + [s.name for s in series_set])]
    for t in all_times:
        cells = [str(t)]
        for lut in lookups:
            v = lut.get(t)
            cells.append("" if v is None else repr(float(v)))
        lines.append(",".join(cells))
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
