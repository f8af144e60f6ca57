"""Run artifacts: per-transaction records, series, canonical JSON, CSV.

Reports are deterministic byte-for-byte for a given (config, seed): all
times are integer microseconds, all collections are built in event order,
and JSON is emitted with sorted keys.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


@dataclass
class TxRecord:
    index: int
    tx_id: bytes
    client: int
    shard: int
    submit_us: int
    censored: bool = False
    acks: set = field(default_factory=set)
    ack_quorum_us: int | None = None
    rejects: dict = field(default_factory=dict)
    first_commit_us: int | None = None
    last_commit_us: int | None = None
    commit_count: int = 0

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "tx_id": self.tx_id.hex(),
            "client": self.client,
            "shard": self.shard,
            "submit_us": self.submit_us,
            "censored": self.censored,
            "acks": len(self.acks),
            "ack_quorum_us": self.ack_quorum_us,
            "rejects": dict(sorted(self.rejects.items())),
            "first_commit_us": self.first_commit_us,
            "last_commit_us": self.last_commit_us,
            "commit_count": self.commit_count,
        }


@dataclass
class RunReport:
    config: dict
    quiescent: bool
    end_time_us: int
    tx_records: list[TxRecord]
    term_changes: list[tuple[int, int, int]]  # (time_us, shard, new_term)
    reproposed_tx_ids: list[str]
    pending_series: list[tuple[int, int]]
    throughput_series: list[tuple[int, int]]
    ledger_digests: dict[int, str]
    committed_total: int
    duplicate_commits: int
    bogus_batch_commits: int
    per_shard: dict[int, dict]
    drops: dict[str, int]
    checks: dict[str, dict]
    # In-memory artifacts, serialized separately as ledger files.
    ledgers: dict = field(default_factory=dict, repr=False)
    inclusion: dict = field(default_factory=dict, repr=False)  # party -> {tx_id: t}

    def committed_latencies_us(self) -> list[int]:
        return [
            r.first_commit_us - r.submit_us
            for r in self.tx_records
            if r.first_commit_us is not None
        ]

    def all_checks_pass(self) -> bool:
        return all(entry["pass"] for entry in self.checks.values())

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "quiescent": self.quiescent,
            "end_time_us": self.end_time_us,
            "txs": [r.to_dict() for r in self.tx_records],
            "term_changes": [
                {"time_us": t, "shard": s, "new_term": n} for t, s, n in self.term_changes
            ],
            "reproposed_tx_ids": self.reproposed_tx_ids,
            "pending_series": [[t, n] for t, n in self.pending_series],
            "throughput_series": [[t, n] for t, n in self.throughput_series],
            "ledger_digests": {str(p): d for p, d in self.ledger_digests.items()},
            "committed_total": self.committed_total,
            "duplicate_commits": self.duplicate_commits,
            "bogus_batch_commits": self.bogus_batch_commits,
            "per_shard": {str(s): v for s, v in self.per_shard.items()},
            "drops": dict(sorted(self.drops.items())),
            "checks": self.checks,
        }


def report_to_json(report: RunReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"


def _percentile(sorted_values: list[int], q: float) -> float:
    if not sorted_values:
        return 0.0
    pos = q * (len(sorted_values) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(sorted_values) - 1)
    frac = pos - lo
    return sorted_values[lo] * (1 - frac) + sorted_values[hi] * frac


def write_csv(report: RunReport, path) -> None:
    """Time series: committed txs, latency stats, pending-list size."""
    lat_by_time: list[tuple[int, int]] = []
    for r in report.tx_records:
        if r.first_commit_us is not None:
            lat_by_time.append((r.first_commit_us, r.first_commit_us - r.submit_us))
    lat_by_time.sort()
    pending = report.pending_series
    rows = ["time_s,committed_txs,mean_latency_s,p95_latency_s,pending_size"]
    lat_idx = 0
    seen: list[int] = []
    pend_idx = 0
    last_pending = 0
    for t, committed in report.throughput_series:
        while lat_idx < len(lat_by_time) and lat_by_time[lat_idx][0] <= t:
            seen.append(lat_by_time[lat_idx][1])
            lat_idx += 1
        while pend_idx < len(pending) and pending[pend_idx][0] <= t:
            last_pending = pending[pend_idx][1]
            pend_idx += 1
        ordered = sorted(seen)
        mean = sum(ordered) / len(ordered) / 1e6 if ordered else 0.0
        p95 = _percentile(ordered, 0.95) / 1e6
        rows.append(f"{t / 1e6:.6f},{committed},{mean:.6f},{p95:.6f},{last_pending}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")


def summarize(report_dict: dict) -> str:
    """Human-readable stats table for a report, recounted from its records."""
    txs = report_dict["txs"]
    committed = [t for t in txs if t["first_commit_us"] is not None]
    latencies = sorted(t["first_commit_us"] - t["submit_us"] for t in committed)
    mean = sum(latencies) / len(latencies) / 1e6 if latencies else 0.0
    p95 = _percentile(latencies, 0.95) / 1e6
    end_s = report_dict["end_time_us"] / 1e6
    lines = []
    lines.append(f"{'metric':<28}{'value':>14}")
    lines.append("-" * 42)
    lines.append(f"{'txs submitted':<28}{len(txs):>14}")
    lines.append(f"{'txs committed':<28}{len(committed):>14}")
    lines.append(f"{'commits (incl. dups)':<28}{report_dict['committed_total']:>14}")
    lines.append(f"{'duplicate commits':<28}{report_dict['duplicate_commits']:>14}")
    lines.append(f"{'term changes':<28}{len(report_dict['term_changes']):>14}")
    lines.append(f"{'run time (s)':<28}{end_s:>14.3f}")
    tput = report_dict["committed_total"] / end_s if end_s > 0 else 0.0
    lines.append(f"{'throughput (tx/s)':<28}{tput:>14.1f}")
    lines.append(f"{'mean latency (s)':<28}{mean:>14.4f}")
    lines.append(f"{'p95 latency (s)':<28}{p95:>14.4f}")
    lines.append("")
    lines.append(f"{'shard':<8}{'batches':>10}{'txs':>10}{'dups':>8}")
    lines.append("-" * 36)
    for shard, stats in sorted(report_dict["per_shard"].items(), key=lambda kv: int(kv[0])):
        lines.append(
            f"{shard:<8}{stats['batches']:>10}{stats['txs']:>10}{stats['duplicates']:>8}"
        )
    lines.append("")
    lines.append(f"{'check':<28}{'verdict':>10}")
    lines.append("-" * 38)
    for name, entry in sorted(report_dict["checks"].items()):
        lines.append(f"{name:<28}{'PASS' if entry['pass'] else 'FAIL':>10}")
    return "\n".join(lines)
