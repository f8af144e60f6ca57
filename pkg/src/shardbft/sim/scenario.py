"""Scenario configuration: schema, defaults, validation.

Configs are plain JSON (see docs/formats.md for the schema). All durations
in the file are seconds; internally everything runs on an integer
microsecond clock (one tick = 1 microsecond).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..batcher import required_sample_size
from ..behaviors import BEHAVIOR_KINDS, AdversaryBehavior
from ..crypto import SCHEMES, SCHEME_TEST_MAC


class ConfigError(ValueError):
    pass


def us(seconds: float) -> int:
    return int(round(seconds * 1_000_000))


def seconds(micros: int) -> float:
    return micros / 1_000_000


@dataclass(frozen=True)
class LatencyModel:
    base_us: int = 5_000
    jitter_us: int = 20_000

    @property
    def max_us(self) -> int:
        return self.base_us + self.jitter_us


@dataclass(frozen=True)
class AdversarySpec:
    party: int
    kind: str
    crash_at_us: int = 0
    censor_clients: tuple[int, ...] = ()
    bogus_fraction: float = 0.5

    def behavior(self) -> AdversaryBehavior:
        return AdversaryBehavior(
            kind=self.kind,
            crash_at_us=self.crash_at_us,
            censor_clients=frozenset(self.censor_clients),
            bogus_fraction=self.bogus_fraction,
        )


@dataclass(frozen=True)
class ProtocolParams:
    max_batch_size: int = 10_000
    max_batch_latency_us: int = us(0.5)
    min_propose_interval_us: int = us(0.01)
    bucket_period_us: int = us(0.1)
    t_forward_us: int = us(2.0)
    t_complain_us: int = us(2.0)
    epoch_length_us: int = us(10.0)
    epoch_window: int = 2
    alpha: float = 0.5
    p_fail: float = 2.0**-30
    sample_count: int | None = None  # derived from (alpha, p_fail) when None
    max_orphan_refs: int = 8
    round_interval_us: int = us(0.05)
    fetch_timeout_us: int = us(0.25)
    pool_capacity: int | None = None
    max_tx_size: int = 1 << 20

    def resolved_sample_count(self) -> int:
        if self.sample_count is not None:
            return self.sample_count
        return required_sample_size(self.alpha, self.p_fail)

    @property
    def t_censor_us(self) -> int:
        return self.t_forward_us + self.t_complain_us


@dataclass(frozen=True)
class ScenarioConfig:
    n_parties: int = 4
    f: int = 1
    shard_count: int = 1
    seed: int = 0
    clients: int = 4
    tx_rate: float = 100.0
    tx_size: int = 64
    duration_us: int = us(1.0)
    tx_count: int | None = None  # overrides tx_rate * duration when set
    gst_us: int = 0
    delta_us: int = us(1.0)  # declared post-GST delivery bound
    tob_delay_bound_us: int = us(0.5)  # declared total-order latency bound
    latency: LatencyModel = field(default_factory=LatencyModel)
    scheme: str = SCHEME_TEST_MAC
    adversaries: tuple[AdversarySpec, ...] = ()
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    drain_us: int = us(30.0)
    # Test-only fault injection: drop all traffic to this party after GST,
    # deliberately violating the delivery model so checks must flag it.
    lossy_party: int | None = None

    # --- derived --------------------------------------------------------

    def resolved_tx_count(self) -> int:
        if self.tx_count is not None:
            return self.tx_count
        return max(1, int(round(self.tx_rate * seconds(self.duration_us))))

    def adversary_parties(self) -> set[int]:
        return {a.party for a in self.adversaries}

    def correct_parties(self) -> list[int]:
        bad = self.adversary_parties()
        return [p for p in range(self.n_parties) if p not in bad]

    def censorship_bound_us(self) -> int:
        # F * T_censor + delta(Delta) + 2 * Delta
        return self.f * self.protocol.t_censor_us + self.tob_delay_bound_us + 2 * self.delta_us

    def validate(self) -> None:
        p = self.protocol
        if self.f < 0 or self.n_parties < 3 * self.f + 1:
            raise ConfigError(f"need parties >= 3*faults+1, got parties={self.n_parties}, faults={self.f}")
        if self.shard_count < 1:
            raise ConfigError("shards must be >= 1")
        if self.clients < 1:
            raise ConfigError("clients must be >= 1")
        if self.tx_size < 1:
            raise ConfigError("tx_size must be >= 1")
        if self.duration_us <= 0:
            raise ConfigError("duration must be positive")
        if len(self.adversary_parties()) > self.f:
            raise ConfigError("more adversary parties than the fault bound allows")
        for a in self.adversaries:
            if not 0 <= a.party < self.n_parties:
                raise ConfigError(f"adversary party {a.party} out of range")
            if a.kind not in BEHAVIOR_KINDS:
                raise ConfigError(f"unknown adversary kind {a.kind!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown signature scheme {self.scheme!r}")
        if self.latency.base_us < 0 or self.latency.jitter_us < 0:
            raise ConfigError("latency values must be non-negative")
        if self.latency.max_us > self.delta_us:
            raise ConfigError("latency model exceeds the declared post-GST delivery bound")
        if p.round_interval_us + 3 * self.latency.max_us > self.tob_delay_bound_us:
            raise ConfigError("declared total-order latency bound is below what the model can deliver")
        if not 0.0 < p.alpha < 1.0 and p.sample_count is None:
            raise ConfigError("alpha must be in (0, 1)")
        if p.sample_count is not None and p.sample_count < 0:
            raise ConfigError("sample_count must be >= 0")
        if p.max_batch_size < 1 or p.max_batch_latency_us <= 0:
            raise ConfigError("invalid batching parameters")
        if p.epoch_length_us <= 0 or p.epoch_window < 1:
            raise ConfigError("invalid epoch parameters")

    # --- (de)serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        p = self.protocol
        out = {
            "parties": self.n_parties,
            "faults": self.f,
            "shards": self.shard_count,
            "seed": self.seed,
            "clients": self.clients,
            "tx_rate": self.tx_rate,
            "tx_size": self.tx_size,
            "duration": seconds(self.duration_us),
            "tx_count": self.tx_count,
            "gst": seconds(self.gst_us),
            "delta": seconds(self.delta_us),
            "tob_delay_bound": seconds(self.tob_delay_bound_us),
            "latency": {"base": seconds(self.latency.base_us), "jitter": seconds(self.latency.jitter_us)},
            "scheme": self.scheme,
            "drain": seconds(self.drain_us),
            "adversaries": [
                {
                    "party": a.party,
                    "kind": a.kind,
                    "crash_at": seconds(a.crash_at_us),
                    "censor_clients": list(a.censor_clients),
                    "bogus_fraction": a.bogus_fraction,
                }
                for a in self.adversaries
            ],
            "protocol": {
                "max_batch_size": p.max_batch_size,
                "max_batch_latency": seconds(p.max_batch_latency_us),
                "min_propose_interval": seconds(p.min_propose_interval_us),
                "bucket_period": seconds(p.bucket_period_us),
                "t_forward": seconds(p.t_forward_us),
                "t_complain": seconds(p.t_complain_us),
                "epoch_length": seconds(p.epoch_length_us),
                "epoch_window": p.epoch_window,
                "alpha": p.alpha,
                "p_fail": p.p_fail,
                "sample_count": p.sample_count,
                "max_orphan_refs": p.max_orphan_refs,
                "round_interval": seconds(p.round_interval_us),
                "fetch_timeout": seconds(p.fetch_timeout_us),
                "pool_capacity": p.pool_capacity,
                "max_tx_size": p.max_tx_size,
            },
        }
        if self.lossy_party is not None:
            out["lossy_party"] = self.lossy_party
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {
            "parties", "faults", "shards", "seed", "clients", "tx_rate", "tx_size",
            "duration", "tx_count", "gst", "delta", "tob_delay_bound", "latency",
            "scheme", "drain", "adversaries", "protocol", "lossy_party",
        }
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        defaults = cls()
        lat = data.get("latency", {})
        if not isinstance(lat, dict):
            raise ConfigError("latency must be an object")
        latency = LatencyModel(
            base_us=us(lat.get("base", seconds(defaults.latency.base_us))),
            jitter_us=us(lat.get("jitter", seconds(defaults.latency.jitter_us))),
        )
        proto_in = data.get("protocol", {})
        known_proto = {
            "max_batch_size", "max_batch_latency", "min_propose_interval", "bucket_period",
            "t_forward", "t_complain", "epoch_length", "epoch_window", "alpha", "p_fail",
            "sample_count", "max_orphan_refs", "round_interval", "fetch_timeout",
            "pool_capacity", "max_tx_size",
        }
        unknown = set(proto_in) - known_proto
        if unknown:
            raise ConfigError(f"unknown protocol keys: {sorted(unknown)}")
        dp = ProtocolParams()
        proto = ProtocolParams(
            max_batch_size=proto_in.get("max_batch_size", dp.max_batch_size),
            max_batch_latency_us=us(proto_in.get("max_batch_latency", seconds(dp.max_batch_latency_us))),
            min_propose_interval_us=us(proto_in.get("min_propose_interval", seconds(dp.min_propose_interval_us))),
            bucket_period_us=us(proto_in.get("bucket_period", seconds(dp.bucket_period_us))),
            t_forward_us=us(proto_in.get("t_forward", seconds(dp.t_forward_us))),
            t_complain_us=us(proto_in.get("t_complain", seconds(dp.t_complain_us))),
            epoch_length_us=us(proto_in.get("epoch_length", seconds(dp.epoch_length_us))),
            epoch_window=proto_in.get("epoch_window", dp.epoch_window),
            alpha=proto_in.get("alpha", dp.alpha),
            p_fail=proto_in.get("p_fail", dp.p_fail),
            sample_count=proto_in.get("sample_count", dp.sample_count),
            max_orphan_refs=proto_in.get("max_orphan_refs", dp.max_orphan_refs),
            round_interval_us=us(proto_in.get("round_interval", seconds(dp.round_interval_us))),
            fetch_timeout_us=us(proto_in.get("fetch_timeout", seconds(dp.fetch_timeout_us))),
            pool_capacity=proto_in.get("pool_capacity", dp.pool_capacity),
            max_tx_size=proto_in.get("max_tx_size", dp.max_tx_size),
        )
        adversaries = []
        for entry in data.get("adversaries", []):
            if "party" not in entry or "kind" not in entry:
                raise ConfigError("adversary entries need 'party' and 'kind'")
            adversaries.append(
                AdversarySpec(
                    party=entry["party"],
                    kind=entry["kind"],
                    crash_at_us=us(entry.get("crash_at", 0.0)),
                    censor_clients=tuple(entry.get("censor_clients", ())),
                    bogus_fraction=entry.get("bogus_fraction", 0.5),
                )
            )
        cfg = cls(
            n_parties=data.get("parties", defaults.n_parties),
            f=data.get("faults", defaults.f),
            shard_count=data.get("shards", defaults.shard_count),
            seed=data.get("seed", defaults.seed),
            clients=data.get("clients", defaults.clients),
            tx_rate=data.get("tx_rate", defaults.tx_rate),
            tx_size=data.get("tx_size", defaults.tx_size),
            duration_us=us(data.get("duration", seconds(defaults.duration_us))),
            tx_count=data.get("tx_count", defaults.tx_count),
            gst_us=us(data.get("gst", 0.0)),
            delta_us=us(data.get("delta", seconds(defaults.delta_us))),
            tob_delay_bound_us=us(data.get("tob_delay_bound", seconds(defaults.tob_delay_bound_us))),
            latency=latency,
            scheme=data.get("scheme", defaults.scheme),
            adversaries=tuple(adversaries),
            protocol=proto,
            drain_us=us(data.get("drain", seconds(defaults.drain_us))),
            lossy_party=data.get("lossy_party", None),
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_json_file(cls, path) -> "ScenarioConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(data)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        d = self.to_dict()
        d["seed"] = seed
        return type(self).from_dict(d)
