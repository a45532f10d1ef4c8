"""Lookup-table hardware cost model, BitOps and resource constraints.

Network latency and energy are the sums of per-layer table entries. A layer
key bundles the slot index, kernel, width and all four bitwidths.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import (
    IncompleteTableError,
    MissingKeyError,
    MissingSpatialMetadataError,
)
from .space import ArchSpec, QuantPolicy, SearchSpaceConfig

KEY_FIELDS = ("slot_index", "kernel", "channels", "w_pw_bits", "a_pw_bits", "w_dw_bits", "a_dw_bits")


class LayerKey(NamedTuple):
    slot_index: int
    kernel: int
    channels: int
    w_pw_bits: int
    a_pw_bits: int
    w_dw_bits: int
    a_dw_bits: int


class Cost(NamedTuple):
    latency_ms: float
    energy_mJ: float


@dataclass(frozen=True)
class CostTable:
    entries: dict  # LayerKey -> Cost
    hardware_name: str
    space_fingerprint: str

    def __getitem__(self, key: LayerKey) -> Cost:
        try:
            return self.entries[key]
        except KeyError:
            raise MissingKeyError(key) from None

    def __len__(self):
        return len(self.entries)

    def check_complete(self, space: SearchSpaceConfig) -> None:
        missing = [k for k in reachable_keys(space) if k not in self.entries]
        if missing:
            raise IncompleteTableError(f"{len(missing)} reachable layer keys missing, e.g. {missing[0]}")

    # -- file format ----------------------------------------------------
    def to_json(self) -> str:
        rows = [dict(k._asdict(), latency_ms=c.latency_ms, energy_mJ=c.energy_mJ)
                for k, c in sorted(self.entries.items())]
        doc = {
            "metadata": {"hardware_name": self.hardware_name,
                         "space_fingerprint": self.space_fingerprint,
                         "n_entries": len(rows)},
            "entries": rows,
        }
        return json.dumps(doc, separators=(",", ":")) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str, space: Optional[SearchSpaceConfig] = None) -> "CostTable":
        doc = json.loads(text)
        meta = doc["metadata"]
        entries = {}
        for row in doc["entries"]:
            key = LayerKey(*(int(row[f]) for f in KEY_FIELDS))
            lat, en = float(row["latency_ms"]), float(row["energy_mJ"])
            if lat < 0 or en < 0:
                raise ValueError(f"negative cost for {key}")
            entries[key] = Cost(lat, en)
        table = cls(entries, meta["hardware_name"], meta["space_fingerprint"])
        if space is not None:
            if table.space_fingerprint != space.fingerprint():
                raise IncompleteTableError(
                    f"table built for space {table.space_fingerprint}, not {space.fingerprint()}")
            table.check_complete(space)
        return table

    @classmethod
    def load(cls, path, space: Optional[SearchSpaceConfig] = None) -> "CostTable":
        return cls.from_json(Path(path).read_text(), space)


@dataclass(frozen=True)
class Constraint:
    max_latency_ms: Optional[float] = None
    max_energy_mJ: Optional[float] = None
    max_bitops_G: Optional[float] = None

    def __post_init__(self):
        bounds = [b for b in (self.max_latency_ms, self.max_energy_mJ, self.max_bitops_G) if b is not None]
        if not bounds:
            raise ValueError("a Constraint needs at least one bound")
        if any(not b > 0 for b in bounds):
            raise ValueError("constraint bounds must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def layer_keys(arch: ArchSpec, policy: QuantPolicy) -> list[LayerKey]:
    return [
        LayerKey(i, arch.kernels[i], arch.channels[i], *policy.bits[i])
        for i in range(len(arch.kernels)) if arch.kernels[i] is not None
    ]


def reachable_keys(space: SearchSpaceConfig):
    bits = list(itertools.product(space.bit_choices, repeat=4))
    for slot in range(space.n_slots):
        for k in space.kernel_choices:
            for c in space.channel_choices_for(slot):
                for b in bits:
                    yield LayerKey(slot, k, c, *b)


def total_cost(table: CostTable, arch: ArchSpec, policy: QuantPolicy) -> Cost:
    lat = 0.0
    en = 0.0
    for key in layer_keys(arch, policy):
        c = table[key]
        lat += c.latency_ms
        en += c.energy_mJ
    return Cost(lat, en)


def _feature_hw(space: SearchSpaceConfig, slot: int, input_resolution=None) -> float:
    hw = space.stages[space.slot_stage(slot)].feature_hw
    if hw is None:
        raise MissingSpatialMetadataError(f"stage {space.slot_stage(slot)} has no feature_hw")
    if input_resolution is None:
        return float(hw)
    return hw * (input_resolution / space.reference_resolution)


def layer_macs(space: SearchSpaceConfig, slot: int, kernel: int, channels: int,
               input_resolution=None) -> tuple[float, float]:
    """(depthwise MACs, pointwise MACs) of one block slot.

    The pointwise expansion maps the stage's base width to ``channels``.
    """
    hw = _feature_hw(space, slot, input_resolution)
    c_in = space.stages[space.slot_stage(slot)].base_channels
    dw = kernel * kernel * channels * hw * hw
    pw = c_in * channels * hw * hw
    return dw, pw


def bitops(space: SearchSpaceConfig, arch: ArchSpec, policy: QuantPolicy,
           input_resolution=None) -> float:
    """Giga bit-operations: sum of MACs * weight bits * activation bits."""
    total = 0.0
    for key in layer_keys(arch, policy):
        dw, pw = layer_macs(space, key.slot_index, key.kernel, key.channels, input_resolution)
        total += dw * key.w_dw_bits * key.a_dw_bits + pw * key.w_pw_bits * key.a_pw_bits
    return total / 1e9


def satisfies(constraint: Constraint, table: CostTable, space: SearchSpaceConfig,
              arch: ArchSpec, policy: QuantPolicy) -> bool:
    """Inclusive bound check: a pair passes when no cost exceeds its bound."""
    if constraint.max_latency_ms is not None or constraint.max_energy_mJ is not None:
        cost = total_cost(table, arch, policy)
        if constraint.max_latency_ms is not None and cost.latency_ms > constraint.max_latency_ms:
            return False
        if constraint.max_energy_mJ is not None and cost.energy_mJ > constraint.max_energy_mJ:
            return False
    if constraint.max_bitops_G is not None and bitops(space, arch, policy) > constraint.max_bitops_G:
        return False
    return True


def min_achievable(table: CostTable, space: SearchSpaceConfig) -> dict:
    """Per-metric minimum over the whole space, exploiting additivity.

    Each metric is minimized independently, so the three minima need not be
    attained by the same network.
    """
    best_lat = {}
    best_en = {}
    for key, c in table.entries.items():
        s = key.slot_index
        best_lat[s] = min(best_lat.get(s, math.inf), c.latency_ms)
        best_en[s] = min(best_en.get(s, math.inf), c.energy_mJ)
    best_bops = {}
    b_lo = space.bit_choices[0]
    for slot in range(space.n_slots):
        best_bops[slot] = min(
            sum(layer_macs(space, slot, k, ch)) * b_lo * b_lo / 1e9
            for k in space.kernel_choices for ch in space.channel_choices_for(slot)
        ) if space.stages[space.slot_stage(slot)].feature_hw is not None else math.nan

    def stage_min(per_slot):
        total = 0.0
        for s, st in enumerate(space.stages):
            slots = list(space.stage_slots(s))
            total += min(sum(per_slot[i] for i in slots[:d]) for d in st.depth_choices)
        return total

    return {"latency_ms": stage_min(best_lat), "energy_mJ": stage_min(best_en),
            "bitops_G": stage_min(best_bops)}


# -- synthetic tables --------------------------------------------------------

@dataclass(frozen=True)
class HardwareProfile:
    name: str
    latency_alpha: float  # ms per MAC at 8/8 bits
    latency_beta: float   # ms per kernel unit
    energy_alpha: float   # mJ per MAC at 8/8 bits
    energy_beta: float
    jitter: float = 0.02  # max relative deterministic noise

    def __post_init__(self):
        if not 0 <= self.jitter <= 0.02:
            raise ValueError("jitter must lie in [0, 0.02]")


PROFILES = {
    "synthetic-accel": HardwareProfile("synthetic-accel", 2.5e-8, 0.004, 3.0e-8, 0.002),
    "synthetic-edge": HardwareProfile("synthetic-edge", 4.0e-8, 0.010, 2.0e-8, 0.006),
    "synthetic-ideal": HardwareProfile("synthetic-ideal", 2.5e-8, 0.004, 3.0e-8, 0.002, jitter=0.0),
}


def build_synthetic_table(space: SearchSpaceConfig, profile: HardwareProfile | str,
                          seed: int = 0) -> CostTable:
    """Analytic per-layer costs: alpha * MACs * (mean_w * mean_a) / 64 + beta * k, jittered."""
    if isinstance(profile, str):
        profile = PROFILES[profile]
    keys = list(reachable_keys(space))
    rng = np.random.Generator(np.random.Philox(key=seed))
    jit = rng.uniform(-profile.jitter, profile.jitter, size=(len(keys), 2))
    entries = {}
    for key, (jl, je) in zip(keys, jit):
        dw, pw = layer_macs(space, key.slot_index, key.kernel, key.channels)
        w_bar = (key.w_pw_bits + key.w_dw_bits) / 2.0
        a_bar = (key.a_pw_bits + key.a_dw_bits) / 2.0
        scale = (dw + pw) * (w_bar * a_bar) / 64.0
        lat = (profile.latency_alpha * scale + profile.latency_beta * key.kernel) * (1.0 + jl)
        en = (profile.energy_alpha * scale + profile.energy_beta * key.kernel) * (1.0 + je)
        entries[key] = Cost(float(lat), float(en))
    return CostTable(entries, profile.name, space.fingerprint())
