"""Joint architecture x channel x bitwidth design space.

A space is a list of stages. Each stage owns ``max_depth`` block slots and
picks an active depth; inactive slots are kept in place and flagged as
skipped so that every encoding of the space has the same length.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .errors import CardinalityOverflowError, SpaceConfigError


def _strictly_increasing(xs: Sequence[int]) -> bool:
    return all(a < b for a, b in zip(xs, xs[1:]))


def default_channel_choices(base_channels: int) -> list[int]:
    """Widths from 4*base to 6*base in steps of 8."""
    return list(range(4 * base_channels, 6 * base_channels + 1, 8))


@dataclass(frozen=True)
class StageConfig:
    depth_choices: tuple = (2, 3, 4)
    base_channels: int = 16
    channel_choices: Optional[tuple] = None
    feature_hw: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "depth_choices", tuple(int(d) for d in self.depth_choices))
        derived = self.channel_choices is None
        if derived:
            chans = default_channel_choices(self.base_channels)
        else:
            chans = [int(c) for c in self.channel_choices]
        object.__setattr__(self, "channel_choices", tuple(chans))
        self._check(span=derived)

    @property
    def max_depth(self) -> int:
        return max(self.depth_choices)

    def _check(self, span: bool):
        if not self.depth_choices:
            raise SpaceConfigError("depth_choices must be nonempty")
        if not _strictly_increasing(self.depth_choices) or self.depth_choices[0] < 1:
            raise SpaceConfigError(f"bad depth_choices {self.depth_choices}")
        if self.base_channels < 1:
            raise SpaceConfigError("base_channels must be positive")
        ch = self.channel_choices
        if not ch or not _strictly_increasing(ch):
            raise SpaceConfigError(f"channel_choices must be strictly increasing: {ch}")
        if any(c % 8 for c in ch):
            raise SpaceConfigError(f"channel_choices must be multiples of 8: {ch}")
        if ch[0] < 8:
            raise SpaceConfigError("channel_choices must be positive")
        # explicit lists may be any increasing multiples of 8
        if span and (ch[0] != 4 * self.base_channels or ch[-1] != 6 * self.base_channels):
            raise SpaceConfigError(
                f"channel_choices must span [{4 * self.base_channels}, {6 * self.base_channels}]"
            )
        if self.feature_hw is not None and self.feature_hw < 1:
            raise SpaceConfigError("feature_hw must be positive")

    def to_dict(self) -> dict:
        return {
            "depth_choices": list(self.depth_choices),
            "max_depth": self.max_depth,
            "base_channels": self.base_channels,
            "channel_choices": list(self.channel_choices),
            "feature_hw": self.feature_hw,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageConfig":
        stage = cls(
            depth_choices=tuple(d["depth_choices"]),
            base_channels=int(d["base_channels"]),
            channel_choices=tuple(d["channel_choices"]) if d.get("channel_choices") is not None else None,
            feature_hw=d.get("feature_hw"),
        )
        if "max_depth" in d and int(d["max_depth"]) != stage.max_depth:
            raise SpaceConfigError("max_depth must equal max(depth_choices)")
        return stage


@dataclass(frozen=True)
class SearchSpaceConfig:
    stages: tuple
    kernel_choices: tuple = (3, 5, 7)
    bit_choices: tuple = (4, 6, 8)
    seed: int = 0
    reference_resolution: int = 224

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "kernel_choices", tuple(int(k) for k in self.kernel_choices))
        object.__setattr__(self, "bit_choices", tuple(int(b) for b in self.bit_choices))
        if not self.stages:
            raise SpaceConfigError("at least one stage required")
        k = self.kernel_choices
        if not k or not _strictly_increasing(k) or k[0] < 1 or any(x % 2 == 0 for x in k):
            raise SpaceConfigError(f"kernel_choices must be increasing odd integers >= 1: {k}")
        b = self.bit_choices
        if not b or not _strictly_increasing(b) or b[0] < 1 or b[-1] > 32:
            raise SpaceConfigError(f"bit_choices must be increasing integers in [1, 32]: {b}")
        if not 0 <= self.seed < 2**64:
            raise SpaceConfigError("seed must be an unsigned 64-bit integer")
        # slot -> stage lookup, cached on the frozen instance
        slot_stage = []
        slot_pos = []
        for s, st in enumerate(self.stages):
            for j in range(st.max_depth):
                slot_stage.append(s)
                slot_pos.append(j)
        object.__setattr__(self, "_slot_stage", tuple(slot_stage))
        object.__setattr__(self, "_slot_pos", tuple(slot_pos))

    # -- structure -------------------------------------------------------
    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def n_slots(self) -> int:
        return len(self._slot_stage)

    def slot_stage(self, slot: int) -> int:
        return self._slot_stage[slot]

    def slot_position(self, slot: int) -> int:
        """Index of ``slot`` within its own stage."""
        return self._slot_pos[slot]

    def stage_slots(self, stage: int) -> range:
        start = sum(st.max_depth for st in self.stages[:stage])
        return range(start, start + self.stages[stage].max_depth)

    def channel_choices_for(self, slot: int) -> tuple:
        return self.stages[self._slot_stage[slot]].channel_choices

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "stages": [st.to_dict() for st in self.stages],
            "kernel_choices": list(self.kernel_choices),
            "bit_choices": list(self.bit_choices),
            "seed": self.seed,
            "reference_resolution": self.reference_resolution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpaceConfig":
        return cls(
            stages=tuple(StageConfig.from_dict(s) for s in d["stages"]),
            kernel_choices=tuple(d.get("kernel_choices", (3, 5, 7))),
            bit_choices=tuple(d.get("bit_choices", (4, 6, 8))),
            seed=int(d.get("seed", 0)),
            reference_resolution=int(d.get("reference_resolution", 224)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SearchSpaceConfig":
        return cls.from_dict(json.loads(text))

    def fingerprint(self) -> str:
        """Hash of the structural fields; the sampling seed is left out."""
        d = self.to_dict()
        d.pop("seed")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def default_space(seed: int = 0) -> SearchSpaceConfig:
    """Five searchable MobileNetV2-like stages plus a fixed single-block stage (21 slots)."""
    bases = [24, 32, 64, 96, 160]
    hws = [56, 28, 14, 14, 7]
    stages = [StageConfig((2, 3, 4), b, feature_hw=hw) for b, hw in zip(bases, hws)]
    stages.append(StageConfig((1,), 320, feature_hw=7))
    return SearchSpaceConfig(tuple(stages), (3, 5, 7), (4, 6, 8), seed)


def tiny_space(seed: int = 0) -> SearchSpaceConfig:
    """One stage of up to two blocks; 20,880 (arch, policy) pairs."""
    stage = StageConfig((1, 2), 8, feature_hw=8)
    return SearchSpaceConfig((stage,), (3, 5, 7), (4, 8), seed, reference_resolution=32)


BUILTIN_SPACES = {"default21": default_space, "tiny": tiny_space}


def load_space(ref: str | Path) -> SearchSpaceConfig:
    """Load a space from a JSON file, or by builtin name (``default21``, ``tiny``)."""
    ref = str(ref)
    if ref in BUILTIN_SPACES:
        return BUILTIN_SPACES[ref]()
    return SearchSpaceConfig.from_json(Path(ref).read_text())


# -- concrete points -------------------------------------------------------

@dataclass(frozen=True)
class ArchSpec:
    """Per-stage depths plus per-slot kernel/channels (None on skipped slots)."""

    depths: tuple
    kernels: tuple
    channels: tuple

    def is_active(self, slot: int) -> bool:
        return self.kernels[slot] is not None

    def to_dict(self) -> dict:
        return {"depths": list(self.depths), "kernels": list(self.kernels),
                "channels": list(self.channels)}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(tuple(d["depths"]), tuple(d["kernels"]), tuple(d["channels"]))


@dataclass(frozen=True)
class QuantPolicy:
    """Per-slot (w_pw, a_pw, w_dw, a_dw) bitwidths, None on skipped slots."""

    bits: tuple

    def to_dict(self) -> dict:
        return {"bits": [list(b) if b is not None else None for b in self.bits]}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantPolicy":
        return cls(tuple(tuple(b) if b is not None else None for b in d["bits"]))


def make_arch(space: SearchSpaceConfig, depths, kernels, channels) -> ArchSpec:
    """Build an ArchSpec from per-stage depths and per-slot values, blanking skipped slots.

    ``kernels``/``channels`` may be scalars (broadcast) or per-slot sequences.
    """
    n = space.n_slots
    ks = [kernels] * n if np.isscalar(kernels) else list(kernels)
    cs = [channels] * n if np.isscalar(channels) else list(channels)
    out_k, out_c = [], []
    for slot in range(n):
        active = space.slot_position(slot) < depths[space.slot_stage(slot)]
        out_k.append(int(ks[slot]) if active else None)
        out_c.append(int(cs[slot]) if active else None)
    return ArchSpec(tuple(int(d) for d in depths), tuple(out_k), tuple(out_c))


def make_policy(space: SearchSpaceConfig, arch: ArchSpec, bits) -> QuantPolicy:
    """Policy with ``bits`` (a scalar, one 4-tuple, or one per slot) on every active slot."""
    n = space.n_slots
    if np.isscalar(bits):
        bits = (bits,) * 4
    per_slot = [tuple(bits)] * n if len(bits) == 4 and np.isscalar(bits[0]) else list(bits)
    return QuantPolicy(tuple(
        tuple(int(b) for b in per_slot[i]) if arch.is_active(i) else None for i in range(n)
    ))


class Violation(NamedTuple):
    slot: Optional[int]
    message: str

    def __str__(self):
        where = "space" if self.slot is None else f"slot {self.slot}"
        return f"{where}: {self.message}"


def validate(space: SearchSpaceConfig, arch: ArchSpec,
             policy: Optional[QuantPolicy] = None) -> list[Violation]:
    """Return every invariant violation; an empty list means the pair is valid."""
    out: list[Violation] = []
    n = space.n_slots
    if len(arch.depths) != space.n_stages:
        return [Violation(None, f"expected {space.n_stages} stage depths, got {len(arch.depths)}")]
    if len(arch.kernels) != n or len(arch.channels) != n:
        return [Violation(None, f"expected {n} slot entries")]
    for s, st in enumerate(space.stages):
        if arch.depths[s] not in st.depth_choices:
            out.append(Violation(None, f"stage {s} depth {arch.depths[s]} not in {st.depth_choices}"))
    for slot in range(n):
        stage = space.slot_stage(slot)
        active = space.slot_position(slot) < arch.depths[stage]
        k, c = arch.kernels[slot], arch.channels[slot]
        if active:
            if k not in space.kernel_choices:
                out.append(Violation(slot, f"kernel {k} not in {space.kernel_choices}"))
            if c not in space.stages[stage].channel_choices:
                out.append(Violation(slot, f"channels {c} not in {space.stages[stage].channel_choices}"))
        elif k is not None or c is not None:
            out.append(Violation(slot, "skipped slot carries kernel/channel values"))
    if policy is None:
        return out
    if len(policy.bits) != n:
        out.append(Violation(None, f"policy has {len(policy.bits)} slots, expected {n}"))
        return out
    for slot in range(n):
        stage = space.slot_stage(slot)
        active = space.slot_position(slot) < arch.depths[stage]
        b = policy.bits[slot]
        if active:
            if b is None or len(b) != 4:
                out.append(Violation(slot, "active slot needs 4 bitwidths"))
            elif any(x not in space.bit_choices for x in b):
                out.append(Violation(slot, f"bits {tuple(b)} not all in {space.bit_choices}"))
        elif b is not None:
            out.append(Violation(slot, "policy assigns bits to a skipped slot"))
    return out


def sample_arch(space: SearchSpaceConfig, rng: np.random.Generator) -> ArchSpec:
    """Uniform independent draw of every depth, kernel and channel choice."""
    depth_idx = rng.integers(0, [len(st.depth_choices) for st in space.stages])
    kern_idx = rng.integers(0, len(space.kernel_choices), size=space.n_slots)
    chan_idx = rng.integers(0, [len(space.channel_choices_for(i)) for i in range(space.n_slots)])
    depths = tuple(st.depth_choices[i] for st, i in zip(space.stages, depth_idx))
    kernels, channels = [], []
    for slot in range(space.n_slots):
        if space.slot_position(slot) < depths[space.slot_stage(slot)]:
            kernels.append(space.kernel_choices[kern_idx[slot]])
            channels.append(space.channel_choices_for(slot)[chan_idx[slot]])
        else:
            kernels.append(None)
            channels.append(None)
    return ArchSpec(depths, tuple(kernels), tuple(channels))


def sample_policy(space: SearchSpaceConfig, arch: ArchSpec,
                  rng: np.random.Generator) -> QuantPolicy:
    idx = rng.integers(0, len(space.bit_choices), size=(space.n_slots, 4))
    bc = space.bit_choices
    return QuantPolicy(tuple(
        tuple(bc[j] for j in idx[slot]) if arch.is_active(slot) else None
        for slot in range(space.n_slots)
    ))


def arch_cardinality(space: SearchSpaceConfig) -> int:
    total = 1
    k = len(space.kernel_choices)
    for st in space.stages:
        total *= sum((k * len(st.channel_choices)) ** d for d in st.depth_choices)
    return total


def joint_cardinality(space: SearchSpaceConfig) -> int:
    total = 1
    k, b = len(space.kernel_choices), len(space.bit_choices)
    for st in space.stages:
        total *= sum((k * len(st.channel_choices) * b**4) ** d for d in st.depth_choices)
    return total


def enumerate_space(space: SearchSpaceConfig, limit: int) -> Iterator[tuple[ArchSpec, QuantPolicy]]:
    """Yield every valid (arch, policy) pair once, in lexicographic order.

    The cardinality check happens eagerly, before the first item is requested.
    """
    count = joint_cardinality(space)
    if count > limit:
        raise CardinalityOverflowError(count, limit)
    return _enumerate(space)


def _enumerate(space: SearchSpaceConfig):
    n = space.n_slots
    bit_tuples = list(itertools.product(space.bit_choices, repeat=4))
    for depths in itertools.product(*(st.depth_choices for st in space.stages)):
        active = [s for s in range(n) if space.slot_position(s) < depths[space.slot_stage(s)]]
        for kernels in itertools.product(space.kernel_choices, repeat=len(active)):
            for chans in itertools.product(*(space.channel_choices_for(s) for s in active)):
                k_full = [None] * n
                c_full = [None] * n
                for s, k, c in zip(active, kernels, chans):
                    k_full[s] = k
                    c_full[s] = c
                arch = ArchSpec(tuple(depths), tuple(k_full), tuple(c_full))
                for bits in itertools.product(bit_tuples, repeat=len(active)):
                    b_full = [None] * n
                    for s, b in zip(active, bits):
                        b_full[s] = b
                    yield arch, QuantPolicy(tuple(b_full))
