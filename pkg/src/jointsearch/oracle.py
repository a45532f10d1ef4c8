"""Deterministic synthetic accuracy oracle and dataset generation.

Stands in for evaluating sub-networks of a trained supernet. FP accuracy is a
logistic function of per-slot capacity; quantized accuracy subtracts a
bit-dependent degradation plus a capacity x low-bit interaction term, so the
best bit allocation depends on the architecture.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .encoding import encode_arch, encode_joint
from .errors import DivisibilityError, InvalidInputError
from .space import ArchSpec, QuantPolicy, SearchSpaceConfig, sample_arch, sample_policy, validate

REFERENCE_BITS = 8

# stream tags keep the record generators of different dataset kinds disjoint
_FP_TAG, _MP_RANDOM_TAG, _MP_GROUPED_TAG = 1, 2, 3


@dataclass(frozen=True)
class OracleConfig:
    seed: int = 0
    acc_floor: float = 0.30
    acc_ceil: float = 0.80
    noise_amplitude: float = 0.002
    degradation_scale: float = 0.015
    interaction_scale: float = 0.008

    def __post_init__(self):
        if not 0 <= self.acc_floor < self.acc_ceil <= 1:
            raise ValueError("need 0 <= acc_floor < acc_ceil <= 1")
        if min(self.noise_amplitude, self.degradation_scale, self.interaction_scale) < 0:
            raise ValueError("amplitudes must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class _Coefficients:
    capacity_weight: tuple  # per slot, >= 0
    depth_weight: float
    offset: float
    sensitivity: tuple      # per slot, > 0


@lru_cache(maxsize=64)
def _coefficients(seed: int, space: SearchSpaceConfig) -> _Coefficients:
    # Philox is counter-based, so the draws are reproducible across platforms.
    rng = np.random.Generator(np.random.Philox(key=seed))
    n = space.n_slots
    omega = rng.uniform(0.5, 1.5, size=n) * (12.0 / n)
    total_depth = sum(st.max_depth for st in space.stages)
    kappa = float(rng.uniform(0.5, 1.5) * (2.0 / total_depth))
    delta = rng.uniform(0.5, 1.5, size=n)
    # centre the logistic on the expected score of a uniformly sampled arch
    mu = 0.0
    for slot in range(n):
        st = space.stages[space.slot_stage(slot)]
        p_active = np.mean([d > space.slot_position(slot) for d in st.depth_choices])
        mu += omega[slot] * 0.5 * p_active + kappa * p_active
    return _Coefficients(tuple(float(w) for w in omega), kappa, float(mu),
                         tuple(float(d) for d in delta))


def _normalized_index(value, choices) -> float:
    if len(choices) == 1:
        return 1.0
    return choices.index(value) / (len(choices) - 1)


def capacity(space: SearchSpaceConfig, arch: ArchSpec, slot: int) -> float:
    """Normalized (kernel, width) choice of an active slot, in [0, 1]."""
    return 0.5 * (_normalized_index(arch.kernels[slot], space.kernel_choices)
                  + _normalized_index(arch.channels[slot], space.channel_choices_for(slot)))


def _arch_noise(cfg: OracleConfig, arch: ArchSpec) -> float:
    blob = json.dumps([cfg.seed, arch.to_dict()], separators=(",", ":")).encode()
    h = int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")
    return cfg.noise_amplitude * (2.0 * (h / 2.0**64) - 1.0)


def fp_accuracy(cfg: OracleConfig, space: SearchSpaceConfig, arch: ArchSpec) -> float:
    violations = validate(space, arch)
    if violations:
        raise InvalidInputError(violations)
    co = _coefficients(cfg.seed, space)
    score = -co.offset
    for slot in range(space.n_slots):
        if arch.is_active(slot):
            score += co.capacity_weight[slot] * capacity(space, arch, slot) + co.depth_weight
    acc = cfg.acc_floor + (cfg.acc_ceil - cfg.acc_floor) / (1.0 + np.exp(-score))
    acc += _arch_noise(cfg, arch)
    return float(min(max(acc, cfg.acc_floor), cfg.acc_ceil))


def quant_accuracy(cfg: OracleConfig, space: SearchSpaceConfig, arch: ArchSpec,
                   policy: QuantPolicy) -> float:
    violations = validate(space, arch, policy)
    if violations:
        raise InvalidInputError(violations)
    co = _coefficients(cfg.seed, space)
    acc = fp_accuracy(cfg, space, arch)
    ref = REFERENCE_BITS
    degradation = 0.0
    interaction = 0.0
    for slot in range(space.n_slots):
        if not arch.is_active(slot):
            continue
        w_pw, a_pw, w_dw, a_dw = policy.bits[slot]
        w_bar = (w_pw + w_dw) / 2.0
        a_bar = (a_pw + a_dw) / 2.0
        d = co.sensitivity[slot]
        degradation += d * (max(ref - w_bar, 0.0) + max(ref - a_bar, 0.0)) / ref
        interaction += d * capacity(space, arch, slot) * max(ref - min(policy.bits[slot]), 0) / ref
    acc -= cfg.degradation_scale * degradation + cfg.interaction_scale * interaction
    return float(max(acc, 0.0))


# -- datasets ------------------------------------------------------------------

@dataclass
class DatasetRecord:
    arch: ArchSpec
    policy: Optional[QuantPolicy]
    encoding: np.ndarray
    accuracy: float

    def to_json(self) -> str:
        return json.dumps({
            "arch": self.arch.to_dict(),
            "policy": self.policy.to_dict() if self.policy is not None else None,
            "encoding": [int(v) for v in self.encoding],
            "accuracy": self.accuracy,
        }, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetRecord":
        pol = QuantPolicy.from_dict(d["policy"]) if d.get("policy") is not None else None
        return cls(ArchSpec.from_dict(d["arch"]), pol,
                   np.asarray(d["encoding"], dtype=float), float(d["accuracy"]))


def _stream(cfg: OracleConfig, tag: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, tag, stream, index])


def gen_fp_dataset(cfg: OracleConfig, space: SearchSpaceConfig, n: int,
                   stream: int = 0) -> list[DatasetRecord]:
    """``n`` random architectures with FP labels; ``stream`` selects an independent draw."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = []
    for i in range(n):
        arch = sample_arch(space, _stream(cfg, _FP_TAG, stream, i))
        out.append(DatasetRecord(arch, None, encode_arch(space, arch), fp_accuracy(cfg, space, arch)))
    return out


def gen_mp_dataset(cfg: OracleConfig, space: SearchSpaceConfig, n_random: int = 2500,
                   n_grouped: int = 2500, policies_per_arch: int = 10,
                   stream: int = 0) -> list[DatasetRecord]:
    """Fully random (arch, policy) pairs followed by groups sharing one arch."""
    if policies_per_arch < 1 or n_grouped % policies_per_arch:
        raise DivisibilityError(f"n_grouped={n_grouped} not divisible by policies_per_arch={policies_per_arch}")
    out = []
    for i in range(n_random):
        rng = _stream(cfg, _MP_RANDOM_TAG, stream, i)
        arch = sample_arch(space, rng)
        pol = sample_policy(space, arch, rng)
        out.append(_mp_record(cfg, space, arch, pol))
    for g in range(n_grouped // policies_per_arch):
        rng = _stream(cfg, _MP_GROUPED_TAG, stream, g)
        arch = sample_arch(space, rng)
        for _ in range(policies_per_arch):
            out.append(_mp_record(cfg, space, arch, sample_policy(space, arch, rng)))
    return out


def _mp_record(cfg, space, arch, pol) -> DatasetRecord:
    return DatasetRecord(arch, pol, encode_joint(space, arch, pol), quant_accuracy(cfg, space, arch, pol))


def write_dataset(path, records: Iterable[DatasetRecord], space: SearchSpaceConfig,
                  cfg: OracleConfig, kind: str) -> None:
    header = {"space_fingerprint": space.fingerprint(), "oracle_config": cfg.to_dict(), "kind": kind}
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for rec in records:
            f.write(rec.to_json() + "\n")


def read_dataset(path) -> tuple[dict, list[DatasetRecord]]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    return header, [DatasetRecord.from_dict(json.loads(line)) for line in lines[1:] if line]


def records_to_arrays(records) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([r.encoding for r in records])
    t = np.array([r.accuracy for r in records])
    return X, t
