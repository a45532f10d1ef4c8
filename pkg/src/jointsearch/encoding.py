"""One-hot encoding of (architecture, quantization policy) pairs.

Each block slot contributes ``[kernel | channels | w_pw | a_pw | w_dw | a_dw]``
one-hot fields (the arch-only variant keeps just the first two). A skipped
slot is an all-zero section.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError, MalformedEncodingError
from .space import ArchSpec, QuantPolicy, SearchSpaceConfig, validate

N_BIT_FIELDS = 4


@dataclass(frozen=True)
class Layout:
    """Offsets of every slot section in the joint and arch-only vectors."""

    joint_offsets: tuple
    arch_offsets: tuple
    joint_dim: int
    arch_dim: int
    arch_index_in_joint: np.ndarray  # arch coordinate j -> joint coordinate


@lru_cache(maxsize=32)
def layout(space: SearchSpaceConfig) -> Layout:
    nk, nb = len(space.kernel_choices), len(space.bit_choices)
    joint_offsets, arch_offsets, index_map = [], [], []
    jo = ao = 0
    for slot in range(space.n_slots):
        nc = len(space.channel_choices_for(slot))
        joint_offsets.append(jo)
        arch_offsets.append(ao)
        index_map.extend(range(jo, jo + nk + nc))
        jo += nk + nc + N_BIT_FIELDS * nb
        ao += nk + nc
    idx = np.asarray(index_map, dtype=np.intp)
    idx.setflags(write=False)
    return Layout(tuple(joint_offsets), tuple(arch_offsets), jo, ao, idx)


def arch_dim(space: SearchSpaceConfig) -> int:
    return layout(space).arch_dim


def joint_dim(space: SearchSpaceConfig) -> int:
    return layout(space).joint_dim


def _check(space, arch, policy=None):
    violations = validate(space, arch, policy)
    if violations:
        raise InvalidInputError(violations)


def encode_arch(space: SearchSpaceConfig, arch: ArchSpec) -> np.ndarray:
    _check(space, arch)
    lay = layout(space)
    nk = len(space.kernel_choices)
    x = np.zeros(lay.arch_dim)
    for slot in range(space.n_slots):
        if not arch.is_active(slot):
            continue
        o = lay.arch_offsets[slot]
        x[o + space.kernel_choices.index(arch.kernels[slot])] = 1.0
        x[o + nk + space.channel_choices_for(slot).index(arch.channels[slot])] = 1.0
    return x


def encode_joint(space: SearchSpaceConfig, arch: ArchSpec, policy: QuantPolicy) -> np.ndarray:
    _check(space, arch, policy)
    lay = layout(space)
    nk, nb = len(space.kernel_choices), len(space.bit_choices)
    x = np.zeros(lay.joint_dim)
    for slot in range(space.n_slots):
        if not arch.is_active(slot):
            continue
        chans = space.channel_choices_for(slot)
        o = lay.joint_offsets[slot]
        x[o + space.kernel_choices.index(arch.kernels[slot])] = 1.0
        x[o + nk + chans.index(arch.channels[slot])] = 1.0
        o += nk + len(chans)
        for f, b in enumerate(policy.bits[slot]):
            x[o + f * nb + space.bit_choices.index(b)] = 1.0
    return x


def encode_joint_batch(space, pairs) -> np.ndarray:
    if not pairs:
        return np.zeros((0, joint_dim(space)))
    return np.stack([encode_joint(space, a, q) for a, q in pairs])


def _one_index(field: np.ndarray, slot: int, name: str) -> int:
    ones = np.flatnonzero(field == 1.0)
    if len(ones) != 1 or np.count_nonzero(field) != 1:
        raise MalformedEncodingError(f"slot {slot}: {name} field is not one-hot")
    return int(ones[0])


def decode(space: SearchSpaceConfig, enc) -> tuple[ArchSpec, QuantPolicy]:
    """Invert :func:`encode_joint`."""
    x = np.asarray(enc, dtype=float)
    lay = layout(space)
    if x.shape != (lay.joint_dim,):
        raise MalformedEncodingError(f"expected length {lay.joint_dim}, got {x.shape}")
    nk, nb = len(space.kernel_choices), len(space.bit_choices)
    kernels, channels, bits = [], [], []
    for slot in range(space.n_slots):
        chans = space.channel_choices_for(slot)
        o = lay.joint_offsets[slot]
        section = x[o:o + nk + len(chans) + N_BIT_FIELDS * nb]
        if not section.any():
            kernels.append(None)
            channels.append(None)
            bits.append(None)
            continue
        kernels.append(space.kernel_choices[_one_index(section[:nk], slot, "kernel")])
        channels.append(chans[_one_index(section[nk:nk + len(chans)], slot, "channel")])
        rest = section[nk + len(chans):]
        bits.append(tuple(
            space.bit_choices[_one_index(rest[f * nb:(f + 1) * nb], slot, f"bit[{f}]")]
            for f in range(N_BIT_FIELDS)
        ))
    depths = []
    for s, st in enumerate(space.stages):
        active = [kernels[i] is not None for i in space.stage_slots(s)]
        d = sum(active)
        if active != [True] * d + [False] * (len(active) - d):
            raise MalformedEncodingError(f"stage {s}: active slots are not a prefix")
        if d not in st.depth_choices:
            raise MalformedEncodingError(f"stage {s}: depth {d} not in {st.depth_choices}")
        depths.append(d)
    return ArchSpec(tuple(depths), tuple(kernels), tuple(channels)), QuantPolicy(tuple(bits))
