"""Resource-constrained evolutionary search over (arch, policy) pairs.

The population is scored by a quantization-aware predictor (or any batch
scorer), candidates that violate the constraint are rejected at birth, and a
running Top-k is carried across generations.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .cost_model import Constraint, CostTable, bitops, min_achievable, satisfies, total_cost
from .encoding import encode_joint
from .errors import (
    CrossoverStuckError,
    FingerprintMismatchError,
    InfeasibleConstraintError,
    MutationStuckError,
)
from .predictor import MlpParams, forward
from .space import ArchSpec, QuantPolicy, SearchSpaceConfig, sample_arch, sample_policy

log = logging.getLogger(__name__)

Scorer = Callable[[Sequence[tuple]], np.ndarray]


@dataclass
class EvolutionConfig:
    population_size: int = 100
    top_k: int = 25
    n_mutation: Optional[int] = None
    n_crossover: Optional[int] = None
    mutation_prob: float = 0.1
    iter_max: int = 500
    max_resample_attempts: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n_mutation is None:
            self.n_mutation = self.population_size // 2
        if self.n_crossover is None:
            self.n_crossover = self.population_size // 2
        if not 1 <= self.top_k <= self.population_size:
            raise ValueError("need 1 <= top_k <= population_size")
        if not 0 < self.mutation_prob <= 1:
            raise ValueError("mutation_prob must lie in (0, 1]")
        if self.iter_max < 1 or self.max_resample_attempts < 1:
            raise ValueError("iter_max and max_resample_attempts must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Candidate:
    arch: ArchSpec
    policy: QuantPolicy
    predicted_accuracy: Optional[float] = None

    @property
    def key(self) -> tuple:
        return (self.arch, self.policy)


@dataclass
class SearchResult:
    top_k: list
    history: list = field(default_factory=list)  # [{"iter", "best", "mean"}]
    n_evaluations: int = 0


def _fresh_slot(space, slot, rng):
    k = space.kernel_choices[rng.integers(len(space.kernel_choices))]
    chans = space.channel_choices_for(slot)
    c = chans[rng.integers(len(chans))]
    bc = space.bit_choices
    b = tuple(bc[i] for i in rng.integers(len(bc), size=4))
    return k, c, b


def _assemble(depths, slots) -> tuple[ArchSpec, QuantPolicy]:
    ks, cs, bs = zip(*slots) if slots else ((), (), ())
    return ArchSpec(tuple(depths), tuple(ks), tuple(cs)), QuantPolicy(tuple(bs))


def _slot_config(cand: Candidate, slot: int):
    return cand.arch.kernels[slot], cand.arch.channels[slot], cand.policy.bits[slot]


def init_population(space: SearchSpaceConfig, constraint: Constraint, table: CostTable,
                    cfg: EvolutionConfig, rng: np.random.Generator) -> list[Candidate]:
    """Rejection-sample ``population_size`` feasible candidates."""
    pop = []
    misses = 0
    while len(pop) < cfg.population_size:
        arch = sample_arch(space, rng)
        pol = sample_policy(space, arch, rng)
        if satisfies(constraint, table, space, arch, pol):
            pop.append(Candidate(arch, pol))
            misses = 0
        else:
            misses += 1
            if misses >= cfg.max_resample_attempts:
                lo = min_achievable(table, space)
                raise InfeasibleConstraintError(
                    f"no feasible sample in {misses} consecutive draws; minimum achievable "
                    f"latency {lo['latency_ms']:.4f} ms, energy {lo['energy_mJ']:.4f} mJ, "
                    f"bitops {lo['bitops_G']:.4f} G", min_cost=lo)
    return pop


def mutate(parent: Candidate, space: SearchSpaceConfig, constraint: Constraint, table: CostTable,
           cfg: EvolutionConfig, rng: np.random.Generator) -> Candidate:
    p = cfg.mutation_prob
    for _ in range(cfg.max_resample_attempts):
        depths = list(parent.arch.depths)
        for s, st in enumerate(space.stages):
            if rng.random() < p:
                depths[s] = st.depth_choices[rng.integers(len(st.depth_choices))]
        slots = []
        for slot in range(space.n_slots):
            active = space.slot_position(slot) < depths[space.slot_stage(slot)]
            mutated = rng.random() < p
            if not active:
                slots.append((None, None, None))
            elif mutated or not parent.arch.is_active(slot):
                slots.append(_fresh_slot(space, slot, rng))
            else:
                slots.append(_slot_config(parent, slot))
        arch, pol = _assemble(depths, slots)
        if satisfies(constraint, table, space, arch, pol):
            return Candidate(arch, pol)
    raise MutationStuckError(f"no feasible mutant after {cfg.max_resample_attempts} attempts")


def crossover(pa: Candidate, pb: Candidate, space: SearchSpaceConfig, constraint: Constraint,
              table: CostTable, cfg: EvolutionConfig, rng: np.random.Generator) -> Candidate:
    parents = (pa, pb)
    for _ in range(cfg.max_resample_attempts):
        depths = [parents[rng.integers(2)].arch.depths[s] for s in range(space.n_stages)]
        slots = []
        for slot in range(space.n_slots):
            pick = rng.integers(2)
            if space.slot_position(slot) >= depths[space.slot_stage(slot)]:
                slots.append((None, None, None))
                continue
            src, other = parents[pick], parents[1 - pick]
            if src.arch.is_active(slot):
                slots.append(_slot_config(src, slot))
            elif other.arch.is_active(slot):
                slots.append(_slot_config(other, slot))
            else:
                slots.append(_fresh_slot(space, slot, rng))
        arch, pol = _assemble(depths, slots)
        if satisfies(constraint, table, space, arch, pol):
            return Candidate(arch, pol)
    raise CrossoverStuckError(f"no feasible child after {cfg.max_resample_attempts} attempts")


def predictor_scorer(space: SearchSpaceConfig, params: MlpParams) -> Scorer:
    def score(pairs):
        X = np.stack([encode_joint(space, a, q) for a, q in pairs])
        return np.atleast_1d(forward(params, X))
    return score


def search(space: SearchSpaceConfig, constraint: Constraint, table: CostTable,
           predictor: Union[MlpParams, Scorer], cfg: EvolutionConfig,
           rng: Optional[np.random.Generator] = None) -> SearchResult:
    """Run the evolution loop and return the final Top-k, best first."""
    fp = space.fingerprint()
    if table.space_fingerprint != fp:
        raise FingerprintMismatchError(f"cost table is for space {table.space_fingerprint}, not {fp}")
    if isinstance(predictor, MlpParams):
        if predictor.space_fingerprint not in (None, fp):
            raise FingerprintMismatchError(
                f"predictor is for space {predictor.space_fingerprint}, not {fp}")
        scorer = predictor_scorer(space, predictor)
    else:
        scorer = predictor
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    population = init_population(space, constraint, table, cfg, rng)
    latency_cache: dict = {}
    order: dict = {}  # candidate key -> insertion index
    top: list[Candidate] = []
    history = []
    n_eval = 0

    def rank(c: Candidate):
        if c.key not in latency_cache:
            latency_cache[c.key] = total_cost(table, c.arch, c.policy).latency_ms
        return (-c.predicted_accuracy, latency_cache[c.key], order[c.key])

    for it in range(cfg.iter_max):
        fresh = [c for c in population if c.predicted_accuracy is None]
        if fresh:
            scores = scorer([c.key for c in fresh])
            n_eval += len(fresh)
            for c, s in zip(fresh, scores):
                c.predicted_accuracy = float(s)
        for c in population:
            order.setdefault(c.key, len(order))
        # running Top-k over the union, one entry per distinct (arch, policy)
        pool = {c.key: c for c in population}
        for c in top:
            pool[c.key] = c
        top = sorted(pool.values(), key=rank)[:cfg.top_k]
        history.append({
            "iter": it,
            "best": top[0].predicted_accuracy,
            "mean": float(np.mean([c.predicted_accuracy for c in population])),
        })
        if it == cfg.iter_max - 1:
            break
        children = []
        for _ in range(cfg.n_crossover):
            pa = top[rng.integers(len(top))]
            pb = top[rng.integers(len(top))]
            try:
                children.append(crossover(pa, pb, space, constraint, table, cfg, rng))
            except CrossoverStuckError:
                fitter = pa if rank(pa) <= rank(pb) else pb
                children.append(Candidate(fitter.arch, fitter.policy))
        for _ in range(cfg.n_mutation):
            parent = top[rng.integers(len(top))]
            try:
                children.append(mutate(parent, space, constraint, table, cfg, rng))
            except MutationStuckError:
                children.append(Candidate(parent.arch, parent.policy))
        population = list(top) + children
    log.debug("search finished: best %.6f after %d evaluations", top[0].predicted_accuracy, n_eval)
    return SearchResult(top, history, n_eval)


def result_to_dict(result: SearchResult, space: SearchSpaceConfig, table: CostTable,
                   constraint: Constraint, cfg: EvolutionConfig,
                   oracle_fn: Optional[Callable] = None) -> dict:
    rows = []
    for c in result.top_k:
        cost = total_cost(table, c.arch, c.policy)
        row = {
            "arch": c.arch.to_dict(),
            "policy": c.policy.to_dict(),
            "predicted_acc": c.predicted_accuracy,
            "latency_ms": cost.latency_ms,
            "energy_mJ": cost.energy_mJ,
            "bitops_G": bitops(space, c.arch, c.policy),
        }
        if oracle_fn is not None:
            row["oracle_acc"] = oracle_fn(c.arch, c.policy)
        rows.append(row)
    return {
        "config": cfg.to_dict(),
        "constraint": constraint.to_dict(),
        "top_k": rows,
        "history": result.history,
    }
