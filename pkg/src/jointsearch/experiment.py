"""Scratch vs. transferred quantization-aware predictor, across data budgets."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .oracle import OracleConfig, gen_fp_dataset, gen_mp_dataset, records_to_arrays
from .predictor import (
    TRANSFER_TRAIN_DEFAULTS,
    HIDDEN,
    MlpParams,
    TrainConfig,
    init_params,
    pairwise_accuracy,
    train,
    transfer_init,
)
from .space import SearchSpaceConfig

log = logging.getLogger(__name__)

TEST_STREAM = 1_000_003
FP_STREAM = 0


@dataclass
class TransferExperimentConfig:
    budgets: Sequence[int] = (500, 1000, 2000)
    seeds: Sequence[int] = (0, 1, 2, 3, 4)
    fp_size: int = 20000
    fp_epochs: int = 30
    scratch_epochs: int = 100
    transfer_epochs: int = TRANSFER_TRAIN_DEFAULTS["epochs"]
    transfer_lr: float = TRANSFER_TRAIN_DEFAULTS["learning_rate"]
    test_size: int = 2000
    policies_per_arch: int = 10
    hidden: int = HIDDEN


@dataclass
class TransferRow:
    budget: int
    seed: int
    variant: str
    pairwise_acc: float


@dataclass
class TransferExperimentResult:
    rows: list
    fp_heldout_pairwise: float
    summary: dict = field(default_factory=dict)

    def mean(self, budget: int, variant: str) -> float:
        return float(np.mean([r.pairwise_acc for r in self.rows
                              if r.budget == budget and r.variant == variant]))


def train_fp_predictor(space: SearchSpaceConfig, oracle: OracleConfig, n: int, epochs: int,
                       seed: int = 0, hidden: int = HIDDEN) -> MlpParams:
    X, t = records_to_arrays(gen_fp_dataset(oracle, space, n, stream=FP_STREAM))
    init = init_params(X.shape[1], hidden, seed=seed, space_fingerprint=space.fingerprint())
    return train(init, (X, t), TrainConfig(epochs=epochs, seed=seed)).params


def _split(budget: int, k: int) -> tuple[int, int]:
    # equal halves of random and grouped data, grouped rounded to whole groups
    grouped = (budget // 2) // k * k
    return budget - grouped, grouped


def run_transfer_experiment(space: SearchSpaceConfig, oracle: OracleConfig,
                            cfg: TransferExperimentConfig = TransferExperimentConfig(),
                            fp_params: Optional[MlpParams] = None) -> TransferExperimentResult:
    if fp_params is None:
        log.info("training FP predictor on %d records", cfg.fp_size)
        fp_params = train_fp_predictor(space, oracle, cfg.fp_size, cfg.fp_epochs, hidden=cfg.hidden)
    fp_test = records_to_arrays(gen_fp_dataset(oracle, space, cfg.test_size, stream=TEST_STREAM))
    fp_pw = pairwise_accuracy(fp_params, fp_test)
    test = records_to_arrays(gen_mp_dataset(oracle, space, cfg.test_size, 0, 1, stream=TEST_STREAM))
    widened = transfer_init(fp_params, space)

    rows = []
    for budget in cfg.budgets:
        n_random, n_grouped = _split(budget, cfg.policies_per_arch)
        for seed in cfg.seeds:
            data = records_to_arrays(
                gen_mp_dataset(oracle, space, n_random, n_grouped, cfg.policies_per_arch, stream=seed + 1))
            scratch_init = init_params(data[0].shape[1], cfg.hidden, seed=seed,
                                       variant="mp-scratch", space_fingerprint=space.fingerprint())
            scratch = train(scratch_init, data, TrainConfig(epochs=cfg.scratch_epochs, seed=seed))
            transfer = train(widened, data, TrainConfig(learning_rate=cfg.transfer_lr,
                                                        epochs=cfg.transfer_epochs, seed=seed))
            for variant, res in (("scratch", scratch), ("transfer", transfer)):
                pw = pairwise_accuracy(res.params, test)
                rows.append(TransferRow(budget, seed, variant, pw))
                log.info("budget=%d seed=%d %s pairwise=%.4f", budget, seed, variant, pw)
    result = TransferExperimentResult(rows, fp_pw)
    result.summary = {
        "fp_heldout_pairwise": fp_pw,
        "means": [
            {"budget": b, "scratch": result.mean(b, "scratch"), "transfer": result.mean(b, "transfer")}
            for b in cfg.budgets
        ],
    }
    return result


def write_rows_csv(path, rows) -> None:
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["budget", "seed", "variant", "pairwise_acc"])
        for r in rows:
            w.writerow([r.budget, r.seed, r.variant, repr(r.pairwise_acc)])
