"""Brute-force reference routines shared by the search tests."""
import numpy as np

from jointsearch import predictor as P
from jointsearch.cost_model import Constraint, satisfies, total_cost
from jointsearch.encoding import encode_arch, encode_joint
from jointsearch.oracle import quant_accuracy
from jointsearch.space import enumerate_space, sample_arch, sample_policy


def oracle_scorer(space, oracle_cfg):
    def score(pairs):
        return np.array([quant_accuracy(oracle_cfg, space, a, q) for a, q in pairs])
    return score


def latency_quantile_constraint(space, table, q=0.3):
    lats = [total_cost(table, a, p).latency_ms for a, p in enumerate_space(space, 10**6)]
    return Constraint(max_latency_ms=float(np.quantile(lats, q)))


def brute_force_optimum(space, table, constraint, oracle_cfg):
    """Best oracle accuracy among all feasible pairs, and the feasible count."""
    best = -np.inf
    n = 0
    for a, p in enumerate_space(space, 10**6):
        if satisfies(constraint, table, space, a, p):
            n += 1
            best = max(best, quant_accuracy(oracle_cfg, space, a, p))
    return best, n


def run_is_feasible_and_elitist(result, space, table, constraint):
    feasible = all(satisfies(constraint, table, space, c.arch, c.policy) for c in result.top_k)
    best = [h["best"] for h in result.history]
    monotone = all(x <= y for x, y in zip(best, best[1:]))
    return feasible and monotone


def _numeric_grad(params, X, t, name, flat_idx, h=1e-5):
    arr = getattr(params, name)
    base = arr.flat[flat_idx]
    arr.flat[flat_idx] = base + h
    up = P.loss(params, (X, t))
    arr.flat[flat_idx] = base - h
    down = P.loss(params, (X, t))
    arr.flat[flat_idx] = base
    return (up - down) / (2 * h)


def gradient_check(params, X, t, n_coords, seed):
    """Largest relative error between analytic and central-difference gradients."""
    g = P.grad(params, (X, t))
    sizes = np.array([getattr(params, n).size for n in P.PARAM_NAMES])
    rng = np.random.default_rng(seed)
    worst = 0.0
    for flat in rng.choice(sizes.sum(), size=n_coords, replace=False):
        k = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
        name = P.PARAM_NAMES[k]
        idx = int(flat - (sizes[:k].sum() if k else 0))
        analytic = getattr(g, name).flat[idx]
        numeric = _numeric_grad(params, X, t, name, idx)
        denom = max(abs(analytic), abs(numeric), 1e-10)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def random_batch(space, variant, rng, n=32):
    X, t = [], []
    for _ in range(n):
        a = sample_arch(space, rng)
        if variant == "fp":
            X.append(encode_arch(space, a))
        else:
            X.append(encode_joint(space, a, sample_policy(space, a, rng)))
        t.append(rng.uniform(0.3, 0.8))
    return np.stack(X), np.array(t)
