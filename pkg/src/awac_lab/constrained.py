"""KL-constrained policy improvement at a single state, solved exactly.

The problem is: maximize E_pi[A] subject to KL(pi || pi_beta) <= eps. Its
stationary point is pi_beta * exp(A / lam) / Z. This module computes that
closed form, recovers lam from eps by bisection, and provides a brute-force
search over the simplex that never uses the closed form, so the two can be
checked against each other. Bound checks (reverse Pinsker chain, Cauchy-Schwarz
and Polya-Szego brackets on the normalizer) live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations, product

import numpy as np

LAMBDA_BRACKET = (1e-6, 1e6)
BISECTION_ITERS = 200


@dataclass(frozen=True)
class ConstrainedProblem:
    pi_beta: np.ndarray
    advantage: np.ndarray
    epsilon: float | None = None
    lam: float | None = None

    def __post_init__(self):
        pb = np.asarray(self.pi_beta, dtype=np.float64)
        adv = np.asarray(self.advantage, dtype=np.float64)
        if pb.ndim != 1 or pb.shape != adv.shape:
            raise ValueError("pi_beta and advantage must be vectors of equal length")
        if np.any(pb < 0) or abs(pb.sum() - 1.0) > 1e-9:
            raise ValueError("pi_beta must be a probability vector")
        if not np.all(np.isfinite(adv)):
            raise ValueError("advantage must be finite")
        if (self.epsilon is None) == (self.lam is None):
            raise ValueError("give exactly one of epsilon or lam")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lam must be positive")
        object.__setattr__(self, "pi_beta", pb)
        object.__setattr__(self, "advantage", adv)


@dataclass(frozen=True)
class LambdaSolution:
    lam: float
    probs: np.ndarray
    # True when eps exceeds what any lam in the bracket can reach; probs is then the greedy limit.
    saturated: bool = False


def kl_divergence(p, q) -> float:
    """KL(p || q) with 0 log 0 = 0; ``inf`` when p puts mass where q has none."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    support = p > 0
    if np.any(q[support] <= 0):
        return math.inf
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def total_variation(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def _closed_form(pi_beta: np.ndarray, advantage: np.ndarray, lam: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logits = np.log(pi_beta) + advantage / lam
    logits -= np.max(logits)
    w = np.exp(logits)
    return w / w.sum()


def solve_nonparametric(problem: ConstrainedProblem) -> np.ndarray:
    """Closed-form maximizer for a given multiplier ``problem.lam``."""
    if problem.lam is None:
        raise ValueError("solve_nonparametric needs a problem with lam set")
    return _closed_form(problem.pi_beta, problem.advantage, problem.lam)


def greedy_limit(pi_beta: np.ndarray, advantage: np.ndarray) -> np.ndarray:
    """lam -> 0 limit: pi_beta restricted to the argmax set of the advantage."""
    on_support = pi_beta > 0
    best = np.max(advantage[on_support])
    mask = on_support & (advantage == best)
    out = np.where(mask, pi_beta, 0.0)
    return out / out.sum()


def solve_for_lambda(problem: ConstrainedProblem) -> LambdaSolution:
    """Find lam with KL(pi*(lam) || pi_beta) = eps by bisection in log(lam)."""
    if problem.epsilon is None:
        raise ValueError("solve_for_lambda needs a problem with epsilon set")
    pb, adv, eps = problem.pi_beta, problem.advantage, problem.epsilon
    support = pb > 0
    if np.ptp(adv[support]) == 0.0:
        return LambdaSolution(math.inf, pb.copy())

    def kl_at(log_lam):
        return kl_divergence(_closed_form(pb, adv, math.exp(log_lam)), pb)

    lo, hi = math.log(LAMBDA_BRACKET[0]), math.log(LAMBDA_BRACKET[1])
    if eps >= kl_at(lo):
        limit = greedy_limit(pb, adv)
        if eps >= kl_divergence(limit, pb):
            return LambdaSolution(0.0, limit, saturated=True)
        return LambdaSolution(LAMBDA_BRACKET[0], _closed_form(pb, adv, LAMBDA_BRACKET[0]), saturated=True)
    if eps <= kl_at(hi):
        return LambdaSolution(LAMBDA_BRACKET[1], _closed_form(pb, adv, LAMBDA_BRACKET[1]), saturated=True)
    # KL(pi*(lam) || pi_beta) is non-increasing in lam.
    for _ in range(BISECTION_ITERS):
        mid = 0.5 * (lo + hi)
        if kl_at(mid) > eps:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    lam = math.exp(0.5 * (lo + hi))
    return LambdaSolution(lam, _closed_form(pb, adv, lam))


@lru_cache(maxsize=8)
def _anchor_offsets(n_free: int, resolution: float) -> np.ndarray:
    steps = int(math.ceil(1.0 / resolution))
    axis = np.arange(-steps, steps + 1) * resolution
    if n_free == 0:
        return np.zeros((1, 0))
    return np.array(list(product(axis, repeat=n_free))) if n_free > 1 else axis[:, None]


def _line_interval(base, pair_mass, q_i, q_j, eps, iters=80):
    """Feasible interval of t in [0, 1] for points (t*m, (1-t)*m) on one grid line.

    ``base`` is the KL contribution of the fixed coordinates. Returns (lo, hi, ok)
    arrays; KL along the line is convex in t so the feasible set is an interval
    around the minimizer, found by bisection on the derivative and then on each side.
    """
    m = pair_mass

    def kl_line(t):
        a = t * m
        b = (1.0 - t) * m
        with np.errstate(divide="ignore", invalid="ignore"):
            ka = np.where(a > 0, a * np.log(a / q_i), 0.0)
            kb = np.where(b > 0, b * np.log(b / q_j), 0.0)
        return base + ka + kb

    # minimizer of the pair term: t* = q_i / (q_i + q_j), independent of m
    t_min = q_i / (q_i + q_j)
    ok = kl_line(t_min) <= eps
    left_lo, left_hi = np.zeros_like(t_min), t_min.copy()
    right_lo, right_hi = t_min.copy(), np.ones_like(t_min)
    left_in = kl_line(np.zeros_like(t_min)) <= eps
    right_in = kl_line(np.ones_like(t_min)) <= eps
    for _ in range(iters):
        mid = 0.5 * (left_lo + left_hi)
        feas = kl_line(mid) <= eps
        left_hi = np.where(feas, mid, left_hi)
        left_lo = np.where(feas, left_lo, mid)
        mid = 0.5 * (right_lo + right_hi)
        feas = kl_line(mid) <= eps
        right_lo = np.where(feas, mid, right_lo)
        right_hi = np.where(feas, right_hi, mid)
    lo = np.where(left_in, 0.0, left_hi)
    hi = np.where(right_in, 1.0, right_lo)
    return lo, hi, ok


def brute_force_constrained(problem: ConstrainedProblem, resolution: float = 1e-3) -> np.ndarray:
    """Exhaustive search for argmax E_pi[A] s.t. KL(pi || pi_beta) <= eps.

    The simplex is covered by families of grid lines, one family per action
    pair (i, j): the other coordinates sit on a grid of spacing ``resolution``
    anchored at pi_beta and the line runs along e_i - e_j. The objective is
    linear along each line and the constraint set is an interval, so each line's
    optimum is an interval endpoint located numerically. No closed form is used.
    """
    if problem.epsilon is None:
        raise ValueError("brute force needs a problem with epsilon set")
    pb, adv, eps = problem.pi_beta, problem.advantage, problem.epsilon
    n = pb.size
    if n > 4:
        raise ValueError("brute force search is limited to 4 actions")
    if resolution > 1e-2:
        raise ValueError("resolution must be at most 1e-2")
    if np.any(pb <= 0):
        raise ValueError("brute force search needs a strictly positive pi_beta")
    if np.ptp(adv) == 0.0:
        return pb.copy()
    if math.isinf(eps):
        out = np.zeros(n)
        out[int(np.argmax(adv))] = 1.0
        return out

    best_val, best_pt = -math.inf, pb.copy()
    offsets = _anchor_offsets(n - 2, resolution)
    for i, j in combinations(range(n), 2):
        rest = [k for k in range(n) if k not in (i, j)]
        fixed = pb[rest][None, :] + offsets
        keep = np.all(fixed >= 0, axis=1)
        fixed = fixed[keep]
        mass = 1.0 - fixed.sum(axis=1)
        keep = mass >= 0
        fixed, mass = fixed[keep], mass[keep]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(fixed > 0, fixed * np.log(fixed / pb[rest]), 0.0)
        base = terms.sum(axis=1)
        qi = np.full(mass.shape, pb[i])
        qj = np.full(mass.shape, pb[j])
        lo, hi, ok = _line_interval(base, mass, qi, qj, eps)
        if not np.any(ok):
            continue
        # linear objective: pick the endpoint favouring the better of i, j
        t = hi if adv[i] >= adv[j] else lo
        vals = fixed @ adv[rest] + mass * (t * adv[i] + (1.0 - t) * adv[j])
        vals = np.where(ok, vals, -math.inf)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val = vals[k]
            pt = np.empty(n)
            pt[rest] = fixed[k]
            pt[i] = t[k] * mass[k]
            pt[j] = (1.0 - t[k]) * mass[k]
            best_pt = pt
    return best_pt


@dataclass(frozen=True)
class ProjectionResult:
    logits: np.ndarray
    residual_tv: float
    steps: int
    converged: bool

    @property
    def probs(self) -> np.ndarray:
        return _softmax(self.logits)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z))
    return e / e.sum()


def forward_kl_grad(logits: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Gradient of E_target[-log softmax(logits)] with respect to the logits."""
    return _softmax(logits) - target


def reverse_kl_grad(logits: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Gradient of KL(softmax(logits) || target) with respect to the logits."""
    p = _softmax(logits)
    log_ratio = np.log(p) - np.log(target)
    return p * (log_ratio - np.sum(p * log_ratio))


def weighted_mle_grad(logits, actions, weights) -> np.ndarray:
    """Gradient of mean(-w_i log softmax(logits)[a_i]) over sampled actions."""
    p = _softmax(logits)
    grad = np.zeros_like(p)
    np.add.at(grad, np.asarray(actions), -np.asarray(weights))
    grad += np.sum(weights) * p
    return grad / len(actions)


def _project(target, grad_fn, logits0, steps, rate, tol):
    target = np.asarray(target, dtype=np.float64)
    z = np.zeros_like(target) if logits0 is None else np.array(logits0, dtype=np.float64)
    for k in range(steps):
        tv = total_variation(_softmax(z), target)
        if tv <= tol:
            return ProjectionResult(z, tv, k, True)
        z = z - rate * grad_fn(z, target)
    tv = total_variation(_softmax(z), target)
    return ProjectionResult(z, tv, steps, tv <= tol)


def project_forward_kl(target, logits0=None, steps: int = 20_000, rate: float = 1.0, tol: float = 1e-4):
    """Fit a tabular softmax to ``target`` by descending E_target[-log pi].

    This is the maximum-likelihood projection: the policy class only ever sees
    samples/weights from ``target``, never its own density.
    """
    return _project(target, forward_kl_grad, logits0, steps, rate, tol)


def project_reverse_kl(target, logits0=None, steps: int = 20_000, rate: float = 1.0, tol: float = 1e-4):
    target = np.asarray(target, dtype=np.float64)
    if np.any(target <= 0):
        raise ValueError("reverse KL projection needs a strictly positive target")
    return _project(target, reverse_kl_grad, logits0, steps, rate, tol)


def pinsker_chain_check(p, q, alpha: float):
    """Evaluate KL(p||q) <= (2/alpha) TV(p,q)^2 <= (1/alpha) KL(q||p).

    The left inequality needs min(q) >= alpha; the right one is Pinsker's
    inequality applied to KL(q||p).
    """
    q = np.asarray(q, dtype=np.float64)
    if alpha <= 0 or np.min(q) < alpha:
        raise ValueError("need min(q) >= alpha > 0")
    lhs = kl_divergence(p, q)
    mid = 2.0 / alpha * total_variation(p, q) ** 2
    rhs = kl_divergence(q, p) / alpha
    # slack for rounding in the equality case p == q
    slack = 1e-12
    return lhs, mid, rhs, bool(lhs <= mid + slack and mid <= rhs + slack)


def z_bounds(pi, advantage, lam: float):
    """Normalizer Z = sum_a pi(a) exp(A(a)/lam) with its two classical brackets.

    Upper: Cauchy-Schwarz, sqrt(sum pi^2 * sum g^2).
    Lower: Polya-Szego, 2 / (sqrt(r) + 1/sqrt(r)) times the upper bound, with
    r = (M_f M_g) / (m_f m_g) from the extrema of f = pi and g = exp(A/lam).
    """
    f = np.asarray(pi, dtype=np.float64)
    a = np.asarray(advantage, dtype=np.float64)
    if lam <= 0 or np.any(f <= 0):
        raise ValueError("need lam > 0 and a strictly positive pi")
    g = np.exp(a / lam)
    z = float(np.sum(f * g))
    c_upper = math.sqrt(float(np.sum(f * f) * np.sum(g * g)))
    # log-space ratio avoids overflow for sharp advantages
    log_r = math.log(f.max() / f.min()) + (a.max() - a.min()) / lam
    c_lower = c_upper / math.cosh(0.5 * log_r)
    ok = c_lower <= z * (1 + 1e-12) and z <= c_upper * (1 + 1e-12)
    if not ok:
        raise AssertionError(f"Z bracket violated: {c_lower} <= {z} <= {c_upper}")
    return z, c_upper, c_lower
