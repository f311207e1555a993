import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from awac_lab.constrained import (
    ConstrainedProblem,
    brute_force_constrained,
    forward_kl_grad,
    kl_divergence,
    pinsker_chain_check,
    project_forward_kl,
    project_reverse_kl,
    solve_for_lambda,
    solve_nonparametric,
    total_variation,
    weighted_mle_grad,
    z_bounds,
)


def test_problem_requires_exactly_one_knob():
    with pytest.raises(ValueError):
        ConstrainedProblem([0.5, 0.5], [0, 1])
    with pytest.raises(ValueError):
        ConstrainedProblem([0.5, 0.5], [0, 1], epsilon=0.1, lam=1.0)
    with pytest.raises(ValueError):
        ConstrainedProblem([0.5, 0.5], [0, 1], epsilon=-1.0)
    with pytest.raises(ValueError):
        ConstrainedProblem([0.6, 0.5], [0, 1], lam=1.0)


def test_closed_form_examples():
    pb = np.array([0.2, 0.5, 0.3])
    out = solve_nonparametric(ConstrainedProblem(pb, [3.0, 3.0, 3.0], lam=0.7))
    assert np.allclose(out, pb, atol=1e-15)
    lam = 0.37
    out = solve_nonparametric(ConstrainedProblem([0.5, 0.5], [0.0, lam * math.log(2)], lam=lam))
    assert np.allclose(out, [1 / 3, 2 / 3], atol=1e-14)
    assert abs(out.sum() - 1.0) < 1e-12


def test_closed_form_matches_brute_force_on_fixed_problem():
    pb = np.array([0.5, 0.3, 0.2])
    adv = np.array([1.0, 0.0, -1.0])
    star = solve_nonparametric(ConstrainedProblem(pb, adv, lam=0.5))
    eps = kl_divergence(star, pb)
    brute = brute_force_constrained(ConstrainedProblem(pb, adv, epsilon=eps), 1e-3)
    assert total_variation(star, brute) <= 2e-3


def test_closed_form_survives_huge_advantages():
    out = solve_nonparametric(ConstrainedProblem([0.5, 0.5], [1e4, 0.0], lam=1e-3))
    assert np.all(np.isfinite(out))
    assert out[0] == 1.0


def test_solve_for_lambda_examples():
    target = kl_divergence([1 / 3, 2 / 3], [0.5, 0.5])
    sol = solve_for_lambda(ConstrainedProblem([0.5, 0.5], [0.0, 1.0], epsilon=target))
    assert abs(sol.lam - 1 / math.log(2)) < 1e-6
    tiny = solve_for_lambda(ConstrainedProblem([0.2, 0.3, 0.5], [1.0, -2.0, 0.5], epsilon=1e-10))
    assert kl_divergence(tiny.probs, [0.2, 0.3, 0.5]) <= 1e-8


def test_solve_for_lambda_edge_cases():
    pb = np.array([0.2, 0.8])
    const = solve_for_lambda(ConstrainedProblem(pb, [1.0, 1.0], epsilon=0.3))
    assert const.lam == math.inf and np.array_equal(const.probs, pb)
    # the greedy point mass has KL = -log(0.2) ~ 1.609; asking for more saturates
    sat = solve_for_lambda(ConstrainedProblem(pb, [1.0, 0.0], epsilon=5.0))
    assert sat.saturated and sat.lam == 0.0
    assert np.array_equal(sat.probs, [1.0, 0.0])


def test_brute_force_edge_cases():
    pb = np.array([0.3, 0.3, 0.4])
    assert np.array_equal(brute_force_constrained(ConstrainedProblem(pb, [2.0, 2.0, 2.0], epsilon=0.1)), pb)
    inf = brute_force_constrained(ConstrainedProblem(pb, [0.0, 1.0, 0.5], epsilon=math.inf))
    assert np.array_equal(inf, [0.0, 1.0, 0.0])
    with pytest.raises(ValueError):
        brute_force_constrained(ConstrainedProblem(np.full(5, 0.2), np.arange(5.0), epsilon=0.1))
    with pytest.raises(ValueError):
        brute_force_constrained(ConstrainedProblem(pb, [0, 1, 2], epsilon=0.1), resolution=0.05)


def test_kl_examples():
    assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    assert kl_divergence([0.7, 0.3], [0.5, 0.5]) == pytest.approx(0.08228, abs=1e-5)
    assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf


def test_forward_projection():
    res = project_forward_kl(np.array([0.5, 0.5]), logits0=np.zeros(2))
    assert np.allclose(forward_kl_grad(np.zeros(2), np.array([0.5, 0.5])), 0.0)
    assert res.steps == 0 and res.converged
    res = project_forward_kl(np.array([1 / 3, 2 / 3]))
    assert res.converged and np.max(np.abs(res.probs - [1 / 3, 2 / 3])) <= 1e-4
    rev = project_reverse_kl(np.array([0.1, 0.6, 0.3]))
    assert rev.converged and np.max(np.abs(rev.probs - [0.1, 0.6, 0.3])) <= 1e-4


def test_weighted_mle_matches_forward_projection_in_expectation():
    # MLE on pi_beta samples weighted by exp(A/lam) has the same stationary point as
    # the forward projection onto pi* (up to the normalizer)
    rng = np.random.default_rng(0)
    pb = np.array([0.5, 0.3, 0.2])
    adv = np.array([1.0, 0.0, -1.0])
    lam = 0.5
    star = solve_nonparametric(ConstrainedProblem(pb, adv, lam=lam))
    logits = rng.normal(size=3)
    z = float(np.sum(pb * np.exp(adv / lam)))
    exact = sum(pb[a] * math.exp(adv[a] / lam) * weighted_mle_grad(logits, [a], [1.0]) for a in range(3)) / z
    assert np.allclose(exact, forward_kl_grad(logits, star), atol=1e-12)
    actions = rng.choice(3, size=400_000, p=pb)
    mc = weighted_mle_grad(logits, actions, np.exp(adv[actions] / lam)) / z
    assert np.allclose(mc, exact, atol=5e-3)


def test_pinsker_examples():
    lhs, mid, rhs, ok = pinsker_chain_check([0.4, 0.6], [0.4, 0.6], 0.4)
    assert (lhs, mid, rhs) == (0.0, 0.0, 0.0) and ok
    lhs, mid, rhs, ok = pinsker_chain_check([0.9, 0.1], [0.5, 0.5], 0.5)
    assert mid == pytest.approx(0.64)
    assert lhs == pytest.approx(0.3681, abs=1e-4)
    assert ok
    with pytest.raises(ValueError):
        pinsker_chain_check([0.5, 0.5], [0.9, 0.1], 0.5)


def test_z_bounds_examples():
    z, up, lo = z_bounds([0.2, 0.3, 0.5], [0.7, 0.7, 0.7], 0.5)
    assert z == pytest.approx(math.exp(1.4), rel=1e-15)
    assert lo <= z <= up
    z, up, lo = z_bounds(np.full(4, 0.25), np.zeros(4), 1.0)
    assert z == pytest.approx(1.0) and up == pytest.approx(1.0) and lo == pytest.approx(1.0)


def test_lower_bound_is_tight_where_it_must_be():
    # equal extremes (r = 1) force the bracket to collapse; the bound must not exceed Z
    z, up, lo = z_bounds([0.5, 0.5], [0.0, 0.0], 2.0)
    assert lo == pytest.approx(z)


prob_vectors = st.integers(2, 4).flatmap(
    lambda n: st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n)
).map(lambda v: np.array(v) / np.sum(v))


@settings(max_examples=80, deadline=None)
@given(prob_vectors, st.floats(-3, 3), st.floats(0.05, 5.0), st.integers(0, 2**31))
def test_closed_form_is_shift_invariant(pb, shift, lam, seed):
    adv = np.random.default_rng(seed).normal(size=pb.size)
    a = solve_nonparametric(ConstrainedProblem(pb, adv, lam=lam))
    b = solve_nonparametric(ConstrainedProblem(pb, adv + shift, lam=lam))
    assert np.allclose(a, b, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(prob_vectors, st.integers(0, 2**31))
def test_kl_sharpens_monotonically_as_lambda_shrinks(pb, seed):
    adv = np.random.default_rng(seed).normal(size=pb.size)
    kls = [kl_divergence(solve_nonparametric(ConstrainedProblem(pb, adv, lam=l)), pb)
           for l in np.geomspace(1e-2, 1e2, 30)]
    assert all(x >= y - 1e-12 for x, y in zip(kls, kls[1:]))


@settings(max_examples=50, deadline=None)
@given(prob_vectors, st.integers(0, 2**31))
def test_lambda_limits(pb, seed):
    adv = np.random.default_rng(seed).normal(size=pb.size)
    wide = solve_nonparametric(ConstrainedProblem(pb, adv, lam=1e8))
    assert total_variation(wide, pb) < 1e-6
    sharp = solve_nonparametric(ConstrainedProblem(pb, adv, lam=1e-4))
    point = np.zeros(pb.size)
    point[np.argmax(adv)] = 1.0
    assert total_variation(sharp, point) < 1e-3


@settings(max_examples=60, deadline=None)
@given(prob_vectors, st.floats(1e-4, 1.0), st.integers(0, 2**31))
def test_kkt_solution_hits_the_budget(pb, eps, seed):
    adv = np.random.default_rng(seed).normal(size=pb.size)
    sol = solve_for_lambda(ConstrainedProblem(pb, adv, epsilon=eps))
    if not sol.saturated:
        assert abs(kl_divergence(sol.probs, pb) - eps) < 1e-6


@settings(max_examples=200, deadline=None)
@given(prob_vectors, prob_vectors)
def test_pinsker_chain_property(p, q):
    if p.size != q.size:
        return
    assert pinsker_chain_check(p, q, float(q.min()))[3]


@settings(max_examples=200, deadline=None)
@given(prob_vectors, st.floats(0.05, 10.0), st.integers(0, 2**31))
def test_z_bracket_property(pi, lam, seed):
    adv = np.random.default_rng(seed).normal(size=pi.size) * 3
    z, up, lo = z_bounds(pi, adv, lam)
    assert lo <= z * (1 + 1e-12) and z <= up * (1 + 1e-12)
