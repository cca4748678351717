import math

import numpy as np
import pytest

from dpcalib.distributions import Degenerate, Gamma, LinearCombo, Uniform, singleton
from dpcalib.optimize import (
    BudgetExhaustedError,
    CalibratedMechanism,
    InfeasibleSpecError,
    SearchSpaceSpec,
    calibrate_scale,
    evaluate_candidate,
    laplace_seed,
    optimize,
)
from dpcalib.privacy import PrivacySpec, epsilon_of_combo, passes_necessary_condition
from dpcalib.utility import UtilityGoal, usefulness_bound

FAST = SearchSpaceSpec(restarts=8, max_evals=150)


def test_laplace_seed_examples():
    assert laplace_seed(PrivacySpec(1.0, 1.0)).terms[0][1] == Degenerate(1.0)
    assert laplace_seed(PrivacySpec(2.0, 0.5)).terms[0][1] == Degenerate(4.0)
    for eps, dq in [(0.3, 1.7), (5.0, 0.2)]:
        seed = laplace_seed(PrivacySpec(eps, dq))
        assert epsilon_of_combo(seed, dq) == pytest.approx(eps, rel=1e-15)


def test_search_space_validation():
    with pytest.raises(ValueError):
        SearchSpaceSpec(families=())
    with pytest.raises(ValueError):
        SearchSpaceSpec(families=("unknown",))
    with pytest.raises(ValueError):
        SearchSpaceSpec(restarts=0)
    assert "rayleigh" in SearchSpaceSpec.extended().families


def test_calibrate_scale_hits_target_exactly():
    privacy = PrivacySpec(2.0, 1.0)
    for combo in [
        singleton(Gamma(3.0, 1.0)),
        LinearCombo(((0.5, Gamma(2.0, 1.0)), (0.5, Uniform(0.1, 3.0)))),
    ]:
        scaled = calibrate_scale(combo, privacy)
        assert epsilon_of_combo(scaled, 1.0) == pytest.approx(2.0, abs=1e-10)


def test_evaluate_candidate_seed_and_inversion():
    privacy = PrivacySpec(1.2, 1.0)
    goal = UtilityGoal("usefulness", gamma=0.5)
    utility, eps, feasible = evaluate_candidate(laplace_seed(privacy), privacy, goal)
    assert feasible and eps == pytest.approx(1.2, rel=1e-15)
    assert utility == pytest.approx(1.0 - math.exp(-0.6), rel=1e-12)
    # closed-form inversion of the gamma epsilon: (shape+1) ln(1+dq theta) = eps
    theta = math.expm1(1.2 / 2.0) - 0.0
    cand = singleton(Gamma(1.0, theta))
    utility, eps, feasible = evaluate_candidate(cand, privacy, goal)
    assert abs(eps - 1.2) < 1e-12
    assert feasible  # shape 1 passes the filter inside this epsilon window


def test_evaluate_candidate_filter_semantics():
    privacy = PrivacySpec(2.0, 1.0)
    goal = UtilityGoal("usefulness", gamma=0.5)
    # exactly on budget but fails the improvement filter: 2 ln(1+theta) = 2
    theta = math.expm1(1.0)
    cand = singleton(Gamma(1.0, theta))
    utility, eps, feasible = evaluate_candidate(cand, privacy, goal)
    assert abs(eps - 2.0) < 1e-12
    assert not passes_necessary_condition(cand, 1.0)
    assert not feasible
    # far from the budget is infeasible regardless
    _, _, feasible = evaluate_candidate(singleton(Gamma(4.0, 10.0)), privacy, goal)
    assert not feasible


def test_degenerate_only_family_recovers_laplace_exactly():
    spec = SearchSpaceSpec(families=("degenerate",), restarts=4, max_evals=80)
    privacy = PrivacySpec(2.0, 1.0)
    result = optimize(spec, privacy, UtilityGoal("usefulness", gamma=0.5), seed=3)
    assert result.predicted_utility == pytest.approx(1.0 - math.exp(-1.0), abs=1e-12)
    assert result.achieved_epsilon == pytest.approx(2.0, abs=1e-12)
    assert result.combo.terms[0][1].family == "degenerate"


@pytest.mark.parametrize("eps,dq,gamma", [(0.5, 1.0, 0.4), (2.0, 0.5, 0.1), (8.0, 1.0, 0.1)])
def test_optimizer_dominates_laplace(eps, dq, gamma):
    privacy = PrivacySpec(eps, dq)
    result = optimize(FAST, privacy, UtilityGoal("usefulness", gamma=gamma), seed=11)
    assert result.predicted_utility >= result.baseline_laplace_utility - 1e-9
    assert abs(result.achieved_epsilon - eps) <= FAST.constraint_tol


def test_optimizer_improves_at_large_epsilon():
    privacy = PrivacySpec(8.0, 1.0)
    result = optimize(FAST, privacy, UtilityGoal("usefulness", gamma=0.1), seed=11)
    assert result.predicted_utility > result.baseline_laplace_utility + 0.2


def test_optimizer_deterministic():
    privacy = PrivacySpec(3.0, 1.0)
    goal = UtilityGoal("usefulness", gamma=0.4)
    a = optimize(FAST, privacy, goal, seed=21)
    b = optimize(FAST, privacy, goal, seed=21)
    assert a.combo == b.combo
    assert a.predicted_utility == b.predicted_utility
    assert a.diagnostics == b.diagnostics


def test_constraint_honesty():
    privacy = PrivacySpec(5.0, 1.0)
    result = optimize(FAST, privacy, UtilityGoal("usefulness", gamma=0.2), seed=2)
    fresh = epsilon_of_combo(result.combo, 1.0)
    assert fresh == pytest.approx(result.achieved_epsilon, abs=1e-12)
    assert result.diagnostics.constraint_residual == pytest.approx(
        abs(fresh - 5.0), abs=1e-12
    )


def test_monotone_budget():
    # above the fixed early-round budgets the evaluation sequence of a larger
    # run is a strict prefix-extension of a smaller one, so the best-so-far
    # pool can only grow
    privacy = PrivacySpec(6.0, 1.0)
    goal = UtilityGoal("usefulness", gamma=0.3)
    small = optimize(SearchSpaceSpec(restarts=8, max_evals=200), privacy, goal, seed=5)
    large = optimize(SearchSpaceSpec(restarts=8, max_evals=420), privacy, goal, seed=5)
    assert large.predicted_utility >= small.predicted_utility


def test_filter_soundness_rejected_candidates_cannot_beat_laplace():
    # any combination rejected by the improvement filter, force-evaluated at
    # the exact budget, must sit at or below the Laplace usefulness
    privacy = PrivacySpec(1.5, 1.0)
    gamma = 0.6
    laplace_val = 1.0 - math.exp(-gamma * 1.5)
    rng = np.random.default_rng(42)
    rejected = 0
    tries = 0
    while rejected < 100 and tries < 3000:
        tries += 1
        shape = float(rng.uniform(0.1, 3.0))
        scale = float(rng.uniform(0.05, 5.0))
        try:
            combo = calibrate_scale(singleton(Gamma(shape, scale)), privacy)
        except InfeasibleSpecError:
            continue
        if passes_necessary_condition(combo, 1.0):
            continue
        rejected += 1
        assert usefulness_bound(combo, gamma) <= laplace_val + 1e-6
    assert rejected == 100


def test_l2_goal_small_epsilon_returns_laplace():
    privacy = PrivacySpec(0.5, 1.0)
    result = optimize(FAST, privacy, UtilityGoal("l2"), seed=9)
    laplace_l2 = math.sqrt(2.0) / 0.5
    assert result.predicted_utility <= laplace_l2 + 1e-9
    assert result.predicted_utility >= 0.95 * laplace_l2


def test_l2_goal_large_epsilon_beats_laplace():
    privacy = PrivacySpec(8.0, 1.0)
    result = optimize(FAST, privacy, UtilityGoal("l2"), seed=9)
    assert result.predicted_utility < result.baseline_laplace_utility
    assert result.staircase_utility is not None


def test_prior_dependent_goal_runs():
    privacy = PrivacySpec(2.0, 1.0)
    goal = UtilityGoal("mallows", p=1.0, prior=np.linspace(0, 5, 8))
    spec = SearchSpaceSpec(restarts=3, max_evals=40, mc_trials=400)
    result = optimize(spec, privacy, goal, seed=1)
    assert result.predicted_utility <= result.baseline_laplace_utility + 1e-9
    assert result.staircase_utility is None


def test_calibrated_mechanism_round_trip():
    privacy = PrivacySpec(2.0, 1.0)
    result = optimize(FAST, privacy, UtilityGoal("usefulness", gamma=0.9), seed=4)
    text = result.to_text()
    back = CalibratedMechanism.from_text(text)
    assert back.combo == result.combo
    assert back.predicted_utility == result.predicted_utility
    assert back.diagnostics == result.diagnostics


def test_extended_families_search():
    spec = SearchSpaceSpec.extended(restarts=12, max_evals=120)
    privacy = PrivacySpec(4.0, 1.0)
    result = optimize(spec, privacy, UtilityGoal("usefulness", gamma=0.2), seed=7)
    assert result.predicted_utility >= result.baseline_laplace_utility - 1e-9
    assert abs(result.achieved_epsilon - 4.0) <= 1e-3


def test_error_classes_exist():
    assert issubclass(InfeasibleSpecError, RuntimeError)
    err = BudgetExhaustedError("cap", best=None)
    assert err.best is None
