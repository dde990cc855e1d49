"""Learning-criterion detection and backward learning curve construction."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrshift.learning import LearningCurve, backward_learning_curve, learning_criterion
from hrshift.util import DataError


def brute_force_criterion(targets, feedback, run_length=12, min_targets=3, min_prior=9):
    """Literal restatement of the three clauses, O(n * run_length)."""
    n = len(feedback)
    for t0 in range(n - run_length + 1):
        window_fb = feedback[t0 : t0 + run_length]
        window_tg = [targets[j] and feedback[j] for j in range(t0, t0 + run_length)]
        if all(window_fb) and sum(window_tg) >= min_targets and sum(feedback[:t0]) >= min_prior:
            return t0 + 1
    return None


class TestLearningCriterion:
    def test_all_positive_sequence_hits_at_trial_ten(self):
        # nine positives must precede the run, so the tenth trial is first.
        n = 40
        assert learning_criterion([True] * n, [True] * n) == 10

    def test_run_must_fit_before_the_end(self):
        # 21 trials: window 10..21 just fits; 20 trials: it no longer does.
        assert learning_criterion([True] * 21, [True] * 21) == 10
        assert learning_criterion([True] * 20, [True] * 20) is None

    def test_no_twelve_run_returns_none(self):
        # a negative every 8th trial caps runs at 7 < 12
        feedback = [(t + 1) % 8 != 0 for t in range(80)]
        assert learning_criterion([True] * 80, feedback) is None

    def test_target_clause_delays_fulfillment(self):
        # positives from trial 10 on; the only correct targets are trials
        # 30..32, so the window must cover them: earliest start is trial 21.
        n = 60
        feedback = [t >= 9 for t in range(n)]
        targets = [t in (29, 30, 31) for t in range(n)]
        assert learning_criterion(targets, feedback) == 21

    def test_prior_positive_clause_delays_fulfillment(self):
        # negatives on trials 1..5, positives after: nine priors first
        # accumulate before trial 15.
        n = 40
        feedback = [t >= 5 for t in range(n)]
        assert learning_criterion([True] * n, feedback) == 15

    def test_prior_positives_need_not_be_consecutive(self):
        # scattered early positives count toward the nine
        n = 50
        feedback = [False] * n
        for t in (0, 2, 4, 6, 8, 10, 12, 14, 16):  # nine scattered positives
            feedback[t] = True
        for t in range(20, n):
            feedback[t] = True
        assert learning_criterion([True] * n, feedback) == 21

    def test_length_mismatch_is_an_error(self):
        with pytest.raises(DataError, match="lengths differ"):
            learning_criterion([True] * 5, [True] * 6)

    def test_non_indicator_values_are_an_error(self):
        with pytest.raises(DataError, match="boolean or 0/1"):
            learning_criterion([2, 0, 1], [1, 1, 1])
        with pytest.raises(DataError, match="1-D"):
            learning_criterion(np.ones((2, 3)), np.ones((2, 3)))

    @given(
        data=st.lists(
            st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=80
        ),
        run_length=st.integers(2, 6),
        min_targets=st.integers(0, 3),
        min_prior=st.integers(0, 4),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_brute_force(self, data, run_length, min_targets, min_prior):
        targets = [d[0] for d in data]
        feedback = [d[1] for d in data]
        got = learning_criterion(
            targets, feedback,
            run_length=run_length, min_targets=min_targets, min_prior=min_prior,
        )
        want = brute_force_criterion(
            targets, feedback,
            run_length=run_length, min_targets=min_targets, min_prior=min_prior,
        )
        assert got == want


def step_change_cohort():
    """Deterministic cohort: alternating 50% performance, then all-positive.

    Subject i alternates positive/negative for 20 + 2*i trials (so exactly
    half are positive) and then answers 40 trials perfectly.
    """
    subjects = []
    for i in range(10):
        pre = 20 + 2 * i
        feedback = [t % 2 == 0 for t in range(pre)] + [True] * 40
        subjects.append(([True] * len(feedback), feedback))
    return subjects


class TestBackwardLearningCurve:
    def test_step_change_cohort_matches_hand_rollup(self):
        subjects = step_change_cohort()
        curve = backward_learning_curve(subjects, block_size=5)

        # independent roll-up with plain loops
        expected = {}
        for targets, feedback in subjects:
            trial = brute_force_criterion(targets, feedback)
            assert trial is not None
            zero = (trial - 1) // 5
            for b in range(0, -(-len(feedback) // 5)):
                chunk = feedback[5 * b : 5 * b + 5]
                expected.setdefault(b - zero, []).append(sum(chunk) / len(chunk))
        assert list(curve.blocks) == sorted(expected)
        for b, prop, cnt in zip(curve.blocks, curve.proportions, curve.n_subjects):
            assert cnt == len(expected[int(b)])
            assert prop == pytest.approx(np.mean(expected[int(b)]), abs=1e-12)

    def test_step_change_cohort_jumps_at_block_zero(self):
        curve = backward_learning_curve(step_change_cohort(), block_size=5)
        props = dict(zip(curve.blocks.tolist(), curve.proportions))
        assert props[-2] <= 0.65 and props[-1] <= 0.65
        assert props[1] == 1.0 and props[2] == 1.0
        assert props[1] - props[-1] >= 0.3

    def test_all_subjects_contribute_to_block_zero(self):
        curve = backward_learning_curve(step_change_cohort(), block_size=5)
        counts = dict(zip(curve.blocks.tolist(), curve.n_subjects))
        assert counts[0] == 10

    def test_non_learners_are_dropped(self):
        learner = ([True] * 30, [True] * 30)
        non_learner = ([True] * 30, [False] * 30)
        curve = backward_learning_curve([learner, non_learner])
        assert curve.criterion_trials == (10,)
        assert max(curve.n_subjects) == 1

    def test_all_non_learners_is_an_error(self):
        with pytest.raises(DataError, match="no subject meets"):
            backward_learning_curve([([True] * 20, [False] * 20)])

    def test_block_size_validation(self):
        with pytest.raises(DataError, match="block_size"):
            backward_learning_curve([([True] * 30, [True] * 30)], block_size=0)

    def test_criterion_in_first_block(self):
        # criterion at trial 10 with block 5 puts block zero at trials 6..10,
        # leaving exactly one block (trials 1..5) at relative index -1
        curve = backward_learning_curve([([True] * 30, [True] * 30)], block_size=5)
        assert curve.blocks[0] == -1
        assert curve.proportions[0] == 1.0

    def test_json_roundtrip_fields(self):
        curve = backward_learning_curve(step_change_cohort())
        d = curve.to_json_dict()
        assert set(d) == {"blocks", "proportions", "n_subjects", "criterion_trials"}
        assert isinstance(curve, LearningCurve)
        assert all(isinstance(b, int) for b in d["blocks"])
