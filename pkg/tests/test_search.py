from __future__ import annotations

import math
import sys

import numpy as np
import pytest
from scipy.integrate import quad

from spearmm.errors import EvaluatorError, ValidationError
from spearmm.metrics import MetricConfig
from spearmm.reports import score_pairs
from spearmm.archmap import ArchProfile
from spearmm.search import (
    GpSurrogate,
    SearchDim,
    SearchSpace,
    SearchTrial,
    expected_improvement,
    make_command_evaluator,
    make_proxy_evaluator,
    propose_next,
    run_search,
)
from spearmm.synth import SynthSpec, generate_pair


def ei_quadrature_oracle(mean: float, stdev: float, best: float) -> float:
    """Numeric integration of E[max(Y - best, 0)] for Y ~ N(mean, stdev^2)."""
    def integrand(y):
        density = math.exp(-0.5 * ((y - mean) / stdev) ** 2) / (stdev * math.sqrt(2 * math.pi))
        return max(y - best, 0.0) * density

    value, _ = quad(integrand, best, mean + 12 * stdev)
    return value


def space2d(budget: int = 20, init_points: int = 8, seed: int = 0) -> SearchSpace:
    return SearchSpace(
        dims=(SearchDim("frac_mlp"), SearchDim("frac_attn")),
        budget=budget,
        init_points=init_points,
        seed=seed,
    )


@pytest.fixture(scope="module")
def tiny_pair():
    spec = SynthSpec(layers=2, hidden=16, seed=2, lowrank_rank=2, lowrank_scale=2.0, noise_scale=0.05)
    return generate_pair(spec)


@pytest.fixture(scope="module")
def tiny_scored(tiny_pair):
    base, adapted = tiny_pair
    scored, _, _ = score_pairs(base, adapted, MetricConfig(), ArchProfile.llama())
    return scored


def quadratic_evaluator(path: str, config: dict) -> tuple[float, float]:
    value = 1.0 - ((config["frac_mlp"] - 0.3) ** 2 + (config["frac_attn"] - 0.7) ** 2) / 2.0
    return value, value


class TestExpectedImprovement:
    def test_zero_stdev_no_improvement(self):
        assert expected_improvement(1.0, 0.0, 2.0) == 0.0

    def test_zero_stdev_positive_improvement(self):
        assert expected_improvement(3.0, 0.0, 2.0) == 1.0

    def test_at_the_incumbent_equals_phi_zero(self):
        # EI(mean=best, stdev=1) = standard normal density at 0 = 1/sqrt(2*pi)
        assert expected_improvement(0.0, 1.0, 0.0) == pytest.approx(0.3989422804, abs=1e-9)

    @pytest.mark.parametrize(
        "mean,stdev,best", [(0.0, 1.0, 0.0), (1.0, 0.5, 1.2), (-0.3, 2.0, 0.4), (2.0, 0.1, 1.0)]
    )
    def test_matches_quadrature_oracle(self, mean, stdev, best):
        assert expected_improvement(mean, stdev, best) == pytest.approx(
            ei_quadrature_oracle(mean, stdev, best), abs=1e-9
        )

    def test_non_negative(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            mean, stdev, best = rng.normal(), abs(rng.normal()), rng.normal()
            assert expected_improvement(mean, stdev, best) >= 0.0

    def test_strictly_increasing_in_mean(self):
        means = np.linspace(-2, 2, 41)
        values = expected_improvement(means, np.full_like(means, 0.7), 0.3)
        assert np.all(np.diff(values) > 0)

    def test_negative_stdev_rejected(self):
        with pytest.raises(ValidationError):
            expected_improvement(0.0, -1.0, 0.0)


class TestGpSurrogate:
    def test_interpolates_observations(self):
        rng = np.random.default_rng(1)
        x = rng.random((12, 2))
        y = np.sin(3 * x[:, 0]) + x[:, 1] ** 2
        gp = GpSurrogate().fit(x, y)
        mean, stdev = gp.predict(x)
        np.testing.assert_allclose(mean, y, atol=1e-3)
        assert np.all(stdev >= 0.0)

    def test_posterior_variance_non_negative_everywhere(self):
        rng = np.random.default_rng(2)
        x = rng.random((20, 3))
        y = rng.random(20)
        gp = GpSurrogate().fit(x, y)
        _, stdev = gp.predict(rng.random((500, 3)))
        assert np.all(stdev >= 0.0)

    def test_prior_mean_far_from_data(self):
        x = np.array([[0.0, 0.0], [0.05, 0.05]])
        y = np.array([1.0, 3.0])
        gp = GpSurrogate().fit(x, y)
        mean, _ = gp.predict(np.array([[50.0, 50.0]]))
        assert mean[0] == pytest.approx(2.0, abs=1e-9)  # running mean of observations


class TestProposeNext:
    def test_empty_history_is_deterministic(self):
        space = space2d(seed=9)
        a = propose_next([], space)
        b = propose_next([], space)
        assert a == b
        assert set(a) == {"frac_mlp", "frac_attn"}
        assert all(0.0 <= v <= 1.0 for v in a.values())

    def test_init_phase_covers_strata(self):
        space = space2d(init_points=8, seed=4)
        history: list[SearchTrial] = []
        points = []
        for i in range(8):
            config = propose_next(history, space)
            points.append(config["frac_mlp"])
            history.append(SearchTrial(index=i, config=config, objective=0.1 * i))
        # Latin hypercube: one point per 1/8 stratum
        strata = sorted(int(p * 8) for p in points)
        assert strata == list(range(8))

    def test_degenerate_history_falls_back(self):
        space = space2d(init_points=2, seed=5)
        history = [
            SearchTrial(index=i, config={"frac_mlp": 0.5, "frac_attn": 0.5}, objective=1.0)
            for i in range(4)
        ]
        a = propose_next(history, space)
        b = propose_next(history, space)
        assert a == b
        assert all(0.0 <= v <= 1.0 for v in a.values())

    def test_proposals_concentrate_near_observed_optimum(self):
        # seeded history sampling a smooth bowl: proposals should land in the
        # optimum region far more often than its 16% area share
        def objective(c):
            return -((c["frac_mlp"] - 0.3) ** 2) - (c["frac_attn"] - 0.7) ** 2

        hits = 0
        for seed in range(20):
            space = space2d(init_points=12, seed=100 + seed)
            history = []
            for i in range(12):
                config = propose_next(history, space)
                history.append(SearchTrial(index=i, config=config, objective=objective(config)))
            proposal = propose_next(history, space)
            if abs(proposal["frac_mlp"] - 0.3) <= 0.2 and abs(proposal["frac_attn"] - 0.7) <= 0.2:
                hits += 1
        assert hits >= 12  # >= 60% of 20

    def test_respects_dimension_bounds(self):
        space = SearchSpace(dims=(SearchDim("t", 0.2, 0.8),), budget=5, init_points=3, seed=6)
        history = []
        for i in range(5):
            config = propose_next(history, space)
            assert 0.2 <= config["t"] <= 0.8
            history.append(SearchTrial(index=i, config=config, objective=float(i % 2)))


class TestRunSearch:
    def test_budget_one_returns_single_trial(self, tiny_pair, tiny_scored):
        base, adapted = tiny_pair
        best, history = run_search(
            base, adapted, tiny_scored, space2d(budget=1, init_points=1), quadratic_evaluator
        )
        assert len(history) == 1
        assert best is history[0]

    def test_budget_exactness(self, tiny_pair, tiny_scored):
        base, adapted = tiny_pair
        _, history = run_search(
            base, adapted, tiny_scored, space2d(budget=9, init_points=4), quadratic_evaluator
        )
        assert len(history) == 9
        assert [t.index for t in history] == list(range(9))

    def test_identical_seeds_identical_histories(self, tiny_pair, tiny_scored):
        base, adapted = tiny_pair
        runs = []
        for _ in range(2):
            _, history = run_search(
                base, adapted, tiny_scored, space2d(budget=12, init_points=4, seed=77), quadratic_evaluator
            )
            runs.append([(t.config, t.objective, t.plan_digest) for t in history])
        assert runs[0] == runs[1]

    def test_objective_scalarization(self, tiny_pair, tiny_scored):
        base, adapted = tiny_pair

        def lopsided(path, config):
            return 0.2, 0.8  # domain, general

        best, history = run_search(
            base, adapted, tiny_scored, space2d(budget=2, init_points=2), lopsided, lam=0.25
        )
        for t in history:
            assert t.objective == pytest.approx(0.25 * 0.8 + 0.75 * 0.2)
        assert best is history[0]  # ties resolve to the earliest trial

    def test_failures_are_recorded_and_search_continues(self, tiny_pair, tiny_scored):
        base, adapted = tiny_pair
        calls = {"n": 0}

        def flaky(path, config):
            calls["n"] += 1
            if calls["n"] % 2 == 1:
                from spearmm.search import EvaluatorFailure

                raise EvaluatorFailure("boom")
            return 0.5, 0.5

        _, history = run_search(base, adapted, tiny_scored, space2d(budget=6, init_points=3), flaky)
        assert len(history) == 6
        assert sum(t.failed for t in history) == 3
        assert all(t.objective == float("-inf") for t in history if t.failed)

    def test_all_failures_is_error(self, tiny_pair, tiny_scored):
        base, adapted = tiny_pair

        def always_fail(path, config):
            from spearmm.search import EvaluatorFailure

            raise EvaluatorFailure("nope")

        with pytest.raises(EvaluatorError, match="all 3 trials failed"):
            run_search(base, adapted, tiny_scored, space2d(budget=3, init_points=2), always_fail)

    def test_bad_lambda(self, tiny_pair, tiny_scored):
        base, adapted = tiny_pair
        with pytest.raises(ValidationError):
            run_search(base, adapted, tiny_scored, space2d(budget=1), quadratic_evaluator, lam=1.5)


class TestCommandEvaluator:
    def write_script(self, tmp_path, body: str) -> str:
        script = tmp_path / "eval.py"
        script.write_text(body)
        return f"{sys.executable} {script}"

    def test_round_trip_through_subprocess(self, tmp_path, tiny_pair, tiny_scored):
        base, adapted = tiny_pair
        cmd = self.write_script(
            tmp_path,
            "import json, sys\n"
            "assert '--model' in sys.argv\n"
            "path = sys.argv[sys.argv.index('--model') + 1]\n"
            "open(path, 'rb').read(8)\n"
            "print(json.dumps({'domain_score': 0.25, 'general_score': 0.75}))\n",
        )
        best, history = run_search(base, adapted, tiny_scored, space2d(budget=2, init_points=2), cmd)
        assert all(not t.failed for t in history)
        assert best.domain_score == 0.25 and best.general_score == 0.75

    def test_nonzero_exit_marks_failure(self, tmp_path):
        cmd = self.write_script(tmp_path, "import sys; sys.exit(3)\n")
        evaluator = make_command_evaluator(cmd, timeout=30)
        from spearmm.search import EvaluatorFailure

        with pytest.raises(EvaluatorFailure, match="exited 3"):
            evaluator("/nonexistent/model", {})

    def test_malformed_json_marks_failure(self, tmp_path):
        cmd = self.write_script(tmp_path, "print('gibberish')\n")
        evaluator = make_command_evaluator(cmd, timeout=30)
        from spearmm.search import EvaluatorFailure

        with pytest.raises(EvaluatorFailure, match="invalid JSON"):
            evaluator("/nonexistent/model", {})

    def test_out_of_range_scores_fail(self, tmp_path):
        cmd = self.write_script(
            tmp_path, "import json; print(json.dumps({'domain_score': 1.5, 'general_score': 0.5}))\n"
        )
        evaluator = make_command_evaluator(cmd, timeout=30)
        from spearmm.search import EvaluatorFailure

        with pytest.raises(EvaluatorFailure, match="out of"):
            evaluator("/nonexistent/model", {})


class TestProxyEvaluator:
    def test_endpoints(self, tiny_pair, tmp_path):
        from spearmm.checkpoint_io import save_checkpoint

        base, adapted = tiny_pair
        evaluator = make_proxy_evaluator(base, adapted)

        adapted_path = tmp_path / "as_adapted.safetensors"
        save_checkpoint(adapted, adapted_path)
        domain, general = evaluator(str(adapted_path), {})
        assert (domain, general) == (1.0, 0.0)

        base_like = tmp_path / "as_base.safetensors"
        save_checkpoint(base, base_like)
        domain, general = evaluator(str(base_like), {})
        assert domain == pytest.approx(0.0, abs=1e-12)
        assert general == 1.0

    def test_degenerate_identical_pair(self, tmp_path):
        from spearmm.checkpoint_io import save_checkpoint
        from spearmm.synth import SynthSpec, generate_pair

        base, adapted = generate_pair(SynthSpec(layers=1, hidden=8, seed=0))
        assert base == adapted
        evaluator = make_proxy_evaluator(base, adapted)
        path = tmp_path / "same.safetensors"
        save_checkpoint(base, path)
        assert evaluator(str(path), {}) == (1.0, 1.0)


class TestSpaceValidation:
    def test_unknown_dim(self):
        with pytest.raises(ValidationError):
            SearchDim("momentum")

    def test_bad_bounds(self):
        with pytest.raises(ValidationError):
            SearchDim("t", 0.8, 0.2)

    def test_duplicate_dims(self):
        with pytest.raises(ValidationError):
            SearchSpace(dims=(SearchDim("t"), SearchDim("t")))

    def test_empty_dims(self):
        with pytest.raises(ValidationError):
            SearchSpace(dims=())
