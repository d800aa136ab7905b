import math

import numpy as np
import pytest

from faircb.baselines import (Exp3PerContext, FairUcb, NoncontextualFtrl, exp3_context_select,
                              exp3_context_update, fair_ucb_select, fair_ucb_update)
from faircb.core import ConstraintSpec, ContextDistribution
from faircb.environments import BernoulliEnv
from faircb.harness.runner import simulate
from faircb.learner import FtrlLearner
from faircb.metrics import performance, summarize
from faircb.solver import SolverConfig


class TestExp3PerContext:
    def test_fresh_is_uniform(self):
        np.testing.assert_allclose(Exp3PerContext(2, 3, 0.1).probs(), 1 / 3)

    def test_softmax_after_increment(self):
        e = Exp3PerContext(1, 2, 1.0)
        e.g[0, 1] = 2.0
        e._probs = None
        # (1, e^-2) / (1 + e^-2)
        np.testing.assert_allclose(e.probs()[0], [0.8807970780, 0.1192029220], atol=1e-9)

    @pytest.mark.parametrize("m", [1, 3])
    def test_identical_to_unconstrained_learner(self, m):
        T, K, eta = 1500, 3, 0.08
        ctx_rng = np.random.default_rng(2)
        table = ctx_rng.integers(0, 2, size=(T, K)).astype(float)
        contexts = ctx_rng.integers(0, m, size=T)
        spec = ConstraintSpec(ContextDistribution.uniform(m), 0.0, K)
        runs = []
        for learner in (Exp3PerContext(m, K, eta), FtrlLearner(spec, SolverConfig(eta=eta))):
            rng = np.random.default_rng(5)
            arms = []
            for t in range(T):
                j = int(contexts[t])
                i = exp3_context_select(learner, j, rng)
                exp3_context_update(learner, j, i, table[t, i])
                arms.append(i)
            runs.append((arms, learner.g.copy()))
        assert runs[0][0] == runs[1][0]
        np.testing.assert_array_equal(runs[0][1], runs[1][1])


class TestNoncontextual:
    def test_fresh_is_uniform(self):
        n = NoncontextualFtrl(2, 2, 0.3, SolverConfig(eta=0.1))
        np.testing.assert_allclose(n.probs(), 0.5)
        assert n.probs().shape == (2, 2)

    def test_per_round_floor(self):
        env = BernoulliEnv([[0.1, 0.1], [0.9, 0.9]], [0.5, 0.5])
        n = NoncontextualFtrl(2, 2, 0.45, SolverConfig(eta=0.5))
        tr = simulate(env, n, 500, np.random.default_rng(0), np.random.default_rng(1))
        assert tr.policies.min() >= 0.45 - 1e-8

    def test_same_as_fair_cb_when_contexts_identical(self):
        mu, q, T, v, reps = [[0.3, 0.3], [0.7, 0.7]], [0.5, 0.5], 400, 0.2, 60
        perf = {"nc": [], "cb": []}
        for r in range(reps):
            env_seed, l_seed = 1000 + r, 2000 + r
            for key in perf:
                env = BernoulliEnv(mu, q)
                if key == "nc":
                    learner = NoncontextualFtrl(2, 2, v, SolverConfig(eta=0.1))
                else:
                    learner = FtrlLearner(ConstraintSpec(ContextDistribution(q), v, 2), SolverConfig(eta=0.1))
                tr = simulate(env, learner, T, np.random.default_rng(env_seed), np.random.default_rng(l_seed))
                perf[key].append(performance(tr))
        (m1, s1), (m2, s2) = summarize(perf["nc"]), summarize(perf["cb"])
        assert abs(m1 - m2) <= 2 * math.hypot(s1, s2)


class TestFairUcb:
    def test_initial_pull_order(self, rng):
        u = FairUcb(3, 0.0)
        arms = []
        for _ in range(3):
            i = fair_ucb_select(u, rng)
            fair_ucb_update(u, i, 1.0)
            arms.append(i)
        assert arms == [0, 1, 2]

    def test_pure_ucb_when_v_zero(self, rng):
        u = FairUcb(2, 0.0)
        u.counts[:] = [10, 10]
        u.means[:] = [0.9, 0.1]
        assert all(u.select(rng) == 0 and u.update(0, 0.0) for _ in range(5))

    def test_uniform_when_v_is_one_over_k(self, rng):
        u = FairUcb(2, 0.5)
        u.counts[:] = [50, 50]
        u.means[:] = [0.9, 0.1]
        n = 20_000
        hits = 0
        for _ in range(n):
            i = u.select(rng)
            u._pending = None
            hits += i == 1
        assert abs(hits / n - 0.5) <= 3 * math.sqrt(0.25 / n)
        np.testing.assert_allclose(u.probs(), 0.5)

    def test_index_arithmetic(self):
        u = FairUcb(2, 0.1)
        u.counts[:] = [50, 50]
        u.means[:] = [0.9, 0.1]
        bonus = math.sqrt(2 * math.log(100) / 50)
        assert bonus == pytest.approx(0.4292, abs=1e-4)
        assert u.leader() == 0
        np.testing.assert_allclose(u.probs()[0], [0.9, 0.1])

    def test_tie_goes_to_lowest_index(self):
        u = FairUcb(3, 0.0)
        u.counts[:] = [5, 5, 5]
        u.means[:] = [0.5, 0.7, 0.7]
        assert u.leader() == 1

    def test_running_mean(self, rng):
        u = FairUcb(2, 0.0)
        for loss in (0.0, 1.0, 1.0):
            u._pending = 0
            u.update(0, loss)
        assert u.means[0] == pytest.approx(1 / 3)

    def test_marginal_floor(self, rng):
        env = BernoulliEnv([[0.1], [0.9]], [1.0])
        u = FairUcb(2, 0.2)
        tr = simulate(env, u, 300, rng, np.random.default_rng(1))
        assert tr.policies.min() >= 0.2 - 1e-12

    def test_order_enforced(self, rng):
        u = FairUcb(2, 0.1)
        with pytest.raises(RuntimeError):
            u.update(0, 0.0)
        u.select(rng)
        with pytest.raises(RuntimeError):
            u.select(rng)

    def test_invalid_v(self):
        with pytest.raises(ValueError):
            FairUcb(2, 0.6)
