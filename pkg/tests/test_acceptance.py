"""End-to-end acceptance criteria, one test per criterion.

Every test prints a ``CRITERION n: PASS|FAIL ...`` line; the lines are also
collected and repeated in the pytest terminal summary.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from _oracles import softmax_rows
from conftest import ACCEPTANCE_LINES, random_instance
from faircb.core import ConstraintSpec, ContextDistribution
from faircb.epoch_learner import vio_bound
from faircb.harness import EnvironmentConfig, load_config, parse_config, run_experiment
from faircb.harness.runner import run_all, run_single
from faircb.learner import FtrlLearner
from faircb.metrics import linear_fit
from faircb.solver import SolverConfig, brute_force_step, lp_vertex_enumeration, solve_ftrl_step

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
GRID = (0.0, 0.09, 0.18, 0.27, 0.36, 0.45)


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def mean_by_v(cfg, results, field="performance"):
    return [float(np.mean([getattr(r.summary, field) for r in results if r.v_index == vi]))
            for vi in range(len(cfg.v_grid))]


class Runs:
    """Simulation results shared between criteria, computed on first use."""

    def __init__(self, out_root):
        self.out_root = out_root
        self.cache = {}

    def get(self, key, cfg):
        if key not in self.cache:
            start = time.perf_counter()
            _, results = run_experiment(cfg, self.out_root / key)
            self.cache[key] = (cfg, results, time.perf_counter() - start)
        return self.cache[key]

    def shared_best_arm(self):
        return self.get("shared_best_arm", load_config(CONFIGS / "shared_best_arm.toml"))

    def specialized_arms(self):
        return self.get("specialized_arms", load_config(CONFIGS / "specialized_arms.toml"))

    def uneven(self, which):
        cfg = load_config(CONFIGS / "uneven_q.toml")
        if which == "B":
            env = EnvironmentConfig("bernoulli", mu=((0.6, 1.0), (0.8, 0.6)), q=(0.9, 0.1))
            cfg = cfg.with_overrides(name="uneven_q_b", environment=env)
        return self.get(f"uneven_{which}", cfg)

    def adversarial(self, algorithm):
        return self.get(f"adv_{algorithm}", load_config(CONFIGS / f"adversarial_{algorithm}.toml"))


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return Runs(tmp_path_factory.mktemp("acceptance"))


def test_criterion_1_solver_certification():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst_gap = worst_viol = worst_diff = 0.0
    active = 0
    for _ in range(200):
        g, c, eta = random_instance(rng)
        cfg = SolverConfig(eta=eta)
        P, dual = solve_ftrl_step(g, c, cfg)
        B = brute_force_step(g, c, cfg, 1e-3)
        worst_gap = max(worst_gap, dual.gap)
        worst_viol = max(worst_viol, c.v_eff - P.marginals(c.q).min())
        worst_diff = max(worst_diff, float(np.abs(P.probs - B.probs).max()))
        active += bool(dual.lam.max() > 0)
    elapsed = time.perf_counter() - start
    ok = worst_gap <= 1e-8 and worst_viol <= 1e-8 and worst_diff <= 2e-3 and elapsed < 60
    assert report(1, ok, f"max gap {worst_gap:.2e}, max violation {worst_viol:.2e}, "
                         f"max |P - oracle| {worst_diff:.2e} ({active}/200 active), {elapsed:.1f}s")


def test_criterion_2_exp3_reduction():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        M, K = int(rng.integers(1, 5)), int(rng.integers(2, 6))
        eta = float(np.exp(rng.uniform(np.log(0.01), np.log(10.0))))
        g = rng.uniform(0.0, 20.0 / eta, size=(M, K))
        c = ConstraintSpec(ContextDistribution(rng.dirichlet(np.ones(M))), 0.0, K)
        P, _ = solve_ftrl_step(g, c, SolverConfig(eta=eta))
        worst = max(worst, float(np.abs(P.probs - softmax_rows(g, eta)).max()))
    assert report(2, worst <= 1e-9, f"max |P - softmax| {worst:.2e} over 1000 instances")


def test_criterion_3_fairness_invariant(runs):
    sets = [runs.shared_best_arm(), runs.specialized_arms(), runs.uneven("A"), runs.uneven("B"),
            runs.adversarial("fair_cb")]
    slack = min(r.min_slack for _, results, _ in sets for r in results)
    vio = max(r.summary.vio for _, results, _ in sets for r in results)
    n = sum(len(results) for _, results, _ in sets)
    ok = slack >= -1e-6 and vio == 0.0
    assert report(3, ok, f"{n} runs, min (marginal - v) {slack:.2e}, max violation_avg {vio:g}")


def test_criterion_4_regret_bound():
    start = time.perf_counter()
    mu3 = [[0.3, 0.7, 0.5], [0.5, 0.4, 0.8], [0.7, 0.6, 0.3], [0.9, 0.5, 0.6]]
    settings = {
        (2, 2, 2000): {
            "bernoulli": dict(kind="bernoulli", mu=[[0.6, 0.6], [0.8, 0.8]], q=[0.5, 0.5]),
            "switching": dict(kind="switching_adversary", dist_a=[0.1, 0.9], dist_b=[0.9, 0.1], q=[0.5, 0.5]),
        },
        (3, 4, 5000): {
            "bernoulli": dict(kind="bernoulli", mu=mu3, q=[0.5, 0.3, 0.2]),
            "switching": dict(kind="switching_adversary", dist_a=[0.1, 0.9, 0.5, 0.7],
                              dist_b=[0.7, 0.5, 0.9, 0.1], q=[0.5, 0.3, 0.2]),
        },
    }
    details, ok = [], True
    for (M, K, T), envs in settings.items():
        bound = 2.0 * math.sqrt(T * M * K * math.log(K))
        for label, env in envs.items():
            cfg = parse_config(dict(name="regret", algorithm="fair_cb", horizon=T, v_grid=[0.0, 0.5 / K],
                                    replications=50, seed=20240601, environment=env))
            results = run_all(cfg)
            assert all(r.error is None for r in results)
            worst = max(mean_by_v(cfg, results, "regret"))
            ok &= worst <= bound
            details.append(f"({M},{K},{T}) {label} {worst:.1f}/{bound:.1f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 300
    assert report(4, ok, "mean regret / 2 sqrt(TMK lnK): " + "; ".join(details) + f"; {elapsed:.0f}s")


def test_criterion_5_shared_best_arm(runs):
    cfg, results, elapsed = runs.shared_best_arm()
    intercept, slope = linear_fit(zip(cfg.v_grid, mean_by_v(cfg, results)))
    ok = abs(intercept - 0.37) <= 0.03 and abs(slope + 0.11) <= 0.06 and elapsed < 300
    assert report(5, ok, f"performance = {intercept:.4f} {slope:+.4f} v ({elapsed:.0f}s)")


def test_criterion_6_specialized_arms(runs):
    cfg, results, _ = runs.specialized_arms()
    perf = mean_by_v(cfg, results)
    spread = max(perf) - min(perf)
    assert report(6, spread <= 0.02, f"performance spread {spread:.4f} (means {min(perf):.4f}..{max(perf):.4f})")


def test_criterion_7_uneven_q(runs):
    details, ok = [], True
    for which in ("A", "B"):
        cfg, results, _ = runs.uneven(which)
        assert cfg.v_grid == (0.05, 0.1, 0.45)
        p05, p10, p45 = mean_by_v(cfg, results)
        ok &= abs(p05 - p10) <= 0.02 and p10 - p45 >= 0.02
        details.append(f"{which}: v=0.05 {p05:.4f}, v=0.1 {p10:.4f}, v=0.45 {p45:.4f}")
    assert report(7, ok, "; ".join(details))


def test_criterion_8_adversarial(runs):
    cfg, cb, _ = runs.adversarial("fair_cb")
    _, ucb, _ = runs.adversarial("fair_ucb")
    assert cfg.v_grid == GRID
    perf_cb = mean_by_v(cfg, cb)
    perf_ucb = mean_by_v(cfg, ucb)
    level = all(abs(p - 0.496) <= 0.01 for p in perf_cb)
    spread = max(perf_cb) - min(perf_cb)
    low = [vi for vi, v in enumerate(GRID) if v <= 0.1]
    ucb_lower = all(perf_ucb[vi] < perf_cb[vi] for vi in low)
    ok = level and spread <= 0.02 and ucb_lower
    assert report(8, ok, f"Fair CB {min(perf_cb):.4f}..{max(perf_cb):.4f} (spread {spread:.4f}); "
                         "Fair UCB at v<=0.1: " + ", ".join(f"{perf_ucb[vi]:.4f}" for vi in low))


def test_criterion_9_unknown_q():
    relaxed = load_config(CONFIGS / "unknown_q.toml")
    assert relaxed.mode == "relaxed"
    T, M = relaxed.horizon, relaxed.environment.n_contexts
    q_true = np.array(relaxed.environment.q)
    bound = vio_bound(T, M)

    def epochs_concentrated(learner):
        return [float(np.abs(rec.q_k - q_true).sum()) <= rec.eps_k for rec in learner.log[1:]]

    rel = [run_single(relaxed, 0, r, keep_learner=True) for r in range(relaxed.replications)]
    conc = [ok for r in rel for ok in epochs_concentrated(r.learner)]
    max_vio = max(r.summary.vio for r in rel)
    known = run_all(relaxed.with_overrides(algorithm="fair_cb"))
    reg_rel = float(np.mean([r.summary.regret for r in rel]))
    reg_known = float(np.mean([r.summary.regret for r in known]))

    conservative = relaxed.with_overrides(mode="conservative")
    cons = [run_single(conservative, 0, r, keep_learner=True) for r in range(conservative.replications)]
    good = [r for r in cons if all(epochs_concentrated(r.learner))]
    cons_vio = max((r.summary.vio for r in good), default=0.0)

    frac = float(np.mean(conc))
    ok = (max_vio <= bound and frac >= 0.99 and reg_rel <= 2.0 * max(reg_known, 0.0)
          and cons_vio == 0.0 and good)
    assert report(9, ok, f"relaxed max Vio {max_vio:.4f} <= bound {bound:.4f}; concentration "
                         f"{sum(conc)}/{len(conc)}; regret {reg_rel:.1f} vs known-q {reg_known:.1f}; "
                         f"conservative max Vio {cons_vio:g} on {len(good)} concentrated runs")


def test_criterion_10_estimator_unbiased():
    rng = np.random.default_rng(10)
    p = np.array([0.2, 0.5, 0.3])
    losses = np.array([0.3, 0.7, 1.0])
    n = 100_000
    learner = FtrlLearner(ConstraintSpec(ContextDistribution([1.0]), 0.0, 3), SolverConfig(eta=1.0))
    fixed = p[None, :].copy()
    fixed.setflags(write=False)
    for _ in range(n):
        learner._probs = fixed  # hold the policy fixed; act and observe run unchanged
        i = learner.act(0, rng)
        learner.observe(0, i, float(losses[i]))
    est = learner.g[0] / n
    sigma = losses * np.sqrt((1 - p) / (p * n))
    z = np.abs(est - losses) / sigma
    assert report(10, bool(np.all(z <= 3.0)), "estimates " + ", ".join(f"{x:.4f}" for x in est)
                  + " vs " + ", ".join(f"{x:g}" for x in losses) + f"; max |z| {z.max():.2f}")


def test_criterion_11_sensitivity():
    rng = np.random.default_rng(11)
    ratios = []
    for _ in range(50):
        M, K = int(rng.integers(1, 4)), int(rng.integers(2, 4))
        while True:
            q = rng.dirichlet(np.ones(M))
            if q.min() >= 0.2:
                break
        eps = float(rng.uniform(0.0, 0.05))
        v = float(rng.uniform(0.0, 1.0 / K - M * eps))
        L = rng.uniform(0.0, 100.0, size=(M, K))
        base, _ = lp_vertex_enumeration(L, ConstraintSpec(q, v, K))
        moved, _ = lp_vertex_enumeration(L, ConstraintSpec(q, v, K, v + M * eps))
        bound = M * eps / q.min()
        ratios.append(float(np.abs(base - moved).max()) / bound if bound > 0 else 0.0)
    worst = max(ratios)
    assert report(11, worst <= 10.0, f"max ||P(v) - P(v + M eps)|| / (M eps / u) = {worst:.3f} over 50 instances")


def test_criterion_12_determinism(runs, tmp_path):
    cfg, _, _ = runs.shared_best_arm()
    run_experiment(cfg, tmp_path / "threads2", threads=2)
    first = (runs.out_root / "shared_best_arm" / "summary.csv").read_bytes()
    second = (tmp_path / "threads2" / "summary.csv").read_bytes()
    ok = first == second
    assert report(12, ok, f"summary.csv identical across runs with 1 and 2 workers ({len(first)} bytes)")
