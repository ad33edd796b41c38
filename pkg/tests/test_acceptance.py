"""End-to-end acceptance checks, one test per criterion.

Each test appends a ``PASS``/``FAIL`` line that the conftest hook prints in
the terminal summary. The bandit and gridworld criteria run the full
experiments and take most of the suite's runtime.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES
from uper_lab import cli
from uper_lab.appendix_labs import BiasStudyConfig, PosteriorDemoConfig, entropy_curve, run_bias_study, run_posterior_demo
from uper_lab.bandit import BanditRunConfig, arm_probability_trace, metric_trace, run_bandit, shifted_config
from uper_lab.gridworld import GridRunConfig, run_gridworld, run_summary
from uper_lab.priority_buffer import PriorityBuffer, SumTree, Transition
from uper_lab.quantile_ensemble import LearningSchedule, QuantileTable, qr_update
from uper_lab.uncertainty import aleatoric, bootstrapped_target_total, deup_check, report, target_total

BANDIT_SEEDS = range(10)
GRID_SEEDS = range(100)


def verdict(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def one_sided_less(a, b):
    """p-value of the paired test that ``mean(a) < mean(b)``."""
    return float(stats.ttest_rel(a, b, alternative="less").pvalue)


def test_criterion_1_decomposition_identity():
    rng = np.random.default_rng(1)
    sizes = (2, 5, 30)
    start = time.perf_counter()
    worst = 0.0
    for k in range(10_000):
        n_ens, n_q = sizes[k % 3], sizes[(k // 3) % 3]
        theta = rng.normal(rng.normal(), rng.uniform(0.1, 3.0), size=(n_ens, n_q))
        z = float(rng.normal(0, 3))
        rep = report(theta, z)
        direct = target_total(theta, z)
        worst = max(worst, abs(rep.target_distance + rep.epistemic + rep.aleatoric - direct) / direct)
        # bootstrapped targets add the spread of the target quantiles
        nxt = rng.normal(size=n_q)
        r, gamma = float(rng.normal()), 0.9
        targets = r + gamma * nxt
        boot = report(theta, float(targets.mean()))
        expected = boot.target_distance + boot.epistemic + boot.aleatoric + float(targets.var())
        got = bootstrapped_target_total(theta, r, gamma, nxt)
        worst = max(worst, abs(expected - got) / got)
    elapsed = time.perf_counter() - start
    verdict(1, worst < 1e-10 and elapsed < 5.0, f"max relative error {worst:.2e}, {elapsed:.2f} s")


def test_criterion_2_deup_identity():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        x = rng.normal(rng.normal(), rng.uniform(0.1, 3.0), size=int(rng.integers(2, 200)))
        d = deup_check(x, float(rng.normal(0, 3)))
        worst = max(worst, abs(d.total - (d.aleatoric + d.epistemic)) / d.total)
    elapsed = time.perf_counter() - start
    verdict(2, worst < 1e-12 and elapsed < 1.0, f"max relative error {worst:.2e}, {elapsed:.3f} s")


def _fuzz_sum_tree(rng, n_ops=100_000, capacity=50):
    buf = PriorityBuffer(capacity=capacity, alpha=0.6, epsilon_floor=1e-3)
    oracle: dict[int, float] = {}
    mismatches = 0
    for _ in range(n_ops):
        op = rng.random()
        live = list(buf.live_ids())
        if not live or op < 0.4:
            p = float(rng.exponential()) if rng.random() < 0.9 else 0.0
            i = buf.insert(Transition(0, 0, 0.0, 0, False), p)
            oracle[i] = (p + 1e-3) ** 0.6
            oracle.pop(i - capacity, None)
        elif op < 0.8:
            i = live[int(rng.integers(len(live)))]
            p = float(rng.exponential())
            buf.update_priority(i, p)
            oracle[i] = (p + 1e-3) ** 0.6
        else:
            # the tree lays mass out in ring-slot order, not id order
            ids = sorted(oracle, key=lambda i: i % capacity)
            vals = [oracle[i] for i in ids]
            total = math.fsum(vals)
            mass = float(rng.random()) * total
            # linear scan for the interval containing mass
            acc, expect = 0.0, ids[-1]
            for i, v in zip(ids, vals):
                acc += v
                if mass < acc:
                    expect = i
                    break
            got = buf._id_of_slot(buf._sum.find(mass))
            probs = dict(zip(buf.live_ids(), buf.probabilities()))
            if got != expect and abs(mass - acc) > 1e-9 * total:
                mismatches += 1
            if abs(buf.total - total) > 1e-9 * total or buf._min.root != min(vals):
                mismatches += 1
            if any(abs(probs[i] - oracle[i] / total) > 1e-12 for i in ids):
                mismatches += 1
    return mismatches


def _within_3_sigma(priorities, rng, n=200_000):
    tree = SumTree(len(priorities))
    for i, p in enumerate(priorities):
        tree[i] = p
    probs = np.array(priorities) / sum(priorities)
    draws = [tree.find(u * tree.root) for u in rng.random(n)]
    counts = np.bincount(draws, minlength=len(priorities))
    sd = np.sqrt(n * probs * (1 - probs))
    return bool(np.all(np.abs(counts - n * probs) <= 3 * sd + 1e-9))


def test_criterion_3_sum_tree():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    mismatches = _fuzz_sum_tree(rng)
    profiles = {
        "uniform": [1.0] * 8,
        "linear": [float(k) for k in range(1, 9)],
        "geometric": [2.0**-k for k in range(8)],
        "one-heavy": [100.0] + [1.0] * 7,
        "sparse": [0.0, 3.0, 0.0, 1.0, 0.0, 0.5, 2.0, 0.0],
    }
    bad = [name for name, prof in profiles.items() if not _within_3_sigma(prof, rng)]
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and not bad and elapsed < 30.0
    verdict(3, ok, f"{mismatches} fuzz mismatches, profiles outside 3 sigma: {bad or 'none'}, {elapsed:.1f} s")


def test_criterion_4_qr_convergence():
    rng = np.random.default_rng(4)
    table = QuantileTable(np.zeros((1, 1, 1, 30)))
    schedule = LearningSchedule()
    start = time.perf_counter()
    for t, z in enumerate(rng.normal(2.0, 1.0, 200_000)):
        qr_update(table, 0, 0, 0, float(z), schedule(t))
    elapsed = time.perf_counter() - start
    theta = table.at(0, 0)
    err = float(np.max(np.abs(theta[0] - stats.norm.ppf(table.tau, loc=2.0))))
    a_hat = aleatoric(theta)
    ok = err < 0.1 and 0.7 <= a_hat <= 1.0 and elapsed < 60.0
    verdict(4, ok, f"max quantile error {err:.3f}, A_hat {a_hat:.3f}, {elapsed:.1f} s")


@pytest.fixture(scope="module")
def conal_runs():
    cfg = BanditRunConfig()
    schemes = ("td", "uper", "oracle", "inverse_count")
    return {s: [run_bandit(cfg, s, seed) for seed in BANDIT_SEEDS] for s in schemes}


def test_criterion_5_conal_bandit(conal_runs):
    final = {s: np.array([r[-1].metrics["true_mse"] for r in runs]) for s, runs in conal_runs.items()}
    probs = {s: np.mean([arm_probability_trace(r).mean(axis=0) for r in runs], axis=0) for s, runs in conal_runs.items()}
    p = one_sided_less(final["uper"], final["td"])
    ratio = final["uper"].mean() / final["oracle"].mean()
    noisy_ok = probs["td"][-1] > probs["uper"][-1]
    stable_ok = probs["uper"][0] > probs["td"][0]
    checks = {"a": p < 0.05, "b": ratio <= 2.0, "c": noisy_ok and stable_ok}
    detail = (
        f"final MSE uper {final['uper'].mean():.4f} td {final['td'].mean():.4f} oracle {final['oracle'].mean():.4f}, "
        f"p={p:.2g}, uper/oracle {ratio:.2f}, "
        f"P(noisiest) td {probs['td'][-1]:.3f} uper {probs['uper'][-1]:.3f}, "
        f"P(stablest) uper {probs['uper'][0]:.3f} td {probs['td'][0]:.3f}, "
        f"parts failing: {[k for k, v in checks.items() if not v] or 'none'}"
    )
    verdict(5, all(checks.values()), detail)


def test_criterion_6_shifted_bandit():
    cfg = shifted_config()
    cum = {
        s: np.array([metric_trace(run_bandit(cfg, s, seed), "true_mse").sum() for seed in BANDIT_SEEDS])
        for s in ("uper", "uper_ens")
    }
    p = one_sided_less(cum["uper"], cum["uper_ens"])
    ok = cum["uper"].mean() <= cum["uper_ens"].mean() and p < 0.1
    verdict(6, ok, f"cumulative MSE E_delta-based {cum['uper'].mean():.3f}, E-based {cum['uper_ens'].mean():.3f}, p={p:.2g}")


@pytest.fixture(scope="module")
def grid_summaries():
    cfg = GridRunConfig()
    schemes = ("none", "uniform", "td", "uper")
    return {s: [run_summary(run_gridworld(cfg, s, seed)) for seed in GRID_SEEDS] for s in schemes}


def test_criterion_7_noisy_gridworld(grid_summaries):
    summaries = grid_summaries
    eps = {s: np.array([m["episodes_to_threshold"] for m in rows], dtype=float) for s, rows in summaries.items()}
    noisy = {s: float(np.mean([m["noisy_sample_fraction"] for m in rows])) for s, rows in summaries.items()}
    p_uper_per = one_sided_less(eps["uper"], eps["td"])
    p_per_er = one_sided_less(eps["td"], eps["uniform"])
    mass_ratio = noisy["td"] / noisy["uper"] if noisy["uper"] > 0 else math.inf
    checks = {"UPER<PER": p_uper_per < 0.05, "PER<ER": p_per_er < 0.05, "mass ratio": mass_ratio >= 1.5}
    detail = (
        f"episodes to 80% UPER {eps['uper'].mean():.1f} PER {eps['td'].mean():.1f} ER {eps['uniform'].mean():.1f}, "
        f"p(UPER<PER)={p_uper_per:.2g}, p(PER<ER)={p_per_er:.2g}, noisy mass PER/UPER {mass_ratio:.2f}, "
        f"parts failing: {[k for k, v in checks.items() if not v] or 'none'}"
    )
    verdict(7, all(checks.values()), detail)


def test_criterion_8_posterior_demo():
    start = time.perf_counter()
    tr = run_posterior_demo(PosteriorDemoConfig(record_interval=1))
    elapsed = time.perf_counter() - start
    exact = bool(np.allclose(tr.bayes_var, 1.0 / (tr.step + 1), rtol=1e-12, atol=0))
    blocks = np.array([b.mean() for b in np.array_split(tr.ens_epistemic, 20)])
    decreasing = bool(np.all(np.diff(blocks) <= 0))
    final_e, final_a = tr.ens_epistemic[-1], tr.ens_aleatoric[-1]
    ok = exact and decreasing and final_e < 0.05 and 0.7 <= final_a <= 1.0 and elapsed < 60.0
    detail = (
        f"posterior variance exact: {exact}, smoothed E_hat decreasing: {decreasing}, "
        f"final E_hat {final_e:.2e}, A_hat {final_a:.3f}, {elapsed:.1f} s"
    )
    verdict(8, ok, detail)


def test_criterion_9_bias_study():
    start = time.perf_counter()
    failures = []
    for b_eta in (1.0, 3.0):
        for b_beta in (1.0, 3.0):
            cfg = BiasStudyConfig(eta_scale=b_eta, beta_scale=b_beta)
            rows = run_bias_study(cfg)
            ln_n = math.log(cfg.n)
            top = {}
            for form in cfg.forms:
                _, h = entropy_curve(rows, form)
                top[form] = h[-1]
                if abs(h[-1] - ln_n) > 0.01 * ln_n:
                    failures.append(f"{form} at b=({b_eta:g},{b_beta:g})")
            if not top["E2/U"] < top["E/U"]:
                failures.append(f"H(E2/U) >= H(E/U) at b=({b_eta:g},{b_beta:g})")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 120.0
    verdict(9, ok, f"failures: {failures or 'none'}, {elapsed:.1f} s")


def test_criterion_10_determinism(tmp_path):
    jobs = {
        "bandit": ["--set", "train_steps=2000", "--set", "record_interval=500", "--schemes", "td,uper,oracle", "--seeds", "3"],
        "bandit-shifted": ["--set", "train_steps=1000", "--set", "record_interval=500", "--schemes", "uper_ens", "--seeds", "2"],
        "gridworld": ["--set", "episodes=5", "--seeds", "4"],
        "posterior-demo": ["--set", "steps=500", "--seeds", "2"],
        "bias-study": ["--set", "n=1000", "--seeds", "2"],
    }
    differing = []
    for experiment, args in jobs.items():
        outs = []
        for tag, workers in (("a", 1), ("b", 1), ("c", 3)):
            out = tmp_path / experiment / tag
            assert cli.main([experiment, *args, "--workers", str(workers), "--out", str(out)]) == 0
            outs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*.csv"))})
        if not outs[0] or outs[0] != outs[1] or outs[0] != outs[2]:
            differing.append(experiment)
    verdict(10, not differing, f"experiments with differing CSVs: {differing or 'none'}")


class TestSupplementary:
    """Further qualitative properties of the experiments that are not numbered criteria."""

    def test_td_oversamples_noisiest_arm(self, conal_runs):
        probs = np.mean([arm_probability_trace(r)[20:].mean(axis=0) for r in conal_runs["td"]], axis=0)
        assert probs[-1] > probs[0]

    @pytest.mark.xfail(strict=True, reason="UPER still samples the noisiest arm more than the stablest at these settings")
    def test_uper_prefers_stablest_arm(self, conal_runs):
        probs = np.mean([arm_probability_trace(r)[20:].mean(axis=0) for r in conal_runs["uper"]], axis=0)
        assert probs[0] > probs[-1]

    @pytest.mark.xfail(strict=True, reason="inverse-count replay matches or beats UPER on final MSE at these settings")
    def test_uper_beats_inverse_count(self, conal_runs):
        final = {s: [r[-1].metrics["true_mse"] for r in conal_runs[s]] for s in ("uper", "inverse_count")}
        assert one_sided_less(final["uper"], final["inverse_count"]) < 0.05

    def test_inverse_count_beats_td(self, conal_runs):
        final = {s: [r[-1].metrics["true_mse"] for r in conal_runs[s]] for s in ("inverse_count", "td")}
        assert one_sided_less(final["inverse_count"], final["td"]) < 0.05

    def test_stable_arm_epistemic_decays_faster_under_uper(self, conal_runs):
        ehat = {s: np.mean([metric_trace(r, "ehat_arm_0") for r in conal_runs[s]], axis=0) for s in ("uper", "td")}
        half = len(ehat["uper"]) // 2
        assert ehat["uper"][half:].mean() < ehat["td"][half:].mean()

    def test_mse_trend_nonincreasing(self, conal_runs):
        for runs in conal_runs.values():
            mse = np.mean([metric_trace(r, "true_mse") for r in runs], axis=0)
            smoothed = np.convolve(mse, np.ones(20) / 20, mode="valid")
            assert np.all(np.diff(smoothed) <= 1e-12)

    def test_every_gridworld_variant_solves(self, grid_summaries):
        cfg = GridRunConfig()
        for rows in grid_summaries.values():
            solved = np.mean([m["episodes_to_threshold"] <= cfg.episodes for m in rows])
            assert solved >= 0.95

    def test_replay_beats_no_replay(self, grid_summaries):
        eps = {s: [m["episodes_to_threshold"] for m in grid_summaries[s]] for s in ("uniform", "none")}
        assert one_sided_less(eps["uniform"], eps["none"]) < 0.05
