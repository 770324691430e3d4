"""Exit criteria. Every test reports one PASS/FAIL line at its pinned tolerance."""

import math
import threading
import time

import numpy as np
import pytest

from conftest import random_covariance, random_spd, report
from dicov.cli import main
from dicov.datagen import chain_precision, machine_samples
from dicov.debias import SparseUpdate, debias
from dicov.experiment import ExperimentConfig, run_experiment, run_trial
from dicov.glasso import graphical_lasso
from dicov.hub import hub_variance
from dicov.matrixcore import SparseSymMatrix
from dicov.wire import ACK_OK, UPDATE, FrameStream, Hub, WorkerConfig, decode_update, encode_update, unpack_message, worker_run

pytestmark = [pytest.mark.acceptance]


def _median(records, estimator, metric):
    return float(np.median([getattr(r, metric) for r in records if r.estimator == estimator]))


def test_1_solver_certification():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    fits = 0
    for _ in range(50):
        S = random_covariance(rng, 30, 60)
        for lam in (0.05, 0.1, 0.3):
            sol = graphical_lasso(S, lam)
            worst = max(worst, sol.kkt_residual)
            fits += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5 and elapsed < 60
    report(1, ok, f"{fits} fits, max KKT residual {worst:.2e} (<= 1e-5), {elapsed:.1f}s (< 60s)")
    assert ok


def test_2_debiasing_identity():
    rng = np.random.default_rng(2)
    worst = 0.0
    for k in range(20):
        p = 2 + k % 19
        S = random_spd(rng, p)
        theta = graphical_lasso(S, 0.0).theta_hat
        worst = max(worst, np.max(np.abs(debias(theta, S) - theta)))
    ok = worst <= 1e-8
    report(2, ok, f"max |debiased - fit| {worst:.2e} over 20 unpenalized fits (<= 1e-8)")
    assert ok


def test_3_averaging_trend():
    med = {}
    for M in (2, 8):
        cfg = ExperimentConfig(p=50, n=100, M=M, trials=20, B=50 * 50, tau=0.0, estimators=("distributed",))
        med[M] = _median(run_experiment(cfg), "distributed", "linf")
    ratio = med[8] / med[2]
    ok = ratio <= 0.8
    report(3, ok, f"median linf M=2 {med[2]:.4f}, M=8 {med[8]:.4f}, ratio {ratio:.3f} (<= 0.8)")
    assert ok


def test_4_support_recovery():
    cfg = ExperimentConfig(p=100, n=100, M=10, trials=20, estimators=("distributed",))
    recs = run_experiment(cfg)
    exact = sum(r.fpr == 0 and r.fnr == 0 for r in recs)
    ok = exact >= 16
    report(4, ok, f"exact support in {exact}/20 trials (>= 80%)")
    assert ok


def test_5_error_ordering():
    lines, ok = [], True
    for M in (2, 4, 8):
        recs = run_experiment(ExperimentConfig(p=100, n=100, M=M, trials=20))
        dist, naive = _median(recs, "distributed", "mse"), _median(recs, "naive", "mse")
        ok &= dist <= naive / 1.5
        lines.append(f"M={M}: distributed {dist:.3f} vs naive/1.5 {naive / 1.5:.3f}")
        if M == 2:
            fd = _median(recs, "full_debiased", "mse")
            ok &= dist <= 2 * fd
            lines.append(f"M=2: distributed {dist:.3f} vs 2*full_debiased {2 * fd:.3f}")
    report(5, ok, "; ".join(lines))
    assert ok


def test_6_tuning_robustness():
    lines, ok = [], True
    for beta in (0.6, 1.0, 1.4):
        recs = run_experiment(ExperimentConfig(p=100, n=100, M=10, trials=20, beta=beta, estimators=("distributed",)))
        fpr, fnr = _median(recs, "distributed", "fpr"), _median(recs, "distributed", "fnr")
        ok &= fpr <= 0.01 and fnr <= 0.05
        lines.append(f"beta={beta}: fpr {fpr:.4f} fnr {fnr:.4f}")
    report(6, ok, "; ".join(lines) + " (fpr <= 0.01, fnr <= 0.05)")
    assert ok


def test_7_standardized_entry_is_unit_scale():
    cfg = ExperimentConfig(p=20, n=500, M=4, trials=100, estimators=("distributed",))
    theta01 = chain_precision(20, 0.4).theta[0, 1]
    z = []
    for t in range(cfg.trials):
        bar = run_trial(cfg, t).hub.theta_bar
        sd = math.sqrt(hub_variance(bar)[0, 1])
        z.append(math.sqrt(cfg.n * cfg.M) * (bar[0, 1] - theta01) / sd)
    spread = float(np.std(z, ddof=1))
    ok = 0.7 <= spread <= 1.3
    report(7, ok, f"std of standardized entry (0,1) = {spread:.3f}, mean {np.mean(z):+.3f} (in [0.7, 1.3])")
    assert ok


class _BudgetCheckingStream(FrameStream):
    budget = None
    checked = []

    def send_frame(self, payload):
        if payload[:1] == bytes([UPDATE]):
            u = unpack_message(payload)[1]
            _BudgetCheckingStream.checked.append(u.bandwidth_used <= self.budget)
        super().send_frame(payload)


def _random_update(rng):
    p = int(rng.integers(1, 101))
    n_cells = p * (p + 1) // 2
    k = int(rng.integers(0, min(500, n_cells) + 1))
    flat = np.sort(rng.choice(n_cells, size=k, replace=False))
    iu, ju = np.triu_indices(p)
    bits = rng.integers(0, 2**63, size=k, dtype=np.uint64) | (rng.integers(0, 2, size=k, dtype=np.uint64) << 63)
    vals = bits.view(np.float64)
    vals = np.where(np.isfinite(vals) & (vals != 0), vals, 1.5)
    return SparseUpdate(int(rng.integers(0, 2**32)), p, int(rng.integers(0, 2**32)),
                        SparseSymMatrix(p, iu[flat], ju[flat], vals), float(rng.exponential()))


def test_8_wire():
    rng = np.random.default_rng(8)
    roundtrips = sum(decode_update(encode_update(u)) == u for u in (_random_update(rng) for _ in range(1000)))

    identical = 0
    _BudgetCheckingStream.checked = []
    for seed in (1, 2, 3):
        cfg = ExperimentConfig(p=30, n=100, M=4, trials=1, base_seed=seed, timeout=30.0)
        _BudgetCheckingStream.budget = cfg.bandwidth
        hub = Hub(cfg.M, WorkerConfig(cfg.p, cfg.n, cfg.lam_machine, cfg.bandwidth, cfg.base_seed), cfg.tau_hub,
                  ("127.0.0.1", 0), cfg.timeout)
        result = {}
        ht = threading.Thread(target=lambda: result.setdefault("est", hub.serve()))
        ht.start()
        model = chain_precision(cfg.p, cfg.a)
        acks = []
        workers = [
            threading.Thread(target=lambda m=m: acks.append(
                worker_run(machine_samples(model, cfg.n, seed, m), hub.address, m, stream_factory=_BudgetCheckingStream)))
            for m in range(cfg.M)
        ]
        for w in workers:
            w.start()
        for w in workers:
            w.join(60)
        ht.join(60)
        ref = run_trial(cfg, 0).hub
        identical += acks == [ACK_OK] * 4 and result["est"].theta_final == ref.theta_final
    budget_ok = len(_BudgetCheckingStream.checked) == 12 and all(_BudgetCheckingStream.checked)
    ok = roundtrips == 1000 and identical == 3 and budget_ok
    report(8, ok, f"{roundtrips}/1000 bit-exact round trips; {identical}/3 networked runs bit-identical; "
                  f"{sum(_BudgetCheckingStream.checked)}/12 updates within budget")
    assert ok


def test_9_determinism(tmp_path):
    args = ["simulate", "--p", "30", "--n", "60", "--M", "3", "--trials", "3", "--base_seed", "11"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    ok = a.read_bytes() == b.read_bytes() and len(a.read_bytes()) > 0
    report(9, ok, f"two simulate runs byte-identical ({len(a.read_bytes())} bytes)")
    assert ok
