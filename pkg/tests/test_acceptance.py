"""Whole-package acceptance checks.

One test per promised behavior, each printing a single line with the
measured margin so a verbose run reads as a checklist. Tolerances sit
next to the assertions they guard. The training-trend checks pin their
dataset, schedule, and seeds so reruns reproduce the same numbers.
"""

import json
import time

import numpy as np
import pytest

from dualtemp import analysis, datasets, network, trainer
from dualtemp.dictionary import QueueDictionary, momentum_update
from dualtemp.gradients import fd_gradient, infonce_grad, prob_weights
from dualtemp.losses import (
    BatchPair,
    ContrastiveInstance,
    DualTempConfig,
    LogitInstance,
    batch_infonce_loss,
    ce_dt_grad,
    ce_dt_loss,
    ce_loss,
    decomposed_loss,
    dt_loss,
    dt_loss_with_grads,
    infonce_loss,
    noncl_loss,
    noncl_loss_grad,
    one_hot_instance,
    simple_loss,
)
from dualtemp.gradients import simple_grad
from dualtemp.numerics import make_rng, tempered_log_softmax, tempered_softmax
from dualtemp.trainer import FrameworkSpec, ScheduleConfig, run_training

SEEDS = (0, 1, 2)


def report(name: str, ok: bool, detail: str) -> None:
    print(f"accept {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


def rel_err(analytic, numeric) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12))


@pytest.fixture(scope="module")
def benchmark_pairs():
    """Shared 32-class synthetic benchmark used by the training-trend checks."""
    spec = datasets.SyntheticSpec(classes=32, dim=64, samples=4096, noise_scale=0.1)
    return datasets.generate_synthetic_pairs(spec, make_rng(0, stream=3))


def mean_top1(framework, schedule, data, n_classes=32):
    tops = [
        run_training(framework, schedule, data, n_classes=n_classes, seed=s).final_top1
        for s in SEEDS
    ]
    return float(np.mean(tops))


def test_decomposed_gradient_matches_full_infonce():
    rng = make_rng(10)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        inst = ContrastiveInstance.random(rng, dim=16, n_negatives=32)
        for tau in (0.05, 0.1, 0.5):
            full = infonce_grad(inst, tau).full_grad
            _, grad = decomposed_loss(inst, inst, DualTempConfig(tau, tau))
            worst = max(worst, float(np.max(np.abs(grad - full))))
    elapsed = time.perf_counter() - start
    report(
        "gradient identity",
        worst <= 1e-9 and elapsed < 1.0,
        f"max abs err {worst:.2e} tol 1e-9, {elapsed:.2f}s",
    )


def test_gradients_match_finite_differences():
    rng = make_rng(11)
    cfg = DualTempConfig(0.1, 1.0)
    start = time.perf_counter()
    errs = {}

    worst = 0.0
    for _ in range(50):
        inst = ContrastiveInstance.random(rng, dim=8, n_negatives=12)
        fd = fd_gradient(
            lambda q: infonce_loss(
                ContrastiveInstance(q, inst.positive_key, inst.negative_keys, check=False), 0.1
            ),
            inst.query,
        )
        worst = max(worst, rel_err(infonce_grad(inst, 0.1).full_grad, fd))
    errs["infonce"] = worst

    worst = 0.0
    for _ in range(50):
        inst = ContrastiveInstance.random(rng, dim=8, n_negatives=12)
        fd = fd_gradient(
            lambda q: simple_loss(
                ContrastiveInstance(q, inst.positive_key, inst.negative_keys, check=False)
            ),
            inst.query,
        )
        worst = max(worst, rel_err(simple_grad(inst), fd))
    errs["simple"] = worst

    # stop-gradient losses: the finite-difference side differentiates a
    # surrogate whose frozen factors are pinned at the base point
    worst = 0.0
    off = ~np.eye(6, dtype=bool)
    for _ in range(50):
        batch = BatchPair.random(rng, size=6, dim=8)
        _, grad_q, _ = dt_loss_with_grads(batch, cfg)
        logits = batch.queries @ batch.keys.T
        w_a = np.sum(tempered_softmax(logits, cfg.tau_alpha) * off, axis=1)
        w_b = np.sum(tempered_softmax(logits, cfg.tau_beta) * off, axis=1)
        ratio = w_b / w_a

        def surrogate(flat, keys=batch.keys, ratio=ratio):
            lp = tempered_log_softmax(flat.reshape(6, 8) @ keys.T, cfg.tau_alpha)
            return float(np.mean(-ratio * np.diag(lp)))

        fd = fd_gradient(surrogate, batch.queries.reshape(-1)).reshape(6, 8)
        worst = max(worst, rel_err(grad_q, fd))
    errs["dt"] = worst

    worst = 0.0
    for i in range(50):
        predicted = rng.normal(size=8)
        target = rng.normal(size=8)
        target /= np.linalg.norm(target)
        ha = 0.7 if i % 2 else None
        fd = fd_gradient(lambda p: noncl_loss(p, target, ha_factor=ha), predicted)
        worst = max(worst, rel_err(noncl_loss_grad(predicted, target, ha_factor=ha), fd))
    errs["noncl"] = worst

    worst = 0.0
    checked = 0
    while checked < 50:
        inst = LogitInstance(rng.normal(size=6), gt_index=int(rng.integers(0, 6)))
        p_a = tempered_softmax(inst.logits, cfg.tau_alpha)
        if 1.0 - p_a[inst.gt_index] < 1e-6:
            # a saturated softmax blows the frozen ratio up past what
            # centered differences at h=1e-4 can resolve; keep the oracle
            # on conditioned points
            continue
        checked += 1
        p_b = tempered_softmax(inst.logits, cfg.tau_beta)
        frozen = (1.0 - p_b[inst.gt_index]) / (1.0 - p_a[inst.gt_index])

        def surrogate(logits, gt=inst.gt_index, frozen=frozen):
            return float(-frozen * tempered_log_softmax(logits, cfg.tau_alpha)[gt])

        fd = fd_gradient(surrogate, inst.logits)
        worst = max(worst, rel_err(ce_dt_grad(inst, cfg), fd))
    errs["ce_dt"] = worst

    # whole-trainer fixture: a two-layer encoder under the batch loss
    params = network.init_encoder(rng, in_dim=6, hidden_dim=8, embedding_dim=4, backbone_layers=0)
    x1 = rng.normal(size=(5, 6))
    x2 = rng.normal(size=(5, 6))
    state = trainer.TrainState(
        framework=FrameworkSpec(name="simco", dt=cfg),
        online=params,
        predictor=None,
        momentum_copy=None,
        queue_scalar=None,
        queue_vector=None,
        velocity=network.zeros_like_params(params),
        predictor_velocity=None,
        classifier=network.Affine(np.zeros((2, 8)), np.zeros(2)),
    )
    _, grads, _, _ = trainer._batch_dt_step(state, x1, x2)
    e1 = network.encode(params, x1).embeddings
    e2 = network.encode(params, x2).embeddings
    sims = e1 @ e2.T
    mask = ~np.eye(5, dtype=bool)
    frozen = np.sum(tempered_softmax(sims, cfg.tau_beta) * mask, axis=1) / np.sum(
        tempered_softmax(sims, cfg.tau_alpha) * mask, axis=1
    )

    def trainer_surrogate(flat):
        probe = network.unflatten_params(params, flat)
        q = network.encode(probe, x1).embeddings
        k = network.encode(probe, x2).embeddings
        lp = tempered_log_softmax(q @ k.T, cfg.tau_alpha)
        return float(np.mean(-frozen * np.diag(lp)))

    fd = fd_gradient(trainer_surrogate, network.flatten_params(params))
    errs["trainer"] = rel_err(network.flatten_params(grads), fd)

    elapsed = time.perf_counter() - start
    worst = max(errs.values())
    detail = " ".join(f"{k} {v:.1e}" for k, v in errs.items())
    report(
        "finite-difference oracle",
        worst <= 1e-4 and elapsed < 10.0,
        f"{detail} tol 1e-4, {elapsed:.1f}s",
    )


def test_equal_temperature_dual_loss_is_batch_infonce():
    rng = make_rng(12)
    worst = 0.0
    for i in range(100):
        size = int(rng.integers(2, 10))
        dim = int(rng.integers(4, 16))
        batch = BatchPair.random(rng, size=size, dim=dim)
        tau = (0.05, 0.1, 0.5, 1.0)[i % 4]
        worst = max(
            worst, abs(dt_loss(batch, DualTempConfig(tau, tau)) - batch_infonce_loss(batch, tau))
        )
    report("single-temperature reduction", worst <= 1e-12, f"max abs err {worst:.2e} tol 1e-12")


def test_cross_entropy_is_infonce_over_one_hot_keys():
    rng = make_rng(13)
    worst = 0.0
    for i in range(1000):
        k = int(rng.integers(2, 12))
        inst = LogitInstance(rng.normal(size=k), gt_index=int(rng.integers(0, k)))
        tau = (1.0, 0.5, 0.1)[i % 3]
        worst = max(worst, abs(ce_loss(inst, tau) - infonce_loss(one_hot_instance(inst), tau)))
    report("cross-entropy equivalence", worst <= 1e-12, f"max abs err {worst:.2e} tol 1e-12")


def test_anchor_weight_invariants():
    rng = make_rng(14)
    worst_mass = 0.0
    worst_hat = 0.0
    monotone = True
    for i in range(1000):
        inst = ContrastiveInstance.random(rng, dim=8, n_negatives=12)
        tau = (0.05, 0.1, 0.5, 1.0)[i % 4]
        w = prob_weights(inst, tau)
        worst_mass = max(worst_mass, abs(w.p_pos + w.scalar_sum - 1.0))
        worst_hat = max(worst_hat, abs(float(np.sum(w.p_hat)) - 1.0))
        # harder negatives (higher similarity) must never get less weight
        order = np.argsort(inst.negative_keys @ inst.query)
        if np.any(np.diff(w.p_hat[order]) < -1e-9) or np.any(np.diff(w.p_neg[order]) < -1e-9):
            monotone = False
    ok = worst_mass <= 1e-9 and worst_hat <= 1e-9 and monotone
    report(
        "anchor weight invariants",
        ok,
        f"mass err {worst_mass:.2e}, sum err {worst_hat:.2e}, monotone {monotone}, tol 1e-9",
    )


def test_weight_entropy_grows_with_dictionary_and_temperature():
    start = time.perf_counter()
    rows = analysis.entropy_sweep(
        dict_sizes=(64, 256, 1024, 4096), taus=(0.07, 0.1, 0.5, 1.0), n_anchors=256, dim=32, seeds=20
    )
    cells = analysis.mean_by_cell(rows)
    k_line = [cells[(k, 0.1)] for k in (64, 256, 1024, 4096)]
    t_line = [cells[(1024, t)] for t in (0.07, 0.1, 0.5, 1.0)]
    elapsed = time.perf_counter() - start
    k_ok = all(b > a for a, b in zip(k_line, k_line[1:]))
    t_ok = all(b > a for a, b in zip(t_line, t_line[1:]))
    report(
        "entropy trend",
        k_ok and t_ok and elapsed < 30.0,
        f"K line {[f'{v:.6f}' for v in k_line]} tau line {[f'{v:.6f}' for v in t_line]}, {elapsed:.1f}s",
    )


def test_resampling_similarity_grows_with_dictionary():
    rows = analysis.similarity_sweep(dict_sizes=(64, 4096), tau=0.1, n_anchors=256, dim=32, seeds=20)
    cells = analysis.mean_by_cell(rows)
    gap = cells[(4096, 0.1)] - cells[(64, 0.1)]
    report("resampling similarity trend", gap >= 0.05, f"K=4096 minus K=64 gap {gap:.3f}, need >= 0.05")


def test_dual_temperature_beats_single_temperature(benchmark_pairs):
    start = time.perf_counter()
    sched = ScheduleConfig()

    def arm(tau_alpha, tau_beta):
        fw = FrameworkSpec(name="simco", dt=DualTempConfig(tau_alpha, tau_beta))
        return mean_top1(fw, sched, benchmark_pairs)

    dt_sharp = arm(0.1, 1.0)
    st_sharp = arm(0.1, 0.1)
    st_unit = arm(1.0, 1.0)
    dt_reverse = arm(1.0, 0.1)
    elapsed = time.perf_counter() - start
    ok = dt_sharp > st_sharp > st_unit and dt_reverse <= st_unit + 0.02 and elapsed < 600.0
    report(
        "dual-temperature ordering",
        ok,
        f"DT {dt_sharp:.4f} > ST(0.1) {st_sharp:.4f} > ST(1) {st_unit:.4f}, "
        f"reverse {dt_reverse:.4f} <= {st_unit + 0.02:.4f}, {elapsed:.0f}s",
    )


def test_stale_queue_collapses_and_fresh_keys_win():
    spec = datasets.SyntheticSpec(classes=32, dim=64, samples=2048, noise_scale=0.3)
    data = datasets.generate_synthetic_pairs(spec, make_rng(0, stream=3))
    sched = ScheduleConfig(base_lr=0.4, total_epochs=30, batch_size=32, weight_decay=5e-4)
    stats = {}
    for sampling in ("earliest", "random", "newest"):
        logs = [
            run_training(FrameworkSpec(name="mocov2", sampling=sampling), sched, data, n_classes=32, seed=s)
            for s in SEEDS
        ]
        stats[sampling] = (
            float(np.mean([log.final_top1 for log in logs])),
            float(np.mean([log.final_collapse for log in logs])),
        )
    fresh_ok = stats["newest"][0] >= stats["random"][0]
    chance = 1.0 / 32.0
    stale_ok = stats["earliest"][1] >= 0.9 or stats["earliest"][0] <= 2.0 * chance
    report(
        "queue staleness ordering",
        fresh_ok and stale_ok,
        f"newest {stats['newest'][0]:.4f} >= random {stats['random'][0]:.4f}, "
        f"earliest collapse {stats['earliest'][1]:.3f} top1 {stats['earliest'][0]:.4f}",
    )


def test_inter_anchor_factor_reduces_accuracy(benchmark_pairs):
    arms = [
        ("simco", DualTempConfig(0.1, 1.0), ScheduleConfig(base_lr=0.2, total_epochs=30, batch_size=128, weight_decay=5e-3)),
        ("noncl-simsiam", DualTempConfig(0.05, 1.0), ScheduleConfig(base_lr=0.3, total_epochs=30, batch_size=32, weight_decay=5e-4)),
    ]
    ok = True
    details = []
    for name, dt, sched in arms:
        means = {}
        for toggled in (False, True):
            fw = FrameworkSpec(name=name, dt=dt, ha_toggle=toggled)
            means[toggled] = mean_top1(fw, sched, benchmark_pairs)
        ok = ok and means[True] < means[False]
        details.append(f"{name} {means[False]:.4f} -> {means[True]:.4f}")
    report("inter-anchor factor hurts", ok, "; ".join(details))


def test_queue_matches_reference_model_and_ema_cases_exact():
    rng = make_rng(15)
    capacity, dim = 64, 4
    queue = QueueDictionary(capacity=capacity, dim=dim)
    ref: list[np.ndarray] = []
    for it in range(10000):
        op = int(rng.integers(0, 4))
        if op == 0 or not ref:
            batch = rng.normal(size=(int(rng.integers(1, 6)), dim))
            queue.push(batch, iteration=it)
            ref.extend(np.asarray(batch, dtype=np.float64))
            ref = ref[-capacity:]
        elif op == 1:
            keys, _ = queue.snapshot()
            assert np.array_equal(keys, np.asarray(ref))
        elif op == 2:
            n = int(rng.integers(1, len(ref) + 1))
            assert np.array_equal(queue.sample("earliest", n), np.asarray(ref[:n]))
            assert np.array_equal(queue.sample("newest", n), np.asarray(ref[len(ref) - n :]))
        else:
            n = int(rng.integers(1, len(ref) + 1))
            seed = int(rng.integers(0, 2**31))
            got = queue.sample("random", n, np.random.default_rng(seed))
            chosen = np.random.default_rng(seed).choice(len(ref), size=n, replace=False)
            assert np.array_equal(got, np.asarray(ref)[chosen])

    online = network.init_encoder(make_rng(16), in_dim=3, hidden_dim=4, embedding_dim=2)
    target = network.init_encoder(make_rng(17), in_dim=3, hidden_dim=4, embedding_dim=2)
    kept = momentum_update(online, target, 1.0)
    copied = momentum_update(online, target, 0.0)
    kept_exact = np.array_equal(network.flatten_params(kept), network.flatten_params(target))
    copy_exact = np.array_equal(network.flatten_params(copied), network.flatten_params(online))
    report(
        "queue and momentum properties",
        kept_exact and copy_exact,
        f"10000 queue ops model-equivalent, EMA m=1 exact {kept_exact}, m=0 exact {copy_exact}",
    )


def test_identical_configs_produce_byte_identical_logs():
    spec = datasets.SyntheticSpec(classes=8, dim=16, samples=256, noise_scale=0.1)
    data = datasets.generate_synthetic_pairs(spec, make_rng(0, stream=3))
    sched = ScheduleConfig(total_epochs=2, warmup_epochs=1, batch_size=32)
    blobs = []
    for _ in range(2):
        log = run_training(FrameworkSpec(name="simco"), sched, data, n_classes=8, seed=11)
        blobs.append(json.dumps(log.rows, sort_keys=True).encode())
    report(
        "determinism",
        blobs[0] == blobs[1],
        f"two runs serialize to {len(blobs[0])} identical bytes",
    )
