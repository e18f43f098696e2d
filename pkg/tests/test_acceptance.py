"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict that the session summary
prints under "acceptance criteria".
"""

import itertools
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, DATA
from oracles import brute_matrix_profile, contingency_information_gain, naive_pesa
from test_priors import FI_LABELS, FI_VALUES
from toy import model_gradient_errors, toy_setup
from vsformer.dataset import MtsDataset, gen_synthetic, parse_ts, split_train_val
from vsformer.model import pesa_attention, prior_matrix
from vsformer.priors import equal_frequency_edges, fit_feature_importance, prototype_weight, shape_token_weight
from vsformer.shape_tokenizer import (
    boundary_mask,
    build_shape_tokens,
    default_exclusion,
    default_motif_length,
    discover_prototypes,
    matrix_profile,
)
from vsformer.trainer import TrainConfig, load_checkpoint, save_checkpoint, train
from vsformer.trainer.training import predict
from vsformer.value_tokenizer import build_value_tokens


def record(n, title, ok, detail):
    ACCEPTANCE_LINES[n] = f"[{'PASS' if ok else 'FAIL'}] {n}. {title}: {detail}"
    print(ACCEPTANCE_LINES[n])
    assert ok, ACCEPTANCE_LINES[n]


def test_1_gradient_integrity():
    t0 = time.perf_counter()
    model, enc, idx = toy_setup()
    errors = model_gradient_errors(model, enc, idx, h=1e-6)
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    n_params = sum(p.data.size for _, p in model.named_parameters())
    record(1, "gradient integrity", errors[worst] < 1e-4 and elapsed < 60,
           f"{len(errors)} tensors / {n_params} scalars, worst rel err {errors[worst]:.2e} ({worst}), {elapsed:.1f}s")


def _masked_series(rng):
    """A concatenation of random segments; windows may not straddle a seam."""
    m = int(rng.choice([4, 8, 16]))
    while True:
        n_seg = int(rng.integers(1, 5))
        lengths = rng.integers(m + 2, 300 // n_seg + 1, size=n_seg)
        mask = boundary_mask(lengths, m)
        starts = np.flatnonzero(mask)
        if starts.size and starts[-1] - starts[0] >= default_exclusion(m):
            return rng.normal(size=int(lengths.sum())), m, mask


def test_2_matrix_profile_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, index_ok, sizes = 0.0, True, []
    for _ in range(20):
        series, m, mask = _masked_series(rng)
        excl = default_exclusion(m)
        prof, idx = matrix_profile(series, m, excl, mask)
        ref, ref_idx = brute_matrix_profile(series, m, excl, mask)
        finite = np.isfinite(ref)
        assert np.array_equal(np.isfinite(prof), finite)
        worst = max(worst, float(np.max(np.abs(prof[finite] - ref[finite]))))
        index_ok &= bool(np.array_equal(idx, ref_idx))
        sizes.append(series.size)
    elapsed = time.perf_counter() - t0
    record(2, "matrix profile vs brute force", worst <= 1e-9 and elapsed < 60,
           f"20 series (L {min(sizes)}..{max(sizes)}), max |diff| {worst:.1e}, indices equal: {index_ok}, {elapsed:.1f}s")


def test_3_pesa_reduction():
    rng = np.random.default_rng(3)
    worst_out, worst_rows = 0.0, 0.0
    for _ in range(50):
        n, d, dv = (int(x) for x in rng.integers(1, 24, size=3))
        Q, K = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        V = rng.normal(size=(n, dv))
        ref, _, W = naive_pesa(Q, K, V, np.ones((n, n)), d)
        worst_out = max(worst_out, float(np.max(np.abs(pesa_attention(Q, K, V, np.ones((n, n)), d) - ref))))
        # row sums of the outer softmax, for a non-trivial prior too
        _, _, W_p = naive_pesa(Q, K, V, prior_matrix(rng.uniform(0, 5, size=n)), d)
        worst_rows = max(worst_rows, float(np.max(np.abs(W.sum(1) - 1))), float(np.max(np.abs(W_p.sum(1) - 1))))
    record(3, "PESA unit-prior reduction", worst_out <= 1e-12 and worst_rows <= 1e-12,
           f"50 shapes, max |out diff| {worst_out:.1e}, max |row sum - 1| {worst_rows:.1e}")


def test_4_token_counts():
    rng = np.random.default_rng(4)
    T = 32
    # shape counts depend on (V, C, k) and value counts on (V, M); build each set once
    shape_counts, value_counts = {}, {}
    for V, C in itertools.product(range(1, 7), range(2, 6)):  # one class has no inter-class distance
        d = MtsDataset(rng.normal(size=(2 * C, V, T)), np.repeat(np.arange(C), 2), tuple(f"c{c}" for c in range(C)))
        for k in range(1, 7):
            protos = discover_prototypes(d, k, default_motif_length(T))
            shape_counts[V, C, k] = build_shape_tokens(d, protos).n_tokens
        if C == 2:
            for M in range(1, 11):
                value_counts[V, M] = build_value_tokens(d, M).n_tokens
    grid = list(itertools.product(range(1, 7), range(2, 6), range(1, 7), range(1, 11)))
    bad = [(V, C, k, M) for V, C, k, M in grid
           if shape_counts[V, C, k] != k * V * C or value_counts[V, M] != V * 3 * (1 + M) * M // 2]
    record(4, "token-count formulas", not bad, f"{len(grid)} (V, C, k, M) combinations, mismatches: {bad or 'none'}")


def test_5_prior_formulas():
    # prototype weight with D1 = 1, D2 = 3: two instances of the class at distance 1,
    # two others at distance 3
    w = prototype_weight([1.0, 1.0, 3.0, 3.0], np.array([0, 0, 1, 1]), 0, alpha=3.0)
    ok_proto = math.isclose(w.weight, math.exp(0.75), rel_tol=0, abs_tol=1e-12)
    ok_token = float(shape_token_weight(0.0, beta=4.0)) == 5.0
    worst = 0.0
    for bins in (4, 10):
        table = fit_feature_importance(FI_VALUES, FI_LABELS, 3, bins=bins)
        edges = np.quantile(FI_VALUES, np.arange(1, bins) / bins)
        assert np.allclose(equal_frequency_edges(FI_VALUES, bins), edges, atol=1e-15)
        ref = contingency_information_gain(FI_VALUES, FI_LABELS, edges)
        worst = max(worst, abs(float(table.importance[0]) - ref))
    record(5, "prior formulas", ok_proto and ok_token and worst <= 1e-12,
           f"w_proto {w.weight:.12f} (e^0.75 = {math.exp(0.75):.12f}), w_token(0) {float(shape_token_weight(0.0)):g}, "
           f"FI vs contingency oracle max |diff| {worst:.1e}")


@pytest.mark.slow
def test_6_basicmotions():
    train_path, test_path = DATA / "BasicMotions_TRAIN.ts", DATA / "BasicMotions_TEST.ts"
    t0 = time.perf_counter()
    results = {}
    if train_path.exists() and test_path.exists():
        full, test, floor = parse_ts(train_path), parse_ts(test_path), 0.90
        source = "BasicMotions"
    else:
        full, test, floor = gen_synthetic("mixed", 40, 4, 100, 4, seed=0), gen_synthetic("mixed", 40, 4, 100, 4, seed=1), 0.95
        source = "synthetic mixed substitute"
    for k, M in itertools.product((3, 6), (5, 10)):
        cfg = TrainConfig(k=k, M=M)
        tr, val = split_train_val(full, cfg.val_fraction, cfg.seed)
        results[k, M] = train(cfg, tr, val, test)[1].accuracy
    elapsed = time.perf_counter() - t0
    accs = ", ".join(f"k={k} M={M}: {a:.3f}" for (k, M), a in results.items())
    record(6, f"{source} reproduction", min(results.values()) >= floor and elapsed <= 1800,
           f"test accuracy {accs} (floor {floor}), {elapsed / 60:.1f} min")


def _synthetic_run(kind, C, seed, mode="full", per_class=40):
    train_set = gen_synthetic(kind, per_class, 2, 64, C, seed=seed)
    test_set = gen_synthetic(kind, per_class, 2, 64, C, seed=seed + 1000)
    cfg = TrainConfig(seed=seed, mode=mode)
    tr, val = split_train_val(train_set, cfg.val_fraction, cfg.seed)
    return train(cfg, tr, val, test_set)[1]


@pytest.mark.slow
def test_7_lambda_direction():
    details, ok = [], True
    for kind in ("value", "shape"):
        t0 = time.perf_counter()
        rep = _synthetic_run(kind, 2, seed=0)
        elapsed = time.perf_counter() - t0
        weight = 1 - rep.mean_lambda if kind == "value" else rep.mean_lambda
        label = "1-lambda" if kind == "value" else "lambda"
        ok &= weight > 0.5 and elapsed <= 600
        details.append(f"{kind}: mean {label} {weight:.3f}, acc {rep.accuracy:.3f}, {elapsed:.0f}s")
    record(7, "lambda direction", ok, "; ".join(details))


@pytest.mark.slow
def test_8_ablation_direction():
    seeds = (0, 1, 2)
    means = {}
    for mode in ("full", "shape-only", "value-only"):
        means[mode] = float(np.mean([_synthetic_run("mixed", 4, s, mode, per_class=20).accuracy for s in seeds]))
    ok = means["full"] >= means["shape-only"] and means["full"] >= means["value-only"]
    record(8, "ablation direction", ok,
           "mean accuracy over seeds 0-2: " + ", ".join(f"{m} {a:.3f}" for m, a in means.items()))


def test_9_determinism_and_persistence(tmp_path):
    full = gen_synthetic("mixed", 16, 2, 48, 2, seed=9)
    test = gen_synthetic("mixed", 8, 2, 48, 2, seed=10)
    cfg = TrainConfig(k=2, M=3, epochs=8, patience=8, dropout=0.1, seed=9)
    tr, val = split_train_val(full, cfg.val_fraction, cfg.seed)
    cp_a, rep_a = train(cfg, tr, val, test)
    cp_b, rep_b = train(cfg, tr, val, test)
    same_metrics = rep_a.to_dict() == rep_b.to_dict()
    same_state = all(np.array_equal(cp_a.state[n], cp_b.state[n]) for n in cp_a.state)
    path = tmp_path / "model.ckpt"
    save_checkpoint(cp_a, path)
    loaded = load_checkpoint(path)
    a = predict(cp_a.build_model(), cp_a.tokenizer.encode(test))
    b = predict(loaded.build_model(), loaded.tokenizer.encode(test))
    exact = all(np.array_equal(x, y) for x, y in zip(a[:2], b[:2])) and all(
        np.array_equal(a[2][k], b[2][k]) for k in a[2])
    record(9, "determinism and persistence", same_metrics and same_state and exact,
           f"identical metrics: {same_metrics}, identical parameters: {same_state}, "
           f"checkpoint predictions bit-identical: {exact}")
