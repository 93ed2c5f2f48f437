"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import json
import math
import statistics
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from compresskit.cli import main
from compresskit.evalkit import (
    average_precision,
    evaluate,
    load_labels,
    load_predictions,
    pr_curve,
)
from compresskit.lowrank import RankPolicy, full_svd, reconstruct, truncated_svd
from compresskit.microinfer import (
    LayerSpec,
    compile_network,
    conv2d_dense,
    conv2d_factored,
    run_steps,
    time_call,
)
from compresskit.pipeline import (
    CompressionConfig,
    SvdConfig,
    compress_conv,
    decompress_conv,
    factor_entries,
    load_factored,
    run_pipeline,
)
from compresskit.prune import prune_count, prune_store
from compresskit.weightstore import (
    Entry,
    WeightStore,
    decode_store,
    encode_store,
    load_store,
    save_store,
)
from conftest import FIXTURES, conv_store, random_store
from oracles import brute_force_map, prune_oracle, singular_values_via_gram

pytestmark = pytest.mark.acceptance


def verdict(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance {number}] {'PASS' if ok else 'FAIL'}: {title} ({detail})")
    assert ok, f"acceptance {number} failed: {detail}"


def test_1_eckart_young(capsys):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        m, n = int(rng.integers(4, 129)), int(rng.integers(4, 97))
        a = rng.standard_normal((m, n))
        s = full_svd(a).s.astype(np.float64)
        short = min(m, n)
        for k in sorted({1, short // 4, short // 2}):
            err = np.linalg.norm(a - reconstruct(truncated_svd(a, RankPolicy.fixed(k))))
            expect = math.sqrt(float(np.sum(s[k:] ** 2)))
            worst = max(worst, abs(err - expect) / expect)
    elapsed = time.perf_counter() - t0
    verdict(capsys, 1, "Eckart-Young on 200 matrices up to 128x96",
            worst <= 1e-4 and elapsed < 60, f"worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_2_svd_oracle_parity(capsys):
    rng = np.random.default_rng(202)
    mats = [rng.standard_normal((int(rng.integers(1, 65)), int(rng.integers(1, 65))))
            for _ in range(100)]
    t0 = time.perf_counter()
    ours = [full_svd(a).s.astype(np.float64) for a in mats]
    elapsed = time.perf_counter() - t0
    worst = 0.0
    for a, s in zip(mats, ours):
        ref = singular_values_via_gram(a)
        worst = max(worst, float(np.max(np.abs(s - ref) / np.maximum(ref, 1e-300))))
    verdict(capsys, 2, "full_svd vs Gram-matrix Jacobi eigenvalue oracle, 100 matrices up to 64x64",
            worst <= 1e-5 and elapsed < 30, f"worst rel err {worst:.2e}, svd time {elapsed:.2f}s")


def test_3_parameter_identity(capsys):
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    bad = []
    for trial in range(50):
        o, i, k = int(rng.integers(1, 65)), int(rng.integers(1, 33)), int(rng.choice([1, 3, 5]))
        r = int(rng.integers(1, min(o, i * k * k) + 1))
        store = conv_store([(o, i, k, k)], rng, biases=False)
        cfg = CompressionConfig(svd=SvdConfig(RankPolicy.fixed(r)), min_elements=0)
        out, rep = run_pipeline(store, cfg)
        layer = rep.layers[0]
        stored = decode_store(encode_store(out))
        counted = sum(stored.entry("conv0.weight" + s).numel for s in (".u", ".s", ".v"))
        ok = (layer.factored_params == r * (i * k * k + 1 + o) == counted
              and layer.orig_params == o * i * k * k)
        if not ok:
            bad.append((o, i, k, r))
    elapsed = time.perf_counter() - t0
    verdict(capsys, 3, "factored params = R(IK^2+1+O) = stored U,S,V elements; orig = OIK^2",
            not bad and elapsed < 5, f"{50 - len(bad)}/50 shapes exact, {elapsed:.2f}s")


def test_4_pruning_exactness(capsys):
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    failures = 0
    for trial in range(100):
        n = int(rng.integers(1, 2000))
        pool = rng.standard_normal(max(1, n // 4)).astype(np.float32)  # forces tied magnitudes
        t = (rng.choice(pool, n) * rng.choice([-1, 1], n)).astype(np.float32)
        store = WeightStore([Entry("w", t.reshape(1, 1, 1, n), "conv-weight")])
        out, rep = prune_store(store, 0.3, "per-tensor")
        got = out["w"].ravel()
        expect, z = prune_oracle(t.tolist(), 3, 10)
        pruned = np.array(sorted(range(n), key=lambda j: (abs(float(t[j])), j))[:z], dtype=int)
        kept = np.setdiff1d(np.arange(n), pruned)
        dominance = (not pruned.size or not kept.size
                     or np.abs(t[kept]).min() >= np.abs(t[pruned]).max())
        ok = (rep.zeroed == z == prune_count(0.3, n) == math.floor(3 * n / 10)
              and got.tobytes() == np.array(expect, np.float32).tobytes() and dominance)
        failures += not ok
    elapsed = time.perf_counter() - t0
    verdict(capsys, 4, "per-tensor prune 0.3 zeros floor(0.3N), survivors dominate pruned",
            failures == 0 and elapsed < 10, f"{100 - failures}/100 tensors exact, {elapsed:.2f}s")


def test_5_factored_conv_equivalence(capsys):
    rng = np.random.default_rng(505)
    t0 = time.perf_counter()
    worst_full = worst_trunc = 0.0
    for _ in range(100):
        o, i, k = int(rng.integers(1, 33)), int(rng.integers(1, 17)), int(rng.choice([1, 3, 5]))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, k // 2 + 1))
        h = w = int(rng.integers(k, 17))
        x = rng.standard_normal((i, h, w)).astype(np.float32)
        wt = rng.standard_normal((o, i, k, k)).astype(np.float32)
        bias = rng.standard_normal(o).astype(np.float32)
        dense = conv2d_dense(x, wt, bias, stride, pad)
        full = conv2d_factored(x, compress_conv(wt, RankPolicy.full()), bias, stride, pad)
        scale = max(1.0, float(np.abs(dense).max()))
        worst_full = max(worst_full, float(np.abs(full - dense).max()) / scale)
        r = int(rng.integers(1, min(o, i * k * k) + 1))
        f = compress_conv(wt, RankPolicy.fixed(r))
        ref = conv2d_dense(x, decompress_conv(f), bias, stride, pad)
        got = conv2d_factored(x, f, bias, stride, pad)
        scale = max(1.0, float(np.abs(ref).max()))
        worst_trunc = max(worst_trunc, float(np.abs(got - ref).max()) / scale)
    elapsed = time.perf_counter() - t0
    verdict(capsys, 5, "dense vs factored conv on 100 layers (full and truncated rank)",
            worst_full <= 1e-4 and worst_trunc <= 1e-4 and elapsed < 60,
            f"full-rank {worst_full:.1e}, truncated {worst_trunc:.1e}, {elapsed:.1f}s")


def test_6_flop_crossover(capsys):
    rng = np.random.default_rng(606)
    i, k, o, r = 64, 3, 256, 32
    w = (rng.standard_normal((o, i, k, k)) / math.sqrt(i * k * k)).astype(np.float32)
    f = compress_conv(w, RankPolicy.fixed(r))
    store = WeightStore([Entry("w", w, "conv-weight")] + factor_entries("f", f))
    shape = (i, 56, 56)
    dense = compile_network([LayerSpec("conv-dense", "w", pad=1)], store, shape)
    fact = compile_network([LayerSpec("conv-factored", "f", pad=1)], store, shape)
    x = rng.standard_normal(shape).astype(np.float32)
    # alternate the two paths run by run so background load hits both alike
    with threadpool_limits(limits=1):
        time_call(lambda: (run_steps(dense, x), run_steps(fact, x)), runs=0, warmup=3)
        times = {"dense": [], "fact": []}
        for _ in range(11):
            for key, steps in (("dense", dense), ("fact", fact)):
                times[key] += time_call(lambda: run_steps(steps, x), runs=1, warmup=0)
    t_dense = statistics.median(times["dense"])
    t_fact = statistics.median(times["fact"])
    flop_ratio = fact[0].flops / dense[0].flops
    speedup = t_dense / t_fact
    verdict(capsys, 6, "factored conv (IK^2=576, O=256, R=32) at least 2x faster, runs=11",
            speedup >= 2.0 and abs(flop_ratio - (576 * 32 + 32 * 256) / (576 * 256)) < 1e-12,
            f"dense {t_dense * 1e3:.2f} ms, factored {t_fact * 1e3:.2f} ms, "
            f"speedup {speedup:.2f}x, FLOP ratio {flop_ratio:.3f}")


def test_7_map_fixture(capsys):
    fx = FIXTURES / "map_fixture"
    t0 = time.perf_counter()
    gts, dets = load_labels(fx / "labels"), load_predictions(fx / "preds")
    ours = evaluate(dets, gts, 0.5).map
    oracle, _ = brute_force_map([(g.image_id, g.class_id, (g.box.cx, g.box.cy, g.box.w, g.box.h))
                                 for g in gts],
                                [(d.image_id, d.class_id, (d.box.cx, d.box.cy, d.box.w, d.box.h),
                                  d.confidence) for d in dets], 0.5)
    frozen = json.loads((fx / "expected.json").read_text())["map50"]
    perfect = average_precision(pr_curve([True] * 4, 4))
    empty = average_precision(pr_curve([], 4))
    elapsed = time.perf_counter() - t0
    ok = (abs(ours - oracle) <= 1e-9 and abs(ours - frozen) <= 1e-9
          and perfect == 1.0 and empty == 0.0 and elapsed < 1)
    verdict(capsys, 7, "10-image 3-class fixture mAP@50 equals brute-force oracle", ok,
            f"mAP {ours:.12f} vs oracle {oracle:.12f}, anchors {perfect}/{empty}, {elapsed:.3f}s")


def _sample_layers(rng, count=10):
    shapes = []
    while len(shapes) < count:
        o = int(rng.choice([32, 48, 64, 96, 128]))
        i = int(rng.choice([16, 24, 32, 64]))
        k = int(rng.choice([1, 3]))
        r = min(i * k * k, o) // 4
        if r >= 1 and r * (i * k * k + 1 + o) < o * i * k * k:
            shapes.append((o, i, k, k))
    return shapes


def test_8_end_to_end_size(tmp_path, capsys):
    rng = np.random.default_rng(808)
    shapes = _sample_layers(rng)
    r = min(min(i * k * k, o) // 4 for o, i, k, _ in shapes)
    save_store(conv_store(shapes, rng), tmp_path / "in.wstore")
    (tmp_path / "cfg.json").write_text(json.dumps({
        "prune": {"fraction": 0.3, "scope": "per-tensor"},
        "svd": {"policy": {"type": "fixed", "k": r}, "mode": "table1"},
        "store_factored": True,
    }))
    t0 = time.perf_counter()
    code = main(["compress", "--in", str(tmp_path / "in.wstore"), "--config", str(tmp_path / "cfg.json"),
                 "--out", str(tmp_path / "out.wstore"), "--report", str(tmp_path / "rep.json")])
    capsys.readouterr()
    code_i = main(["inspect", "--in", str(tmp_path / "out.wstore"), "--json"])
    info = json.loads(capsys.readouterr().out)
    elapsed = time.perf_counter() - t0
    report = json.loads((tmp_path / "rep.json").read_text())["totals"]
    size_in = (tmp_path / "in.wstore").stat().st_size
    size_out = (tmp_path / "out.wstore").stat().st_size
    totals = info["totals"]
    match = (totals["file_bytes"] == report["bytes_after"]
             and totals["params"] == report["store_params_after"]
             and totals["factored_params"] == report["factored_params"]
             and totals["factored_orig_params"] == report["factored_orig_params"]
             and len(info["factored"]) == report["factored_layers"] == 10)
    ratio = size_out / size_in
    verdict(capsys, 8, "prune(0.3)+SVD(fixed R) factored store at most half the input size",
            code == 0 and code_i == 0 and ratio <= 0.5 and match and elapsed < 30,
            f"R={r}, {size_in} -> {size_out} bytes ({ratio:.3f}x), inspect totals match: {match}, "
            f"{elapsed:.2f}s")


def test_9_round_trip_and_determinism(tmp_path, capsys):
    rng = np.random.default_rng(909)
    t0 = time.perf_counter()
    identical = 0
    for n in range(100):
        s = random_store(rng, int(rng.integers(0, 10)))
        path = tmp_path / f"s{n}.wstore"
        save_store(s, path)
        back = load_store(path)
        identical += back == s and encode_store(back) == path.read_bytes()
    save_store(conv_store(_sample_layers(rng, 4), rng), tmp_path / "in.wstore")
    (tmp_path / "cfg.json").write_text(json.dumps({
        "prune": {"fraction": 0.3}, "svd": {"policy": {"type": "energy", "fraction": 0.9}}}))
    outputs = []
    for run in range(3):
        out, rep = tmp_path / f"o{run}.wstore", tmp_path / f"r{run}.json"
        main(["compress", "--in", str(tmp_path / "in.wstore"), "--config", str(tmp_path / "cfg.json"),
              "--out", str(out), "--report", str(rep)])
        outputs.append((out.read_bytes(), rep.read_bytes()))
    capsys.readouterr()
    deterministic = all(o == outputs[0] for o in outputs)
    elapsed = time.perf_counter() - t0
    verdict(capsys, 9, "save/load bitwise identity and byte-identical repeated compress",
            identical == 100 and deterministic and elapsed < 30,
            f"{identical}/100 stores identical, compress deterministic: {deterministic}, {elapsed:.2f}s")
