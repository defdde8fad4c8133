"""The eight acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict (printed at the end of the session by
``conftest.py``) before asserting.  Criteria 5, 6 and 8 run the complete
default pipeline: one run in process, timed, and a second through the
``sdvad run-all`` command in a fresh interpreter.
"""

import hashlib
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from sdvad import pipeline
from sdvad.config import EngineConfig
from sdvad.errors import FormatError
from sdvad.metrics import border_precision, boundary_accuracy, frame_scores, jvad
from sdvad.nnet import grad_check, init_lstm, init_mlp, load_model, save_model
from sdvad.segmenter import to_segments
from sdvad.serialize import encode
from sdvad.speaker import (
    BwStats, GmmUbm, IVector, bw_stats, length_normalize, train_plda, train_tv, train_ubm,
)
from sdvad.stream import SdvadStream, decode_offline, decode_stream

from oracles import count_oracle, emission_delays, matching_oracle, random_labels


def uniform_params(model, rng, scale):
    m = model.copy()
    m.params = {k: rng.uniform(-scale, scale, v.shape) for k, v in m.params.items()}
    return m


# 1 -------------------------------------------------------------------------------------

def test_gradient_correctness(verdict):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = {"mlp": 0.0, "lstm": 0.0}
    for k in range(20):
        dim = int(rng.integers(2, 6))
        hidden = tuple(int(h) for h in rng.integers(2, 6, int(rng.integers(1, 3))))
        m = uniform_params(init_mlp(dim, hidden, seed=k), rng, 1.0)
        batch = [(rng.standard_normal((T, dim)), rng.integers(0, 2, T)) for T in rng.integers(1, 7, 2)]
        worst["mlp"] = max(worst["mlp"], grad_check(m, batch, eps=1e-5))
    for k in range(20):
        dim, hidden, layers = int(rng.integers(2, 5)), int(rng.integers(2, 5)), 1 + k % 2
        m = uniform_params(init_lstm(dim, hidden, layers, seed=k), rng, 1.0)
        batch = [(rng.standard_normal((T, dim)), rng.integers(0, 2, T)) for T in rng.integers(1, 7, 2)]
        worst["lstm"] = max(worst["lstm"], grad_check(m, batch, eps=1e-5))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 120
    verdict(1, "gradient correctness", ok,
            f"max rel err MLP {worst['mlp']:.2e}, LSTM {worst['lstm']:.2e} (< 1e-4); {elapsed:.1f} s (< 120 s)")
    assert ok


# 2 -------------------------------------------------------------------------------------

def gmm_data(rng):
    C, F = int(rng.integers(2, 6)), int(rng.integers(2, 5))
    centers = rng.standard_normal((C, F)) * 3
    comp = rng.integers(0, C, int(rng.integers(500, 1500)))
    return centers[comp] + rng.standard_normal((len(comp), F)) * rng.uniform(0.3, 1.5, (C, F))[comp]


def factor_data(rng):
    C, F, d = int(rng.integers(2, 5)), int(rng.integers(2, 4)), int(rng.integers(1, 4))
    T_true = rng.standard_normal((C, F, d))
    stats = []
    for _ in range(int(rng.integers(30, 60))):
        N = rng.uniform(2, 40, C)
        w = rng.standard_normal(d)
        stats.append(BwStats(N, N[:, None] * (T_true @ w) + np.sqrt(N)[:, None] * rng.standard_normal((C, F))))
    ubm = GmmUbm(np.full(C, 1 / C), np.zeros((C, F)), np.ones((C, F)))
    return stats, ubm, d


def test_em_monotonicity(verdict):
    rng = np.random.default_rng(202)
    drops = {"ubm": 0.0, "tv": 0.0}
    for k in range(10):
        hist = []
        train_ubm([gmm_data(rng)], C=int(rng.integers(2, 8)), iters=20, seed=k, history=hist)
        drops["ubm"] = max(drops["ubm"], max(a - b for a, b in zip(hist, hist[1:])))
        stats, ubm, d = factor_data(rng)
        hist = []
        train_tv(stats, ubm, d=d, iters=20, seed=k, history=hist)
        drops["tv"] = max(drops["tv"], max(a - b for a, b in zip(hist, hist[1:])))
    ok = max(drops.values()) <= 1e-8
    verdict(2, "EM monotonicity", ok,
            f"largest decrease UBM {drops['ubm']:.2e}, TV {drops['tv']:.2e} over 10 x 20 iterations (slack 1e-8)")
    assert ok


# 3 -------------------------------------------------------------------------------------

def test_metric_oracles(verdict):
    rng = np.random.default_rng(303)
    worst, checked = 0.0, 0
    while checked < 1000:
        T = int(rng.integers(1, 70))
        ref, hyp = random_labels(rng, T), random_labels(rng, T)
        rs, hs = to_segments(ref), to_segments(hyp)
        if len(rs) > 5 or len(hs) > 5:
            continue  # keeps the exhaustive matching oracle cheap
        checked += 1
        tp, fp, tn, fn = count_oracle(ref, hyp)
        fs = frame_scores(ref, hyp)
        assert (fs.tp, fs.fp, fs.tn, fs.fn) == (tp, fp, tn, fn)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        acc = (tp + tn) / T
        sba = matching_oracle([s for s, _ in rs], [s for s, _ in hs], 10) / len(rs) if rs else 1.0
        eba = matching_oracle([e for _, e in rs], [e for _, e in hs], 10) / len(rs) if rs else 1.0
        bp = 1.0 if not rs and not hs else min(len(rs), len(hs)) / max(len(rs), len(hs))
        parts = [sba, eba, bp, acc]
        jv = 0.0 if min(parts) <= 0 else 4 / sum(1 / v for v in parts)
        rep = jvad(ref, hyp, 10)
        pairs = [(fs.acc, acc), (fs.f1, f1), (boundary_accuracy(rs, hs, 10, "start"), sba),
                 (boundary_accuracy(rs, hs, 10, "end"), eba), (border_precision(rs, hs), bp),
                 (rep.sba, sba), (rep.eba, eba), (rep.bp, bp), (rep.acc, acc), (rep.jvad, jv)]
        worst = max(worst, max(abs(a - b) for a, b in pairs))
    ref = np.zeros(60, dtype=int)
    ref[10:50] = 1
    hyp = np.zeros(60, dtype=int)
    hyp[10:25] = 1
    hyp[30:50] = 1
    example = jvad(ref, hyp, 2).jvad
    ok = worst <= 1e-12 and abs(example - 0.7857) < 5e-5
    verdict(3, "metric oracles", ok,
            f"{checked} instances, max |diff| {worst:.1e} (<= 1e-12); worked example J_VAD {example:.4f}")
    assert ok


# 4 -------------------------------------------------------------------------------------

def random_model(rng, kind, bin_n):
    if kind == "lstm":
        m = init_lstm(7, 5, int(rng.integers(1, 3)), seed=int(rng.integers(1 << 30)), bin_n=bin_n)
    else:
        m = init_mlp(4 * 5 + 3, (6,), seed=int(rng.integers(1 << 30)), bin_n=bin_n, context=2)
    return uniform_params(m, rng, 1.5)


def test_streaming_equivalence(verdict):
    rng = np.random.default_rng(404)
    mismatches, latencies, cases = 0, {}, 0
    for n in (1, 4):
        for W in (1, 10):
            expected = (n - 1) + W // 2
            for u in range(50):
                model = random_model(rng, "lstm" if u % 5 else "mlp", n)
                feats = rng.standard_normal((int(rng.integers(1, 300)), 4))
                emb = rng.standard_normal(3)
                offline, _ = decode_offline(model, feats, emb, 0.5, W)
                online = decode_stream(model, feats, emb, theta=0.5, W=W)
                mismatches += int(online.tobytes() != offline.tobytes())
                cases += 1
            model = random_model(rng, "lstm", n)
            stream = SdvadStream(model, np.zeros(3), W=W)
            measured = max(emission_delays(stream, rng.standard_normal((60, 4))))
            latencies[(n, W)] = (stream.latency, measured, expected)
    ok = mismatches == 0 and all(r == m == e for r, m, e in latencies.values())
    lat = ", ".join(f"n={n} W={W}: {r}" for (n, W), (r, _, _) in latencies.items())
    verdict(4, "streaming/batch equivalence", ok,
            f"{cases - mismatches}/{cases} utterances bit-identical; reported = measured latency ({lat})")
    assert ok


# 5, 6, 8 -------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("full_a")
    start = time.perf_counter()
    report = pipeline.run_all(EngineConfig(workdir=str(root)))
    elapsed = time.perf_counter() - start
    return root, {row["system"]: row for row in report["comparison"]}, elapsed


def test_trend_reproduction(full_run, verdict):
    _, rows, elapsed = full_run
    raw, binned, post = rows["sdvad"], rows["sdvad_bin"], rows["sdvad_bin_post"]
    base = rows["lstm_vad_sv"]
    checks = {
        "a": raw["acc"] >= 0.80,
        "b": binned["acc"] >= raw["acc"] - 0.01 and binned["f1"] >= base["f1"],
        "c": post["acc"] >= binned["acc"] - 0.01,
        "time": elapsed < 900,
    }
    ok = all(checks.values())
    flag = {k: "ok" if v else "FAIL" for k, v in checks.items()}
    verdict(5, "trend reproduction", ok,
            f"(a) SDVAD ACC {raw['acc']:.4f} >= 0.80 {flag['a']}; "
            f"(b) binned ACC {binned['acc']:.4f} vs {raw['acc'] - 0.01:.4f}, "
            f"binned F1 {binned['f1']:.4f} vs VAD/SV F1 {base['f1']:.4f} {flag['b']}; "
            f"(c) post ACC {post['acc']:.4f} vs {binned['acc'] - 0.01:.4f} {flag['c']} "
            f"[raw model: {rows['sdvad_post']['acc']:.4f} vs {raw['acc']:.4f}]; "
            f"runtime {elapsed:.0f} s < 900 s {flag['time']}")
    assert ok


def test_fragmentation_trend(full_run, verdict):
    _, rows, _ = full_run
    raw, binned = rows["sdvad"]["bp"], rows["sdvad_bin"]["bp"]
    ok = binned > raw
    verdict(6, "fragmentation trend", ok, f"BP binned {binned:.4f} > raw {raw:.4f}")
    assert ok


def tree_digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


EXPECTED_MODELS = {f"models/{n}.sdvd" for n in
                   ("ubm", "tv", "plda", "vad-lstm-b1", "sdvad-lstm-b1", "sdvad-lstm-b4")}


def test_determinism(full_run, tmp_path, verdict):
    first, _, _ = full_run
    second = tmp_path / "full_b"
    proc = subprocess.run([sys.executable, "-m", "sdvad.cli", "run-all", "--workdir", str(second)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    a, b = tree_digest(first), tree_digest(second)
    models = [k for k in a if k.startswith("models/") and k.endswith(".sdvd")]
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = not differing and "hyp/report.test.json" in a and set(models) == EXPECTED_MODELS
    verdict(8, "determinism", ok,
            f"{len(a)} files compared across two runs ({len(models)} model files, JSON reports); "
            f"{len(differing)} differ" + (f": {differing[:5]}" if differing else ""))
    assert ok


# 7 -------------------------------------------------------------------------------------

def five_models():
    rng = np.random.default_rng(707)
    X = rng.standard_normal((400, 3))
    ubm = train_ubm([X], C=4, iters=3, seed=0).rounded()
    stats = [bw_stats(rng.standard_normal((50, 3)) + rng.standard_normal(3), ubm) for _ in range(12)]
    tv = train_tv(stats, ubm, d=2, iters=2, seed=0).rounded()
    ivecs = [length_normalize(IVector(rng.standard_normal(4))) for _ in range(12)]
    plda = train_plda(ivecs, [f"s{k % 4}" for k in range(12)]).rounded()
    mlp = init_mlp(5, (4, 3), seed=1, bin_n=4, context=2)
    mlp.fit_normalizer(rng.standard_normal((10, 5)))
    lstm = init_lstm(5, 3, 2, seed=2, bin_n=2)
    lstm.fit_normalizer(rng.standard_normal((10, 5)))
    return {"ubm": ubm, "tv": tv, "plda": plda, "mlp": mlp.rounded(), "lstm": lstm.rounded()}


def test_serialization(tmp_path, verdict):
    exact, rejected, attempts = 0, 0, 0
    for kind, model in five_models().items():
        path = tmp_path / f"{kind}.sdvd"
        save_model(model, path)
        back = load_model(path)
        want, got = model.to_tensors(), back.to_tensors()
        exact += int(type(back) is type(model) and want.keys() == got.keys()
                     and all(want[k].tobytes() == got[k].tobytes() for k in want))
        data = path.read_bytes()
        corrupt = [data[:cut] for cut in (3, 12, len(data) // 2, len(data) - 1)]
        corrupt += [b"XXXX" + data[4:], data[:4] + b"\x09" + data[5:], data + b"\x00"]
        for blob in corrupt:
            attempts += 1
            path.write_bytes(blob)
            try:
                load_model(path)
            except FormatError:
                rejected += 1
    tensors = {"mlp.W": np.zeros((2, 2)), "lstm.W": np.zeros((2, 2))}
    (tmp_path / "mixed.sdvd").write_bytes(encode(tensors))
    attempts += 1
    with pytest.raises(FormatError):
        load_model(tmp_path / "mixed.sdvd")
    rejected += 1
    ok = exact == 5 and rejected == attempts
    verdict(7, "serialization", ok,
            f"{exact}/5 kinds round-trip bit-exact; {rejected}/{attempts} corrupted files raised FormatError")
    assert ok
