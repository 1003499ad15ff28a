"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the pytest terminal summary (see conftest.py).
Criteria 5, 6 and 8 train every model for 100 epochs on the default
synthetic data and are marked ``slow``; the seed-0 comparison is shared
between them.
"""

import time

import numpy as np
import pytest

import oracles
from gradcheck import max_relative_error
from netload.cli import main as cli_main
from netload.dataset import build_dataset, make_windows, split_chronological, split_counts
from netload.metrics import ape_stats, metric_report, mape, r2_score
from netload.pipeline import (MethodSpec, build_direct, build_indirect, compare_methods,
                              findings, findings_text, run_indirect, sensitivity_lookahead)
from netload.synthgen import SynthConfig, generate_series

RESULTS: dict[int, tuple[bool, str]] = {}
TITLES = {
    1: "gradient correctness",
    2: "metric oracle equivalence",
    3: "decomposition identity",
    4: "windowing/split exactness",
    5: "end-to-end synthetic quality",
    6: "qualitative finding reproduction",
    7: "determinism",
    8: "training health",
}
SEEDS = (0, 1, 2)
HORIZONS = (1, 2, 4)
COMPARE_BUDGET_S = 40 * 60


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)
    print(f"criterion {n} ({TITLES[n]}): {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


# shared heavy runs


_frames: dict[int, object] = {}
_comparisons: dict[int, tuple[object, float]] = {}
_sensitivity: dict[int, list] = {}


def default_frame(seed):
    if seed not in _frames:
        _frames[seed] = generate_series(SynthConfig(seed=seed))
    return _frames[seed]


def comparison(seed):
    """Default four-way comparison for ``seed`` and its wall time in seconds."""
    if seed not in _comparisons:
        t0 = time.perf_counter()
        comp = compare_methods(default_frame(seed), MethodSpec(seed=seed))
        _comparisons[seed] = (comp, time.perf_counter() - t0)
    return _comparisons[seed]


def sensitivity(seed):
    # the horizon sweep uses the direct FCNN; see README for the choice
    if seed not in _sensitivity:
        spec = MethodSpec(model_kind="fcnn", method="direct", seed=seed)
        _sensitivity[seed] = sensitivity_lookahead(default_frame(seed), spec, HORIZONS)
    return _sensitivity[seed]


# criteria


def test_criterion_1_gradient_correctness():
    t0 = time.perf_counter()
    worst = {}
    for kind in ("fcnn", "lstm"):
        errs = [max_relative_error(kind, seed) for seed in range(25)]
        worst[kind] = max(errs)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    record(1, ok, f"25 configs each, worst rel err fcnn {worst['fcnn']:.2e} "
                  f"lstm {worst['lstm']:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)")


def test_criterion_2_metric_oracle_equivalence():
    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(10_000 + seed)
        n = int(r.integers(2, 60))
        y = r.uniform(1, 5000, n) * r.choice([-1, 1], n)
        yhat = y + r.normal(0, 200, n)
        rep = metric_report(y, yhat)
        st = ape_stats(y, yhat)
        ref = oracles.ape_stats(list(y), list(yhat))
        pairs = [(rep.mape, oracles.mape(y, yhat)), (rep.rmspe, oracles.rmspe(y, yhat)),
                 (rep.r2, oracles.r2(list(y), list(yhat))), (rep.mae, oracles.mae(y, yhat)),
                 (rep.mse, oracles.mse(y, yhat))] + [(getattr(st, k), ref[k]) for k in ref]
        for got, want in pairs:
            worst = max(worst, abs(got - want) / max(abs(got), abs(want), 1e-300))
    hand_mape = mape([100, 200], [110, 180])
    hand_r2 = r2_score([1, 2, 3], [1.5, 2, 2.5])
    ok = (worst <= 1e-12 and abs(hand_mape - 10.0) <= 1e-12 * 10
          and abs(hand_r2 - 0.75) <= 1e-12)
    record(2, ok, f"100 random vectors, worst rel diff {worst:.1e} (<= 1e-12); "
                  f"hand MAPE {hand_mape!r}, hand R2 {hand_r2!r}")


def test_criterion_3_decomposition_identity():
    frame = default_frame(0)
    spec = MethodSpec()
    rep = run_indirect(build_indirect(frame, spec), spec,
                       predict_fn=lambda ds, s, seed: (ds.actual("test").copy(), None))
    truth = build_direct(frame, spec).actual("test")
    ulp = np.spacing(np.abs(truth)).max()
    ok = (rep.metrics.mape == 0.0 and np.array_equal(rep.predicted, rep.actual)
          and np.abs(rep.actual - truth).max() <= 2 * ulp)
    record(3, ok, f"combined MAPE {rep.metrics.mape}, max |combined - net| "
                  f"{np.abs(rep.actual - truth).max():.1e} MW over {len(truth)} test hours")


def test_criterion_4_windowing_split_exactness():
    frame = default_frame(0)
    n30 = make_windows(frame.iloc[:30], 24, 1).n_samples
    counts = split_counts(1000)
    ds = split_chronological(make_windows(frame.iloc[:1024], 24, 1))
    stamps = [ds.target_timestamps(s) for s in ("train", "val", "test")]
    chrono = all(np.all(np.diff(t) > np.timedelta64(0, "h")) for t in stamps) and \
        stamps[0].max() < stamps[1].min() and stamps[1].max() < stamps[2].min()
    leak_free = all(
        ds.starts[ds.split_slice(a)][-1] + ds.look_back - 1 < ds.target_rows[ds.split_slice(b)][0]
        for a, b in (("train", "val"), ("val", "test")))
    full = build_dataset(frame)
    norm_ok = bool(np.all(full.arrays("train")[0] >= 0) and np.all(full.arrays("train")[0] <= 1))
    ok = n30 == 6 and counts == (900, 50, 50) and ds.bounds == (900, 50, 50) and chrono \
        and leak_free and norm_ok
    record(4, ok, f"N=30 -> {n30} samples; n=1000 -> {counts}; chronological {chrono}; "
                  f"leak-free {leak_free}; train-only scaling {norm_ok}")


@pytest.mark.slow
def test_criterion_5_end_to_end_quality():
    comp, wall = comparison(0)
    rows = comp.summary()
    ok = all(r["r2"] >= 0.90 and r["mape"] <= 10.0 for r in rows) and wall <= COMPARE_BUDGET_S
    detail = "; ".join(f"{r['method']} R2 {r['r2']:.3f} MAPE {r['mape']:.2f}%" for r in rows)
    record(5, ok, f"{detail}; wall {wall / 60:.1f} min (<= 40)")


@pytest.mark.slow
def test_criterion_6_qualitative_findings(tmp_path_factory):
    comps = [comparison(s)[0] for s in SEEDS]
    sens = [sensitivity(s) for s in SEEDS]
    result = findings(comps, sens)
    text = findings_text(result)
    report = tmp_path_factory.mktemp("findings") / "findings.txt"
    report.write_text(text)
    print(text)
    a, b = result["lstm_indirect_best"], result["lookahead_trend"]
    # (a) is reported, not gated; (b) must hold by majority
    record(6, b["holds"],
           f"(a) LSTM-Indirect lowest median APE in {a['votes']}/{a['runs']} seeds "
           f"[{'FINDING-MATCH' if a['holds'] else 'FINDING-MISMATCH'}, winners "
           f"{', '.join(a['winners'])}]; (b) MAPE non-decreasing over horizons "
           f"{list(HORIZONS)} in {b['votes']}/{b['runs']} seeds, MAPE by seed "
           f"{[[round(v, 3) for v in m] for m in b['mape_by_run']]}")


def test_criterion_7_determinism(tmp_path):
    data = tmp_path / "gen"
    common = ["--fixed-metadata", "--set", "model.hidden=6,6", "--epochs", "2"]
    runs = {
        "generate": (["generate", "--n-years", "1", "--fixed-metadata"], ["data.csv", "stats.json"]),
        "train": (["train", "--data", str(data / "data.csv"), *common],
                  ["loss.csv", "model.ckpt", "model_best.ckpt"]),
        "compare": (["compare", "--data", str(data / "data.csv"), *common],
                    ["summary.csv", "table_fcnn.csv", "table_lstm.csv", "trace_first300.csv",
                     "traces/LSTM-Indirect.csv", "loss/FCNN-Indirect_wind_gen.csv"]),
        "sensitivity": (["sensitivity", "--data", str(data / "data.csv"), "--model", "fcnn",
                         *common], ["sensitivity.csv"]),
    }
    assert cli_main(runs["generate"][0] + ["--out", str(data)]) == 0
    mismatched = []
    compared = 0
    for name, (args, files) in runs.items():
        outs = []
        for k in range(2):
            out = tmp_path / f"{name}{k}"
            assert cli_main(args + ["--out", str(out)]) == 0
            outs.append(out)
        if name == "train":
            for k, out in enumerate(outs):
                ev = tmp_path / f"evaluate{k}"
                assert cli_main(["evaluate", "--data", str(data / "data.csv"), "--checkpoint",
                                 str(out / "model.ckpt"), "--out", str(ev)]) == 0
            outs_ev = [tmp_path / "evaluate0", tmp_path / "evaluate1"]
            for f in ("trace.csv", "metrics.json"):
                compared += 1
                if (outs_ev[0] / f).read_bytes() != (outs_ev[1] / f).read_bytes():
                    mismatched.append(f"evaluate/{f}")
        for f in files:
            compared += 1
            if (outs[0] / f).read_bytes() != (outs[1] / f).read_bytes():
                mismatched.append(f"{name}/{f}")
    record(7, not mismatched, f"{compared} outputs from generate/train/evaluate/compare/"
                              f"sensitivity reruns byte-identical; mismatches: {mismatched or 'none'}")


@pytest.mark.slow
def test_criterion_8_training_health():
    comp, _ = comparison(0)
    lines = []
    ok = True
    for rep in comp.reports:
        for target, tr in rep.train_reports.items():
            ratio = tr.train_loss[-1] / tr.train_loss[0]
            best = int(np.argmin(tr.val_mae)) + 1
            good = tr.epochs == 100 and ratio <= 0.20 and best >= 10
            ok &= good
            lines.append(f"{rep.name}/{target} loss ratio {ratio:.3f} min val MAE @ {best}")
    record(8, ok, "; ".join(lines))
