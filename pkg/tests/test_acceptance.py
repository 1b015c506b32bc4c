"""Acceptance criteria, one test each.

Each test carries an ``acceptance`` marker; conftest prints one PASS/FAIL
line per criterion at the end of the run.
"""

import os
import time
from collections import Counter

import numpy as np
import pytest

from helpers import canonical_file, exact_lerp, float_payload, malformed_corpus, random_arrays, ulps
from mergelab.cli import main
from mergelab.evaluation import INTENSITY_ALPHAS
from mergelab.experiment import Recipe, run_experiment
from mergelab.merge import MergePolicy, SweepSpec, check_compatibility, merge_pair, merge_soup, sweep
from mergelab.tensor_store import Checkpoint, parse_checkpoint, save_checkpoint, write_checkpoint

SEEDS = (1, 2, 3, 4, 5)


def _random_float_pair(rng):
    a, b = {}, {}
    for i in range(rng.integers(1, 4)):
        dtype = np.float32 if rng.random() < 0.5 else np.float64
        shape = tuple(rng.integers(1, 4, size=rng.integers(0, 3)))
        scale = 10.0 ** rng.uniform(-3, 4)
        xa = rng.standard_normal(shape) * scale
        if rng.random() < 0.3:  # nearly equal bases: the cancellation-heavy case
            xb = xa * (1 + 1e-6 * rng.standard_normal(shape))
        else:
            xb = rng.standard_normal(shape) * scale * 10.0 ** rng.uniform(-2, 2)
        a[f"t{i}"], b[f"t{i}"] = xa.astype(dtype), xb.astype(dtype)
    return Checkpoint.from_arrays(a), Checkpoint.from_arrays(b)


def _within_1ulp(x: Checkpoint, y: Checkpoint) -> bool:
    return all(np.all(ulps(x.array(n), y.array(n), x.array(n).dtype) <= 1.0) for n in x)


@pytest.mark.acceptance(1, "merge algebra property suite")
def test_merge_algebra(record_property):
    rng = np.random.default_rng(20240917)
    cases = 1000
    failures = Counter()
    start = time.perf_counter()
    for _ in range(cases):
        a, b = _random_float_pair(rng)
        alpha = float(rng.random())  # multiple of 2**-53, so 1 - alpha is exact
        if float_payload(merge_pair(a, b, MergePolicy(0.0))) != float_payload(a):
            failures["endpoint 0"] += 1
        if float_payload(merge_pair(a, b, MergePolicy(1.0))) != float_payload(b):
            failures["endpoint 1"] += 1
        if float_payload(merge_pair(a, a, MergePolicy(alpha))) != float_payload(a):
            failures["idempotence"] += 1
        merged = merge_pair(a, b, MergePolicy(alpha))
        if not _within_1ulp(merged, merge_pair(b, a, MergePolicy(1.0 - alpha))):
            failures["symmetry"] += 1
        for name in a:
            xa, xb = a.array(name).ravel(), b.array(name).ravel()
            oracle = np.array([exact_lerp(float(p), float(q), alpha) for p, q in zip(xa, xb)]).astype(xa.dtype)
            if not np.all(ulps(merged.array(name).ravel(), oracle, xa.dtype) <= 1.0):
                failures["oracle"] += 1
        if not _within_1ulp(merge_soup([a, b]), merge_pair(a, b, MergePolicy(0.5))):
            failures["soup k=2"] += 1
    elapsed = time.perf_counter() - start
    record_property("detail", f"{cases} cases, {sum(failures.values())} failures, {elapsed:.2f} s")
    assert not failures, dict(failures)
    assert elapsed < 1.0, f"took {elapsed:.2f} s"


@pytest.mark.acceptance(2, "format round trip and malformed-header corpus")
def test_format_round_trip(record_property):
    rng = np.random.default_rng(7)
    blobs = [canonical_file(random_arrays(rng, int(rng.integers(0, 12))), {"case": str(i)}) for i in range(200)]
    corpus = malformed_corpus()
    start = time.perf_counter()
    mismatched = sum(write_checkpoint(parse_checkpoint(blob)) != blob for blob in blobs)
    wrong = []
    for label, blob, error in corpus:
        try:
            parse_checkpoint(blob)
            wrong.append(f"{label}: accepted")
        except error:
            pass
        except Exception as exc:  # noqa: BLE001 - any other error type is a failure
            wrong.append(f"{label}: {type(exc).__name__}")
    elapsed = time.perf_counter() - start
    record_property("detail", f"{len(blobs)} round trips, {len(corpus)} malformed cases, {elapsed:.2f} s")
    assert mismatched == 0, f"{mismatched} round trips differ"
    assert not wrong, wrong
    assert elapsed < 1.0, f"took {elapsed:.2f} s"


@pytest.mark.acceptance(3, "sweep cardinality")
def test_sweep_cardinality(record_property):
    a = Checkpoint.from_arrays({"w": np.zeros(3)})
    b = Checkpoint.from_arrays({"w": np.ones(3)})
    tenths = list(sweep(a, b, SweepSpec.by_step(0.1)))
    quarters = list(sweep(a, b, SweepSpec.by_step(0.25)))
    record_property("detail", f"step 0.1 -> {len(tenths)}, step 0.25 -> {len(quarters)}")
    assert len(tenths) == 11
    assert len(quarters) == 5
    assert [t for t, _ in quarters] == [0.0, 0.25, 0.5, 0.75, 1.0]


@pytest.fixture(scope="module")
def experiments():
    """Full default-recipe experiment for every seed, with wall time."""
    results = {}
    for seed in SEEDS:
        start = time.perf_counter()
        result = run_experiment(Recipe(), seed, trials=50, sigma_frac=0.25)
        results[seed] = (result, time.perf_counter() - start)
    return results


@pytest.mark.acceptance(4, "similarity curves are smooth (seeds 1-5)")
def test_smoothness(experiments, record_property):
    problems, worst_violation, worst_jump = [], 0.0, 0.0
    for seed, (result, elapsed) in experiments.items():
        curve = result.curve
        worst_violation = max(worst_violation, curve.max_violation)
        worst_jump = max(worst_jump, curve.max_jump)
        if abs(curve.sim_to_a[0] - 1.0) > 1e-9 or abs(curve.sim_to_b[-1] - 1.0) > 1e-9:
            problems.append(f"seed {seed}: endpoint similarity {curve.sim_to_a[0]!r}, {curve.sim_to_b[-1]!r}")
        if curve.max_violation > 0.02:
            problems.append(f"seed {seed}: max_violation {curve.max_violation:.4f}")
        if curve.max_jump > 0.25:
            problems.append(f"seed {seed}: max_jump {curve.max_jump:.4f}")
        if elapsed > 60.0:
            problems.append(f"seed {seed}: {elapsed:.1f} s")
        if len(curve.points) != 11:
            problems.append(f"seed {seed}: {len(curve.points)} points")
    slowest = max(t for _, t in experiments.values())
    record_property(
        "detail", f"worst max_violation {worst_violation:.4f}, worst max_jump {worst_jump:.4f}, slowest seed {slowest:.1f} s"
    )
    assert not problems, problems


@pytest.mark.acceptance(5, "merged models keep content (seeds 1-5)")
def test_content_preservation(experiments, record_property):
    problems, worst_margin = [], -np.inf
    for seed, (result, _) in experiments.items():
        rates = dict(result.error_rates)
        base_a, base_b = rates[0.0], rates[1.0]
        if base_a > 0.1 or base_b > 0.1:
            problems.append(f"seed {seed}: invalid run, base error rates {base_a:.3f}, {base_b:.3f} above 0.1")
            continue
        bound = max(base_a, base_b) + 0.05
        worst_margin = max(worst_margin, max(rates.values()) - max(base_a, base_b))
        for alpha, rate in rates.items():
            if rate > bound:
                problems.append(f"seed {seed}: alpha {alpha:.1f} error rate {rate:.3f} > {bound:.3f}")
    record_property("detail", f"worst merge minus worst base {worst_margin:+.4f} (allowed +0.05)")
    assert not problems, problems


@pytest.mark.acceptance(6, "intensity ordering and average ranks (seeds 1-5)")
def test_intensity_ordering(experiments, record_property):
    problems = []
    for seed, (result, _) in experiments.items():
        estimates = np.asarray(result.intensity_estimates)
        if len(estimates) != len(INTENSITY_ALPHAS) or not np.all(np.diff(estimates) > 0):
            problems.append(f"seed {seed}: estimates not strictly increasing {estimates.round(4).tolist()}")
        ranks = result.ranks
        expected_sigma = 0.25 * (estimates[-1] - estimates[0])
        if ranks.trials != 50 or abs(ranks.noise_sigma - expected_sigma) > 1e-12:
            problems.append(f"seed {seed}: ranked with {ranks.trials} trials, sigma {ranks.noise_sigma}")
        if not np.all(np.diff(ranks.avg_rank) > 0):
            problems.append(f"seed {seed}: average ranks not strictly increasing {ranks.avg_rank.round(2).tolist()}")
        if abs(ranks.grand_mean - 3.0) > 1e-9:
            problems.append(f"seed {seed}: grand mean {ranks.grand_mean!r}")
    first = experiments[SEEDS[0]][0].ranks.avg_rank
    record_property("detail", f"seed {SEEDS[0]} average ranks " + ", ".join(f"{r:.2f}" for r in first))
    assert not problems, problems


@pytest.mark.acceptance(7, "demo and threaded sweeps are byte-deterministic")
def test_determinism(tmp_path, monkeypatch, capsys, record_property):
    for run in ("first", "second"):
        assert main(["demo", "--seed", "7", "--save-models", "-o", str(tmp_path / run)]) == 0
    names = ("secs_curve.csv", "content_error.csv", "intensity_rank.csv")
    differing = [n for n in names if (tmp_path / "first" / n).read_bytes() != (tmp_path / "second" / n).read_bytes()]

    models = tmp_path / "first" / "models"
    for threads in ("1", "8"):
        monkeypatch.setenv("MERGELAB_THREADS", threads)
        argv = ["sweep", str(models / "base_a.ckpt"), str(models / "base_b.ckpt"), "--steps", "0.1", "-o", str(tmp_path / f"sweep{threads}")]
        assert main(argv) == 0
    one = sorted((tmp_path / "sweep1").iterdir())
    eight = sorted((tmp_path / "sweep8").iterdir())
    sweep_diff = [p.name for p, q in zip(one, eight) if p.name != q.name or p.read_bytes() != q.read_bytes()]
    capsys.readouterr()
    record_property("detail", f"{len(names)} demo CSVs compared, {len(one)} sweep checkpoints compared")
    assert not differing, differing
    assert len(one) == len(eight) == 11
    assert not sweep_diff, sweep_diff


@pytest.mark.acceptance(8, "incompatibility and integer-tensor failure modes")
def test_failure_modes(tmp_path, capsys, record_property):
    base = Checkpoint.from_arrays({"w1": np.zeros((3, 4)), "w2": np.zeros(4, np.float32)})
    variants = {
        "missing": (Checkpoint.from_arrays({"w1": np.zeros((3, 4))}), lambda r: r.missing_in_b == ["w2"]),
        "shape": (
            Checkpoint.from_arrays({"w1": np.zeros((4, 3)), "w2": np.zeros(4, np.float32)}),
            lambda r: r.shape_conflicts == [("w1", (3, 4), (4, 3))],
        ),
        "dtype": (
            Checkpoint.from_arrays({"w1": np.zeros((3, 4)), "w2": np.zeros(4)}),
            lambda r: r.dtype_conflicts == [("w2", "F32", "F64")],
        ),
    }
    save_checkpoint(base, tmp_path / "base.ckpt")
    problems = []
    for label, (other, entry_ok) in variants.items():
        report = check_compatibility(base, other)
        if not entry_ok(report) or report.compatible:
            problems.append(f"{label}: report {report}")
        save_checkpoint(other, tmp_path / f"{label}.ckpt")
        code = main(["merge", str(tmp_path / "base.ckpt"), str(tmp_path / f"{label}.ckpt"), "--alpha", "0.5", "-o", str(tmp_path / "out.ckpt")])
        if code != 2:
            problems.append(f"{label}: exit code {code}")

    save_checkpoint(base.replace({"step_count": np.array([100], np.int64)}), tmp_path / "s100.ckpt")
    save_checkpoint(base.replace({"step_count": np.array([150], np.int64)}), tmp_path / "s150.ckpt")
    argv = ["merge", str(tmp_path / "s100.ckpt"), str(tmp_path / "s150.ckpt"), "--alpha", "0.5", "-o", str(tmp_path / "m.ckpt")]
    strict_code = main(argv)
    take_first_code = main(argv + ["--int-tensor", "take-first"])
    if strict_code != 2:
        problems.append(f"step_count require-equal: exit code {strict_code}")
    if take_first_code != 0:
        problems.append(f"step_count take-first: exit code {take_first_code}")
    elif os.path.exists(tmp_path / "m.ckpt"):
        from mergelab.tensor_store import load_checkpoint

        if load_checkpoint(tmp_path / "m.ckpt").array("step_count").tolist() != [100]:
            problems.append("step_count take-first did not keep the first model's value")
    capsys.readouterr()
    record_property("detail", "missing key, shape conflict, dtype conflict, step_count policies")
    assert not problems, problems
