"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line (collected
again in the terminal summary). Criteria 4, 5 and 8 run full experiments and
take several minutes."""
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from fedmup.cli import load_requests, main
from fedmup.dataset import NON_MALICIOUS, Dataset, SplitSpec, normalize, partition, split, synthesize
from fedmup.fed import (
    RoundConfig,
    aggregate,
    aggregation_weights,
    client_seed,
    prepare,
    read_results,
    run_experiment,
)
from fedmup.gate import Reason, Verdict, combine, score_requests
from fedmup.metrics import ConfusionMatrix, report
from fedmup.model import NetworkSpec, ParameterVector, gradient, init_params, loss, train_local
from fedmup.seeding import derive_seed
from fedmup.ube import (
    AccessRecord,
    AccessRequest,
    AuthorizationSet,
    SecurityThresholds,
    TimeWindow,
    UserHistory,
    assess,
    load_knowledge_base,
)
from oracles import metrics_reference, ube_reference

RESULTS: list[str] = []
RUNTIMES: dict[int, float] = {}
ARTIFACTS: dict[int, tuple[Path, Path]] = {}


@contextmanager
def criterion(number, title, budget):
    started = time.perf_counter()
    notes: list[str] = []
    try:
        yield notes
        elapsed = time.perf_counter() - started
        RUNTIMES[number] = elapsed
        assert elapsed < budget, f"took {elapsed:.1f}s, budget {budget:.0f}s"
    except BaseException as exc:
        line = f"criterion {number} FAIL {title}: {exc}".replace("\n", " ")
        RESULTS.append(line)
        print(line)
        raise
    line = f"criterion {number} PASS {title} ({elapsed:.2f}s{'; ' if notes else ''}{'; '.join(notes)})"
    RESULTS.append(line)
    print(line)


# --- 1 -----------------------------------------------------------------------

CATS = ("C1", "C2", "C3")
DATA = ("D1", "D2", "D3", "D4")


def random_fixture(rng):
    n = int(rng.integers(0, 9))
    times = np.sort(rng.integers(0, 30, n))
    records = [AccessRecord(str(rng.choice(DATA)), str(rng.choice(CATS)), int(t), bool(rng.integers(2)),
                            bool(rng.random() < 0.25)) for t in times]
    pairs = {(c, d) for c in CATS for d in DATA if rng.random() < 0.7}
    start = int(rng.integers(0, 30))
    end = int(rng.integers(start, 35))
    req = AccessRequest("u", str(rng.choice(DATA)), str(rng.choice(CATS)), int(rng.integers(30, 40)))
    grid = (0.0, 0.1, 0.25, 0.3, 0.5, 0.75, 1.0)
    thr = SecurityThresholds(float(rng.choice(grid)), float(rng.choice(grid)))
    return req, records, pairs, TimeWindow(start, end), thr


def test_criterion_1_ube_oracle():
    with criterion(1, "UBE assess equals exhaustive reference on 1000 fixtures", 5.0) as notes:
        rng = np.random.default_rng(2024)
        malicious = 0
        for _ in range(1000):
            req, records, pairs, window, thr = random_fixture(rng)
            a = assess(req, UserHistory("u", tuple(records)), AuthorizationSet(pairs), window, thr)
            flags, intent, _, _ = ube_reference(req, records, pairs, (window.start, window.end),
                                                thr.thr_attack, thr.thr_freq)
            assert a.flags == flags, (req, records, pairs, window, thr)
            assert int(a.intent) == intent
            malicious += intent
        notes.append(f"{malicious} malicious / {1000 - malicious} non-malicious")


# --- 2 -----------------------------------------------------------------------

def min_preactivation(params, spec, x):
    a = x
    closest = np.inf
    for w, b in params.layers(spec)[:-1]:
        z = a @ w + b
        closest = min(closest, float(np.abs(z).min()))
        a = np.maximum(z, 0.0)
    return closest


def random_net(rng):
    """He-initialized net with small random biases, 1 or 2 hidden layers of random width."""
    depth = int(rng.integers(1, 3))
    hidden = tuple(int(v) for v in rng.integers(1, 33, depth))
    spec = NetworkSpec((12, *hidden, 3), "afed" if depth == 1 else "dfed")
    values = init_params(spec, int(rng.integers(2**31))).values.copy()
    for _, _, bias in spec.slices():
        values[bias] = rng.normal(0, 0.1, bias.stop - bias.start)
    return spec, ParameterVector(values, spec.fingerprint)


def test_criterion_2_gradient_check():
    with criterion(2, "backprop vs central differences on 50 nets, every coordinate", 30.0) as notes:
        rng = np.random.default_rng(7)
        h = 1e-5
        worst = 0.0
        coords = 0
        redrawn = 0
        checked = 0
        while checked < 50:
            spec, params = random_net(rng)
            batch = int(rng.integers(1, 17))
            x = rng.random((batch, 12))
            y = rng.integers(1, 4, batch)
            # a ReLU input inside the stencil makes the loss non-smooth there
            if min_preactivation(params, spec, x) < 1e-3:
                redrawn += 1
                continue
            checked += 1
            g = gradient(params, spec, x, y).values
            v = params.values.copy()
            for i in range(len(v)):
                orig = v[i]
                v[i] = orig + h
                up = loss(ParameterVector(v, spec.fingerprint), spec, x, y)
                v[i] = orig - h
                down = loss(ParameterVector(v, spec.fingerprint), spec, x, y)
                v[i] = orig
                fd = (up - down) / (2 * h)
                denom = max(abs(fd), abs(g[i]))
                if denom > 0:
                    worst = max(worst, abs(fd - g[i]) / denom)
            coords += len(v)
        notes.append(f"{coords} coordinates, max relative error {worst:.2e}, {redrawn} near-kink draws skipped")
        assert worst < 1e-4, f"max relative error {worst:.3e}"


# --- 3 -----------------------------------------------------------------------

def test_criterion_3_fedavg():
    with criterion(3, "FedAvg identity, equal-shard mean, n=k=1 centralized, weights sum", 10.0):
        rng = np.random.default_rng(3)
        # (a)
        for _ in range(100):
            single = ParameterVector(rng.normal(0, 10, 50), "x")
            out = aggregate([(single, int(rng.integers(1, 5000)))])
            assert out.values.tobytes() == single.values.tobytes()
        # (b)
        for _ in range(100):
            k = int(rng.integers(1, 12))
            vs = rng.normal(0, 5, (k, 40))
            size = int(rng.integers(1, 1000))
            out = aggregate([(ParameterVector(v, "x"), size) for v in vs]).values
            assert np.max(np.abs(out - vs.mean(axis=0))) <= 1e-12
        # (c)
        data = synthesize(500, 5)
        cfg = RoundConfig.from_master_seed(11, total_users=1, participants_per_round=1, rounds=2, local_epochs=3)
        fed = run_experiment(cfg, data)
        train, _, _ = prepare(cfg, data)
        params = init_params(cfg.spec, cfg.init_seed)
        for r in range(cfg.rounds):
            params, _ = train_local(params, cfg.spec, train.features, train.labels,
                                    replace(cfg.training, epochs=cfg.local_epochs,
                                            seed=client_seed(cfg.training.seed, r, 0)))
        assert fed.final.params.values.tobytes() == params.values.tobytes()
        # (d)
        for _ in range(1000):
            sizes = rng.integers(1, 100_000, int(rng.integers(1, 50)))
            assert abs(aggregation_weights(sizes.tolist()).sum() - 1.0) <= 1e-12


# --- 4, 5 --------------------------------------------------------------------

def round0_loss(master=42):
    data = normalize(synthesize(10000, 42, (0.3, 0.5, 0.2)))
    _, test = split(data, SplitSpec(0.8, derive_seed(master, "split")))
    spec = NetworkSpec.for_variant("afed")
    return loss(init_params(spec, derive_seed(master, "init")), spec, test.features, test.labels)


def full_run(tmp: Path, users: int, extra=()):
    res, ckpt = tmp / "results.csv", tmp / "model.ckpt"
    argv = ["run", "--users", str(users), "--k", str(users), "--rounds", "50", "--epochs", "90",
            "--variant", "afed", "--seed", "42", "--n", "10000", "--gen-seed", "42", "--mix", "0.3,0.5,0.2",
            "--results", str(res), "--checkpoint", str(ckpt), *extra]
    assert main(argv) == 0
    return res, ckpt


@pytest.mark.slow
def test_criterion_4_experiment_shape(tmp_path):
    with criterion(4, "n=10 k=10 T=50 xi=90 AFed on synthetic 10000", 600.0) as notes:
        res, ckpt = full_run(tmp_path, 10)
        ARTIFACTS[4] = (res, ckpt)
        reports = read_results(res)
        assert len(reports) == 50
        final = reports[-1]
        start = round0_loss()
        notes.append(f"accuracy {final.accuracy:.4f}, loss {final.mean_global_loss:.4f}, round-0 loss {start:.4f}")
        assert final.accuracy >= 0.90
        assert final.mean_global_loss < 0.30
        assert final.mean_global_loss < start
        assert (tmp_path / "results.png").exists()


@pytest.mark.slow
def test_criterion_5_smaller_scenario(tmp_path):
    with criterion(5, "n=5 k=5 T=50 xi=90 AFed on synthetic 10000", 360.0) as notes:
        res, _ = full_run(tmp_path, 5, ["--no-figure"])
        reports = read_results(res)
        assert len(reports) == 50
        final = reports[-1]
        notes.append(f"accuracy {final.accuracy:.4f}, loss {final.mean_global_loss:.4f}")
        assert final.accuracy >= 0.90


# --- 6 -----------------------------------------------------------------------

def test_criterion_6_metrics_oracle():
    with criterion(6, "report vs per-class oracle on 200 matrices, accuracy == weighted recall", 5.0):
        rng = np.random.default_rng(6)
        for i in range(200):
            high = [2, 10, 100, 10_000][i % 4]
            counts = rng.integers(0, high, (3, 3))
            if i % 10 == 0:
                counts[:, int(rng.integers(3))] = 0  # a never-predicted class
            if counts.sum() == 0:
                counts[0, 0] = 1
            r = report(ConfusionMatrix(counts))
            expected = metrics_reference(counts)
            for got, want in zip((r.accuracy, r.precision, r.recall, r.f1), expected):
                assert abs(got - want) <= 1e-12, (counts, got, want)
            assert r.accuracy == r.recall


# --- 7 -----------------------------------------------------------------------

def test_criterion_7_gate(rule_global, data_dir):
    with criterion(7, "gate OR table and five-user illustration denies {u2, u5}", 1.0):
        for model_mal in (False, True):
            for ube_mal in (False, True):
                verdict, reason = combine(model_mal, ube_mal)
                assert (verdict is Verdict.DENIED) == (model_mal or ube_mal)
                assert (reason is Reason.CLEAN) == (not (model_mal or ube_mal))
        kb = load_knowledge_base(data_dir / "illustration_kb.csv")
        decisions = score_requests(load_requests(data_dir / "illustration_requests.csv"), kb, rule_global,
                                   lookback=100)
        denied = {d.request.user_id for d in decisions if d.denied}
        granted = {d.request.user_id for d in decisions if not d.denied}
        assert denied == {"u2", "u5"}
        assert granted == {"u1", "u3", "u4"}
        assert all(d.predicted_class == NON_MALICIOUS for d in decisions if not d.denied)


# --- 8 -----------------------------------------------------------------------

def reduced_run(tmp: Path, name: str, parallel: bool):
    res, ckpt = tmp / f"{name}.csv", tmp / f"{name}.ckpt"
    argv = ["run", "--users", "10", "--k", "4", "--rounds", "5", "--epochs", "5", "--seed", "42",
            "--results", str(res), "--checkpoint", str(ckpt), "--no-figure"]
    if parallel:
        argv += ["--parallel", "2"]
    assert main(argv) == 0
    return res.read_bytes(), ckpt.read_bytes()


@pytest.mark.slow
def test_criterion_8_determinism(tmp_path):
    # Budget is twice the criterion 4 time. A full rerun compared against
    # criterion 4's files uses one of those two shares; client sampling and the
    # process pool are covered by a reduced configuration.
    budget = 2 * RUNTIMES.get(4, 600.0)
    with criterion(8, "byte-identical results and checkpoints, serial and --parallel", budget) as notes:
        if 4 in ARTIFACTS:
            res, ckpt = full_run(tmp_path, 10, ["--no-figure"])
            assert res.read_bytes() == ARTIFACTS[4][0].read_bytes()
            assert ckpt.read_bytes() == ARTIFACTS[4][1].read_bytes()
            notes.append("full criterion 4 run repeated")
        a = reduced_run(tmp_path, "a", False)
        b = reduced_run(tmp_path, "b", False)
        c = reduced_run(tmp_path, "c", True)
        d = reduced_run(tmp_path, "d", True)
        assert a == b
        assert c == d
        assert a == c
        notes.append("reduced n=10 k=4 runs equal with and without --parallel")


# --- 9 -----------------------------------------------------------------------

def multiset(data: Dataset):
    from collections import Counter

    return Counter((tuple(row), int(c)) for row, c in zip(data.features, data.labels))


def test_criterion_9_normalize_and_partition():
    with criterion(9, "normalize bounds, split/partition multisets, 80:20 and equal shards", 5.0):
        rng = np.random.default_rng(9)
        for trial in range(20):
            n = int(rng.integers(5, 400))
            raw = Dataset(rng.integers(0, 50, (n, 12)).astype(float) * rng.random(12), rng.integers(1, 4, n))
            normed = normalize(raw)
            x = normed.features
            assert x.min() >= 0.0 and x.max() <= 1.0
            for j in range(12):
                col = raw.features[:, j]
                if col.max() > col.min():
                    assert x[col == col.min(), j].max() == 0.0
                    assert x[col == col.max(), j].min() == 1.0
                else:
                    assert np.all(x[:, j] == 0.0)
            train, test = split(normed, SplitSpec(0.8, trial))
            assert len(train) == int(np.floor(0.8 * n + 0.5))
            assert multiset(train) + multiset(test) == multiset(normed)
            k = int(rng.integers(1, min(n, 12) + 1))
            shards = partition(train, k, trial)
            sizes = [len(s) for s in shards]
            assert max(sizes) - min(sizes) <= 1
            total = multiset(shards[0])
            for s in shards[1:]:
                total += multiset(s)
            assert total == multiset(train)
        full = normalize(synthesize(10000, 42))
        train, test = split(full, SplitSpec(0.8, derive_seed(42, "split")))
        assert (len(train), len(test)) == (8000, 2000)
        assert [len(s) for s in partition(train, 10, 1)] == [800] * 10
        assert [len(s) for s in partition(train, 5, 1)] == [1600] * 5
