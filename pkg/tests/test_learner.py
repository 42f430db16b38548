import collections
import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtdc_protect.clustering import ClusterModel, training_features
from mtdc_protect.core import Decision, FaultKind, ModelBundle, Normalization, SensorFrame
from mtdc_protect.detectors import default_configs, raw_decisions
from mtdc_protect.evaluation import detection_latency, inject_noise
from mtdc_protect.learner import (
    TRIP_LOG_HEADER,
    ContractError,
    DegenerateCorpus,
    Relay,
    TrainingSample,
    TripCommand,
    WeightTable,
    breaker_id,
    fuse,
    relay_step,
    run_relay,
    train_bundle,
    train_weights,
    trip_log_csv,
)

ROW = (0.193, 0.281, 0.281, 0.246)


def weight_rows(n=4):
    return st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n).filter(lambda v: sum(v) > 0).map(
        lambda v: [x / sum(v) for x in v])


def brute_force_weights(samples, clusters, k, n_det):
    """Literal trace: initialise 1/N, count agreement, correct rate, normalise."""
    table = []
    for c in range(1, k + 1):
        w = [1.0 / n_det] * n_det
        m = 0
        cnt = [0] * n_det
        for s, lab in zip(samples, clusters):
            if lab != c:
                continue
            m += 1
            for n in range(n_det):
                if s.decisions[n] == (1 if s.label else 0):
                    cnt[n] += 1
        if m:
            r = [cnt[n] / m for n in range(n_det)]
            if sum(r) > 0:
                w = [r[n] / sum(r) for n in range(n_det)]
        table.append(w)
    return np.array(table)


def random_training_set(seed):
    r = np.random.default_rng(seed)
    k = int(r.integers(1, 4))
    m = int(r.integers(k, 21))
    clusters = list(r.permutation(np.concatenate([np.arange(1, k + 1), r.integers(1, k + 1, m - k)])))
    samples = [TrainingSample(np.zeros(6), bool(r.integers(2)), tuple(int(v) for v in r.integers(0, 2, 4)))
               for _ in range(m)]
    return samples, [int(c) for c in clusters], k


# --- fuse -----------------------------------------------------------------------


def test_fuse_two_rate_detectors_trip():
    h, trip = fuse(ROW, (0, 1, 1, 0))
    assert abs(h - 0.562) <= 1e-12 and trip == 1


def test_fuse_threshold_alone_no_trip():
    h, trip = fuse(ROW, (1, 0, 0, 0))
    assert abs(h - 0.193) <= 1e-12 and trip == 0


def test_fuse_accepts_decision():
    assert fuse(ROW, Decision(0.0, (0, 1, 1, 0))) == fuse(ROW, (0, 1, 1, 0))


def test_fuse_exactly_half_does_not_trip():
    assert fuse((0.5, 0.5), (1, 0)) == (0.5, 0)


def test_fuse_length_mismatch():
    with pytest.raises(ContractError):
        fuse(ROW, (1, 0, 0))


@settings(max_examples=60, deadline=None)
@given(weight_rows())
def test_fuse_unanimity(w):
    assert fuse(w, (1, 1, 1, 1))[1] == 1
    assert fuse(w, (0, 0, 0, 0)) == (0.0, 0)


@settings(max_examples=60, deadline=None)
@given(weight_rows(), st.lists(st.integers(0, 1), min_size=4, max_size=4), st.integers(0, 3))
def test_fuse_monotone(w, d, n):
    lo = list(d)
    lo[n] = 0
    hi = list(d)
    hi[n] = 1
    (h_lo, t_lo), (h_hi, t_hi) = fuse(w, lo), fuse(w, hi)
    assert h_hi >= h_lo and t_hi >= t_lo


@settings(max_examples=60, deadline=None)
@given(weight_rows())
def test_fuse_dominance(w):
    for n in range(4):
        if w[n] > 0.5:
            d = [0] * 4
            d[n] = 1
            assert fuse(w, d)[1] == 1


# --- train_weights --------------------------------------------------------------


def _samples(dec_label_pairs):
    return [TrainingSample(np.zeros(6), lab, d) for d, lab in dec_label_pairs]


def test_train_weights_hand_trace():
    # A correct on all 4, B on 2: rates (1, 0.5) -> weights (2/3, 1/3)
    s = _samples([((1, 1), True), ((1, 0), True), ((0, 1), False), ((0, 0), False)])
    t = train_weights(s, ClusterModel(np.zeros((1, 6))), clusters=[1] * 4)
    assert np.allclose(t.w, [[2 / 3, 1 / 3]], rtol=0, atol=1e-15)


def test_train_weights_equal_rates_uniform():
    s = _samples([((1, 1, 1), True), ((0, 0, 0), False)])
    t = train_weights(s, ClusterModel(np.zeros((1, 6))), clusters=[1, 1])
    assert np.array_equal(t.w, [[1 / 3] * 3])


def test_train_weights_empty_cluster_warns():
    s = _samples([((1, 0), True)])
    with pytest.warns(UserWarning, match="no training samples"):
        t = train_weights(s, ClusterModel(np.zeros((2, 6))), clusters=[1])
    assert np.array_equal(t.w[1], [0.5, 0.5])


def test_train_weights_all_wrong_warns():
    s = _samples([((0, 0), True), ((1, 1), False)])
    with pytest.warns(UserWarning, match="ever correct"):
        t = train_weights(s, ClusterModel(np.zeros((1, 6))), clusters=[1, 1])
    assert np.array_equal(t.w, [[0.5, 0.5]])


def test_train_weights_no_samples():
    with pytest.raises(DegenerateCorpus):
        train_weights([], ClusterModel(np.zeros((1, 6))))


@pytest.mark.parametrize("seed", range(10))
def test_train_weights_matches_brute_force(seed):
    samples, clusters, k = random_training_set(seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t = train_weights(samples, ClusterModel(np.zeros((k, 6))), clusters=clusters)
    assert np.array_equal(t.w, brute_force_weights(samples, clusters, k, 4))
    assert np.all(np.abs(t.w.sum(axis=1) - 1) <= 1e-12)


@pytest.mark.parametrize("w", [[[0.6, 0.6]], [[1.2, -0.2]], [0.5, 0.5]])
def test_weight_table_invariants(w):
    with pytest.raises(ContractError):
        WeightTable(w)


# --- trained bundle -------------------------------------------------------------


def test_bundle_rows_are_stochastic(bundle):
    assert np.all(bundle.weight_table >= 0)
    assert np.all(np.abs(bundle.weight_table.sum(axis=1) - 1) <= 1e-12)


def high_impedance_normal_cluster(train_corpus, bundle):
    labels = bundle.cluster_model.assign_many(training_features(train_corpus))
    share = collections.Counter()
    for rec, c in zip(train_corpus, labels):
        if rec.spec.fault in (FaultKind.NONE, FaultKind.P2G_HIGH):
            share[int(c)] += 1
    return share.most_common(1)[0][0]


def test_qcd_dominates_high_impedance_cluster(train_corpus, bundle):
    c = high_impedance_normal_cluster(train_corpus, bundle)
    row = bundle.weight_table[c - 1]
    kinds = [cfg.kind for cfg in bundle.detector_configs]
    q = kinds.index("qcd")
    assert all(row[q] > row[n] for n in range(4) if n != q)


def test_train_bundle_is_deterministic(train_corpus, bundle):
    assert train_bundle(train_corpus).to_json() == bundle.to_json()


def test_train_bundle_one_class(train_corpus):
    normals = [r for r in train_corpus if not r.label]
    with pytest.raises(DegenerateCorpus):
        train_bundle(normals)


# --- relay ----------------------------------------------------------------------


def stream_relay(bundle, rec, breaker="CB13"):
    relay = Relay(bundle, breaker, rec.f_s)
    issued = [c for c in (relay_step(relay, SensorFrame.from_vector(t, x)) for t, x in zip(rec.t, rec.data)) if c]
    tail = relay.finish()
    return relay, issued + ([tail] if tail else [])


def test_streaming_equals_batch(bundle, p2p_105):
    relay, issued = stream_relay(bundle, p2p_105)
    trace = run_relay(bundle, p2p_105)
    assert issued == [trace.trip]
    h = np.array([row[1] for row in relay.log])
    assert np.array_equal(h, trace.h)
    assert np.array_equal([row[2] for row in relay.log], trace.clusters)


def test_p2p_trip_is_fast(bundle, p2p_105):
    trip = run_relay(bundle, p2p_105).trip
    assert trip is not None and trip.h > 0.5
    lat = detection_latency(p2p_105, trip)
    assert lat.outcome == "detected" and lat.value <= 1e-3
    assert trip.breaker == "CB13"


def test_trip_latches_once(bundle, p2p_105):
    _, issued = stream_relay(bundle, p2p_105)
    assert len(issued) == 1


def test_noisy_normal_record_no_trip(bundle, normal_record):
    for seed in range(3):
        assert run_relay(bundle, inject_noise(normal_record, 0.005, seed)).trip is None


def test_high_impedance_trip_waits_for_qcd(bundle, p2g_300_105):
    trip = run_relay(bundle, p2g_300_105).trip
    assert trip is not None
    qcd = [c for c in bundle.detector_configs if c.kind == "qcd"][0]
    fired = np.flatnonzero(raw_decisions(qcd, p2g_300_105.per_unit()))
    assert trip.t == pytest.approx(p2g_300_105.t[fired[0]])
    assert 4 in trip.contributing


def test_short_record_is_flushed(bundle, normal_record):
    relay = Relay(bundle, "CB13", normal_record.f_s)
    for t, x in zip(normal_record.t[:10], normal_record.data[:10]):
        assert relay.step(SensorFrame.from_vector(t, x)) is None
    assert relay.finish() is None
    assert len(relay.log) == 10


def minimal_winning_coalitions(w, active):
    out = []
    for r in range(1, len(active) + 1):
        for combo in itertools.combinations(active, r):
            if sum(w[n] for n in combo) > 0.5 and not any(set(c) <= set(combo) for c in out):
                out.append(combo)
    return out


def test_hybrid_latency_between_member_fire_times(bundle, eval_corpus):
    checked = 0
    for rec in eval_corpus:
        trace = run_relay(bundle, rec)
        if trace.trip is None:
            continue
        first = [rec.t[np.flatnonzero(trace.decisions[:, n])[0]] if trace.decisions[:, n].any() else np.inf
                 for n in range(4)]
        assert trace.trip.t >= min(first)
        w = bundle.weight_table[trace.trip.cluster - 1]
        coalitions = minimal_winning_coalitions(w, [n for n in range(4) if trace.trip.decisions[n]])
        assert coalitions
        assert any(trace.trip.t <= max(first[n] for n in c) + 1e-12 for c in coalitions)
        checked += 1
    assert checked > 0


def test_breaker_id():
    assert breaker_id("Line13", 1) == "CB13"
    assert breaker_id("Line13", 3) == "CB31"


def test_trip_log_csv():
    cmd = TripCommand("CB13", 0.0205, 0.75, 1, (0, 1, 1, 1))
    text = trip_log_csv([cmd])
    assert text.splitlines() == [TRIP_LOG_HEADER, "0.0205,CB13,0.75,1,0,1,1,1"]
    assert trip_log_csv([]) == "t,breaker,h,cluster,d1,d2,d3,d4\n"
    assert cmd.contributing == (2, 3, 4)


def test_relay_without_self_calibration(bundle, p2p_105):
    fixed = ModelBundle(bundle.cluster_model, bundle.weight_table, bundle.detector_configs,
                        p2p_105.prefault_normalization())
    trace = run_relay(fixed, p2p_105, self_calibrate=False)
    assert trace.trip is not None
    assert isinstance(fixed.normalization, Normalization)
