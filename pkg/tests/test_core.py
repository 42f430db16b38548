import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtdc_protect.clustering import ClusterModel
from mtdc_protect.core import (
    CHANNELS,
    CSV_HEADER,
    CsvFormatError,
    FaultKind,
    InvalidNormalization,
    ModelBundle,
    Normalization,
    Pole,
    ScenarioError,
    ScenarioSpec,
    SensorFrame,
    WaveformRecord,
    read_waveform_csv,
    to_per_unit,
    validate_record,
    waveform_csv_text,
    write_waveform_csv,
)
from mtdc_protect.detectors import default_configs

BASES = (1.0, 1.0, 320.0, 320.0, 320.0, 320.0)
finite = st.floats(min_value=-1e4, max_value=1e4, allow_nan=False)


def _frame(x):
    return SensorFrame.from_vector(0.0, x)


def _record(n=50, spec=None, label=None, arrival=None, f_s=50e3):
    spec = spec or ScenarioSpec()
    t = np.arange(n) / f_s
    data = np.tile([0.6, -0.6, 320.0, -320.0, 0.0, 0.0], (n, 1))
    lab = spec.is_internal if label is None else label
    return WaveformRecord(spec, t, data, lab, arrival, f_s)


# --- per-unit -------------------------------------------------------------------


def test_per_unit_identity():
    assert np.array_equal(to_per_unit(_frame(BASES), BASES), np.ones(6))


def test_per_unit_zero_frame():
    assert np.array_equal(to_per_unit(_frame([0] * 6), BASES), np.zeros(6))


def test_per_unit_single_channel():
    x = list(BASES)
    x[0] = 1.3
    out = to_per_unit(_frame(x), BASES)
    assert out[0] == 1.3
    assert np.array_equal(out[1:], np.ones(5))


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
def test_per_unit_rejects_bad_base(bad):
    with pytest.raises(InvalidNormalization):
        to_per_unit(_frame(BASES), (bad,) + BASES[1:])


def test_normalization_needs_six_entries():
    with pytest.raises(InvalidNormalization):
        Normalization((1.0,) * 5)


@given(st.lists(finite, min_size=6, max_size=6), st.floats(min_value=-100, max_value=100, allow_nan=False))
def test_per_unit_is_linear(x, alpha):
    x = np.array(x)
    lhs = to_per_unit(alpha * x, BASES)
    rhs = alpha * to_per_unit(x, BASES)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


def test_prefault_normalization_polarity():
    rec = _record()
    pu = rec.per_unit()
    assert np.allclose(pu[0], [1, 1, 1, 1, 0, 0])


def test_prefault_normalization_rejects_zero_current():
    data = np.zeros((10, 6))
    with pytest.raises(InvalidNormalization):
        Normalization.from_prefault(data)


def test_channel_order_is_shared():
    # clustering features, detector channel maps and the CSV header agree
    from mtdc_protect.detectors import _INPUTS

    assert CSV_HEADER[1:] == CHANNELS
    assert [CHANNELS[i] for i in _INPUTS["current_threshold"]] == ["i_pos", "i_neg"]
    assert [CHANNELS[i] for i in _INPUTS["qcd"]] == ["vl_pos", "vl_neg"]
    assert list(_frame(range(6)).as_vector()) == list(range(6))


# --- scenario spec --------------------------------------------------------------


def test_spec_roundtrip():
    spec = ScenarioSpec(fault=FaultKind.P2G_HIGH, location_km=105.0, impedance_ohm=300.0, pole=Pole.NEGATIVE,
                        noise_sigma=0.005, seed=7)
    assert ScenarioSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


@pytest.mark.parametrize(
    "kw",
    [
        dict(t_fault=0.05, duration=0.04),
        dict(fault=FaultKind.P2P, location_km=250.0),
        dict(fault=FaultKind.P2P, impedance_ohm=-1.0),
        dict(fault=FaultKind.P2G_LOW, impedance_ohm=1.0),
        dict(fault=FaultKind.EXTERNAL, fault_line="Line12", impedance_ohm=0.0),
        dict(fault=FaultKind.EXTERNAL, fault_line="Line13", impedance_ohm=1.0),
        dict(fault=FaultKind.P2P, flow_step_ka=0.2),
        dict(noise_sigma=-0.1),
    ],
)
def test_spec_invariants(kw):
    with pytest.raises(ScenarioError):
        ScenarioSpec(**kw).validate({"Line13": 200.0, "Line12": 100.0})


def test_spec_zero_ohm_allowed_for_internal_faults():
    ScenarioSpec(fault=FaultKind.P2P, location_km=10.0).validate({"Line13": 200.0})
    ScenarioSpec(fault=FaultKind.P2G_LOW, location_km=10.0, pole=Pole.POSITIVE).validate({"Line13": 200.0})


def test_spec_normal_ignores_location():
    ScenarioSpec(location_km=1e6, impedance_ohm=-5.0).validate({"Line13": 200.0})


def test_spec_from_dict_diagnostics():
    with pytest.raises(ScenarioError, match="location_km"):
        ScenarioSpec.from_dict({"location_km": "far"})
    with pytest.raises(ScenarioError, match="unknown"):
        ScenarioSpec.from_dict({"colour": "red"})


# --- validate_record ------------------------------------------------------------


def test_validate_clean_record():
    assert validate_record(_record()) == []


def test_validate_duplicate_timestamp():
    rec = _record()
    t = rec.t.copy()
    t[10] = t[9]
    report = validate_record(WaveformRecord(rec.spec, t, rec.data, rec.label, None))
    assert any("non-monotonic time" in p for p in report)


def test_validate_external_labelled_trip():
    spec = ScenarioSpec(fault=FaultKind.EXTERNAL, fault_line="Line12", location_km=5.0, impedance_ohm=1.0)
    report = validate_record(_record(spec=spec, label=True, arrival=0.0))
    assert any("label inconsistent" in p for p in report)


def test_validate_reports_every_problem():
    spec = ScenarioSpec(fault=FaultKind.P2P, location_km=10.0)
    rec = _record(spec=spec, label=False)
    data = rec.data.copy()
    data[3, 2] = np.nan
    report = validate_record(WaveformRecord(spec, rec.t, data, False, None))
    assert len(report) == 3  # non-finite, label, missing arrival


def test_validate_irregular_spacing():
    rec = _record()
    t = rec.t.copy()
    t[20:] += 1e-7
    assert any("irregular" in p for p in validate_record(WaveformRecord(rec.spec, t, rec.data, False, None)))


# --- waveform CSV ---------------------------------------------------------------


def test_csv_roundtrip_exact(tmp_path):
    rec = _record()
    rec = rec.with_data(rec.data + np.random.default_rng(0).normal(size=rec.data.shape))
    write_waveform_csv(rec, tmp_path / "w.csv")
    back = read_waveform_csv(tmp_path / "w.csv", spec=rec.spec, label=rec.label)
    assert back == rec


def test_csv_format():
    text = waveform_csv_text(_record(n=3))
    assert text.startswith("t,i_pos,i_neg,vl_pos,vl_neg,vr_pos,vr_neg\n")
    assert "\r" not in text and text.endswith("\n")


def test_csv_header_mismatch(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("t,a,b\n0,1,2\n")
    with pytest.raises(CsvFormatError, match="header"):
        read_waveform_csv(p)


def test_csv_truncated_frame_names_offset(tmp_path):
    text = waveform_csv_text(_record(n=5))
    p = tmp_path / "w.csv"
    p.write_text(text[:-20])
    with pytest.raises(CsvFormatError, match="byte offset"):
        read_waveform_csv(p)


def test_csv_short_row(tmp_path):
    lines = waveform_csv_text(_record(n=5)).split("\n")
    lines[3] = ",".join(lines[3].split(",")[:4])
    p = tmp_path / "w.csv"
    p.write_text("\n".join(lines))
    with pytest.raises(CsvFormatError, match="byte offset"):
        read_waveform_csv(p)


# --- model bundle ---------------------------------------------------------------


def _bundle():
    model = ClusterModel(np.array([[1.0, 1, 1, 1, 0, 0], [2.0, 2, 0.5, 0.5, 0.1, 0.1]]))
    w = np.array([[0.1, 0.2, 0.3, 0.4], [0.25, 0.25, 0.25, 0.25]])
    return ModelBundle(model, w, default_configs(), Normalization((0.6, 0.6, 320, 320, 320, 320),
                                                                  (1, -1, 1, -1, 1, -1)))


def test_bundle_roundtrip_bit_exact(tmp_path):
    b = _bundle()
    b.save(tmp_path / "b.json")
    back = ModelBundle.load(tmp_path / "b.json")
    assert back == b
    assert back.to_json() == b.to_json()


def test_bundle_document_keys():
    doc = json.loads(_bundle().to_json())
    assert set(doc) == {"format_version", "centroids", "weights", "detectors", "normalization"}
    assert doc["weights"][0] == {"label": 1, "weights": [0.1, 0.2, 0.3, 0.4]}


def test_bundle_row_count_must_match_k():
    b = _bundle()
    with pytest.raises(ValueError):
        ModelBundle(b.cluster_model, b.weight_table[:1], b.detector_configs, b.normalization)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(min_value=-10, max_value=10, allow_nan=False), min_size=12, max_size=12))
def test_bundle_roundtrip_property(vals):
    b = _bundle()
    c = ModelBundle(ClusterModel(np.array(vals).reshape(2, 6)), b.weight_table, b.detector_configs, b.normalization)
    assert ModelBundle.from_json(c.to_json()) == c
