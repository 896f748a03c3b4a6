import numpy as np
import pandas as pd
import pytest

from chfuq import data as D
from chfuq import stats as S

HEADER = "D,L,P,G,X,dh_sub,chf,source\n"
ROWS = [
    "0.01,1.0,7000,2000,0.1,50,3000,Smith 1970\n",
    "0.008,2.0,10000,3000,0.3,80,2500,Kureta 1991\n",
    "0.012,0.5,5000,1500,-0.1,120,4000,Jones\n",
]


@pytest.fixture
def csv_path(tmp_path):
    path = tmp_path / "chf.csv"
    path.write_text(HEADER + "".join(ROWS))
    return path


@pytest.fixture
def sat():
    return D.SaturationTable(np.array([1000.0, 2000.0, 3000.0]),
                             np.array([700.0, 900.0, 1000.0]),
                             np.array([2700.0, 2800.0, 2800.0]))


def test_load_well_formed(csv_path):
    table = D.load_csv(csv_path)
    assert len(table) == 3
    assert table["chf"].tolist() == [3000.0, 2500.0, 4000.0]
    assert table["row_id"].tolist() == [0, 1, 2]


def test_load_with_mapping_and_aliases(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("Tube Diameter,Heated Length,Pressure,Mass Flux,Quality,flux\n"
                    "0.01,1,7000,2000,0.1,3000\n")
    table = D.load_csv(path, mapping={"chf": "flux"})
    assert table["chf"].iat[0] == 3000.0 and table["source"].iat[0] == "unknown"


def test_load_missing_chf_names_column(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("D,L,P,G\n0.01,1,7000,2000\n")
    with pytest.raises(D.SchemaError, match="chf"):
        D.load_csv(path)


def test_load_negative_chf_names_row(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text(HEADER + ROWS[0] + ROWS[1].replace("2500", "-1"))
    with pytest.raises(D.SchemaError, match="row 1"):
        D.load_csv(path)


def test_load_unparsable(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text(HEADER + ROWS[0].replace("7000", "7e3x"))
    with pytest.raises(D.SchemaError, match="row 0"):
        D.load_csv(path)


def test_outlet_enthalpy_examples():
    assert D.outlet_enthalpy(1000.0, 1000.0, 1.0, 2000.0, 0.01) == pytest.approx(1200.0)
    assert D.outlet_enthalpy(1000.0, 0.0, 1.0, 2000.0, 0.01) == 1000.0
    added = D.outlet_enthalpy(0.0, 1000.0, 2.0, 2000.0, 0.01)
    assert added == pytest.approx(400.0)
    with pytest.raises(ValueError):
        D.outlet_enthalpy(0.0, 1.0, 1.0, 0.0, 0.01)


def test_outlet_quality_examples(sat):
    assert D.outlet_quality(900.0, 2000.0, sat) == 0.0
    assert D.outlet_quality(2800.0, 2000.0, sat) == 1.0
    assert D.outlet_quality(1850.0, 2000.0, sat) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        D.outlet_quality(1000.0, 5000.0, sat)


def test_inlet_subcooling_examples(sat):
    assert D.inlet_subcooling(900.0, 2000.0, sat) == 0.0
    assert D.inlet_subcooling(850.0, 2000.0, sat) > 0
    # halfway between the 1000 and 2000 kPa entries: h_l = 800
    assert D.inlet_subcooling(750.0, 1500.0, sat) == pytest.approx(50.0)


def test_saturation_table_from_csv(tmp_path):
    path = tmp_path / "sat.csv"
    path.write_text("P,h_l,h_v\n1000,700,2700\n2000,900,2800\n")
    table = D.SaturationTable.from_csv(path)
    assert table.enthalpies(1500.0)[0] == pytest.approx(800.0)
    path.write_text("P,hl\n1,2\n")
    with pytest.raises(D.SchemaError):
        D.SaturationTable.from_csv(path)


def test_complete_features(sat):
    table = pd.DataFrame({"D": [0.01], "L": [1.0], "P": [2000.0], "G": [2000.0],
                          "chf": [1000.0]})
    out = D.complete_features(table, sat, h_in=np.array([800.0]))
    assert out["dh_sub"].iat[0] == pytest.approx(100.0)
    # h_out = 800 + 200 = 1000, X = (1000 - 900) / 1900
    assert out["X"].iat[0] == pytest.approx(100.0 / 1900.0)
    with pytest.raises(D.SchemaError):
        D.complete_features(table)


def _fixture_table(n=10, negative=2):
    return pd.DataFrame({
        "row_id": np.arange(n), "D": 0.01, "L": 1.0, "P": 7000.0, "G": 2000.0, "X": 0.1,
        "dh_sub": [-5.0] * negative + [40.0] * (n - negative),
        "chf": 3000.0, "source": ["Smith"] * n,
    })


def test_filter_examples():
    out, report = D.filter_dataset(_fixture_table())
    assert len(out) == 8
    assert report.to_dict() == {"initial": 10, "subcooling": 2, "sources": 0, "retained": 8}
    clean = _fixture_table(negative=0)
    same, _ = D.filter_dataset(clean, excluded_sources=())
    pd.testing.assert_frame_equal(same, clean)


def test_filter_sources_case_insensitive():
    table = _fixture_table(negative=1)
    table.loc[[0, 1, 2], "source"] = ["kureta 1991", "SODERQUIST", "Smith"]
    out, report = D.filter_dataset(table)
    assert report.subcooling == 1 and report.sources == 1 and len(out) == 8
    again, second = D.filter_dataset(out)
    assert len(again) == len(out) and second.subcooling == second.sources == 0


def _sourced(counts):
    sources = sum(([name] * c for name, c in counts.items()), [])
    return pd.DataFrame({"row_id": np.arange(len(sources)), "source": sources})


def test_split_single_source():
    parts = D.stratified_split(_sourced({"a": 100}))
    assert [len(parts[k]) for k in ("train", "val", "test")] == [80, 10, 10]


def test_split_preserves_source_ratio():
    parts = D.stratified_split(_sourced({"a": 90, "b": 10}), D.SplitSpec(seed=4))
    for part in parts.values():
        counts = part["source"].value_counts()
        n = len(part)
        assert abs(counts.get("a", 0) - 0.9 * n) <= 1
        assert abs(counts.get("b", 0) - 0.1 * n) <= 1


def test_split_union_and_determinism():
    table = _sourced({"a": 37, "b": 5, "c": 2, "d": 1})
    parts = D.stratified_split(table, D.SplitSpec(seed=7))
    ids = np.sort(np.concatenate([p["row_id"].to_numpy() for p in parts.values()]))
    assert np.array_equal(ids, table["row_id"].to_numpy())
    assert np.array_equal(D.split_labels(table, D.SplitSpec(seed=7)),
                          D.split_labels(table, D.SplitSpec(seed=7)))
    assert not np.array_equal(D.split_labels(table, D.SplitSpec(seed=7)),
                              D.split_labels(table, D.SplitSpec(seed=8)))


def test_split_spec_validation():
    with pytest.raises(ValueError):
        D.SplitSpec(fractions=(0.5, 0.4))
    with pytest.raises(ValueError):
        D.SplitSpec(fractions=(0.5, 0.4, 0.2))


def test_calibration_mask():
    mask = D.calibration_mask(100, 30, seed=1)
    assert mask.sum() == 30 and np.array_equal(mask, D.calibration_mask(100, 30, seed=1))
    with pytest.raises(ValueError):
        D.calibration_mask(10, 30)


def test_scaler_examples(tmp_path):
    df = D.synth_generate(500, seed=1)
    parts = D.stratified_split(df)
    state = D.fit_scaler(parts["train"])
    z = D.apply_scaler(parts["train"], state)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-10)
    assert np.all(np.abs(D.apply_scaler(parts["test"], state).mean(axis=0)) > 0)
    raw = D.model_inputs(parts["test"])
    np.testing.assert_allclose(D.unscale(D.apply_scaler(parts["test"], state), state), raw,
                               rtol=1e-12, atol=1e-12)
    state.save(tmp_path / "s.json")
    loaded = D.ScalerState.load(tmp_path / "s.json")
    assert np.array_equal(loaded.mean, state.mean) and loaded.features == state.features


def test_scaler_constant_feature():
    df = D.synth_generate(50, seed=1)
    df["L"] = 2.0
    with pytest.raises(ValueError, match="'L'"):
        D.fit_scaler(df)


def test_inlet_properties_never_inputs():
    df = D.synth_generate(10)
    with pytest.raises(ValueError, match="T_in|dh_sub"):
        D.model_inputs(df, ("G", "dh_sub"))
    assert "dh_sub" not in D.MODEL_FEATURES and "T_in" not in D.MODEL_FEATURES


def test_synth_deterministic():
    pd.testing.assert_frame_equal(D.synth_generate(1000, seed=3), D.synth_generate(1000, seed=3))
    assert (D.synth_generate(200, seed=3)["chf"] > 0).all()


def test_synth_band_noise():
    df = D.synth_generate(50_000, seed=0)
    z = (df["chf"] - df["mu_true"]) / df["mu_true"]
    band = np.searchsorted(D.RegimeBands().edges, df["X"], side="right")
    for k, target in enumerate(D.RegimeBands().noise):
        assert z[band == k].std() == pytest.approx(target, rel=0.1)


def test_synth_is_heteroscedastic():
    df = D.synth_generate(5000, seed=0)
    resid = df["chf"] - df["mu_true"]
    assert S.breusch_pagan(resid, D.model_inputs(df)).p_value < 0.01


def test_regime_bands_validation():
    with pytest.raises(ValueError):
        D.RegimeBands(edges=(0.5, 0.2), noise=(0.1, 0.1, 0.1))
    with pytest.raises(ValueError):
        D.RegimeBands(noise=(0.1,))
