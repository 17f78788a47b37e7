import json

import numpy as np
import pytest

from mbtshap.bundle import BundleError, ModelBundle, load_bundle, save_bundle
from mbtshap.csvio import (GLOBAL_FIELDS, LOCAL_FIELDS, read_global, read_local, read_table, write_global,
                           write_local, write_table)
from mbtshap.data import FeatureSubset, load_dataset
from mbtshap.pathprob import path_probability
from mbtshap.shapley import MBTExplainer, PipelineConfig


@pytest.fixture(scope="module")
def saved(small_interaction, tmp_path_factory):
    _, ex = small_interaction
    path = tmp_path_factory.mktemp("bundle") / "model.json"
    save_bundle(ex, path)
    return path


def test_round_trip_outputs(small_interaction, saved):
    sc, ex = small_interaction
    ex2 = load_bundle(saved).explainer
    np.testing.assert_array_equal(ex2.global_shapley().phi, ex.global_shapley().phi)
    rows = sc.test.rows[:25]
    np.testing.assert_array_equal(ex2.shap(rows).phi, ex.shap(rows).phi)
    u = FeatureSubset((1, 4), ex.p)
    np.testing.assert_array_equal(path_probability(ex2.tree, ex2.bank, u, rows),
                                  path_probability(ex.tree, ex.bank, u, rows))
    assert ex2.config == ex.config and ex2.columns == ex.columns


def test_truncated_bundle_reports_offset(saved, tmp_path):
    text = saved.read_text()
    bad = tmp_path / "cut.json"
    bad.write_text(text[: len(text) // 2])
    with pytest.raises(BundleError, match=r"offset \d+.*file length"):
        load_bundle(bad)
    with pytest.raises(BundleError):
        load_bundle(tmp_path / "missing.json")


def test_version_and_format_checked(saved, tmp_path):
    d = json.loads(saved.read_text())
    d["version"] = 99
    p = tmp_path / "v.json"
    p.write_text(json.dumps(d))
    with pytest.raises(BundleError, match="version"):
        load_bundle(p)
    d["version"], d["format"] = 1, "other"
    p.write_text(json.dumps(d))
    with pytest.raises(BundleError, match="format"):
        load_bundle(p)
    with pytest.raises(BundleError):
        ModelBundle(MBTExplainer(PipelineConfig())).to_dict()


def test_no_temp_files_left(saved):
    assert [f.name for f in saved.parent.iterdir()] == ["model.json"]


def test_csv_round_trip(small_interaction, tmp_path):
    sc, ex = small_interaction
    g = ex.global_shapley()
    write_global(tmp_path / "g.csv", g, seed=3)
    meta, names, phi, pct = read_global(tmp_path / "g.csv")
    assert names == list(ex.columns) and meta["seed"] == "3"
    np.testing.assert_array_equal(phi, g.phi)
    np.testing.assert_array_equal(pct, g.percent)
    assert read_table(tmp_path / "g.csv")[1][0].keys() == set(GLOBAL_FIELDS)

    s = ex.shap(sc.test.rows[:4])
    write_local(tmp_path / "l.csv", s)
    meta, names, phi = read_local(tmp_path / "l.csv")
    np.testing.assert_array_equal(phi, s.phi)
    assert float(meta["offset"]) == s.offset
    assert list(read_table(tmp_path / "l.csv")[1][0]) == list(LOCAL_FIELDS)


def test_write_table_sequences_and_dicts(tmp_path):
    write_table(tmp_path / "t.csv", ("a", "b"), [(1, 0.1), {"a": 2, "b": np.float64(1 / 3)}], {"k": "v"})
    meta, rows = read_table(tmp_path / "t.csv")
    assert meta == {"k": "v"}
    assert float(rows[1]["b"]) == 1 / 3 and rows[0]["a"] == "1"


def test_bike_shaped_end_to_end(tmp_path):
    r = np.random.default_rng(11)
    n = 3000
    hour = r.integers(0, 24, n).astype(float)
    temp = r.uniform(0, 35, n)
    atemp = temp + r.normal(0, 2, n)
    hum = r.uniform(20, 100, n)
    wind = r.gamma(2.0, 5.0, n)
    workday = r.integers(0, 2, n).astype(float)
    pred = (40 * np.exp(-((hour - 17) ** 2) / 8) * workday + 5 * temp - 0.3 * hum + np.sin(hour / 3) * 10
            - 0.5 * wind)
    path = tmp_path / "bike.csv"
    cols = ["hr", "temp", "atemp", "hum", "windspeed", "workingday", "pred"]
    data = np.column_stack([hour, temp, atemp, hum, wind, workday, pred])
    write_table(path, cols, data.tolist())
    ds = load_dataset(path, "pred")
    assert ds.columns == tuple(cols[:-1])
    ex = MBTExplainer(PipelineConfig(seed=0, max_depth=3)).fit(ds)
    g = ex.global_shapley()
    assert np.all(np.isfinite(g.phi))
    assert g.percent.sum() == pytest.approx(100.0)
    s = ex.shap(ds.rows[:20])
    np.testing.assert_allclose(s.phi.sum(axis=1), ex.conditional_expectations(ds.rows[:20])[-1] - s.offset,
                               atol=1e-6)
    save_bundle(ex, tmp_path / "b.json")
    np.testing.assert_array_equal(load_bundle(tmp_path / "b.json").explainer.shap(ds.rows[:20]).phi, s.phi)
