import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bfopt import dataio
from bfopt import preprocess as pp
from bfopt.dataio import PlantConfig, SensorFrame

finite = st.floats(-1e4, 1e4, allow_nan=False)


def frame_from_taps(taps):
    taps = np.asarray(taps, dtype=float)
    n = len(taps)
    return SensorFrame(np.arange(n), ["pci"], np.full((n, 1), 90.0), taps)


def test_temp1_quartile_bounds():
    b = pp.IqrBounds(1500.0, 1523.52)
    assert b.iqr == pytest.approx(23.52, abs=1e-12)
    assert b.lower == pytest.approx(1382.4, abs=1e-9)
    assert b.upper == pytest.approx(1523.52 + 5 * 23.52, abs=1e-9)  # 1641.12
    assert pp.iqr_correct([1300.0], b)[0] == pytest.approx(1382.4, abs=1e-9)
    assert pp.iqr_correct([1510.0], b)[0] == 1510.0
    assert pp.iqr_correct([1700.0], b)[0] == pytest.approx(1641.12, abs=1e-9)


def test_iqr_fit_uses_linear_quantiles():
    x = np.arange(1, 12, dtype=float)  # 11 points: linear q1 = 3.5, q3 = 8.5
    b = pp.IqrBounds.fit(x)
    assert (b.q1, b.q3) == (3.5, 8.5)
    assert np.nanquantile(np.r_[x, np.nan], 0.25) == 3.5


@given(arrays(np.float64, 30, elements=finite), finite, st.floats(0, 100))
def test_iqr_correct_idempotent_and_monotone(x, q1, width):
    b = pp.IqrBounds(q1, q1 + width)
    once = pp.iqr_correct(x, b)
    np.testing.assert_array_equal(pp.iqr_correct(once, b), once)
    order = np.argsort(x, kind="stable")
    assert np.all(np.diff(once[order]) >= 0)


def test_assemble_temperature_examples():
    t = pp.assemble_temperature(frame_from_taps([[1500, 1510, 1505, 1509],
                                                 [1500, np.nan, 1503, 1506],
                                                 [1502, 1502, 1502, 1502]]))
    np.testing.assert_allclose(t, [1506.0, 1503.0, 1502.0])


def test_assemble_temperature_long_gap_errors():
    taps = np.full((50, 4), 1500.0)
    taps[5:45] = np.nan
    with pytest.raises(pp.GapError):
        pp.assemble_temperature(frame_from_taps(taps))


def test_impute_forward_fills_short_runs():
    x = np.array([1.0, np.nan, np.nan, 4.0, np.nan])
    np.testing.assert_array_equal(pp.impute(x, horizon=2), [1, 1, 1, 4, 4])
    np.testing.assert_array_equal(pp.impute(np.array([np.nan, 2.0, 3.0])), [2, 2, 3])
    with pytest.raises(pp.GapError):
        pp.impute(x, horizon=1)
    loose = pp.impute(np.array([1.0, np.nan, np.nan, np.nan, 5.0]), horizon=2, strict=False)
    assert np.isnan(loose[1:4]).all()
    assert pp.segments(~np.isnan(loose)) == [(0, 1), (4, 5)]


def test_discretize_examples():
    np.testing.assert_array_equal(pp.discretize(np.full(30, 7.0)), [7.0, 7.0, 7.0])
    np.testing.assert_array_equal(pp.discretize(np.arange(1, 11, dtype=float)), [5.5])
    assert len(pp.discretize(np.arange(25.0))) == 2
    with pytest.raises(ValueError):
        pp.discretize(np.arange(9.0))


@given(arrays(np.float64, 40, elements=st.floats(-1e3, 1e3)), st.floats(-10, 10), st.floats(-100, 100))
def test_discretize_commutes_with_affine(x, a, b):
    np.testing.assert_allclose(pp.discretize(a * x + b), a * pp.discretize(x) + b, atol=1e-9)


def test_scaler_examples():
    x = np.array([[1.0, 5.0, 3.0], [3.0, 5.0, -1.0], [2.0, 5.0, 0.0]])
    sc = pp.MinMaxScaler().fit(x, ["a", "const", "b"])
    assert sc.names == ["a", "b"] and sc.dropped == ["const"]
    z = sc.transform(x[:, [0, 2]])
    np.testing.assert_array_equal(z.min(axis=0), [0, 0])
    np.testing.assert_array_equal(z.max(axis=0), [1, 1])
    assert sc.transform(np.array([5.0]), ["a"])[0] == 2.0  # beyond training max maps above 1


@given(arrays(np.float64, (6, 3), elements=st.floats(-1e3, 1e3), unique=True))
def test_scaler_round_trip(x):
    sc = pp.MinMaxScaler().fit(x)
    if len(sc.names) < 3:
        return
    np.testing.assert_allclose(sc.inverse_transform(sc.transform(x)), x, atol=1e-9)


def test_unfitted_scaler_raises():
    with pytest.raises(pp.NotFittedError):
        pp.MinMaxScaler().transform(np.zeros(3))


def test_make_samples_boundaries():
    v = np.arange(29 * 3, dtype=float).reshape(29, 3)
    s = pp.make_samples(v)
    assert len(s) == 1
    np.testing.assert_array_equal(s.targets_all[0], v[24:29])
    np.testing.assert_array_equal(s.targets_T[0], v[24:29, -1])
    np.testing.assert_array_equal(s.inputs[0], v[:24])
    assert len(pp.make_samples(np.zeros((30, 3)))) == 2
    with pytest.raises(ValueError):
        pp.make_samples(np.zeros((28, 3)))


def test_make_samples_never_overlap():
    v = np.arange(60, dtype=float)[:, None] * np.ones((1, 2))
    s = pp.make_samples(v)
    assert np.all(s.inputs[:, -1, 0] < s.targets_all[:, 0, 0])
    assert np.all(s.targets_all[:, 0, 0] - s.inputs[:, -1, 0] == 1)


def test_sidecar_round_trip_and_apply(tmp_path):
    cfg = PlantConfig(n_channels=6, seed=2)
    frame = dataio.generate_plant(cfg, 2000)
    pcfg = pp.PreprocessConfig()
    side = pp.fit_sidecar(frame, pcfg)
    path = tmp_path / "side.csv"
    side.save(path)
    back = pp.Sidecar.load(path)
    assert back.rows.keys() == side.rows.keys()
    for k in side.rows:
        np.testing.assert_array_equal(back.rows[k], side.rows[k])
    assert back.l_window == side.l_window and back.iqr_k == side.iqr_k
    disc = pp.apply_frame(frame, back, pcfg)
    assert disc.values.shape == (200, 8)
    assert disc.names[-1] == pp.TEMPERATURE
    assert not np.isnan(disc.values).any()
    train = disc.values[: int(200 * pcfg.train_ratio)]
    sc = back.scaler(disc.names)
    z = sc.transform(train)
    assert z.min() >= -1e-12 and z.max() <= 1 + 1e-12
    # outliers are clipped onto the frozen bounds
    b = back.bounds("temp1")
    assert np.all(pp.iqr_correct(frame.temps[:, 0], b)[~np.isnan(frame.temps[:, 0])] >= b.lower)


def test_disc_csv_round_trip(tmp_path):
    frame = dataio.generate_plant(PlantConfig(n_channels=5, seed=1), 600)
    disc = pp.apply_frame(frame, pp.fit_sidecar(frame, pp.PreprocessConfig()))
    p = tmp_path / "d.csv"
    p.write_text(pp.disc_to_csv(disc))
    back = pp.disc_from_csv(p, disc.l_window)
    assert back.names == disc.names
    np.testing.assert_array_equal(back.values, disc.values)
    np.testing.assert_array_equal(back.timestamps, disc.timestamps)


def test_model_features_order():
    assert pp.model_features(["a", "b"]) == ["a", "b", "pci", "temperature"]
