import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bfopt import dataio
from bfopt.dataio import PlantConfig, ReductantInputs

HEADER = "timestamp,pci,ch00,temp1,temp2,temp3,temp4\n"


def write(tmp_path, body, header=HEADER):
    p = tmp_path / "log.csv"
    p.write_text(header + body, encoding="utf-8")
    return p


def test_load_three_rows(tmp_path):
    p = write(tmp_path, "2022-10-18T00:00,90,1.5,1500,1501,1502,1503\n"
                        "2022-10-18T00:01,91,1.6,1500,1501,1502,1503\n"
                        "2022-10-18T00:02,92,1.7,1500,1501,1502,1503\n")
    f = dataio.load_csv(p)
    assert len(f) == 3
    assert f.names == ["pci", "ch00"]
    np.testing.assert_array_equal(f.channel("pci"), [90, 91, 92])
    assert dataio.minutes_to_iso(f.timestamps[0]) == "2022-10-18T00:00"


def test_null_and_zero_temps_are_missing(tmp_path):
    p = write(tmp_path, "2022-10-18T00:00,90,1.5,null,0,1502,\n")
    f = dataio.load_csv(p)
    assert np.isnan(f.temps[0, 0]) and np.isnan(f.temps[0, 1]) and np.isnan(f.temps[0, 3])
    assert f.temps[0, 2] == 1502


def test_gaps_become_missing_rows(tmp_path):
    p = write(tmp_path, "2022-10-18T00:00,90,1.5,1,1,1,1\n2022-10-18T00:03,90,1.5,1,1,1,1\n")
    f = dataio.load_csv(p)
    assert len(f) == 4
    assert np.all(np.isnan(f.values[1:3])) and np.all(np.isnan(f.temps[1:3]))


@pytest.mark.parametrize("body, needle", [
    ("2022-10-18T00:01,1,1,1,1,1,1\n2022-10-18T00:00,1,1,1,1,1,1\n", ":3: out-of-order"),
    ("2022-10-18T00:00,1,1,1,1,1,1\n2022-10-18T00:00,1,1,1,1,1,1\n", ":3: duplicate"),
    ("2022-10-18T00:00,1,1,1,1,1\n", ":2: expected 7 fields"),
    ("2022-10-18T00:00,abc,1,1,1,1,1\n", ":2:"),
])
def test_malformed_rows_report_line(tmp_path, body, needle):
    with pytest.raises(dataio.ParseError, match=needle):
        dataio.load_csv(write(tmp_path, body))


def test_bad_header(tmp_path):
    with pytest.raises(dataio.ParseError, match=":1:"):
        dataio.load_csv(write(tmp_path, "", header="time,a,temp1,temp2,temp3,temp4\n"))


def test_csv_round_trip(tmp_path):
    cfg = PlantConfig(n_channels=5, missing_rate=0.05, outlier_rate=0.01, seed=3)
    frame = dataio.generate_plant(cfg, 300)
    path = tmp_path / "plant.csv"
    dataio.save_csv(frame, path)
    back = dataio.load_csv(path)
    np.testing.assert_array_equal(back.timestamps, frame.timestamps)
    np.testing.assert_array_equal(back.values, frame.values)
    np.testing.assert_array_equal(back.temps, frame.temps)
    assert back.names == frame.names


def test_plant_is_deterministic_and_chunkable():
    cfg = PlantConfig(n_channels=8, seed=11)
    a = dataio.generate_plant(cfg, 400)
    b = dataio.generate_plant(cfg, 400)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.temps, b.temps)
    plant = dataio.Plant(cfg)
    c = plant.run(123).append(plant.run(277))
    np.testing.assert_array_equal(c.values, a.values)
    np.testing.assert_array_equal(c.temps, a.temps)


def test_different_seeds_differ():
    a = dataio.generate_plant(PlantConfig(n_channels=6, seed=1), 200)
    b = dataio.generate_plant(PlantConfig(n_channels=6, seed=2), 200)
    assert not np.array_equal(a.values, b.values)


def test_zero_noise_constant_pci_converges():
    cfg = PlantConfig(n_channels=6, noise_std=0, disturbance_std=0, drift_amp=0, missing_rate=0, outlier_rate=0)
    plant = dataio.Plant(cfg)
    frame = plant.run(600, inputs=np.full(600, 0.7))
    t = frame.temps[:, 0]
    assert abs(t[-1] - t[-2]) < 1e-9
    expected = cfg.base_temp + cfg.response_gain * cfg.saturation * math.tanh(0.2 / cfg.saturation)
    assert t[-1] == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("delay", [120, 150, 180])
def test_step_response_starts_after_delay(delay):
    cfg = PlantConfig(n_channels=6, pci_delay_steps=delay, noise_std=0, disturbance_std=0, drift_amp=0,
                      missing_rate=0, outlier_rate=0)
    plant = dataio.Plant(cfg)
    plant.run(delay + 100, inputs=np.full(delay + 100, 0.5))  # flush the initial operator level
    u = np.full(delay + 200, 0.5)
    u[50:] = 0.8
    t = plant.run(len(u), inputs=u).temps[:, 0]
    before = t[: 50 + delay]
    assert np.ptp(before) < 1e-9
    assert t[50 + delay] > before[-1] + 1.0


@pytest.mark.parametrize("delay", [120, 165])
def test_xcorr_recovers_delay(delay):
    cfg = PlantConfig(n_channels=6, pci_delay_steps=delay, noise_std=1.0, outlier_rate=0, seed=4)
    frame = dataio.generate_plant(cfg, 6 * 1440)
    temp = np.nanmean(frame.temps, axis=1)
    temp = np.where(np.isnan(temp), np.nanmean(temp), temp)
    lag = dataio.xcorr_lag(frame.channel("pci"), temp, 240)
    assert abs(lag - delay) <= 5


def test_plant_config_validation():
    with pytest.raises(ValueError):
        PlantConfig(pci_delay_steps=100).validate()
    with pytest.raises(ValueError):
        PlantConfig(noise_std=-1).validate()
    with pytest.raises(ValueError):
        dataio.generate_plant(PlantConfig(), 100)


def test_plant_config_file(tmp_path):
    p = tmp_path / "plant.txt"
    p.write_text("seed = 7\nnoise_std = 0.5\ninformative = 1, 3\n")
    cfg = dataio.load_plant_config(p)
    assert cfg.seed == 7 and cfg.noise_std == 0.5 and cfg.informative == (1, 3)
    assert dataio.Plant(cfg).informative == (1, 3)


def test_pci_rate_examples():
    assert dataio.pci_rate(ReductantInputs(R_c=150, R_d=0, P=100)) == 150
    assert dataio.pci_rate(ReductantInputs(R_c=150, R_d=0.024, P=100)) == pytest.approx(50.0, abs=1e-12)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0, 1), st.floats(0, 500))
def test_pci_rate_affine_in_rc(rc, delta, rd, p):
    a = dataio.pci_rate(ReductantInputs(R_c=rc + delta, R_d=rd, P=p))
    b = dataio.pci_rate(ReductantInputs(R_c=rc, R_d=rd, P=p))
    assert a - b == pytest.approx(delta, abs=1e-9)


def test_rar_examples():
    assert dataio.rar(ReductantInputs(PCI_total=0, P_real=5, C_c=0, C_pb=3)) == 0
    assert dataio.rar(ReductantInputs(PCI_total=240 / 24, P_real=240, C_c=7, C_pb=7)) == pytest.approx(2000)


@given(st.floats(0, 1e3), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_rar_ratio_invariance(pci, p_real, scale):
    a = dataio.rar(ReductantInputs(PCI_total=pci, P_real=p_real, C_c=1, C_pb=2))
    b = dataio.rar(ReductantInputs(PCI_total=pci * scale, P_real=p_real * scale, C_c=1, C_pb=2))
    assert a == pytest.approx(b, rel=1e-9)


def test_rar_domain_errors():
    with pytest.raises(dataio.DomainError):
        dataio.rar(ReductantInputs(PCI_total=1, P_real=0, C_c=1, C_pb=1))
    with pytest.raises(dataio.DomainError):
        dataio.rar(ReductantInputs(PCI_total=1, P_real=1, C_c=1, C_pb=0))
    with pytest.raises(dataio.DomainError):
        dataio.rar(ReductantInputs(PCI_total=-1, P_real=1, C_c=1, C_pb=1))
