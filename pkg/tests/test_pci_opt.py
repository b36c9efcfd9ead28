import numpy as np
import pytest

from bfopt import autodiff as ad
from bfopt import models, pci_opt
from bfopt.models import ModelSpec
from bfopt.preprocess import MinMaxScaler
from fdcheck import central_diff, rel_err

FEATURES = ["a", "pci", "temperature"]
STEPS, H = 6, 3


def small_mall(seed=0):
    return models.build(ModelSpec(kind="mall", n_features=3, hidden=5, steps=STEPS, horizon=H, seed=seed))


def scaler():
    raw = np.array([[0.0, 80.0, 1480.0], [1.0, 120.0, 1540.0]])
    return MinMaxScaler().fit(raw, FEATURES)


def problem(seed=0, penalty=1.0):
    hist = np.random.default_rng(seed).uniform(0, 1, size=(STEPS, 3))
    return pci_opt.OptimProblem.build(hist, scaler(), FEATURES, 1510.0, penalty, H)


def test_problem_scales_target():
    p = problem()
    assert p.target_scaled == pytest.approx(0.5)
    assert (p.pci_col, p.temp_col) == (1, 2)
    with pytest.raises(ValueError):
        pci_opt.OptimProblem.build(np.zeros((STEPS, 2)), scaler(), FEATURES)


def test_stack_with_zeroed_pci():
    rng = np.random.default_rng(0)
    hist, fut = rng.uniform(size=(STEPS, 3)), rng.uniform(size=(H, 3))
    s = pci_opt.stack_with_zeroed_pci(hist, fut, 1)
    assert s.shape == (STEPS + H, 3)
    np.testing.assert_array_equal(s[:STEPS], hist)
    np.testing.assert_array_equal(s[STEPS:, 1], 0.0)
    np.testing.assert_array_equal(s[STEPS:, [0, 2]], fut[:, [0, 2]])
    assert fut[0, 1] != 0.0  # the caller's array is not modified
    with pytest.raises(ad.ShapeError):
        pci_opt.stack_with_zeroed_pci(hist, fut[:, :2], 1)


def test_baseline_predict_shape_and_determinism():
    m = small_mall()
    hist = problem().history
    a = pci_opt.baseline_predict(m, hist)
    assert a.shape == (H, 3)
    np.testing.assert_array_equal(a, pci_opt.baseline_predict(m, hist))
    with pytest.raises(ValueError):
        pci_opt.baseline_predict(None, hist)


def test_zero_weight_policy_is_bias():
    pol = pci_opt.new_policy_model(3, STEPS, H)
    pol.params["linear.W"].data[...] = 0.0
    pol.params["linear.b"].data[...] = [0.1, 0.2, 0.3]
    out = pci_opt.propose_policy(pol, np.random.default_rng(0).uniform(size=(STEPS + H, 3))).data
    np.testing.assert_array_equal(out, [0.1, 0.2, 0.3])


def test_consistency_with_plain_rollout():
    m = small_mall(1)
    hist = problem(1).history
    fut = pci_opt.baseline_predict(m, hist)
    temps = pci_opt.simulate_policy(m, hist, fut, fut[:, 1], 1, 2).data
    window = np.vstack([hist, fut])[-STEPS:]
    np.testing.assert_allclose(temps, m.predict(window[None])[0, :, 2], atol=1e-15)


def test_policy_changes_temps_and_leaves_other_channels():
    m = small_mall(2)
    hist = problem(2).history
    fut = pci_opt.baseline_predict(m, hist)
    fut_copy = fut.copy()
    a = pci_opt.simulate_policy(m, hist, fut, np.zeros(H), 1, 2).data
    b = pci_opt.simulate_policy(m, hist, fut, np.ones(H), 1, 2).data
    assert a.shape == (H,) and not np.allclose(a, b)
    np.testing.assert_array_equal(fut, fut_copy)
    with pytest.raises(ad.ShapeError):
        pci_opt.simulate_policy(m, hist, fut, np.zeros((2, 2)), 1, 2)


def test_composite_loss_examples():
    p = problem()
    on_target = np.full(H, p.target_scaled)
    assert pci_opt.composite_loss(on_target, np.array([0.0, 0.5, 1.0]), p).item() == 0.0
    assert pci_opt.composite_loss(on_target, np.array([1.2, 0.5, 0.5]), p).item() == pytest.approx(0.2)
    assert pci_opt.composite_loss(on_target, np.array([-0.1, 0.5, 0.5]), problem(penalty=3.0)).item() == \
        pytest.approx(0.3)
    assert pci_opt.composite_loss(on_target + 0.1, np.full(H, 0.5), p).item() == pytest.approx(0.3)
    assert pci_opt.composite_loss(on_target, np.full(H, 0.5), p).item() == 0.0
    with pytest.raises(pci_opt.UnitMismatch):
        pci_opt.composite_loss(on_target, np.full(H, 0.5), p, fingerprint="other")


@pytest.mark.parametrize("seed", range(3))
def test_loss_gradient_through_full_graph(seed):
    m = small_mall(seed).frozen()
    p = problem(seed)
    pol = pci_opt.new_policy_model(3, STEPS, H, seed)
    stacked = pci_opt.stack_with_zeroed_pci(p.history, pci_opt.baseline_predict(m, p.history), 1)
    # push some policy values outside [0, 1] so both loss terms are active
    pol.params["linear.b"].data[:] = [1.3, -0.2, 0.4]

    def loss():
        policy = pci_opt.propose_policy(pol, stacked)
        return pci_opt.composite_loss(pci_opt.simulate_stacked(m, stacked, policy, 1, 2), policy, p)

    pol.zero_grad()
    ad.backward(loss())
    for name, t in pol.params.items():
        fd = central_diff(lambda: loss().item(), t.data, h=1e-7)
        assert rel_err(t.grad, fd) < 1e-5, name


def test_zero_iterations_returns_initial_policy():
    m, p = small_mall(), problem()
    pol = pci_opt.new_policy_model(3, STEPS, H)
    w0 = pol.flat()
    res = pci_opt.optimize(p, m, pol, iterations=0)
    assert res.iteration == 0 and res.loss == res.initial_loss
    np.testing.assert_array_equal(pol.flat(), w0)
    assert len(res.trace) == 1


def test_best_so_far_monotone_and_mall_frozen():
    m, p = small_mall(3), problem(3)
    before = m.flat().copy()
    losses = []
    for k in (0, 5, 20, 60):
        res = pci_opt.optimize(p, m, pci_opt.new_policy_model(3, STEPS, H, 0),
                               pci_opt.OptimConfig(lr=1e-2), iterations=k, scaler=scaler())
        losses.append(res.loss)
        assert res.within_bounds
        assert res.loss <= res.initial_loss
        assert np.all(np.isfinite(res.predicted_T))
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]
    assert np.array_equal(m.flat(), before)


def test_optimize_checks_fingerprint_and_divergence():
    m, p = small_mall(), problem()
    with pytest.raises(pci_opt.UnitMismatch):
        pci_opt.optimize(p, m, pci_opt.new_policy_model(3, STEPS, H), iterations=1, mall_fingerprint="x")
    pol = pci_opt.new_policy_model(3, STEPS, H)
    pol.params["linear.b"].data[:] = 1e7
    with pytest.raises(pci_opt.OptimizationDiverged):
        pci_opt.optimize(p, m, pol, iterations=1)


def test_trace_csv():
    res = pci_opt.optimize(problem(), small_mall(), pci_opt.new_policy_model(3, STEPS, H), iterations=2,
                           scaler=scaler())
    lines = pci_opt.trace_to_csv(res, scaler()).splitlines()
    assert lines[0].split(",")[:4] == ["iteration", "loss", "raw_loss", "pci1"]
    assert len(lines) == 4


def test_closed_loop_stats():
    n = 10
    res = pci_opt.ClosedLoopResult(
        minutes=np.arange(n), pci_controlled=np.zeros(n), pci_uncontrolled=np.zeros(n),
        temp_controlled=np.r_[np.full(5, 1600.0), np.full(5, 1512.0)],
        temp_uncontrolled=np.full(n, 1490.0), temp_predicted=np.full(n, np.nan),
        eval_start=5, target=1510.0, band=10.0)
    s = res.stats()
    assert s["controlled"]["mean_abs_dev"] == 2.0 and s["uncontrolled"]["mean_abs_dev"] == 20.0
    assert s["mean_dev_ratio"] == pytest.approx(0.1)
    assert s["controlled"]["within_band_frac"] == 1.0 and s["uncontrolled"]["within_band_frac"] == 0.0
    assert res.to_csv().splitlines()[0] == "time,pci_applied,realized_T,predicted_T,pci_uncontrolled,uncontrolled_T"
