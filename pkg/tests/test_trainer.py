import numpy as np
import pytest

from sdmseg.edt import sdm_volume
from sdmseg.errors import ConfigurationError
from sdmseg.nn import NetworkConfig
from sdmseg.phantom import PhantomSpec, generate
from sdmseg.trainer import (
    AdamState,
    TrainCase,
    TrainConfig,
    adam_step,
    evaluate_loss,
    infer,
    labels_from_sdm,
    lr_at,
    train,
)
from sdmseg.volume import LabelVolume, ScalarVolume


def sphere_case(seed=0, dims=(16, 16, 16), r=5.0):
    img, lab = generate(PhantomSpec(dims=dims, radii=((r, r, r),), seed=seed, fg_std=0.1, bg_std=0.1))
    return TrainCase(img, lab, sdm_volume(lab))


def test_lr_schedule_examples():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == 5e-4
    assert lr_at(24, cfg) == 5e-4
    assert lr_at(25, cfg) == pytest.approx(4e-4, rel=1e-15)
    assert lr_at(50, cfg) == pytest.approx(3.2e-4, rel=1e-15)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(mode="adversarial")
    with pytest.raises(ConfigurationError):
        TrainConfig(lr0=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(epochs=0)
    assert TrainConfig(mode="dice-only").head == "seg-sigmoid"
    assert TrainConfig(mode="l1-joint").head == "sdm-tanh"


def test_adam_first_step():
    p = {"w": np.zeros(3)}
    adam_step(p, {"w": np.array([2.0, -2.0, 0.0])}, AdamState(), 1e-3, TrainConfig())
    assert p["w"] == pytest.approx([-1e-3, 1e-3, 0.0], rel=1e-7)


def test_adam_zero_grad_decays_moments():
    p = {"w": np.array([1.0])}
    st = AdamState()
    adam_step(p, {"w": np.array([1.0])}, st, 1e-3, TrainConfig())
    before = p["w"].copy()
    m0, v0 = st.m["w"].copy(), st.v["w"].copy()
    adam_step(p, {"w": np.array([0.0])}, st, 0.0, TrainConfig())
    assert np.array_equal(p["w"], before)
    assert st.m["w"] == pytest.approx(0.9 * m0) and st.v["w"] == pytest.approx(0.999 * v0)


def test_adam_matches_scalar_reference():
    cfg = TrainConfig()
    rng = np.random.default_rng(0)
    grads = rng.standard_normal((2, 4))
    p = {"w": np.ones(4)}
    st = AdamState()
    for g in grads:
        adam_step(p, {"w": g}, st, 1e-2, cfg)
    for j in range(4):
        w, m, v = 1.0, 0.0, 0.0
        for t, g in enumerate(grads[:, j], start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w -= 1e-2 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert p["w"][j] == w


def test_training_reduces_loss():
    params, log = train([sphere_case()], NetworkConfig(), TrainConfig(epochs=200, seed=1))
    assert log.records[-1].total < log.records[0].total
    assert len(log.records) == 200


def test_bit_identical_logs_and_lr():
    cases = [sphere_case(0), sphere_case(1)]
    cfg = TrainConfig(epochs=30, seed=5)
    p1, l1 = train(cases, NetworkConfig(), cfg)
    p2, l2 = train(cases, NetworkConfig(), cfg)
    assert [r.values() for r in l1.records] == [r.values() for r in l2.records]
    assert all(np.array_equal(p1[k].data, p2[k].data) for k in p1)
    assert all(r.lr == lr_at(r.epoch, cfg) for r in l1.records)
    assert l1.to_csv().splitlines()[-1] == l2.to_csv().splitlines()[-1]


def test_dice_only_logs_no_sdm_terms():
    _, log = train([sphere_case()], NetworkConfig(), TrainConfig(mode="dice-only", epochs=2))
    r = log.records[0]
    assert r.dice_loss is not None and r.l1_loss is None and r.product_loss is None
    assert ",dice_loss,l1_loss," in log.to_csv()


@pytest.mark.parametrize("mode,present", [
    ("sdm-only", (False, True, True)),
    ("l1-joint", (True, True, False)),
    ("sdm-joint", (True, True, True)),
])
def test_mode_components(mode, present):
    _, log = train([sphere_case()], NetworkConfig(), TrainConfig(mode=mode, epochs=1))
    r = log.records[0]
    assert tuple(v is not None for v in (r.dice_loss, r.l1_loss, r.product_loss)) == present


def test_indivisible_dims_rejected_before_training():
    case = sphere_case(dims=(18, 16, 16), r=4.0)
    with pytest.raises(ConfigurationError):
        train([case], NetworkConfig(), TrainConfig(epochs=1))


def test_logged_loss_matches_snapshot_recompute():
    case = sphere_case()
    cfg = TrainConfig(epochs=6, snapshot_every=2, seed=2)
    _, log = train([case], NetworkConfig(), cfg)
    assert sorted(log.snapshots) == [0, 2, 4]
    for epoch, snap in log.snapshots.items():
        _, total = evaluate_loss(case, snap, NetworkConfig(), cfg)
        assert total == log.records[epoch].total


def test_labels_from_sdm_rules():
    assert not labels_from_sdm(np.full((1, 2, 2, 2), 0.2)).any()
    sdm = np.zeros((2, 1, 1, 1))
    sdm[0], sdm[1] = -0.3, -0.1
    assert labels_from_sdm(sdm).item() == 1
    sdm[1] = -0.5
    assert labels_from_sdm(sdm).item() == 2


def test_infer_shapes_and_heads():
    case = sphere_case()
    params, _ = train([case], NetworkConfig(), TrainConfig(epochs=1))
    sdm, lab = infer(case.image, params, NetworkConfig())
    assert sdm.data.shape == (1, 16, 16, 16) and lab.dims == (16, 16, 16)
    params, _ = train([case], NetworkConfig(), TrainConfig(mode="dice-only", epochs=1))
    probs, lab = infer(case.image, params, NetworkConfig(head="seg-sigmoid"))
    assert len(probs) == 1 and isinstance(probs[0], ScalarVolume)
    assert np.array_equal(lab.data, (probs[0].data > 0.5).astype(np.uint8))


def test_ground_truth_sdm_thresholds_to_labels():
    data = np.zeros((8, 8, 8), np.uint8)
    data[1:4, 1:4, 1:4] = 1
    data[4:7, 4:8, 2:6] = 2
    lv = LabelVolume(data, num_classes=2)
    assert np.array_equal(labels_from_sdm(sdm_volume(lv).data), data)
