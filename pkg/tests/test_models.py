import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from utgpose.cirproc import Ecir
from utgpose.errors import InputRangeError, MissingModelError, WindowNotReadyError
from utgpose.imusim import ImuSample, ImuWindow
from utgpose.models import (LOS_FILTERS, LOS_KERNELS, EwmaState, LosDecision, LosModel,
                            PoseModel, build_los_classifier, build_pose_detector, classify_los,
                            decide_los, detect_pose, ewma_update, load_bundle, load_los_model,
                            normalize_ecir, pose_from_branch, pose_target, save_los_model,
                            save_pose_model, smooth, train_pose_detector)
from utgpose.neural import TrainConfig
from utgpose.poses import Condition, Pose


class FixedScorer:
    def __init__(self, p):
        self.p = p

    def prob(self, *args, **kwargs):
        return self.p


def full_window():
    w = ImuWindow()
    for k in range(18):
        w.push(ImuSample(60.0 * k, (0.0, 0.0, 0.0), (0.0, 9.81, 0.0)))
    return w


# --- architectures ---------------------------------------------------------

def test_los_classifier_trace():
    net = build_los_classifier()
    lengths = [s[0] for k, s in net.shape_trace if k in ("Input", "Conv1D", "MaxPool")]
    assert lengths == [135, 131, 65, 55, 27, 11, 5, 1, 1]
    assert net.output_shape == (1,)
    p = net.forward(np.random.default_rng(0).uniform(0, 5, (135, 1)))
    assert p.shape == (1, 1) and 0 < p.item() < 1


def test_los_classifier_param_count():
    expected, c_in = 0, 1
    for k, f in zip(LOS_KERNELS, LOS_FILTERS):
        expected += k * c_in * f + f + 2 * f  # conv + instance-norm affine
        c_in = f
    expected += 1 * 512 + 1
    assert build_los_classifier().n_params == expected == 1_306_241


def test_pose_detector_trace_and_branches():
    a = build_pose_detector(Condition.LOS)
    b = build_pose_detector(Condition.NLOS)
    assert a.manifest()["layers"] == b.manifest()["layers"]
    assert all(min(s) >= 1 for _, s in a.shape_trace)
    trace = [s for k, s in a.shape_trace if k in ("Input", "Conv2D", "MaxPool")]
    assert trace == [(18, 6, 1), (17, 5, 64), (8, 5, 64), (7, 4, 128), (7, 2, 128),
                     (6, 1, 256), (3, 1, 256)]
    wa = next(a.named_params())[1]
    wb = next(b.named_params())[1]
    assert not np.array_equal(wa, wb)
    p = a.forward(np.random.default_rng(1).normal(size=(18, 6, 1)))
    assert 0 < p.item() < 1


# --- EWMA ------------------------------------------------------------------

def test_ewma_step_response():
    y = smooth([0.0] + [1.0] * 8)
    assert np.allclose(y[1:], 1 - 0.8 ** np.arange(1, 9))
    assert int(np.argmax(y >= 0.5)) == 4


def test_ewma_constant_and_first_value():
    assert np.allclose(smooth([0.37] * 10), 0.37)
    s = ewma_update(EwmaState(), 0.3)
    assert s.y == 0.3 and s.initialized


def test_ewma_alternating_bounded():
    y = smooth([0.0, 1.0] * 100)
    tail = y[100:]
    assert tail.min() > 0 and tail.max() < 1
    # the two-step fixed points are 4/9 (after a 0) and 5/9 (after a 1)
    assert np.allclose(tail[0::2], 4 / 9) and np.allclose(tail[1::2], 5 / 9)
    assert not (tail.min() < 0.2 and tail.max() > 0.8)


def test_ewma_input_range():
    with pytest.raises(InputRangeError):
        ewma_update(EwmaState(), 1.2)
    with pytest.raises(InputRangeError):
        ewma_update(EwmaState(), -0.01)


@settings(max_examples=100)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
def test_ewma_bounded_by_inputs(xs):
    y = smooth(xs)
    assert y[0] == xs[0]
    for i in range(len(xs)):
        assert min(xs[:i + 1]) - 1e-12 <= y[i] <= max(xs[:i + 1]) + 1e-12


@given(st.lists(st.floats(0, 0.4999), min_size=1, max_size=40))
def test_smoothing_never_hallucinates(xs):
    assert (smooth(xs) < 0.5).all()


# --- decisions -------------------------------------------------------------

def test_outlier_suppressed():
    state = EwmaState()
    labels = []
    for raw in [0.9, 0.1, 0.9, 0.9]:
        d, state = decide_los(raw, state)
        labels.append(d.label)
    assert labels == [Condition.NLOS] * 4


def test_first_decision():
    d, _ = decide_los(0.3, EwmaState())
    assert d == LosDecision(0.3, 0.3, Condition.LOS)
    d, _ = decide_los(0.5, EwmaState())
    assert d.label is Condition.NLOS


def test_classify_los_with_scorer():
    ecir = Ecir(np.ones(135), 10)
    d, state = classify_los(ecir, FixedScorer(0.8), EwmaState(), max_noise=1.0)
    assert d.label is Condition.NLOS and state.y == 0.8


def test_detect_pose_branches():
    w = full_window()
    los = LosDecision(0.1, 0.1, Condition.LOS)
    nlos = LosDecision(0.9, 0.9, Condition.NLOS)
    assert detect_pose(los, w, FixedScorer(0.9), FixedScorer(0.0)) is Pose.FRONT
    assert detect_pose(nlos, w, FixedScorer(0.9), FixedScorer(0.1)) is Pose.NLOS_HAND
    assert detect_pose(los, w, FixedScorer(0.5), FixedScorer(0.0)) is Pose.FRONT
    assert detect_pose(nlos, w, FixedScorer(0.0), FixedScorer(0.7)) is Pose.BACK
    with pytest.raises(WindowNotReadyError):
        detect_pose(los, ImuWindow(), FixedScorer(0.9), FixedScorer(0.0))


@given(st.floats(0, 1), st.sampled_from(list(Condition)))
def test_pose_respects_branch(p, label):
    pose = pose_from_branch(label, p)
    assert pose.condition is label
    # monotone rescaling fixing 0.5 leaves the decision unchanged
    assert pose_from_branch(label, p ** 3 / (p ** 3 + (1 - p) ** 3) if 0 < p < 1 else p) is pose


def test_pose_target():
    assert [pose_target(p) for p in Pose] == [0, 0, 1, 1]


def test_normalize_ecir():
    assert np.allclose(normalize_ecir(np.array([2.0, 4.0]), 2.0), [1, 2])
    with pytest.raises(ValueError):
        normalize_ecir(np.ones(3), 0.0)


# --- training & persistence ------------------------------------------------

def test_branch_isolation():
    rng = np.random.default_rng(0)
    nlos_model = PoseModel(build_pose_detector(Condition.NLOS))
    before = [p.copy() for _, p in nlos_model.net.named_params()]
    windows = rng.normal(size=(20, 18, 6))
    poses = [Pose.LOS_HAND, Pose.FRONT] * 10
    train_pose_detector(Condition.LOS, windows, poses, TrainConfig(max_epochs=1, batch_size=10))
    after = [p for _, p in nlos_model.net.named_params()]
    assert all(np.array_equal(a, b) for a, b in zip(before, after))
    with pytest.raises(ValueError):
        train_pose_detector(Condition.LOS, windows, [Pose.BACK] * 20)


def test_bundle_roundtrip(tmp_path):
    save_los_model(tmp_path, LosModel(build_los_classifier(seed=3)))
    with pytest.raises(MissingModelError):
        load_bundle(tmp_path)
    for b in Condition:
        save_pose_model(tmp_path, b, PoseModel(build_pose_detector(b), np.arange(6.0), np.ones(6) * 2))
    bundle = load_bundle(tmp_path)
    assert bundle.alpha == 0.8 and bundle.threshold == 0.5
    assert np.array_equal(bundle.pose[Condition.NLOS].mean, np.arange(6.0))
    los, meta = load_los_model(tmp_path)
    assert meta["normalization"] == "divide by max_noise"
    x = np.random.default_rng(0).uniform(0, 3000, 135)
    assert los.prob(x, 1400.0) == LosModel(build_los_classifier(seed=3)).prob(x, 1400.0)


def test_missing_model(tmp_path):
    with pytest.raises(MissingModelError):
        load_los_model(tmp_path)
