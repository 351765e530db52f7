"""End-to-end trained baselines: exact backward pass and training protocol."""

import numpy as np
import pytest

from conftest import fd_gradient, max_rel_err
from ffbench.bp import (
    BP_VARIANTS,
    BPNetwork,
    BPTrainConfig,
    bp_backward_and_step,
    bp_forward,
    bp_gradients,
    bp_loss,
    cross_entropy_loss,
    norm_backward,
    train_bp,
)
from ffbench.core import NORM_EPS, Rng, ShapeError, l2_normalize
from ffbench.ff import (
    DivergenceError,
    FFLayer,
    FFNetwork,
    ff_forward_all,
    goodness,
    layer_forward,
    layer_gradients,
    layer_loss,
)
from ffbench.tasks import make_task_batch, task_spec


class TestNormBackward:
    def test_matches_finite_differences(self):
        v = Rng(80).uniform(0.3, 1.5, (5, 4))
        grad_u = Rng(81).normal(0.0, 1.0, size=(5, 4))
        analytic = norm_backward(v, grad_u)

        def f():
            return float(np.sum(l2_normalize(v) * grad_u))

        numeric = fd_gradient(f, v)
        assert max_rel_err(analytic, numeric) < 1e-6

    def test_floor_branch_is_linear(self):
        # below the floor, u = v / eps exactly, so the pullback is grad_u / eps
        v = np.full((2, 3), 1e-10)
        grad_u = Rng(82).normal(0.0, 1.0, size=(2, 3))
        assert np.array_equal(norm_backward(v, grad_u), grad_u / NORM_EPS)

    def test_unit_vector_tangent_projection(self):
        # at |v| = 1 the pullback just removes the radial component
        v = np.array([[1.0, 0.0, 0.0]])
        grad_u = np.array([[2.0, 3.0, -1.0]])
        assert np.allclose(norm_backward(v, grad_u), [[0.0, 3.0, -1.0]], atol=1e-12)


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = np.zeros((5, 10))
        labels = np.arange(5, dtype=np.int64)
        assert cross_entropy_loss(logits, labels) == pytest.approx(np.log(10.0), abs=1e-12)

    def test_hand_value(self):
        logits = np.array([[0.0, np.log(3.0)]])
        assert cross_entropy_loss(logits, np.array([1])) == pytest.approx(
            -np.log(0.75), abs=1e-12
        )

    def test_label_range_check(self):
        with pytest.raises(ValueError):
            cross_entropy_loss(np.zeros((2, 3)), np.array([0, 3]))

    def test_zero_network_gradient_closed_form(self):
        # all-zero stack: softmax is uniform, head input is zero, so the head
        # bias gradient is exactly 1/C minus the class frequencies
        layers = [FFLayer(np.zeros((6, 4)), np.zeros(4))]
        head = FFLayer(np.zeros((4, 3)), np.zeros(3))
        net = BPNetwork(layers, "cross_entropy", head)
        batch = Rng(83).uniform(0.0, 1.0, (6, 6))
        labels = np.array([0, 0, 0, 1, 1, 2])
        loss, grads, head_grads = bp_gradients(net, batch, labels)
        assert loss == pytest.approx(np.log(3.0), abs=1e-12)
        assert np.array_equal(head_grads[0], np.zeros((4, 3)))
        freq = np.array([3, 2, 1]) / 6.0
        assert np.allclose(head_grads[1], 1.0 / 3.0 - freq, atol=1e-15)


class TestForwardAgreement:
    def test_same_activations_as_local_forward(self):
        rng = Rng(84)
        ff_net = FFNetwork.build(12, [8, 6, 4], rng)
        bp_net = BPNetwork(ff_net.layers, "goodness_all")
        batch = Rng(85).uniform(0.0, 1.0, (10, 12))
        acts_ff = ff_forward_all(ff_net, batch)
        acts_bp, scores, _ = bp_forward(bp_net, batch)
        assert len(acts_ff) == len(acts_bp) == 3
        for a, b in zip(acts_ff, acts_bp):
            assert np.array_equal(a, b)
        for h, s in zip(acts_bp, scores):
            assert np.array_equal(goodness(h, "mean_sq"), s)

    def test_normalize_flag_changes_deep_layers(self):
        rng = Rng(86)
        net_on = BPNetwork.build(12, [8, 4], rng, "goodness_all")
        net_off = BPNetwork(net_on.layers, "goodness_all", normalize=False)
        batch = Rng(87).uniform(0.5, 1.0, (4, 12))
        acts_on, _, _ = bp_forward(net_on, batch)
        acts_off, _, _ = bp_forward(net_off, batch)
        assert np.array_equal(acts_on[0], acts_off[0])
        assert not np.allclose(acts_on[1], acts_off[1])


class TestSingleLayerEquivalence:
    def test_goodness_last_matches_local_objective(self):
        rng = Rng(88)
        net = BPNetwork.build(6, [5], rng, "goodness_last")
        layer = net.layers[0]
        pos = Rng(89).uniform(0.1, 1.0, (8, 6))
        neg = Rng(90).uniform(0.1, 1.0, (8, 6))
        g_pos = goodness(layer_forward(layer, pos), "mean_sq")
        g_neg = goodness(layer_forward(layer, neg), "mean_sq")
        expect = layer_loss(g_pos, g_neg, net.theta)
        assert bp_loss(net, pos, neg) == pytest.approx(expect, abs=1e-12)

        loss, grads, _ = bp_gradients(net, pos, neg)
        local_loss, gw, gb = layer_gradients(layer, pos, neg, net.theta, "mean_sq")
        assert loss == pytest.approx(local_loss, abs=1e-14)
        assert max_rel_err(grads[0][0], gw) < 1e-12
        assert max_rel_err(grads[0][1], gb) < 1e-12

    def test_goodness_all_is_sum_of_layer_objectives(self):
        net = BPNetwork.build(10, [8, 6, 4], Rng(91), "goodness_all")
        pos = Rng(92).uniform(0.1, 1.0, (8, 10))
        neg = Rng(93).uniform(0.1, 1.0, (8, 10))
        acts_pos = ff_forward_all(FFNetwork(net.layers), pos)
        acts_neg = ff_forward_all(FFNetwork(net.layers), neg)
        expect = sum(
            layer_loss(goodness(hp, "mean_sq"), goodness(hn, "mean_sq"), net.theta)
            for hp, hn in zip(acts_pos, acts_neg)
        )
        assert bp_loss(net, pos, neg) == pytest.approx(expect, abs=1e-12)


def kink_safe_biases(net: BPNetwork, batches: list[np.ndarray], margin: float = 5e-3):
    """Set per-unit biases so every pre-activation keeps |z| > margin on the
    given batches, layer by layer down the stack."""
    xs = list(batches)
    for layer in net.layers:
        z0 = np.vstack([x @ layer.weight for x in xs])
        for j in range(layer.fan_out):
            for offset in np.arange(0.15, 3.2, 0.05):
                z = z0[:, j] + offset
                if np.any(z > 0) and np.min(np.abs(z)) > margin:
                    layer.bias[j] = offset
                    break
            else:
                raise AssertionError("no kink-safe bias offset found; pick another seed")
        new_xs = []
        for x in xs:
            h = np.maximum(x @ layer.weight + layer.bias, 0.0)
            new_xs.append(l2_normalize(h) if net.normalize else h)
        xs = new_xs


def make_bp_setup(width: int, variant: str, seed: int, normalize: bool = True, mode: str = "mean_sq"):
    rng = Rng(seed)
    fan_in = 5
    num_labels = 3 if variant == "cross_entropy" else None
    net = BPNetwork.build(fan_in, [width, width], rng, variant, num_labels, goodness_mode=mode)
    net.normalize = normalize
    batch = rng.uniform(0.1, 1.0, (6, fan_in))
    if variant == "cross_entropy":
        target = rng.integers(0, 3, size=6)
        kink_safe_biases(net, [batch])
    else:
        target = rng.uniform(0.1, 1.0, (6, fan_in))
        kink_safe_biases(net, [batch, target])
    return net, batch, target


def assert_bp_grads_match_fd(net: BPNetwork, batch, target):
    loss, grads, head_grads = bp_gradients(net, batch, target)

    def loss_fn():
        return bp_loss(net, batch, target)

    assert loss == pytest.approx(loss_fn(), abs=1e-12)
    params = [(layer.weight, gw) for layer, (gw, gb) in zip(net.layers, grads)]
    params += [(layer.bias, gb) for layer, (gw, gb) in zip(net.layers, grads)]
    if head_grads is not None:
        params += [(net.head.weight, head_grads[0]), (net.head.bias, head_grads[1])]
    scale = max(float(np.max(np.abs(g))) for _, g in params)
    assert scale > 1e-4, "gradients too small for a meaningful check"
    floor = max(1e-6, 1e-3 * scale)
    for param, analytic in params:
        numeric = fd_gradient(loss_fn, param)
        assert max_rel_err(analytic, numeric, floor=floor) < 1e-5


class TestFullBackwardPass:
    @pytest.mark.parametrize("width", [1, 3, 17])
    @pytest.mark.parametrize("variant", BP_VARIANTS)
    def test_matches_finite_differences(self, width, variant):
        net, batch, target = make_bp_setup(width, variant, seed=94)
        assert_bp_grads_match_fd(net, batch, target)

    @pytest.mark.parametrize("variant", BP_VARIANTS)
    def test_without_normalization(self, variant):
        net, batch, target = make_bp_setup(3, variant, seed=95, normalize=False)
        assert_bp_grads_match_fd(net, batch, target)

    @pytest.mark.parametrize("mode", ["sum_sq", "l2norm"])
    def test_other_goodness_modes(self, mode):
        net, batch, target = make_bp_setup(3, "goodness_all", seed=96, mode=mode)
        assert_bp_grads_match_fd(net, batch, target)

    def test_gradient_reaches_first_layer(self):
        net, batch, target = make_bp_setup(3, "goodness_last", seed=97)
        _, grads, _ = bp_gradients(net, batch, target)
        assert np.max(np.abs(grads[0][0])) > 1e-6

    def test_goodness_last_blind_where_goodness_all_sees(self):
        # last layer silent on the negative half (all units floored) and
        # saturated on the positive half: only the everywhere-active variant
        # still moves the first layer
        layers = [
            FFLayer(np.eye(2), np.zeros(2)),
            FFLayer(np.array([[10.0, -10.0], [0.0, 0.0]]).T, np.zeros(2)),
        ]
        pos = np.array([[3.0, 0.0]])
        neg = np.array([[0.0, 0.5]])
        net_last = BPNetwork(layers, "goodness_last")
        net_all = BPNetwork(
            [FFLayer(l.weight.copy(), l.bias.copy()) for l in layers], "goodness_all"
        )
        _, grads_last, _ = bp_gradients(net_last, pos, neg)
        _, grads_all, _ = bp_gradients(net_all, pos, neg)
        assert np.max(np.abs(grads_last[0][0])) < 1e-12
        assert np.max(np.abs(grads_all[0][0])) > 1e-4


class TestNetworkValidation:
    def test_head_presence_rules(self):
        layer = FFLayer(np.zeros((4, 3)), np.zeros(3))
        head = FFLayer(np.zeros((3, 2)), np.zeros(2))
        with pytest.raises(ValueError, match="head"):
            BPNetwork([layer], "cross_entropy")
        with pytest.raises(ValueError, match="head"):
            BPNetwork([layer], "goodness_all", head)

    def test_head_dim_check(self):
        layer = FFLayer(np.zeros((4, 3)), np.zeros(3))
        bad_head = FFLayer(np.zeros((5, 2)), np.zeros(2))
        with pytest.raises(ShapeError):
            BPNetwork([layer], "cross_entropy", bad_head)

    def test_unknown_variant(self):
        layer = FFLayer(np.zeros((4, 3)), np.zeros(3))
        with pytest.raises(ValueError, match="loss_variant"):
            BPNetwork([layer], "hinge")

    def test_build_requires_num_labels_for_head(self):
        with pytest.raises(ValueError, match="num_labels"):
            BPNetwork.build(6, [4], Rng(98), "cross_entropy")

    def test_shared_init_with_local_trainer(self):
        ff_net = FFNetwork.build(12, [8, 6], Rng(99))
        for variant in BP_VARIANTS:
            labels = 4 if variant == "cross_entropy" else None
            bp_net = BPNetwork.build(12, [8, 6], Rng(99), variant, labels)
            for a, b in zip(ff_net.layers, bp_net.layers):
                assert a.weight.tobytes() == b.weight.tobytes()
                assert a.bias.tobytes() == b.bias.tobytes()

    def test_step_requires_optimizer_state(self):
        net = BPNetwork.build(6, [4], Rng(100), "goodness_all")
        pos = Rng(101).uniform(0.1, 1.0, (4, 6))
        with pytest.raises(RuntimeError, match="optimizer"):
            bp_backward_and_step(net, pos, pos)


class TestTrainBP:
    def test_zero_epochs_is_identity(self, synth_train):
        net = BPNetwork.build(synth_train.flat_dim, [8], Rng(102), "goodness_all")
        before = net.layers[0].weight.copy()
        _, log = train_bp(net, synth_train, task_spec("rotation"), BPTrainConfig(epochs=0))
        assert log == []
        assert np.array_equal(net.layers[0].weight, before)

    def test_ce_learns_classify(self, synth_train):
        net = BPNetwork.build(
            synth_train.flat_dim, [16], Rng(103), "cross_entropy", synth_train.num_classes
        )
        cfg = BPTrainConfig(epochs=20, batch_size=64, learning_rate=0.005, seed=4)
        _, log = train_bp(net, synth_train, task_spec("classify", synth_train.num_classes), cfg)
        assert log[-1]["loss"] < log[0]["loss"]
        _, logits, _ = bp_forward(net, synth_train.flat())
        acc = float(np.mean(np.argmax(logits, axis=1) == synth_train.labels))
        assert acc > 0.9

    def test_ce_protocol_replica(self, synth_train):
        # one epoch, one batch: replaying the documented substream recipe by
        # hand must reproduce the trained weights bit for bit
        from ffbench.tasks import apply_task, sample_task_labels

        task = task_spec("rotation")
        cfg = BPTrainConfig(epochs=1, batch_size=synth_train.count, seed=6)
        net = BPNetwork.build(synth_train.flat_dim, [8], Rng(104), "cross_entropy", 4)
        train_bp(net, synth_train, task, cfg)

        twin = BPNetwork.build(synth_train.flat_dim, [8], Rng(104), "cross_entropy", 4)
        for layer in twin.layers + [twin.head]:
            layer.init_adam(cfg.learning_rate)
        rng = Rng(cfg.seed)
        perm = rng.child("shuffle").permutation(synth_train.count)
        task_rng = rng.child("task")
        rng.child("negative")  # created by the loop, unused by this variant
        labels = sample_task_labels(len(perm), task, task_rng)
        flat = apply_task(synth_train.images[perm], labels, task).reshape(len(perm), -1)
        bp_backward_and_step(twin, flat, labels)

        for a, b in zip(net.layers + [net.head], twin.layers + [twin.head]):
            assert a.weight.tobytes() == b.weight.tobytes()
            assert a.bias.tobytes() == b.bias.tobytes()

    def test_goodness_protocol_replica(self, synth_train):
        task = task_spec("flip_hv")
        cfg = BPTrainConfig(epochs=1, batch_size=synth_train.count, seed=7)
        net = BPNetwork.build(synth_train.flat_dim, [8], Rng(105), "goodness_all")
        train_bp(net, synth_train, task, cfg)

        twin = BPNetwork.build(synth_train.flat_dim, [8], Rng(105), "goodness_all")
        for layer in twin.layers:
            layer.init_adam(cfg.learning_rate)
        rng = Rng(cfg.seed)
        perm = rng.child("shuffle").permutation(synth_train.count)
        task_rng = rng.child("task")
        neg_rng = rng.child("negative")
        pos, neg, _ = make_task_batch(synth_train.images[perm], task, task_rng, None, neg_rng)
        bp_backward_and_step(twin, pos, neg)

        for a, b in zip(net.layers, twin.layers):
            assert a.weight.tobytes() == b.weight.tobytes()

    def test_bitwise_deterministic(self, synth_train):
        weights = []
        for _ in range(2):
            net = BPNetwork.build(synth_train.flat_dim, [8], Rng(106), "goodness_last")
            train_bp(net, synth_train, task_spec("rotation"), BPTrainConfig(epochs=2, seed=8))
            weights.append(net.layers[0].weight.tobytes())
        assert weights[0] == weights[1]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises(self, synth_train):
        layer = FFLayer(np.full((synth_train.flat_dim, 8), 1e200), np.zeros(8))
        net = BPNetwork([layer], "goodness_all")
        with pytest.raises(DivergenceError, match="epoch 0"):
            train_bp(net, synth_train, task_spec("rotation"), BPTrainConfig(epochs=1))
