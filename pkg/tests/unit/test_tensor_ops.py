"""Unit tests for the tensor operations and their gradients."""

import math

import numpy as np
import pytest

from bgcut.errors import NonFiniteError, PreconditionError, ShapeError
from bgcut.tensor import (
    SGD,
    Tape,
    Variable,
    add,
    add_n,
    batch_norm,
    conv2d,
    conv2d_transpose,
    global_avg_pool,
    l2_loss,
    max_pool2d,
    one_hot,
    relu,
    softmax_ce_loss,
    softmax_channel,
    upsample,
    weighted_sum,
)
from bgcut.tensor.gradcheck import check_gradients
from bgcut.tensor.ops import bilinear_matrix, conv_output_size


def reference_conv(x, w, b, stride, pad, dilation):
    """Direct nested-loop cross-correlation."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = conv_output_size(h, kh, stride, pad, dilation)
    wo = conv_output_size(wd, kw, stride, pad, dilation)
    out = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for i in range(n):
        for o in range(cout):
            for y in range(ho):
                for x_ in range(wo):
                    acc = b[o]
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (
                                    xp[i, c, y * stride + u * dilation, x_ * stride + v * dilation]
                                    * w[o, c, u, v]
                                )
                    out[i, o, y, x_] = acc
    return out


def away_from_zero(rng, shape):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.2, 1.0, size=shape)


@pytest.mark.unit
class TestConv2d:
    """Tests for conv2d."""

    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("pad", [0, 1])
    @pytest.mark.parametrize("dilation", [1, 2])
    def test_matches_direct_loop(self, stride, pad, dilation):
        """Test conv2d against the nested-loop reference at 32-bit."""
        rng = np.random.default_rng(stride * 100 + pad * 10 + dilation)
        x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)

        out = conv2d(x, w, b, stride=stride, pad=pad, dilation=dilation).value
        expected = reference_conv(
            x.astype(np.float64), w.astype(np.float64), b.astype(np.float64), stride, pad, dilation
        )

        assert out.shape == expected.shape
        assert np.max(np.abs(out - expected)) < 1e-5

    def test_output_shape(self):
        """Test stride 2 pad 1 on 8×8 gives 4×4."""
        x = np.zeros((2, 3, 8, 8), dtype=np.float32)
        w = np.zeros((4, 3, 3, 3), dtype=np.float32)

        assert conv2d(x, w, stride=2, pad=1).shape == (2, 4, 4, 4)

    def test_channel_mismatch_raises(self):
        """Test that mismatched input channels are rejected."""
        with pytest.raises(ShapeError):
            conv2d(np.zeros((1, 2, 8, 8)), np.zeros((4, 3, 3, 3)))

    def test_gradients(self):
        """Test conv2d gradients against central differences."""
        rng = np.random.default_rng(1)
        result = check_gradients(
            lambda v: conv2d(v[0], v[1], v[2], stride=2, pad=1),
            [
                rng.standard_normal((2, 3, 6, 6)),
                rng.standard_normal((4, 3, 3, 3)),
                rng.standard_normal(4),
            ],
        )

        assert result.max_relative_error < 1e-4

    def test_dilated_gradients(self):
        """Test dilated conv2d gradients."""
        rng = np.random.default_rng(2)
        result = check_gradients(
            lambda v: conv2d(v[0], v[1], v[2], stride=1, pad=2, dilation=2),
            [
                rng.standard_normal((1, 2, 7, 7)),
                rng.standard_normal((3, 2, 3, 3)),
                rng.standard_normal(3),
            ],
        )

        assert result.max_relative_error < 1e-4


@pytest.mark.unit
class TestConvTranspose2d:
    """Tests for conv2d_transpose."""

    def test_doubles_resolution(self):
        """Test kernel 4, stride 2, pad 1 doubles H and W."""
        x = np.zeros((1, 3, 5, 7), dtype=np.float32)
        w = np.zeros((3, 2, 4, 4), dtype=np.float32)

        assert conv2d_transpose(x, w, stride=2, pad=1).shape == (1, 2, 10, 14)

    def test_is_adjoint_of_conv(self):
        """Test conv2d_transpose equals the input gradient of conv2d."""
        rng = np.random.default_rng(3)
        x = Variable(rng.standard_normal((2, 3, 8, 8)), requires_grad=True)
        w = rng.standard_normal((5, 3, 4, 4))
        upstream = rng.standard_normal((2, 5, 4, 4))

        with Tape() as tape:
            out = conv2d(x, w, stride=2, pad=1)
        tape.backward(out, upstream)
        adjoint = conv2d_transpose(upstream, w, stride=2, pad=1).value

        assert adjoint.shape == x.shape
        assert np.max(np.abs(adjoint - x.grad)) < 1e-6

    def test_gradients(self):
        """Test conv2d_transpose gradients against central differences."""
        rng = np.random.default_rng(4)
        result = check_gradients(
            lambda v: conv2d_transpose(v[0], v[1], v[2], stride=2, pad=1),
            [
                rng.standard_normal((2, 3, 4, 4)),
                rng.standard_normal((3, 2, 4, 4)),
                rng.standard_normal(2),
            ],
        )

        assert result.max_relative_error < 1e-4


@pytest.mark.unit
class TestBatchNorm:
    """Tests for batch_norm."""

    def test_training_normalises_batch(self):
        """Test per-channel mean 0 and variance 1 with unit gamma and zero beta."""
        rng = np.random.default_rng(5)
        x = rng.normal(3.0, 2.0, (4, 3, 5, 5))
        out = batch_norm(
            x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), training=True, eps=0.0
        ).value

        assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
        assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-5)

    def test_training_updates_running_statistics(self):
        """Test running buffers move towards the batch statistics with momentum 0.9."""
        x = np.full((2, 1, 2, 2), 5.0)
        running_mean = np.zeros(1)
        running_var = np.ones(1)

        batch_norm(x, np.ones(1), np.zeros(1), running_mean, running_var, training=True)

        assert running_mean[0] == pytest.approx(0.5)
        assert running_var[0] == pytest.approx(0.9)

    def test_inference_uses_running_statistics(self):
        """Test inference mode normalises with the stored buffers."""
        x = np.full((1, 1, 2, 2), 4.0)
        out = batch_norm(
            x, np.array([2.0]), np.array([1.0]), np.array([2.0]), np.array([4.0]), eps=0.0
        ).value

        assert np.allclose(out, 2.0 * (4.0 - 2.0) / 2.0 + 1.0)

    @pytest.mark.parametrize("training", [True, False])
    def test_gradients(self, training):
        """Test batch_norm gradients in both modes."""
        rng = np.random.default_rng(6)

        def build(v):
            return batch_norm(
                v[0], v[1], v[2], np.full(3, 0.1), np.full(3, 1.5), training=training
            )

        result = check_gradients(
            build,
            [rng.standard_normal((3, 3, 4, 4)), rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)],
        )

        assert result.max_relative_error < 1e-4


@pytest.mark.unit
class TestPooling:
    """Tests for max and global average pooling."""

    def test_global_avg_pool_plane(self):
        """Test [1,2,3,4] averages to 2.5."""
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)

        assert global_avg_pool(x).value.item() == pytest.approx(2.5)

    def test_global_avg_pool_gradient_spreads_evenly(self):
        """Test every pixel receives upstream / (H·W)."""
        x = Variable(np.random.default_rng(7).standard_normal((2, 3, 4, 5)), requires_grad=True)
        upstream = np.arange(6, dtype=np.float64).reshape(2, 3, 1, 1)

        with Tape() as tape:
            out = global_avg_pool(x)
        tape.backward(out, upstream)

        assert np.allclose(x.grad, np.broadcast_to(upstream / 20.0, x.shape))

    def test_max_pool_padding_never_wins(self):
        """Test padded positions never beat negative inputs."""
        x = -np.ones((1, 1, 3, 3))
        out = max_pool2d(x, kernel=3, stride=2, pad=1).value

        assert out.shape == (1, 1, 2, 2)
        assert np.all(out == -1.0)

    def test_max_pool_gradients(self):
        """Test max_pool2d gradients on inputs without ties."""
        rng = np.random.default_rng(8)
        x = rng.permutation(2 * 3 * 7 * 7).reshape(2, 3, 7, 7) * 0.1

        result = check_gradients(lambda v: max_pool2d(v[0], kernel=3, stride=2, pad=1), [x])

        assert result.max_relative_error < 1e-4


@pytest.mark.unit
class TestUpsample:
    """Tests for bilinear and tile upsampling."""

    def test_bilinear_matrix_2_to_4(self):
        """Test the align-corners-false interpolation table for 2 → 4."""
        expected = np.array([[1.0, 0.0], [0.75, 0.25], [0.25, 0.75], [0.0, 1.0]])

        assert np.allclose(bilinear_matrix(2, 4, np.float64), expected)

    def test_bilinear_2x2_to_4x4(self):
        """Test a 2×2 plane against the hand interpolation table."""
        a, b, c, d = 1.0, 2.0, 3.0, 5.0
        x = np.array([[a, b], [c, d]]).reshape(1, 1, 2, 2)
        m = np.array([[1.0, 0.0], [0.75, 0.25], [0.25, 0.75], [0.0, 1.0]])

        out = upsample(x, 4, 4).value[0, 0]

        assert np.allclose(out, m @ np.array([[a, b], [c, d]]) @ m.T)
        assert out[1, 1] == pytest.approx(0.75 * 0.75 * a + 0.75 * 0.25 * (b + c) + 0.0625 * d)

    def test_same_size_is_identity(self):
        """Test resampling to the input size returns the input."""
        x = np.random.default_rng(9).standard_normal((1, 2, 5, 6))

        assert np.allclose(upsample(x, 5, 6).value, x)

    def test_tile_broadcasts(self):
        """Test tile mode copies a 1×1 map to every pixel."""
        x = np.array([1.0, -2.0]).reshape(1, 2, 1, 1)
        out = upsample(x, 3, 4, mode="tile").value

        expected = np.empty((1, 2, 3, 4))
        for i in range(3):
            for j in range(4):
                expected[0, :, i, j] = x[0, :, 0, 0]
        assert np.array_equal(out, expected)

    def test_tile_requires_1x1(self):
        """Test tile mode rejects larger maps."""
        with pytest.raises(ShapeError):
            upsample(np.zeros((1, 1, 2, 2)), 4, 4, mode="tile")

    def test_downscale_rejected(self):
        """Test upsample refuses to shrink."""
        with pytest.raises(ShapeError):
            upsample(np.zeros((1, 1, 4, 4)), 2, 2)

    @pytest.mark.parametrize(
        ("mode", "shape"), [("bilinear", (1, 2, 3, 4)), ("tile", (2, 3, 1, 1))]
    )
    def test_gradients(self, mode, shape):
        """Test upsample gradients in both modes."""
        x = np.random.default_rng(10).standard_normal(shape)

        result = check_gradients(lambda v: upsample(v[0], 7, 9, mode=mode), [x])

        assert result.max_relative_error < 1e-4


@pytest.mark.unit
class TestSoftmaxAndLosses:
    """Tests for softmax and the training losses."""

    def test_softmax_scalar_case(self):
        """Test logits (2, 0) give (e²/(e²+1), 1/(e²+1))."""
        x = np.array([2.0, 0.0]).reshape(1, 2, 1, 1)
        out = softmax_channel(x).value.reshape(2)

        e2 = math.exp(2.0)
        assert out[0] == pytest.approx(e2 / (e2 + 1))
        assert out[1] == pytest.approx(1 / (e2 + 1))

    def test_softmax_is_stable_for_large_logits(self):
        """Test max subtraction keeps huge logits finite."""
        x = np.array([1000.0, 0.0]).reshape(1, 2, 1, 1)

        assert np.allclose(softmax_channel(x).value.reshape(2), [1.0, 0.0])

    def test_cross_entropy_single_pixel(self):
        """Test logits (1, 0) with label 1 give −ln(1/(1+e))."""
        scores = np.array([1.0, 0.0]).reshape(1, 2, 1, 1)
        loss = softmax_ce_loss(scores, np.ones((1, 1, 1), dtype=np.uint8)).value

        assert float(loss) == pytest.approx(-math.log(1 / (1 + math.e)))

    def test_cross_entropy_uniform_prediction(self):
        """Test equal logits give ln 2 regardless of labels."""
        scores = np.zeros((2, 2, 3, 3))
        labels = np.random.default_rng(11).integers(0, 2, (2, 3, 3))

        assert float(softmax_ce_loss(scores, labels).value) == pytest.approx(math.log(2))

    def test_cross_entropy_ignores_label(self):
        """Test ignored pixels do not contribute to the mean."""
        scores = np.array([[1.0, 0.0], [0.0, 0.0]]).reshape(1, 2, 1, 2)
        labels = np.array([[[1, 255]]])

        loss = softmax_ce_loss(scores, labels).value

        assert float(loss) == pytest.approx(math.log(1 + math.e))

    def test_cross_entropy_all_ignored_raises(self):
        """Test a batch without valid pixels is rejected."""
        with pytest.raises(PreconditionError):
            softmax_ce_loss(np.zeros((1, 2, 2, 2)), np.full((1, 2, 2), 255))

    def test_l2_loss_value(self):
        """Test the mean of squared differences."""
        pred = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)
        target = np.zeros((1, 1, 2, 2))

        assert float(l2_loss(pred, target).value) == pytest.approx(30.0 / 4)

    def test_one_hot(self):
        """Test labels become an N×C×H×W indicator map."""
        labels = np.array([[[0, 1], [1, 0]]])
        out = one_hot(labels, 2)

        assert out.shape == (1, 2, 2, 2)
        assert np.array_equal(out[0, 1], labels[0])
        assert np.array_equal(out[0, 0], 1 - labels[0])

    def test_softmax_gradients(self):
        """Test softmax_channel gradients."""
        x = np.random.default_rng(12).standard_normal((2, 3, 3, 3))

        result = check_gradients(lambda v: softmax_channel(v[0]), [x])

        assert result.max_relative_error < 1e-4

    def test_cross_entropy_gradients(self):
        """Test softmax_ce_loss gradients with ignored pixels."""
        rng = np.random.default_rng(13)
        labels = rng.integers(0, 2, (2, 4, 4))
        labels[0, 0, :2] = 255

        result = check_gradients(
            lambda v: softmax_ce_loss(v[0], labels), [rng.standard_normal((2, 2, 4, 4))]
        )

        assert result.max_relative_error < 1e-4

    def test_l2_gradients(self):
        """Test l2_loss of softmax probabilities against a one-hot target."""
        rng = np.random.default_rng(14)
        target = one_hot(rng.integers(0, 2, (1, 5, 5)), 2, np.float64)

        result = check_gradients(
            lambda v: l2_loss(softmax_channel(v[0]), target), [rng.standard_normal((1, 2, 5, 5))]
        )

        assert result.max_relative_error < 1e-6


@pytest.mark.unit
class TestAutograd:
    """Tests for the tape and Variable bookkeeping."""

    def test_relu_gradients(self):
        """Test relu gradients away from the kink."""
        x = away_from_zero(np.random.default_rng(15), (2, 3, 4, 4))

        result = check_gradients(lambda v: relu(v[0]), [x])

        assert result.max_relative_error < 1e-4

    def test_unused_variable_has_zero_gradient(self):
        """Test a Variable that does not reach the output receives exactly zero."""
        used = Variable(np.ones((1, 1, 2, 2)), requires_grad=True)
        unused = Variable(np.ones((1, 1, 2, 2)), requires_grad=True)

        with Tape() as tape:
            loss = weighted_sum(relu(used))
            relu(unused)
        tape.backward(loss)

        assert np.all(used.grad == 1.0)
        assert np.all(unused.grad == 0.0)

    def test_no_tape_records_nothing(self):
        """Test operations outside a tape are not recorded."""
        x = Variable(np.ones((1, 1, 2, 2)), requires_grad=True)
        with Tape() as tape:
            pass
        relu(x)

        assert len(tape) == 0

    def test_gradients_accumulate_across_uses(self):
        """Test a Variable used twice receives the sum of both gradients."""
        x = Variable(np.full((1, 1, 1, 1), 2.0), requires_grad=True)

        with Tape() as tape:
            out = weighted_sum(add(relu(x), conv2d(x, np.full((1, 1, 1, 1), 3.0))))
        tape.backward(out)

        assert float(out.value) == pytest.approx(8.0)
        assert x.grad.item() == pytest.approx(4.0)

    def test_add_n_sums_and_gradients(self):
        """Test add_n matches repeated add and passes gradients to every input."""
        rng = np.random.default_rng(16)
        xs = [rng.standard_normal((1, 2, 3, 3)) for _ in range(3)]

        assert np.allclose(add_n(xs).value, xs[0] + xs[1] + xs[2])
        assert check_gradients(lambda v: add_n(v), xs).max_relative_error < 1e-4

    def test_add_n_rejects_mismatch(self):
        """Test add_n needs inputs and identical shapes."""
        with pytest.raises(PreconditionError):
            add_n([])
        with pytest.raises(ShapeError):
            add_n([np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3))])

    def test_non_finite_forward_raises(self):
        """Test NaN produced by an operation raises NonFiniteError."""
        with pytest.raises(NonFiniteError):
            relu(np.array([[[[np.nan]]]]))


@pytest.mark.unit
class TestSGD:
    """Tests for the SGD optimizer."""

    def test_two_momentum_steps_match_recurrence(self):
        """Test v ← 0.9·v + g and p ← p − lr·v over two steps with a constant gradient."""
        param = Variable(np.array([1.0]), requires_grad=True)
        optimizer = SGD({"p": param}, momentum=0.9, weight_decay=0.0)

        for _ in range(2):
            optimizer.zero_grad()
            param.accumulate(np.array([0.5]))
            optimizer.step(0.1)

        assert param.value[0] == pytest.approx(1.0 - 0.1 * 0.5 - 0.1 * 1.9 * 0.5)

    def test_zero_learning_rate_leaves_parameters(self):
        """Test lr 0 is a no-op on the parameter values."""
        param = Variable(np.array([1.0, -2.0]), requires_grad=True)
        optimizer = SGD({"p": param})
        param.accumulate(np.array([3.0, 4.0]))

        optimizer.step(0.0)

        assert np.array_equal(param.value, [1.0, -2.0])

    def test_lr_scale_multiplies_update(self):
        """Test a 10× lr scale gives a 10× larger step for equal gradients."""
        a = Variable(np.array([0.0]), requires_grad=True)
        b = Variable(np.array([0.0]), requires_grad=True)
        optimizer = SGD({"a": a, "b": b}, momentum=0.0, weight_decay=0.0, lr_scale={"b": 10.0})
        a.accumulate(np.array([1.0]))
        b.accumulate(np.array([1.0]))

        optimizer.step(0.01)

        assert b.value[0] == pytest.approx(10 * a.value[0])

    def test_negative_learning_rate_raises(self):
        """Test negative learning rates are rejected."""
        optimizer = SGD({"p": Variable(np.zeros(1), requires_grad=True)})

        with pytest.raises(PreconditionError):
            optimizer.step(-1.0)

    def test_non_finite_gradient_raises(self):
        """Test NaN gradients abort the step."""
        param = Variable(np.zeros(1), requires_grad=True)
        optimizer = SGD({"p": param})
        param.accumulate(np.array([np.inf]))

        with pytest.raises(NonFiniteError):
            optimizer.step(0.1)


SHAPE_SEEDS = range(20)
ORACLE_SEEDS = range(50)


def draw_conv(seed):
    """Random conv2d geometry with a non-empty output."""
    rng = np.random.default_rng(1000 + seed)
    kernel = int(rng.choice([1, 2, 3]))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    dilation = int(rng.integers(1, 3))
    span = (kernel - 1) * dilation + 1
    h, w = (int(v) for v in rng.integers(max(span - 2 * pad, 1), 8, size=2))
    n, cin, cout = (int(v) for v in rng.integers(1, 4, size=3))
    x = rng.standard_normal((n, cin, h, w))
    weight = rng.standard_normal((cout, cin, kernel, kernel))
    bias = rng.standard_normal(cout)
    return x, weight, bias, {"stride": stride, "pad": pad, "dilation": dilation}


def draw_conv_transpose(seed):
    """Random conv2d_transpose geometry with a non-empty output."""
    rng = np.random.default_rng(2000 + seed)
    kernel = int(rng.integers(1, 5))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, (kernel - 1) // 2 + 1))
    h, w = (int(v) for v in rng.integers(1, 6, size=2))
    n, cin, cout = (int(v) for v in rng.integers(1, 4, size=3))
    x = rng.standard_normal((n, cin, h, w))
    weight = rng.standard_normal((cin, cout, kernel, kernel))
    bias = rng.standard_normal(cout)
    return x, weight, bias, {"stride": stride, "pad": pad}


def draw_planes(seed, min_size=1, max_size=6, base=3000):
    rng = np.random.default_rng(base + seed)
    n, c = (int(v) for v in rng.integers(1, 4, size=2))
    h, w = (int(v) for v in rng.integers(min_size, max_size + 1, size=2))
    return rng, rng.standard_normal((n, c, h, w))


def reference_conv_transpose(x, w, b, stride, pad):
    """Scatter every input pixel through the kernel, then crop the padding."""
    n, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    full = np.zeros((n, cout, (h - 1) * stride + kh, (wd - 1) * stride + kw))
    for i in range(n):
        for c in range(cin):
            for y in range(h):
                for x_ in range(wd):
                    full[i, :, y * stride : y * stride + kh, x_ * stride : x_ * stride + kw] += (
                        x[i, c, y, x_] * w[c]
                    )
    out = full[:, :, pad : full.shape[2] - pad, pad : full.shape[3] - pad]
    return out + b.reshape(1, -1, 1, 1)


def reference_bilinear(plane, target_h, target_w):
    """Per-pixel half-pixel-centre interpolation with edge clamping."""
    h, w = plane.shape

    def source(index, src, dst):
        pos = min(max((index + 0.5) * src / dst - 0.5, 0.0), src - 1)
        low = int(math.floor(pos))
        return low, min(low + 1, src - 1), pos - low

    out = np.empty((target_h, target_w))
    for i in range(target_h):
        y0, y1, fy = source(i, h, target_h)
        for j in range(target_w):
            x0, x1, fx = source(j, w, target_w)
            top = (1 - fx) * plane[y0, x0] + fx * plane[y0, x1]
            bottom = (1 - fx) * plane[y1, x0] + fx * plane[y1, x1]
            out[i, j] = (1 - fy) * top + fy * bottom
    return out


@pytest.mark.unit
class TestRandomShapeGradients:
    """Gradient checks over seeded draws of shapes and layer geometry."""

    @pytest.mark.parametrize("seed", SHAPE_SEEDS)
    def test_conv2d(self, seed):
        """Test conv2d gradients for a random geometry."""
        x, w, b, kwargs = draw_conv(seed)

        result = check_gradients(lambda v: conv2d(v[0], v[1], v[2], **kwargs), [x, w, b])

        assert result.max_relative_error < 1e-4

    @pytest.mark.parametrize("seed", SHAPE_SEEDS)
    def test_conv2d_transpose(self, seed):
        """Test conv2d_transpose gradients for a random geometry."""
        x, w, b, kwargs = draw_conv_transpose(seed)

        result = check_gradients(
            lambda v: conv2d_transpose(v[0], v[1], v[2], **kwargs), [x, w, b]
        )

        assert result.max_relative_error < 1e-4

    @pytest.mark.parametrize("seed", SHAPE_SEEDS)
    def test_batch_norm(self, seed):
        """Test training-mode batch_norm gradients with several pixels per channel."""
        rng, x = draw_planes(seed, min_size=2, max_size=4)
        x = np.concatenate([x, rng.standard_normal(x.shape)])
        c = x.shape[1]

        def build(v):
            return batch_norm(v[0], v[1], v[2], np.zeros(c), np.ones(c), training=True)

        result = check_gradients(
            build, [x, rng.uniform(0.5, 1.5, c), rng.standard_normal(c)]
        )

        assert result.max_relative_error < 1e-4

    @pytest.mark.parametrize("seed", SHAPE_SEEDS)
    def test_max_pool2d(self, seed):
        """Test max_pool2d gradients on tie-free inputs."""
        rng, x = draw_planes(seed, min_size=3, max_size=7)
        kernel = int(rng.integers(2, 4))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, kernel // 2 + 1))
        x = rng.permutation(x.size).reshape(x.shape) * 0.1

        result = check_gradients(
            lambda v: max_pool2d(v[0], kernel=kernel, stride=stride, pad=pad), [x]
        )

        assert result.max_relative_error < 1e-4

    @pytest.mark.parametrize("seed", SHAPE_SEEDS)
    def test_upsample(self, seed):
        """Test bilinear upsample gradients to a random larger size."""
        rng, x = draw_planes(seed, max_size=4)
        target_h, target_w = (int(v) for v in x.shape[2:] + rng.integers(0, 5, size=2))

        result = check_gradients(lambda v: upsample(v[0], target_h, target_w), [x])

        assert result.max_relative_error < 1e-4

    @pytest.mark.parametrize("seed", SHAPE_SEEDS)
    def test_global_avg_pool(self, seed):
        """Test global_avg_pool gradients."""
        _, x = draw_planes(seed)

        result = check_gradients(lambda v: global_avg_pool(v[0]), [x])

        assert result.max_relative_error < 1e-4

    @pytest.mark.parametrize("seed", SHAPE_SEEDS)
    def test_relu(self, seed):
        """Test relu gradients away from the kink."""
        rng, x = draw_planes(seed)

        result = check_gradients(lambda v: relu(v[0]), [away_from_zero(rng, x.shape)])

        assert result.max_relative_error < 1e-4

    @pytest.mark.parametrize("seed", SHAPE_SEEDS)
    def test_softmax_channel(self, seed):
        """Test softmax_channel gradients."""
        _, x = draw_planes(seed)

        result = check_gradients(lambda v: softmax_channel(v[0]), [x])

        assert result.max_relative_error < 1e-4

    @pytest.mark.parametrize("seed", SHAPE_SEEDS)
    def test_cross_entropy(self, seed):
        """Test softmax_ce_loss gradients with some ignored pixels."""
        rng, x = draw_planes(seed)
        n, _, h, w = x.shape
        scores = rng.standard_normal((n, 2, h, w))
        labels = rng.choice([0, 1, 255], size=(n, h, w))
        labels[0, 0, 0] = 1

        result = check_gradients(lambda v: softmax_ce_loss(v[0], labels), [scores])

        assert result.max_relative_error < 1e-4


@pytest.mark.unit
class TestRandomShapeOracles:
    """Forward results against direct reference computations on seeded draws."""

    @pytest.mark.parametrize("seed", ORACLE_SEEDS)
    def test_conv2d(self, seed):
        """Test conv2d against the nested-loop reference."""
        x, w, b, kwargs = draw_conv(seed)

        out = conv2d(x, w, b, **kwargs).value
        expected = reference_conv(x, w, b, kwargs["stride"], kwargs["pad"], kwargs["dilation"])

        assert out.shape == expected.shape
        assert np.allclose(out, expected, atol=1e-10)

    @pytest.mark.parametrize("seed", ORACLE_SEEDS)
    def test_conv2d_transpose(self, seed):
        """Test conv2d_transpose against the scatter-and-crop reference."""
        x, w, b, kwargs = draw_conv_transpose(seed)

        out = conv2d_transpose(x, w, b, **kwargs).value
        expected = reference_conv_transpose(x, w, b, kwargs["stride"], kwargs["pad"])

        assert out.shape == expected.shape
        assert np.allclose(out, expected, atol=1e-10)

    @pytest.mark.parametrize("seed", ORACLE_SEEDS)
    def test_global_avg_pool(self, seed):
        """Test global_avg_pool equals the per-plane mean."""
        _, x = draw_planes(seed)

        out = global_avg_pool(x).value

        assert out.shape == x.shape[:2] + (1, 1)
        assert np.allclose(out[:, :, 0, 0], [[plane.mean() for plane in s] for s in x])

    @pytest.mark.parametrize("seed", ORACLE_SEEDS)
    def test_upsample(self, seed):
        """Test bilinear upsample against per-pixel interpolation."""
        rng, x = draw_planes(seed, max_size=5)
        target_h, target_w = (int(v) for v in x.shape[2:] + rng.integers(0, 7, size=2))

        out = upsample(x, target_h, target_w).value

        for i in range(x.shape[0]):
            for c in range(x.shape[1]):
                expected = reference_bilinear(x[i, c], target_h, target_w)
                assert np.allclose(out[i, c], expected, atol=1e-12)

    @pytest.mark.parametrize("seed", ORACLE_SEEDS)
    def test_softmax_channel(self, seed):
        """Test softmax_channel against the per-pixel exponential formula."""
        _, x = draw_planes(seed)
        n, c, h, w = x.shape

        out = softmax_channel(x).value

        for i in range(n):
            for y in range(h):
                for x_ in range(w):
                    exps = [math.exp(x[i, k, y, x_]) for k in range(c)]
                    expected = [e / sum(exps) for e in exps]
                    assert np.allclose(out[i, :, y, x_], expected)
