import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sfcnet import engine
from sfcnet.engine import (
    AdamState,
    BatchNormState,
    DenseLayer,
    Tensor,
    adam_step,
    backward,
    max_relative_error,
)
from sfcnet.errors import ConfigError, ContractError, DimensionError, InputError

import oracles


def fd_error(build_loss, tensors, eps=1e-4):
    return max_relative_error(build_loss, tensors, eps)


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        eye = Tensor(np.eye(2))
        assert np.array_equal(engine.matmul(eye, a).data, a.data)

    def test_hand_product(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[0.0], [1.0]])
        assert np.array_equal(engine.matmul(a, b).data, [[2.0], [4.0]])

    def test_gradient_vs_central_differences(self, rng):
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        err = fd_error(lambda: engine.tsum(engine.matmul(a, b)), [a, b])
        assert err < 1e-4

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError) as exc:
            engine.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        assert "(2, 3)" in str(exc.value)


class TestSharedMlp:
    def test_single_identity_layer(self, rng):
        x = Tensor(rng.normal(size=(5, 3)))
        layer = DenseLayer(Tensor(np.eye(3)), Tensor(np.zeros(3)), activation=None)
        out = engine.shared_mlp(x, [layer])
        assert np.array_equal(out.data, x.data)

    def test_row_permutation_permutes_output(self, rng):
        x = rng.normal(size=(6, 3))
        layers = [
            DenseLayer(Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=4)))
        ]
        out = engine.shared_mlp(Tensor(x), layers).data
        perm = rng.permutation(6)
        out_p = engine.shared_mlp(Tensor(x[perm]), layers).data
        assert np.array_equal(out_p, out[perm])

    def test_zero_weights_zero_bias(self, rng):
        x = Tensor(rng.normal(size=(4, 3)))
        layer = DenseLayer(Tensor(np.zeros((3, 2))), Tensor(np.zeros(2)))
        assert np.array_equal(engine.shared_mlp(x, [layer]).data, np.zeros((4, 2)))

    def test_empty_layer_list(self):
        with pytest.raises(ConfigError):
            engine.shared_mlp(Tensor(np.zeros((2, 2))), [])


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 4)))
        kernel = Tensor(np.eye(4)[None, None])
        out = engine.conv2d(x, kernel)
        assert np.allclose(out.data, x.data)

    def test_channel_sum_kernel(self):
        x = np.arange(12, dtype=float).reshape(2, 2, 3)
        kernel = Tensor(np.ones((1, 1, 3, 1)))
        out = engine.conv2d(Tensor(x), kernel)
        assert np.array_equal(out.data, x.sum(axis=2, keepdims=True))

    def test_gradient_vs_central_differences(self, rng):
        x = Tensor(rng.normal(size=(3, 2, 4)), requires_grad=True)
        kernel = Tensor(rng.normal(size=(1, 1, 4, 5)), requires_grad=True)
        bias = Tensor(rng.normal(size=5), requires_grad=True)
        err = fd_error(
            lambda: engine.tsum(engine.conv2d(x, kernel, bias)), [x, kernel, bias]
        )
        assert err < 1e-4

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            engine.conv2d(Tensor(np.zeros((2, 2, 3))), Tensor(np.zeros((1, 1, 4, 2))))

    def test_spatial_kernels_rejected(self):
        # grid cells are unrelated pairs; only 1x1 kernels make sense
        with pytest.raises(DimensionError):
            engine.conv2d(Tensor(np.zeros((2, 2, 3))), Tensor(np.zeros((3, 3, 3, 2))))


class TestPool:
    def test_max_over_axis0(self):
        out = engine.pool(Tensor([[1.0, 5.0], [3.0, 2.0]]), axis=0, kind="max")
        assert np.array_equal(out.data, [3.0, 5.0])

    def test_avg_over_axis0(self):
        out = engine.pool(Tensor([[1.0, 5.0], [3.0, 2.0]]), axis=0, kind="avg")
        assert np.array_equal(out.data, [2.0, 3.5])

    def test_removes_exactly_one_axis(self, rng):
        x = Tensor(rng.normal(size=(3, 4, 5)))
        assert engine.pool(x, axis=1, kind="max").data.shape == (3, 5)

    @given(st.permutations(range(6)))
    def test_max_permutation_invariant(self, perm):
        x = np.linspace(-2, 3, 18).reshape(6, 3)
        a = engine.pool(Tensor(x), axis=0, kind="max").data
        b = engine.pool(Tensor(x[list(perm)]), axis=0, kind="max").data
        assert np.array_equal(a, b)

    def test_max_gradient_routes_to_first_argmax(self):
        x = Tensor(np.array([[2.0, 1.0], [2.0, 0.0]]), requires_grad=True)
        backward(engine.tsum(engine.pool(x, axis=0, kind="max")))
        assert np.array_equal(x.grad, [[1.0, 1.0], [0.0, 0.0]])

    def test_gradients_vs_central_differences(self, rng):
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        for kind in ("max", "avg"):
            engine.zero_grads([x])
            err = fd_error(lambda k=kind: engine.tsum(engine.pool(x, 0, k)), [x])
            assert err < 1e-4

    def test_empty_axis(self):
        with pytest.raises(DimensionError):
            engine.pool(Tensor(np.zeros((0, 2))), axis=0, kind="max")


class TestBatchnorm:
    def test_standardized_input_passthrough(self, rng):
        x = rng.normal(size=(50, 4))
        x = (x - x.mean(axis=0)) / x.std(axis=0)
        state = BatchNormState.for_channels(4)
        out = engine.batchnorm(
            Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), state, training=True
        )
        assert np.allclose(out.data, x, atol=1e-4)

    def test_zero_gamma_beta_five(self, rng):
        x = Tensor(rng.normal(size=(6, 3)))
        state = BatchNormState.for_channels(3)
        out = engine.batchnorm(
            x, Tensor(np.zeros(3)), Tensor(np.full(3, 5.0)), state, training=True
        )
        assert np.array_equal(out.data, np.full((6, 3), 5.0))

    def test_single_row_train_mode_guarded(self):
        state = BatchNormState.for_channels(2)
        out = engine.batchnorm(
            Tensor([[1.0, 2.0]]),
            Tensor(np.ones(2)),
            Tensor(np.zeros(2)),
            state,
            training=True,
        )
        assert np.isfinite(out.data).all()

    def test_eval_uses_running_stats(self, rng):
        x = Tensor(rng.normal(size=(8, 3)))
        state = BatchNormState(np.full(3, 2.0), np.full(3, 4.0), eps=0.0)
        out = engine.batchnorm(
            x, Tensor(np.ones(3)), Tensor(np.zeros(3)), state, training=False
        )
        assert np.allclose(out.data, (x.data - 2.0) / 2.0)

    def test_gradient_vs_central_differences(self, rng):
        x = Tensor(rng.normal(size=(7, 3)), requires_grad=True)
        gamma = Tensor(rng.normal(size=3) + 1.0, requires_grad=True)
        beta = Tensor(rng.normal(size=3), requires_grad=True)

        def loss():
            state = BatchNormState.for_channels(3)
            h = engine.batchnorm(x, gamma, beta, state, training=True)
            return engine.tsum(engine.mul(h, h))

        assert fd_error(loss, [x, gamma, beta]) < 1e-3


class TestCrossEntropy:
    def test_uniform_logits(self):
        for k in (2, 5, 9):
            loss = engine.cross_entropy(Tensor(np.zeros((3, k))), [0, 1, 0][:3])
            assert loss.data == pytest.approx(np.log(k), rel=1e-12)

    def test_confident_logits_below_uniform(self):
        logits = np.zeros((1, 4))
        logits[0, 2] = 3.0
        loss = engine.cross_entropy(Tensor(logits), [2])
        assert float(loss.data) < np.log(4)

    def test_gradient_vs_central_differences(self, rng):
        logits = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        labels = [0, 3, 1, 2, 2]
        assert fd_error(lambda: engine.cross_entropy(logits, labels), [logits]) < 1e-4

    def test_out_of_range_label(self):
        with pytest.raises(InputError):
            engine.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        backward(engine.tsum(x))
        assert np.array_equal(x.grad, np.ones((3, 2)))

    def test_sum_of_squares_gives_2x(self, rng):
        x = Tensor(rng.normal(size=(4,)), requires_grad=True)
        backward(engine.tsum(engine.mul(x, x)))
        assert np.allclose(x.grad, 2 * x.data)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ContractError):
            backward(engine.add(x, x))

    def test_grads_accumulate_until_cleared(self):
        x = Tensor(np.ones(3), requires_grad=True)
        backward(engine.tsum(x))
        backward(engine.tsum(x))
        assert np.array_equal(x.grad, np.full(3, 2.0))
        x.zero_grad()
        backward(engine.tsum(x))
        assert np.array_equal(x.grad, np.ones(3))

    def test_diamond_reuse_accumulates(self):
        # y = x*x + x*x: each use contributes, so dy/dx = 4x
        x = Tensor(np.array([3.0]), requires_grad=True)
        sq = engine.mul(x, x)
        backward(engine.tsum(engine.add(sq, sq)))
        assert np.allclose(x.grad, [12.0])

    def test_graph_topological_order_and_single_visit(self, rng):
        x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        y = engine.relu(engine.matmul(x, x))
        loss = engine.tsum(engine.add(y, y))
        graph = backward(loss)
        positions = {id(node.tensor): i for i, node in enumerate(graph.nodes)}
        assert len(positions) == len(graph.nodes)  # each node appears once
        for node in graph.nodes:
            for pid in node.parent_ids:
                if pid in positions:
                    assert positions[pid] < positions[id(node.tensor)]

    def test_intermediates_get_grads(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = engine.mul(x, x)
        backward(engine.tsum(y))
        assert y.grad is not None and np.allclose(y.grad, [1.0])


class TestShapeOps:
    def test_concat_then_split_is_identity(self, rng):
        parts = [Tensor(rng.normal(size=(2, c))) for c in (3, 1, 4)]
        joined = engine.concat(parts, axis=1)
        back = engine.split(joined, [3, 1, 4], axis=1)
        for orig, piece in zip(parts, back):
            assert np.array_equal(orig.data, piece.data)

    def test_split_bad_sizes(self):
        with pytest.raises(DimensionError):
            engine.split(Tensor(np.zeros((2, 5))), [2, 2], axis=1)

    def test_split_gradients(self, rng):
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)

        def loss():
            a, b = engine.split(x, [2, 3], axis=1)
            return engine.add(engine.tsum(engine.mul(a, a)), engine.tsum(b))

        assert fd_error(loss, [x]) < 1e-4

    def test_take_rows_scatters_gradient(self):
        x = Tensor(np.arange(6, dtype=float).reshape(3, 2), requires_grad=True)
        backward(engine.tsum(engine.take_rows(x, [0, 2, 0])))
        assert np.array_equal(x.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])

    def test_pairwise_concat_cells(self, rng):
        x = rng.normal(size=(2, 3))
        y = rng.normal(size=(4, 3))
        grid = engine.pairwise_concat(Tensor(x), Tensor(y)).data
        for i in range(2):
            for j in range(4):
                assert np.array_equal(grid[i, j], np.concatenate([x[i], y[j]]))

    def test_pairwise_concat_gradient(self, rng):
        x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        y = Tensor(rng.normal(size=(4, 3)), requires_grad=True)

        def loss():
            g = engine.pairwise_concat(x, y)
            return engine.tsum(engine.mul(g, g))

        assert fd_error(loss, [x, y]) < 1e-4

    def test_dropout_scales_and_masks(self, rng):
        x = Tensor(np.ones((100, 10)), requires_grad=True)
        out = engine.dropout(x, 0.4, np.random.default_rng(0))
        kept = out.data != 0
        assert np.allclose(out.data[kept], 1 / 0.6)
        assert engine.dropout(x, 0.4, None) is x


class TestDeterminism:
    def test_identical_seeds_bit_identical_forward(self):
        def run():
            rng = np.random.default_rng(99)
            x = Tensor(rng.normal(size=(8, 5)))
            w = Tensor(rng.normal(size=(5, 4)))
            h = engine.relu(engine.matmul(x, w))
            return engine.pool(h, axis=0, kind="max").data

        a, b = run(), run()
        assert np.array_equal(a, b)


class TestAdam:
    def test_zero_gradient_no_decay_leaves_params(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        state = AdamState(lr=0.1, weight_decay=0.0)
        adam_step([p], state)
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_single_scalar_step_matches_recurrence(self):
        p = Tensor(np.array([0.7]), requires_grad=True)
        p.grad = np.array([0.3])
        state = AdamState(lr=0.05, weight_decay=0.0)
        adam_step([p], state)
        expected = oracles.adam_scalar(0.7, [0.3], lr=0.05)[-1]
        assert p.data[0] == pytest.approx(expected, abs=1e-15)
        assert state.step == 1
        assert state.first_moment[0].shape == p.data.shape
        assert state.second_moment[0].shape == p.data.shape

    def test_weight_decay_matches_recurrence(self):
        p = Tensor(np.array([2.0]), requires_grad=True)
        state = AdamState(lr=0.01, weight_decay=0.1)
        trajectory = [float(p.data[0])]
        for _ in range(5):
            p.grad = np.array([0.5])
            adam_step([p], state)
            trajectory.append(float(p.data[0]))
        # oracle needs the same evolving weights for its decay term
        w, m, v = 2.0, 0.0, 0.0
        expected = [w]
        for t in range(1, 6):
            g = 0.5 + 0.1 * w
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w -= 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            expected.append(w)
        assert np.allclose(trajectory, expected, atol=1e-14)

    def test_quadratic_descent_behavior_from_oracle(self):
        # oracle run: classic Adam on f(w) = w^2 from w=1 with lr=0.1
        # descends strictly for the first 11 steps, overshoots zero around
        # step 12, and still ends far below the start after 40 steps.
        p = Tensor(np.array([1.0]), requires_grad=True)
        state = AdamState(lr=0.1)
        fs = [float(p.data[0]) ** 2]
        for _ in range(40):
            p.grad = 2 * p.data
            adam_step([p], state)
            fs.append(float(p.data[0]) ** 2)
        grads = []
        w = 1.0
        oracle_fs = [w * w]
        m = v = 0.0
        for t in range(1, 41):
            g = 2 * w
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w -= 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            oracle_fs.append(w * w)
        assert np.allclose(fs, oracle_fs, atol=1e-12)
        assert all(fs[i + 1] < fs[i] for i in range(11))
        assert fs[40] < 0.02 * fs[0]

    def test_missing_grad_rejected(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        with pytest.raises(ContractError):
            adam_step([p], AdamState())


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        arrays = {
            "a.weight": rng.normal(size=(3, 4)),
            "b.bias": rng.normal(size=7),
            "scalarish": rng.normal(size=(1,)),
        }
        path = tmp_path / "model.ckpt"
        engine.save_checkpoint(path, arrays)
        loaded = engine.load_checkpoint(path)
        assert sorted(loaded) == sorted(arrays)
        for name in arrays:
            assert np.array_equal(loaded[name], arrays[name])

    def test_layout_is_byte_exact(self, tmp_path):
        path = tmp_path / "one.ckpt"
        engine.save_checkpoint(path, {"w": np.array([[1.0, 2.0]])})
        raw = path.read_bytes()
        assert raw[:4] == b"PSCN"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == 1  # name length
        assert raw[12:13] == b"w"
        assert int.from_bytes(raw[13:17], "little") == 2  # rank
        assert int.from_bytes(raw[17:21], "little") == 1
        assert int.from_bytes(raw[21:25], "little") == 2
        assert np.frombuffer(raw[25:], dtype="<f8").tolist() == [1.0, 2.0]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(InputError):
            engine.load_checkpoint(path)
