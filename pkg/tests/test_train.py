import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mwprae.channel import AcquisitionConfig, build_dataset, preset
from mwprae.rae import init_params, zero_params
from mwprae.train import (
    AdamState,
    CheckpointError,
    NonFiniteError,
    TrainConfig,
    adam_step,
    dataset_loss,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    train,
)


def adam_oracle(g_seq, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam recurrence written out longhand."""
    theta, m, v = 0.0, 0.0, 0.0
    for t, g in enumerate(g_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return theta, m, v


def single_grad(params, value, where=(0, 0, 0, 2)):
    grads = [np.zeros_like(a) for a in params.arrays()]
    grads[where[0]][where[1:]] = value
    return grads


class TestAdam:
    def test_zero_gradient_noop(self):
        p = init_params(0)
        before = [a.copy() for a in p.arrays()]
        st_ = AdamState.zeros_like(p)
        for _ in range(3):
            adam_step(p, [np.zeros_like(a) for a in p.arrays()], st_, 1e-3)
        assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), before))
        assert all(not m.any() for m in st_.m + st_.v)

    def test_one_step(self):
        p = zero_params()
        st_ = AdamState.zeros_like(p)
        adam_step(p, single_grad(p, 2.0), st_, 1e-3)
        theta, m, v = adam_oracle([2.0], 1e-3)
        assert theta == pytest.approx(-1e-3, rel=1e-7)
        assert p.layers[0].weights[0, 0, 2] == pytest.approx(theta, rel=1e-6)
        assert st_.m[0][0, 0, 2] == pytest.approx(m, rel=1e-6)
        assert st_.v[0][0, 0, 2] == pytest.approx(v, rel=1e-6)
        assert st_.step_count == 1

    @pytest.mark.parametrize("gs", [[0.5, 0.5], [1.0, -3.0], [1e-3, 2.0, -0.7]])
    def test_multi_step(self, gs):
        p = zero_params()
        st_ = AdamState.zeros_like(p)
        for g in gs:
            adam_step(p, single_grad(p, g), st_, 1e-3)
        theta, _, _ = adam_oracle(gs, 1e-3)
        assert p.layers[0].weights[0, 0, 2] == pytest.approx(theta, rel=1e-5)

    @settings(max_examples=50, deadline=None)
    @given(g=st.floats(-1e3, 1e3).filter(lambda x: abs(x) > 1e-6), lr=st.floats(1e-5, 1e-2))
    def test_first_step_bounded_and_sign_preserving(self, g, lr):
        p = zero_params()
        adam_step(p, single_grad(p, g), AdamState.zeros_like(p), lr)
        step = float(p.layers[0].weights[0, 0, 2])
        assert np.sign(step) == -np.sign(g)
        assert abs(step) <= lr * (1 + 1e-6)

    def test_non_finite_rejected(self):
        p = zero_params()
        with pytest.raises(NonFiniteError, match="non-finite"):
            adam_step(p, single_grad(p, np.nan), AdamState.zeros_like(p), 1e-3)


class TestSchedule:
    def test_step_boundaries(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == 1e-3
        assert lr_at(17999, cfg) == 1e-3
        assert lr_at(18000, cfg) == 1e-4
        assert lr_at(19999, cfg) == 1e-4
        with pytest.raises(ValueError):
            lr_at(20000, cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError, match="decay_at"):
            TrainConfig(total_iterations=100, decay_at=100)
        with pytest.raises(ValueError, match="batch_size"):
            TrainConfig(batch_size=0)


@pytest.fixture(scope="module")
def toy():
    return build_dataset("lfm", preset("pps-like"), AcquisitionConfig(), count=20, split=(16, 4), length=1024)


class TestCheckpoint:
    def test_round_trip_with_state(self, tmp_path):
        rng = np.random.default_rng(0)
        p = init_params(3)
        st_ = AdamState([rng.normal(size=a.shape).astype(np.float32) for a in p.arrays()],
                        [rng.uniform(size=a.shape).astype(np.float32) for a in p.arrays()], 77)
        save_checkpoint(tmp_path / "c", p, st_, 1234)
        p2, s2, it = load_checkpoint(tmp_path / "c")
        assert it == 1234 and s2.step_count == 77 and s2.beta2 == 0.999
        assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), p2.arrays()))
        assert all(np.array_equal(a, b) for a, b in zip(st_.m + st_.v, s2.m + s2.v))

    def test_round_trip_without_state(self, tmp_path):
        save_checkpoint(tmp_path / "c", init_params(1))
        _, state, it = load_checkpoint(tmp_path / "c")
        assert state is None and it == 0

    def test_truncated(self, tmp_path):
        save_checkpoint(tmp_path / "c", init_params(1), AdamState.zeros_like(init_params(1)))
        data = (tmp_path / "c").read_bytes()
        for cut in (2, 20, len(data) // 2, len(data) - 1):
            (tmp_path / "t").write_bytes(data[:cut])
            with pytest.raises(CheckpointError, match="truncated"):
                load_checkpoint(tmp_path / "t")

    def test_version_mismatch(self, tmp_path):
        save_checkpoint(tmp_path / "c", init_params(1))
        data = bytearray((tmp_path / "c").read_bytes())
        data[4] = 9
        (tmp_path / "v").write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="version 9.*supports 1"):
            load_checkpoint(tmp_path / "v")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "m").write_bytes(b"NOPE" + bytes(100))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(tmp_path / "m")


class TestTrain:
    def test_zero_iterations(self, toy):
        p = init_params(0)
        before = [a.copy() for a in p.arrays()]
        out, curves, _ = train(toy, TrainConfig(total_iterations=0, decay_at=0), p)
        assert all(np.array_equal(a, b) for a, b in zip(out.arrays(), before))
        assert curves.iterations == []

    def test_validation_loss_is_pure(self, toy):
        p = init_params(0)
        assert dataset_loss(p, *toy.val[::-1]) == dataset_loss(p, *toy.val[::-1])

    def test_deterministic(self, toy, tmp_path):
        cfg = TrainConfig(total_iterations=30, decay_at=20, log_every=10, checkpoint_every=15)
        a, ca, _ = train(toy, cfg, checkpoint_dir=tmp_path)
        b, cb, _ = train(toy, cfg)
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a.arrays(), b.arrays()))
        assert ca == cb and ca.iterations == [0, 10, 20, 30]
        assert sorted(f.name for f in tmp_path.iterdir()) == ["ckpt_000015.mwpc", "ckpt_000030.mwpc"]
        p30, state, it = load_checkpoint(tmp_path / "ckpt_000030.mwpc")
        assert it == 30 and state.step_count == 30
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a.arrays(), p30.arrays()))

    def test_empty_split_rejected(self, toy):
        from mwprae.channel import Dataset
        with pytest.raises(ValueError, match="non-empty"):
            train(Dataset(toy.clean, toy.distorted, split=20), TrainConfig(total_iterations=1, decay_at=0))

    @pytest.mark.slow
    def test_toy_smoke_run(self, toy):
        cfg = TrainConfig(total_iterations=2000, decay_at=1800, log_every=500)
        _, curves, _ = train(toy, cfg)
        assert curves.train_loss[-1] < 0.5 * curves.train_loss[0]
        assert curves.val_loss[-1] <= curves.val_loss[0]
