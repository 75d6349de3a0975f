import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import jv

from mwprae.channel import (
    AcquisitionConfig,
    ChannelModel,
    Dataset,
    InterleaveMismatch,
    acquire,
    apply_channel,
    apply_fir,
    apply_interleave_mismatch,
    apply_nonlinearity,
    build_dataset,
    preset,
)
from mwprae.signals import Waveform, gen_lfm

FS = 20e9


def tone(f, n=4096, amp=0.9):
    # f chosen on an FFT bin so there is no leakage
    return Waveform(amp * np.sin(2 * np.pi * f * np.arange(n) / FS), FS)


def bin_of(f, n):
    return int(round(f * n / FS))


class TestNonlinearity:
    def test_small_beta_is_identity(self):
        x = tone(FS * 50 / 4096)
        np.testing.assert_allclose(apply_nonlinearity(x, 1e-3).samples, x.samples, atol=1e-6)

    @pytest.mark.parametrize("beta", [0.1, 1.2, np.pi / 2])
    def test_full_scale_fixed_point(self, beta):
        y = apply_nonlinearity(Waveform(np.array([1.0, -1.0, 0.0])), beta).samples
        assert y[0] == 1.0 and y[1] == -1.0 and y[2] == 0.0

    def test_third_harmonic_matches_bessel(self):
        n = 4096
        f = FS * 64 / n
        mag = np.abs(np.fft.rfft(apply_nonlinearity(tone(f, n), 1.2).samples))
        measured = 20 * np.log10(mag[3 * 64] / mag[64])
        predicted = 20 * np.log10(2 * jv(3, 1.08) / (2 * jv(1, 1.08)))
        assert abs(measured - predicted) < 0.5
        # even harmonics absent
        assert mag[2 * 64] < 1e-9 * mag[64]

    def test_rejects(self):
        with pytest.raises(ValueError, match="beta"):
            apply_nonlinearity(Waveform(np.zeros(4)), 2.0)
        with pytest.raises(ValueError, match="full scale"):
            apply_nonlinearity(Waveform(np.array([1.5])), 1.0)


class TestFir:
    def test_unit_tap_identity(self):
        x = np.random.default_rng(0).normal(size=100)
        np.testing.assert_array_equal(apply_fir(Waveform(x), [1.0]).samples, x)

    def test_impulse_centred(self):
        x = np.zeros(11)
        x[5] = 1
        y = apply_fir(Waveform(x), [0.25, 0.5, 0.25]).samples
        expected = np.zeros(11)
        expected[4:7] = [0.25, 0.5, 0.25]
        np.testing.assert_array_equal(y, expected)

    def test_naive_oracle(self):
        rng = np.random.default_rng(1)
        x, taps = rng.normal(size=40), rng.normal(size=7)
        y = apply_fir(Waveform(x), taps).samples
        ref = [sum(taps[j] * x[i + 3 - j] for j in range(7) if 0 <= i + 3 - j < 40) for i in range(40)]
        np.testing.assert_allclose(y, ref, atol=1e-12)

    def test_dc_gain(self):
        taps = preset("pps-like").filter_taps
        y = apply_fir(Waveform(np.full(200, 0.3)), taps).samples
        np.testing.assert_allclose(y[40:-40], 0.3 * sum(taps), rtol=1e-12)


class TestInterleave:
    def test_identity_cases(self):
        x = np.random.default_rng(2).uniform(-0.9, 0.9, 256)
        one = InterleaveMismatch(1, (1.0,), (0.0,), (0.0,))
        four = InterleaveMismatch(4, (1.0,) * 4, (0.0,) * 4, (0.0,) * 4)
        np.testing.assert_array_equal(apply_interleave_mismatch(Waveform(x), one).samples, x)
        np.testing.assert_array_equal(apply_interleave_mismatch(Waveform(x), four).samples, x)

    def test_gain_spurs_at_image_frequencies(self):
        n = 8192
        k0 = 700
        f = FS * k0 / n
        mm = InterleaveMismatch(4, (1.05, 0.95, 1.0, 1.0), (0.0,) * 4, (0.0,) * 4)
        mag = np.abs(np.fft.rfft(apply_interleave_mismatch(tone(f, n), mm).samples))
        mag /= mag.max()
        # images of f at k*fs/4 +- f, folded into [0, fs/2]
        expected = {k0}
        for k in range(1, 4):
            for s in (k * n // 4 + k0, k * n // 4 - k0):
                s %= n
                expected.add(min(s, n - s))
        found = set(np.flatnonzero(mag > 1e-6))
        assert found <= expected
        assert len(found) > 1

    def test_offset_spurs_fixed(self):
        n = 4096
        mm = InterleaveMismatch(4, (1.0,) * 4, (0.01, -0.01, 0.005, -0.005), (0.0,) * 4)
        for x in (np.zeros(n), tone(FS * 123 / n, n).samples):
            out = apply_interleave_mismatch(Waveform(x), mm).samples - x
            mag = np.abs(np.fft.rfft(out))
            found = set(np.flatnonzero(mag > 1e-9 * n))
            assert found <= {0, n // 4, n // 2} and found

    def test_length_validation(self):
        with pytest.raises(ValueError, match="gains"):
            InterleaveMismatch(4, (1.0,), (0.0,) * 4, (0.0,) * 4)


class TestChannel:
    def test_identity_model(self):
        x = Waveform(np.random.default_rng(3).uniform(-0.9, 0.9, 128))
        np.testing.assert_array_equal(apply_channel(x, ChannelModel()).samples, x.samples)

    def test_deterministic(self):
        x = gen_lfm(0.2e9, 3.2e9, 100e-9, FS).padded(4096)
        a = apply_channel(x, preset("padc-like")).samples
        b = apply_channel(x, preset("padc-like")).samples
        assert a.tobytes() == b.tobytes()

    def test_pps_like_adds_harmonics(self):
        n = 4096
        k0 = 80
        mag = np.abs(np.fft.rfft(apply_channel(tone(FS * k0 / n, n), preset("pps-like")).samples))
        assert mag[3 * k0] > 1e-3 * mag[k0]

    def test_padc_like_adds_spurs(self):
        n = 4096
        k0 = 80
        x = tone(FS * k0 / n, n)
        pps = np.abs(np.fft.rfft(apply_channel(x, preset("pps-like")).samples))
        padc = np.abs(np.fft.rfft(apply_channel(x, preset("padc-like")).samples))
        for b in (n // 4 - k0, n // 4 + k0, n // 4):
            assert padc[b] > 100 * pps[b]

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="unknown channel preset"):
            preset("nope")

    @pytest.mark.parametrize("name", ["pps-like", "padc-like"])
    def test_shift_invariance(self, name):
        model = preset(name)
        shift = 4  # num_channels for padc-like; any integer for pps-like
        x = np.zeros(1024)
        x[200:800] = 0.8 * np.sin(np.arange(600) * 0.3)
        y = apply_channel(Waveform(x), model).samples
        ys = apply_channel(Waveform(np.roll(x, shift)), model).samples
        np.testing.assert_allclose(ys[100:-100], y[100 - shift : -100 - shift], atol=1e-12)


class TestAcquire:
    def test_zero_noise_identity(self):
        x = Waveform(np.random.default_rng(0).normal(size=64))
        for k in (1, 7, 128):
            assert np.array_equal(acquire(x, AcquisitionConfig(0.0, k)).samples, x.samples)

    def test_noise_power_four_shots(self):
        out = acquire(Waveform(np.zeros(1_000_000)), AcquisitionConfig(0.1, 4, 1)).samples
        assert abs(np.mean(out**2) / 0.0025 - 1) < 0.02

    def test_averaging_gain_128(self):
        z = Waveform(np.zeros(1_000_000))
        p1 = np.mean(acquire(z, AcquisitionConfig(0.1, 1, 2)).samples ** 2)
        p128 = np.mean(acquire(z, AcquisitionConfig(0.1, 128, 3)).samples ** 2)
        assert abs(10 * np.log10(p1 / p128) - 10 * np.log10(128)) < 0.5

    def test_invalid(self):
        with pytest.raises(ValueError):
            AcquisitionConfig(-1.0)
        with pytest.raises(ValueError):
            AcquisitionConfig(0.1, 0)


@pytest.fixture(scope="module")
def small_dataset():
    return build_dataset("lfm", preset("pps-like"), AcquisitionConfig(), count=10, split=(8, 2), length=1024)


class TestDataset:
    def test_split_sizes(self, small_dataset):
        assert len(small_dataset.train[0]) == 8 and len(small_dataset.val[0]) == 2

    def test_stored_invariants(self, small_dataset):
        assert np.all(np.max(np.abs(small_dataset.clean), axis=1) == np.float32(0.9))
        assert np.all(np.isfinite(small_dataset.distorted))

    def test_pairing(self, small_dataset):
        c, d = small_dataset.clean.astype(float), small_dataset.distorted.astype(float)
        corr = np.corrcoef(c, d)[: len(c), len(c) :]
        for i in range(len(c)):
            assert corr[i, i] == corr[i].max()

    def test_deterministic_file(self, small_dataset, tmp_path):
        again = build_dataset("lfm", preset("pps-like"), AcquisitionConfig(), count=10, split=(8, 2), length=1024)
        small_dataset.save(tmp_path / "a.bin")
        again.save(tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_round_trip(self, small_dataset, tmp_path):
        small_dataset.save(tmp_path / "d.bin")
        back = Dataset.load(tmp_path / "d.bin")
        assert np.array_equal(back.clean, small_dataset.clean)
        assert np.array_equal(back.distorted, small_dataset.distorted)
        assert back.split == 8 and back.sample_rate == FS

    def test_example_independent_of_count(self, small_dataset):
        big = build_dataset("lfm", preset("pps-like"), AcquisitionConfig(), count=12, split=(12, 0), length=1024)
        assert np.array_equal(big.distorted[:10], small_dataset.distorted)

    def test_costas_category(self):
        ds = build_dataset("costas", preset("padc-like"), AcquisitionConfig(), count=3, split=(2, 1), length=512)
        assert ds.clean.shape == (3, 512)

    def test_corrupt_files(self, small_dataset, tmp_path):
        p = tmp_path / "d.bin"
        small_dataset.save(p)
        data = p.read_bytes()
        (tmp_path / "short").write_bytes(data[:10])
        (tmp_path / "magic").write_bytes(b"XXXX" + data[4:])
        (tmp_path / "trunc").write_bytes(data[:-4])
        with pytest.raises(ValueError, match="truncated"):
            Dataset.load(tmp_path / "short")
        with pytest.raises(ValueError, match="magic"):
            Dataset.load(tmp_path / "magic")
        with pytest.raises(ValueError, match="size"):
            Dataset.load(tmp_path / "trunc")

    def test_bad_split(self):
        with pytest.raises(ValueError, match="split"):
            build_dataset("lfm", preset("pps-like"), AcquisitionConfig(), count=4, split=(3, 2), length=256)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 16))
def test_acquire_seed_deterministic(seed, k):
    x = Waveform(np.linspace(-0.5, 0.5, 64))
    cfg = AcquisitionConfig(0.05, k, seed)
    assert acquire(x, cfg).samples.tobytes() == acquire(x, cfg).samples.tobytes()
