import numpy as np
import pytest

from telelens.delay import DelayLine, DelayParams, channel_pair
from telelens.errors import SequencingError


class TestDelayParams:
    def test_nd_relation(self):
        assert DelayParams(fs=100.0, round_trip=1.0).n_d == 100
        assert DelayParams(fs=50.0, round_trip=1.0).n_d == 50
        assert DelayParams(fs=200.0, round_trip=0.5).n_d == 100
        assert DelayParams(fs=100.0, round_trip=0.0).n_d == 0

    def test_odd_product_rounded_up_to_even(self):
        p = DelayParams(fs=50.0, round_trip=0.5)  # 25 samples
        assert p.n_d == 26
        assert p.one_way == 13

    def test_invalid(self):
        with pytest.raises(ValueError):
            DelayParams(fs=0.0, round_trip=1.0)
        with pytest.raises(ValueError):
            DelayParams(fs=100.0, round_trip=-1.0)


class TestDelayLine:
    def test_zero_delay_passthrough(self):
        line = DelayLine(0)
        for n in range(10):
            assert line.push_pop(n * 11, n) == n * 11

    def test_one_second_at_100hz(self):
        params = DelayParams(fs=100.0, round_trip=1.0)
        line = DelayLine(params.one_way, fill="warmup")
        outputs = [line.push_pop(f"item{n}", n) for n in range(60)]
        assert outputs[:50] == ["warmup"] * 50
        assert outputs[50] == "item0"
        assert outputs[59] == "item9"

    def test_ramp_shift(self):
        line = DelayLine(5, fill=None)
        out = [line.push_pop(n, n) for n in range(30)]
        for n in range(5, 30):
            assert out[n] == n - 5

    def test_sequencing_error(self):
        line = DelayLine(3)
        line.push_pop(0, 0)
        with pytest.raises(SequencingError):
            line.push_pop(1, 2)
        with pytest.raises(SequencingError):
            line.push_pop(1, 0)

    def test_lossless_in_order(self):
        gen = np.random.default_rng(1)
        items = list(gen.integers(0, 1000, size=200))
        line = DelayLine(17, fill=None)
        seen = [line.push_pop(item, n) for n, item in enumerate(items)]
        emitted = [s for s in seen if s is not None]
        assert emitted == items[: len(emitted)]
        assert len(emitted) == 200 - 17


class TestChannelPair:
    def test_impulse_round_trip(self):
        params = DelayParams(fs=100.0, round_trip=1.0)
        fwd, ret = channel_pair(params, forward_fill=0, return_fill=0)
        impulse_at = None
        for n in range(250):
            x = 1 if n == 0 else 0
            y = ret.push_pop(fwd.push_pop(x, n), n)
            if y == 1:
                impulse_at = n
        assert impulse_at == params.n_d

    def test_zero_delay_passthrough(self):
        fwd, ret = channel_pair(DelayParams(fs=100.0, round_trip=0.0))
        for n in range(5):
            assert ret.push_pop(fwd.push_pop(n, n), n) == n

    def test_command_feedback_tagging(self):
        params = DelayParams(fs=100.0, round_trip=1.0)
        fwd, ret = channel_pair(params, forward_fill=None, return_fill=None)
        for n in range(300):
            feedback = ret.push_pop(fwd.push_pop(("cmd", n), n), n)
            if feedback is not None:
                assert feedback == ("cmd", n - params.n_d)


def cross_correlation_delay(x: np.ndarray, y: np.ndarray) -> int:
    """Lag of the cross-correlation peak between input and output."""
    corr = np.correlate(y, x, mode="full")
    return int(np.argmax(corr) - (len(x) - 1))


@pytest.mark.parametrize("fs", [50.0, 100.0, 200.0])
@pytest.mark.parametrize("d", [0.0, 0.5, 1.0])
def test_prbs_cross_correlation_places_delay(fs, d):
    params = DelayParams(fs=fs, round_trip=d)
    gen = np.random.default_rng(int(fs) * 7 + int(d * 10))
    x = gen.choice([-1.0, 1.0], size=int(fs * 6) + 4 * params.n_d + 64)
    line = DelayLine(params.one_way, fill=0.0)
    y = np.array([line.push_pop(v, n) for n, v in enumerate(x)])
    assert cross_correlation_delay(x, y) == params.one_way
