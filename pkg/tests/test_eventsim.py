import pytest
import numpy as np
import polars as pl
from hypothesis import given, settings, strategies as st

from blursplat.eventsim import (
    Event,
    EventStream,
    EventStreamError,
    average_frames,
    bin_centres,
    bin_events,
    concatenate_streams,
    generate_events,
    log_intensity,
    synthesize_burst,
)
from blursplat.renderer import ImageBuffer, ImageRole, ShapeMismatchError

THETA = 0.2


def frame(t, value, shape=(2, 3)):
    return t, ImageBuffer(np.full(shape + (3,), value), timestamp=t, role=ImageRole.SHARP)


def ramp(k, start=0.2, sign=1):
    """Two uniform frames whose log intensity differs by (k + 0.5) thresholds."""
    end = start * np.exp(sign * (k + 0.5) * THETA)
    return [frame(0.0, start), frame(1.0, end)]


@pytest.fixture
def burst(small_scene, small_camera, motion):
    return synthesize_burst(small_scene, motion, small_camera, 5)


class TestGenerateEvents:
    @pytest.mark.parametrize("k", [0, 1, 3, 7])
    def test_ramp_emits_one_event_per_threshold(self, k):
        stream = generate_events(ramp(k), THETA)
        assert len(stream) == k * 6
        counts = stream.signed_counts((2, 3))
        np.testing.assert_array_equal(counts, k)

    def test_falling_ramp_has_negative_polarity(self):
        stream = generate_events(ramp(3, start=0.6, sign=-1), THETA)
        assert len(stream) == 18
        assert set(stream.df["p"].to_list()) == {-1}

    def test_crossing_times_interpolate_linearly(self):
        stream = generate_events([frame(0.0, 0.2, (1, 1)), frame(1.0, 0.2 * np.exp(3.5 * THETA), (1, 1))], THETA)
        np.testing.assert_allclose(stream.df["t"].to_numpy(), np.arange(1, 4) / 3.5, atol=1e-12)

    def test_per_channel_events(self):
        start = np.full((1, 1, 3), 0.3)
        end = start * np.exp(np.array([1.5, 0.5, -2.5]) * THETA)
        burst = [(0.0, ImageBuffer(start)), (1.0, ImageBuffer(end))]
        stream = generate_events(burst, THETA, per_channel=True)
        assert stream.per_channel
        np.testing.assert_array_equal(stream.signed_counts((1, 1))[0, 0], [1, 0, -2])

    def test_dark_pixels_are_clamped(self):
        stream = generate_events([frame(0.0, 0.0), frame(1.0, 5e-5)], THETA)
        assert stream.is_empty()

    def test_log_intensity_floor(self):
        np.testing.assert_allclose(log_intensity(np.zeros((1, 1, 3))), np.log(1e-4))

    def test_signed_counts_track_log_change(self, burst):
        stream = generate_events(burst, THETA)
        counts = stream.signed_counts(burst[0][1].shape)
        change = log_intensity(burst[-1][1].pixels) - log_intensity(burst[0][1].pixels)
        assert np.all(np.abs(counts * THETA - change) < THETA + 1e-9)

    def test_events_sorted_and_inside_window(self, burst):
        stream = generate_events(burst, THETA)
        t = stream.df["t"].to_numpy()
        assert np.all(np.diff(t) >= 0.0)
        assert stream.window == (0.0, 1.0)
        assert t.min() >= 0.0 and t.max() <= 1.0
        stream.check_bounds(16, 16)

    def test_static_burst_is_silent(self, small_scene, small_camera, identity_pose):
        from blursplat.trajectory import BezierTrajectory

        still = BezierTrajectory.constant(identity_pose, 2)
        stream = generate_events(synthesize_burst(small_scene, still, small_camera, 4), THETA)
        assert stream.is_empty()

    def test_rejects_unsorted_burst(self):
        with pytest.raises(EventStreamError):
            generate_events([frame(1.0, 0.2), frame(0.5, 0.4)], THETA)

    def test_rejects_bad_threshold(self):
        with pytest.raises(EventStreamError):
            generate_events(ramp(1), 0.0)

    @given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.floats(0.05, 0.5), st.booleans())
    @settings(max_examples=60, deadline=None)
    def test_net_events_conserve_log_change(self, seed, count, threshold, per_channel):
        r = np.random.default_rng(seed)
        burst = [(float(k), ImageBuffer(r.uniform(0.0, 1.0, size=(3, 4, 3)))) for k in range(count)]
        stream = generate_events(burst, threshold, per_channel=per_channel)
        counts = stream.signed_counts((3, 4))
        change = (log_intensity(burst[-1][1].pixels, per_channel)
                  - log_intensity(burst[0][1].pixels, per_channel))
        assert np.all(np.abs(counts * threshold - change) < threshold + 1e-9)


class TestEventStream:
    def test_rejects_unsorted_events(self):
        df = pl.DataFrame({"t": [0.5, 0.2], "x": [0, 0], "y": [0, 0], "p": [1, 1]})
        with pytest.raises(EventStreamError):
            EventStream(df)

    def test_rejects_bad_polarity(self):
        with pytest.raises(EventStreamError):
            Event(0, 0, 0.1, 0)

    def test_from_events_sorts(self):
        stream = EventStream.from_events([Event(1, 0, 0.7, 1), Event(0, 1, 0.3, -1)])
        assert [e.t for e in stream.events] == [0.3, 0.7]

    def test_signed_counts_half_open(self):
        stream = EventStream.from_events([Event(0, 0, 0.25, 1), Event(0, 0, 0.5, 1), Event(1, 0, 0.75, -1)])
        np.testing.assert_array_equal(stream.signed_counts((1, 2), 0.25, 0.75), [[1, -1]])
        np.testing.assert_array_equal(stream.signed_counts((1, 2)), [[2, -1]])

    def test_between_and_window_slice(self):
        stream = EventStream.from_events([Event(0, 0, t, 1) for t in (0.1, 0.2, 0.3)])
        assert len(stream.between(0.1, 0.3)) == 2
        sliced = stream.window_slice(0.1, 0.2)
        assert len(sliced) == 2
        assert sliced.window == (0.1, 0.2)

    def test_check_bounds(self):
        stream = EventStream.from_events([Event(5, 0, 0.1, 1)])
        with pytest.raises(EventStreamError):
            stream.check_bounds(4, 4)

    def test_concatenate(self):
        a = EventStream.from_events([Event(0, 0, 0.5, 1)], window=(0.0, 1.0))
        b = EventStream.from_events([Event(0, 0, 1.5, -1)], window=(1.0, 2.0))
        both = concatenate_streams([b, a])
        assert both.window == (0.0, 2.0)
        assert both.df["t"].to_list() == [0.5, 1.5]


class TestBinEvents:
    def test_bins_partition_the_stream(self, burst):
        stream = generate_events(burst, 0.05)
        bins = bin_events(stream, 6)
        assert sum(len(b) for b in bins) == len(stream)
        for b in bins:
            t = b.df["t"].to_numpy()
            if len(t):
                assert t.min() >= b.t_start and t.max() <= b.t_end
        total = sum(b.signed_counts((16, 16)) for b in bins)
        np.testing.assert_array_equal(total, stream.signed_counts((16, 16)))

    def test_right_edges_are_closed(self):
        stream = EventStream.from_events(
            [Event(0, 0, t, 1) for t in (0.0, 0.5, 0.75, 1.0)], window=(0.0, 1.0)
        )
        assert [len(b) for b in bin_events(stream, 2)] == [2, 2]

    def test_events_outside_window_are_dropped(self):
        df = pl.DataFrame({"t": [0.5, 1.2, 1.5, 2.0, 2.5], "x": [0] * 5, "y": [0] * 5, "p": [1] * 5})
        stream = EventStream(df, window=(1.0, 2.0))
        bins = bin_events(stream, 2)
        assert [b.df["t"].to_list() for b in bins] == [[1.2, 1.5], [2.0]]

    def test_centres_split_each_bin(self):
        np.testing.assert_allclose(bin_centres(EventStream(window=(1.0, 3.0)), 4), [1.25, 1.75, 2.25, 2.75])

    def test_bin_windows_are_equal(self):
        bins = bin_events(EventStream(window=(1.0, 3.0)), 4)
        np.testing.assert_allclose([b.duration for b in bins], 0.5)
        assert bins[0].t_start == 1.0 and bins[-1].t_end == 3.0

    def test_needs_a_bin(self):
        with pytest.raises(ValueError):
            bin_events(EventStream(), 0)


class TestBurst:
    def test_timestamps_span_exposure(self, small_scene, small_camera, motion):
        frames = synthesize_burst(small_scene, motion, small_camera, 5, t_start=2.0)
        np.testing.assert_allclose([t for t, _ in frames], [2.0, 2.25, 2.5, 2.75, 3.0])
        assert all(image.role is ImageRole.SHARP for _, image in frames)

    def test_average_frames(self):
        blurred = average_frames([frame(0.0, 0.2), frame(0.5, 0.4), frame(1.0, 0.9)])
        np.testing.assert_allclose(blurred.pixels, 0.5)
        assert blurred.exposure == (0.0, 1.0)
        assert blurred.role is ImageRole.OBSERVED

    def test_average_single_frame_is_identity(self, burst):
        np.testing.assert_array_equal(average_frames(burst[:1]).pixels, burst[0][1].pixels)

    def test_average_rejects_mixed_shapes(self):
        with pytest.raises(ShapeMismatchError):
            average_frames([frame(0.0, 0.2, (2, 2)), frame(1.0, 0.2, (3, 3))])


class TestEventExamples:
    def test_exact_multiple_of_threshold(self):
        stream = generate_events([frame(0.0, 0.25, (1, 1)), frame(1.0, 0.25 * np.exp(3 * THETA), (1, 1))], THETA)
        assert len(stream) == 3
        assert stream.df["p"].to_list() == [1, 1, 1]

    def test_single_frame_burst(self, small_scene, small_camera, motion):
        frames = synthesize_burst(small_scene, motion, small_camera, 1, t_start=3.0)
        assert len(frames) == 1 and frames[0][0] == 3.0

    def test_black_and_white_average(self):
        np.testing.assert_array_equal(average_frames([frame(0.0, 0.0), frame(1.0, 1.0)]).pixels, 0.5)

    def test_uniform_stream_fills_bins_evenly(self):
        events = [Event(0, 0, (k + 0.5) / 1300, 1) for k in range(1300)]
        bins = bin_events(EventStream.from_events(events), 13)
        assert [len(b) for b in bins] == [100] * 13

    def test_empty_stream_gives_empty_bins(self):
        bins = bin_events(EventStream(), 13)
        assert len(bins) == 13 and all(b.is_empty() for b in bins)
