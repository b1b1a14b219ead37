import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajforge.datasets import (
    BENCHMARK_DATASETS,
    DuplicateObservation,
    MalformedLine,
    RawTrackRow,
    SplitSpec,
    UnknownDataset,
    build_windows,
    dumps_windows,
    leave_one_out,
    load_dataset,
    load_split,
    loads_windows,
    parse_track_file,
)
from trajforge.errors import NonFiniteValue


def _write(tmp_path, text, name="t.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _track(agent, frames, x0=0.0):
    return [RawTrackRow(f, agent, x0 + f, 0.5 * f) for f in frames]


class TestParse:
    def test_field_mapping(self, tmp_path):
        rows = parse_track_file(_write(tmp_path, "0 1 3.50 -2.00\n"))
        assert rows == [RawTrackRow(0, 1, 3.5, -2.0)]

    def test_empty_file(self, tmp_path):
        assert parse_track_file(_write(tmp_path, "")) == []

    def test_nan_rejected(self, tmp_path):
        with pytest.raises(NonFiniteValue):
            parse_track_file(_write(tmp_path, "0 1 3.5 NaN\n"))

    def test_duplicate_rejected(self, tmp_path):
        with pytest.raises(DuplicateObservation):
            parse_track_file(_write(tmp_path, "0 1 1 1\n0 1 2 2\n"))

    def test_malformed(self, tmp_path):
        with pytest.raises(MalformedLine) as err:
            parse_track_file(_write(tmp_path, "0 1 1 1\n0 2 x 1\n"))
        assert err.value.line_no == 2

    def test_float_ids_and_tabs(self, tmp_path):
        # common ETH-UCY distributions write ids as floats, tab separated
        rows = parse_track_file(_write(tmp_path, "10.0\t2.0\t1.5\t2.5\n"))
        assert rows == [RawTrackRow(10, 2, 1.5, 2.5)]

    def test_column_order(self, tmp_path):
        rows = parse_track_file(_write(tmp_path, "3.5 -2.0 0 1\n"), ("x", "y", "frame", "agent"))
        assert rows == [RawTrackRow(0, 1, 3.5, -2.0)]


class TestWindows:
    def test_single_full_agent(self):
        ws = build_windows(_track(1, range(20)), stride=20)
        assert len(ws) == 1 and ws[0].num_agents == 1
        assert ws[0].obs.shape == (1, 8, 2) and ws[0].future.shape == (1, 12, 2)

    def test_nineteen_frames_is_too_short(self):
        assert build_windows(_track(1, range(19)), stride=20) == []

    def test_staggered_agents_never_share_a_window(self):
        rows = _track(1, range(20)) + _track(2, range(5, 25))
        ws = build_windows(rows, stride=1)
        assert [(w.start_frame, w.agent_ids) for w in ws] == [(0, [1]), (5, [2])]

    def test_gap_excludes_agent(self):
        rows = _track(1, range(20)) + [r for r in _track(2, range(20)) if r.frame_id != 7]
        (w,) = build_windows(rows, stride=20)
        assert w.agent_ids == [1]

    def test_values_are_positions(self):
        (w,) = build_windows(_track(3, range(20)), stride=20)
        np.testing.assert_array_equal(w.obs[0, :, 0], np.arange(8.0))
        np.testing.assert_array_equal(w.future[0, :, 1], 0.5 * np.arange(8, 20))

    def test_frames_use_distinct_frame_ids(self):
        # raw files tick by 10; windows span 20 distinct ids, not 20 raw ticks
        rows = [RawTrackRow(10 * f, 1, f, 0.0) for f in range(20)]
        (w,) = build_windows(rows)
        assert w.start_frame == 0

    def test_bad_stride(self):
        with pytest.raises(ValueError):
            build_windows(_track(1, range(20)), stride=0)

    @settings(max_examples=40, deadline=None)
    @given(
        spans=st.lists(st.tuples(st.integers(0, 30), st.integers(1, 40)), min_size=1, max_size=6),
        stride=st.integers(1, 25),
    )
    def test_completeness_and_partition(self, spans, stride):
        rows = []
        for agent, (start, length) in enumerate(spans):
            rows += _track(agent, range(start, start + length), x0=agent)
        ws = build_windows(rows, stride=stride)
        present = {(r.frame_id, r.agent_id) for r in rows}
        for w in ws:
            assert w.num_agents >= 1
            assert np.isfinite(w.obs).all() and np.isfinite(w.future).all()
            for a in w.agent_ids:
                assert all((w.start_frame + i, a) in present for i in range(20))
        if stride == 20:
            starts = [w.start_frame for w in ws]
            assert all(b - a >= 20 for a, b in zip(starts, starts[1:]))


class TestSplit:
    def test_benchmark(self):
        assert leave_one_out(BENCHMARK_DATASETS, "eth") == SplitSpec("eth", ("hotel", "univ", "zara1", "zara2"))

    def test_two(self):
        assert leave_one_out(["a", "b"], "b").train_sets == ("a",)

    def test_unknown(self):
        with pytest.raises(UnknownDataset):
            leave_one_out(["a"], "b")

    def test_load_split(self, synthetic_root):
        train, test = load_split(synthetic_root, leave_one_out(BENCHMARK_DATASETS, "zara1"), train_stride=20)
        assert {w.scene_id.split("/")[0] for w in train} == {"eth", "hotel", "univ", "zara2"}
        assert {w.scene_id.split("/")[0] for w in test} == {"zara1"}

    def test_missing_dataset(self, tmp_path):
        with pytest.raises(UnknownDataset):
            load_dataset(tmp_path, "eth")

    def test_test_subdir_preferred(self, tmp_path):
        (tmp_path / "eth" / "test").mkdir(parents=True)
        (tmp_path / "eth" / "train.txt").write_text("")
        lines = "".join(f"{f} 1 {f}.0 0.0\n" for f in range(20))
        (tmp_path / "eth" / "test" / "a.txt").write_text(lines)
        (w,) = load_dataset(tmp_path, "eth")
        assert w.scene_id == "eth/a"


class TestSerialization:
    def test_round_trip_is_exact(self, synthetic_root):
        ws = load_dataset(synthetic_root, "hotel", stride=5)
        back = loads_windows(dumps_windows(ws))
        assert len(back) == len(ws)
        for a, b in zip(ws, back):
            assert a.scene_id == b.scene_id and a.start_frame == b.start_frame
            np.testing.assert_array_equal(a.obs, b.obs)
            np.testing.assert_array_equal(a.future, b.future)

    def test_deterministic_bytes(self, synthetic_root):
        assert dumps_windows(load_dataset(synthetic_root, "eth")) == dumps_windows(load_dataset(synthetic_root, "eth"))

    def test_header_format(self):
        (w,) = build_windows(_track(1, range(20)), scene_id="eth/x")
        text = dumps_windows([w])
        assert text.splitlines()[0] == "WINDOW eth/x 0 1"
        assert len(text.splitlines()) == 21
