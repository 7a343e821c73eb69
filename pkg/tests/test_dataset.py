import gzip
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qgtbench.core import BoundsVector, HiddenVector
from qgtbench.dataset import (
    DatasetFormatError,
    DatasetRecord,
    DatasetWriteError,
    compute_rtg,
    decode_record,
    encode_record,
    generate_dataset,
    generate_episode,
    iter_jsonl,
    pad_record,
    read_jsonl,
    reduce_bounds,
    replay_record,
    sample_standalone_bounds,
    sample_standalone_hidden,
    write_jsonl,
)
from qgtbench.strategies import (
    EntropyStrategy,
    Strategy,
    TrajectoryStep,
    run_episode,
)


class TestComputeRtg:
    def test_identifying_query_costs_its_step(self):
        assert compute_rtg(3) == [-3, -2, -1]
        assert compute_rtg(1) == [-1]

    def test_free_final_query_variant(self):
        assert compute_rtg(3, final_reward=0) == [-2, -1, 0]
        assert compute_rtg(1, final_reward=0) == [0]

    def test_empty_episode(self):
        assert compute_rtg(0) == []

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            compute_rtg(-1)
        with pytest.raises(ValueError):
            compute_rtg(3, final_reward=1)


class TestSampling:
    def test_bounds_sum_to_k(self, rng):
        for k in (1, 2, 5, 9):
            for _ in range(50):
                assert sample_standalone_bounds(k, rng).total == k

    def test_bounds_occupancy_frequencies(self):
        # two defectives in two groups: (2,0) w.p. 1/4, (1,1) 1/2, (0,2) 1/4
        gen = np.random.default_rng(7)
        counts = {(2, 0): 0, (1, 1): 0, (0, 2): 0}
        trials = 20_000
        for _ in range(trials):
            counts[sample_standalone_bounds(2, gen).u] += 1
        assert counts[(2, 0)] / trials == pytest.approx(0.25, abs=0.02)
        assert counts[(1, 1)] / trials == pytest.approx(0.50, abs=0.02)
        assert counts[(0, 2)] / trials == pytest.approx(0.25, abs=0.02)

    def test_bounds_rejects_bad_k(self, rng):
        with pytest.raises(ValueError):
            sample_standalone_bounds(0, rng)

    def test_hidden_within_bounds(self, rng):
        for _ in range(200):
            bounds = sample_standalone_bounds(6, rng)
            hidden = sample_standalone_hidden(bounds, rng)
            assert all(0 <= v <= u for v, u in zip(hidden.v, bounds.u))

    def test_hidden_fair_coin_frequencies(self):
        gen = np.random.default_rng(11)
        bounds = BoundsVector((2,))
        trials = 20_000
        hist = [0, 0, 0]
        for _ in range(trials):
            hist[sample_standalone_hidden(bounds, gen).v[0]] += 1
        assert hist[0] / trials == pytest.approx(0.25, abs=0.02)
        assert hist[1] / trials == pytest.approx(0.50, abs=0.02)
        assert hist[2] / trials == pytest.approx(0.25, abs=0.02)

    def test_hidden_wide_bounds_path(self, rng):
        # totals above the single-integer bit budget take the array path
        bounds = BoundsVector((40, 40))
        hidden = sample_standalone_hidden(bounds, rng)
        assert all(0 <= v <= 40 for v in hidden.v)

    def test_hidden_zero_bounds(self, rng):
        assert sample_standalone_hidden(BoundsVector((0, 0)), rng).v == (0, 0)


class TestReducePad:
    def test_reduce_drops_zeros(self):
        active, positions = reduce_bounds(BoundsVector((0, 2, 0, 1)))
        assert active.u == (2, 1)
        assert positions == (1, 3)

    def test_reduce_identity_when_dense(self):
        active, positions = reduce_bounds(BoundsVector((1, 1, 1)))
        assert active.u == (1, 1, 1)
        assert positions == (0, 1, 2)

    def test_reduce_rejects_all_zero(self):
        with pytest.raises(ValueError):
            reduce_bounds(BoundsVector((0, 0)))

    def test_pad_worked_example(self, rng):
        trajectory = run_episode(
            BoundsVector((1, 1)), HiddenVector((1, 0)), EntropyStrategy(), rng
        )
        record = pad_record(trajectory, k=4, positions=(1, 3))
        assert record.bounds == (0, 1, 0, 1)
        assert record.target == (0, 1, 0, 0)
        assert [s.action for s in record.steps] == [(0, 1, 0, 1), (0, 0, 0, 1)]
        assert [s.state for s in record.steps] == [2, 1]
        assert [s.rtg for s in record.steps] == [-2, -1]
        assert record.solved

    def test_pad_final_reward_zero(self, rng):
        trajectory = run_episode(
            BoundsVector((1, 1)), HiddenVector((1, 0)), EntropyStrategy(), rng
        )
        record = pad_record(trajectory, k=2, positions=(0, 1), final_reward=0)
        assert [s.rtg for s in record.steps] == [-1, 0]

    def test_pad_position_validation(self, rng):
        trajectory = run_episode(
            BoundsVector((1, 1)), HiddenVector((1, 0)), EntropyStrategy(), rng
        )
        with pytest.raises(ValueError):
            pad_record(trajectory, k=4, positions=(1,))
        with pytest.raises(ValueError):
            pad_record(trajectory, k=4, positions=(1, 4))


def _valid_record() -> DatasetRecord:
    return DatasetRecord(
        k=2,
        bounds=(1, 1),
        steps=(
            TrajectoryStep(rtg=-2, state=2, action=(1, 1)),
            TrajectoryStep(rtg=-1, state=1, action=(0, 1)),
        ),
        target=(1, 0),
    )


class TestDatasetRecordValidation:
    def test_valid_record_accepted(self):
        record = _valid_record()
        assert record.num_steps == 2

    def test_empty_steps_allowed(self):
        record = DatasetRecord(k=1, bounds=(0,), steps=(), target=(0,))
        assert record.num_steps == 0

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(k=0, bounds=(), steps=(), target=()),
            dict(k=2, bounds=(1,), steps=(), target=(1, 0)),
            dict(k=2, bounds=(1, 1), steps=(), target=(1,)),
            dict(k=2, bounds=(-1, 1), steps=(), target=(0, 0)),
            dict(k=2, bounds=(1, 1), steps=(), target=(2, 0)),
        ],
    )
    def test_shape_violations(self, kwargs):
        with pytest.raises(DatasetFormatError):
            DatasetRecord(**kwargs)

    def test_action_length_checked(self):
        with pytest.raises(DatasetFormatError):
            DatasetRecord(
                k=2,
                bounds=(1, 1),
                steps=(TrajectoryStep(rtg=-1, state=2, action=(1,)),),
                target=(1, 0),
            )

    def test_action_must_be_binary(self):
        with pytest.raises(DatasetFormatError):
            DatasetRecord(
                k=2,
                bounds=(1, 1),
                steps=(TrajectoryStep(rtg=-1, state=2, action=(2, 0)),),
                target=(1, 0),
            )

    def test_first_state_is_bounds_total(self):
        with pytest.raises(DatasetFormatError):
            DatasetRecord(
                k=2,
                bounds=(1, 1),
                steps=(TrajectoryStep(rtg=-1, state=3, action=(1, 1)),),
                target=(1, 0),
            )

    def test_rtg_chain_must_step_by_one(self):
        with pytest.raises(DatasetFormatError):
            DatasetRecord(
                k=2,
                bounds=(1, 1),
                steps=(
                    TrajectoryStep(rtg=-3, state=2, action=(1, 1)),
                    TrajectoryStep(rtg=-1, state=1, action=(0, 1)),
                ),
                target=(1, 0),
            )

    def test_final_rtg_bounded(self):
        with pytest.raises(DatasetFormatError):
            DatasetRecord(
                k=2,
                bounds=(1, 1),
                steps=(TrajectoryStep(rtg=-2, state=2, action=(1, 1)),),
                target=(1, 0),
            )


class TestSerialization:
    def test_encode_is_compact_single_line(self):
        line = encode_record(_valid_record())
        assert "\n" not in line and " " not in line
        obj = json.loads(line)
        assert set(obj) == {"k", "bounds", "steps", "target", "solved"}

    def test_round_trip(self):
        record = _valid_record()
        assert decode_record(encode_record(record)) == record

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 6))
    def test_round_trip_generated_episodes(self, seed, k):
        gen = np.random.default_rng(seed)
        record = generate_episode(k, EntropyStrategy(), gen)
        assert decode_record(encode_record(record)) == record

    def test_invalid_json_reports_line(self):
        with pytest.raises(DatasetFormatError, match="line 3"):
            decode_record("{not json", line_number=3)

    def test_missing_field_named(self):
        line = json.dumps({"k": 2, "bounds": [1, 1], "target": [0, 0]})
        with pytest.raises(DatasetFormatError, match="steps"):
            decode_record(line)

    def test_non_object_rejected(self):
        with pytest.raises(DatasetFormatError):
            decode_record("[1,2,3]")

    def test_semantic_errors_carry_location(self):
        line = json.dumps(
            {"k": 2, "bounds": [1], "steps": [], "target": [0, 0]}
        )
        with pytest.raises(DatasetFormatError, match="line 7"):
            decode_record(line, line_number=7)

    def test_solved_defaults_true(self):
        line = json.dumps(
            {"k": 1, "bounds": [0], "steps": [], "target": [0]}
        )
        assert decode_record(line).solved


class TestJsonlIO:
    def test_file_round_trip(self, tmp_path, rng):
        records = [generate_episode(3, EntropyStrategy(), rng) for _ in range(8)]
        path = tmp_path / "data.jsonl"
        assert write_jsonl(records, path) == 8
        assert read_jsonl(path) == records

    def test_gzip_round_trip_and_determinism(self, tmp_path):
        def make():
            gen = np.random.default_rng(5)
            return [generate_episode(2, EntropyStrategy(), gen) for _ in range(10)]

        a, b = tmp_path / "a.jsonl.gz", tmp_path / "b.jsonl.gz"
        write_jsonl(make(), a)
        write_jsonl(make(), b)
        assert a.read_bytes() == b.read_bytes()
        with gzip.open(a, "rt") as fh:
            assert sum(1 for _ in fh) == 10
        assert read_jsonl(a) == make()

    def test_compress_flag_without_suffix(self, tmp_path):
        path = tmp_path / "data.jsonl"
        write_jsonl([_valid_record()], path, compress=True)
        assert path.read_bytes()[:2] == b"\x1f\x8b"

    def test_string_sink_round_trip(self):
        buf = io.StringIO()
        write_jsonl([_valid_record()], buf)
        buf.seek(0)
        assert read_jsonl(buf) == [_valid_record()]

    def test_iter_skips_blank_lines(self):
        buf = io.StringIO(encode_record(_valid_record()) + "\n\n")
        assert len(list(iter_jsonl(buf))) == 1

    def test_bad_line_reports_position(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text(encode_record(_valid_record()) + "\nnot json\n")
        with pytest.raises(DatasetFormatError, match="line 2"):
            read_jsonl(path)

    def test_write_failure_counts_records(self):
        class FailingSink(io.StringIO):
            def __init__(self, fail_after: int):
                super().__init__()
                self.ok_writes = 0
                self.fail_after = fail_after

            def write(self, s: str) -> int:
                if self.ok_writes >= self.fail_after:
                    raise OSError("disk full")
                self.ok_writes += 1
                return super().write(s)

        records = [_valid_record()] * 5
        with pytest.raises(DatasetWriteError, match="after 2 records"):
            write_jsonl(records, FailingSink(fail_after=2))


class TestReplay:
    def test_generated_records_replay_clean(self, rng):
        for k in (1, 2, 4, 6):
            for _ in range(10):
                replay_record(generate_episode(k, EntropyStrategy(), rng))

    def test_trivial_record_replays(self):
        replay_record(DatasetRecord(k=1, bounds=(0,), steps=(), target=(0,)))

    def test_tampered_state_rejected(self):
        record = _valid_record()
        bad = DatasetRecord(
            k=2,
            bounds=record.bounds,
            steps=(
                record.steps[0],
                TrajectoryStep(rtg=-1, state=0, action=(0, 1)),
            ),
            target=record.target,
        )
        with pytest.raises(DatasetFormatError, match="state"):
            replay_record(bad)

    def test_tampered_target_rejected(self):
        record = _valid_record()
        bad = DatasetRecord(
            k=2, bounds=record.bounds, steps=record.steps, target=(1, 1)
        )
        with pytest.raises(DatasetFormatError):
            replay_record(bad)

    def test_solved_flag_must_match_replay(self):
        # one aggregate query leaves two candidates, yet the record
        # claims identification
        bad = DatasetRecord(
            k=2,
            bounds=(1, 1),
            steps=(TrajectoryStep(rtg=-1, state=2, action=(1, 1)),),
            target=(1, 0),
            solved=True,
        )
        with pytest.raises(DatasetFormatError, match="solved"):
            replay_record(bad)


class _Stubborn(Strategy):
    """Repeats the full pool forever; never narrows multi-coordinate boxes."""

    def propose(self, fs, bounds, records, rng):
        return (1,) * bounds.d


class TestGenerateDataset:
    def test_seeded_runs_are_identical(self):
        outputs = []
        for _ in range(2):
            buf = io.StringIO()
            summary = generate_dataset(3, "entropy", 25, rng=42, sink=buf)
            outputs.append((buf.getvalue(), summary))
        assert outputs[0] == outputs[1]
        assert outputs[0][1].episodes_written == 25

    def test_records_validate_and_replay(self):
        buf = io.StringIO()
        generate_dataset(4, "entropy", 30, rng=1, sink=buf)
        buf.seek(0)
        records = read_jsonl(buf)
        assert len(records) == 30
        for record in records:
            assert record.k == 4
            assert sum(record.bounds) == 4
            replay_record(record)

    def test_generator_rng_accepted(self, rng):
        summary = generate_dataset(2, EntropyStrategy(), 10, rng=rng, sink=None)
        assert summary.episodes_written == 10

    def test_unsolved_excluded_by_default(self):
        summary = generate_dataset(
            3, _Stubborn(), 40, rng=9, sink=None, max_steps=2
        )
        assert summary.episodes_written < summary.episodes_generated
        assert summary.solve_rate < 1.0

    def test_include_unsolved_keeps_everything(self):
        buf = io.StringIO()
        summary = generate_dataset(
            3, _Stubborn(), 40, rng=9, sink=buf, max_steps=2, include_unsolved=True
        )
        assert summary.episodes_written == 40
        buf.seek(0)
        records = read_jsonl(buf)
        assert any(not r.solved for r in records)
        for record in records:
            replay_record(record)

    def test_final_reward_zero_propagates(self):
        buf = io.StringIO()
        generate_dataset(2, "entropy", 5, rng=3, sink=buf, final_reward=0)
        buf.seek(0)
        for record in read_jsonl(buf):
            assert record.steps[-1].rtg == 0

    def test_gzip_file_determinism(self, tmp_path):
        paths = [tmp_path / "a.jsonl.gz", tmp_path / "b.jsonl.gz"]
        for path in paths:
            generate_dataset(2, "entropy", 15, rng=8, sink=path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_rejects_negative_count(self):
        with pytest.raises(ValueError):
            generate_dataset(2, "entropy", -1, rng=0, sink=None)

    def test_mean_length_nan_when_empty(self):
        summary = generate_dataset(2, "entropy", 0, rng=0, sink=None)
        assert summary.episodes_written == 0
        assert np.isnan(summary.mean_length)
