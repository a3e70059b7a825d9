import numpy as np
import pytest

from stablebatch.errors import RunParseError
from stablebatch.runs import TrainingRun, read_run, write_csv, write_jsonl


def _run():
    steps = np.arange(1, 11)
    return TrainingRun(1e8, 2.5, steps, steps * 2.5, 3.0 + 1.0 / steps, {"run_id": "r"})


@pytest.mark.parametrize("writer,suffix", [(write_csv, ".csv"), (write_jsonl, ".jsonl")])
def test_round_trip_is_exact(tmp_path, writer, suffix):
    run = _run()
    back = read_run(writer(run, tmp_path / f"r{suffix}"))
    assert back.batch_size == run.batch_size and back.model_size == run.model_size
    assert np.array_equal(back.steps, run.steps)
    assert np.array_equal(back.losses, run.losses)
    assert back.meta == run.meta


def test_csv_writes_sidecar(tmp_path):
    path = write_csv(_run(), tmp_path / "r.csv")
    assert path.with_suffix(".json").exists()
    assert path.read_text().splitlines()[0] == "step,tokens,loss"


def test_non_monotone_tokens_names_the_line(tmp_path):
    path = write_csv(_run(), tmp_path / "r.csv")
    lines = path.read_text().splitlines()
    lines[4] = "4,7.0,3.25"  # tokens go backwards after row 3 (tokens 7.5)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(RunParseError) as err:
        read_run(path)
    assert err.value.line == 5
    assert f"{path}:5:" in str(err.value)


def test_jsonl_bad_record_line(tmp_path):
    path = write_jsonl(_run(), tmp_path / "r.jsonl")
    lines = path.read_text().splitlines()
    lines[3] = '{"step": 3}'
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(RunParseError, match=":4:"):
        read_run(path)


def test_missing_sidecar(tmp_path):
    path = write_csv(_run(), tmp_path / "r.csv")
    path.with_suffix(".json").unlink()
    with pytest.raises(RunParseError):
        read_run(path)


@pytest.mark.parametrize("bad", [
    dict(losses=[1.0, -1.0]),
    dict(steps=[2, 1], tokens=[4.0, 2.0]),
    dict(tokens=[2.0, 9.0]),
    dict(losses=[1.0, float("nan")]),
])
def test_constructor_validation(bad):
    kw = dict(steps=[1, 2], tokens=[2.0, 4.0], losses=[2.0, 1.5])
    kw.update(bad)
    with pytest.raises(ValueError):
        TrainingRun(1.0, 2.0, **kw)
