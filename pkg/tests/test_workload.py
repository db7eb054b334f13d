import numpy as np
import pytest

from warmgrid.sim.workload import (
    TraceParseError,
    dump_trace,
    parse_trace,
    poisson_workload,
    trace_workload,
)

MIX = {"media_video": 0.5, "media_audio": 0.5}


def test_poisson_rate_and_mix():
    arr = poisson_workload(7, 5.0, 5000, MIX)
    times = np.array([a.time for a in arr])
    assert np.all(np.diff(times) >= 0)
    assert 5000 / times[-1] == pytest.approx(5.0, rel=0.05)
    share = sum(a.spec.task_class == "media_video" for a in arr) / len(arr)
    assert share == pytest.approx(0.5, abs=0.03)


def test_rates_share_draws_except_time_scale():
    slow, fast = poisson_workload(7, 1.0, 200, MIX), poisson_workload(7, 20.0, 200, MIX)
    for a, b in zip(slow, fast):
        assert a.time == pytest.approx(20.0 * b.time)
        assert (a.spec, a.origin, a.startup_noise) == (b.spec, b.origin, b.startup_noise)


def test_trace_round_trip(tmp_path):
    arr = poisson_workload(1, 2.0, 20, MIX)
    path = tmp_path / "t.csv"
    path.write_text("\n".join(dump_trace(arr)) + "\n")
    again = trace_workload(path, 1)
    assert [(a.spec.task_id, a.spec.task_class) for a in again] == [(a.spec.task_id, a.spec.task_class) for a in arr]
    assert [a.time for a in again] == pytest.approx([a.time for a in arr], abs=1e-6)


@pytest.mark.parametrize(
    "text, line",
    [
        ("0.0,a,media_video\nabc,b,media_video\n", 2),
        ("1.0,a,media_video\n0.5,b,media_video\n", 2),
        ("# header\n0.0,a,media_video\n0.1,a,media_audio\n", 3),
        ("0.0,a\n", 1),
        ("0.0,a,media_video,fan_out\n", 1),
        ("-1,a,media_video\n", 1),
    ],
)
def test_trace_errors_name_the_line(text, line):
    with pytest.raises(TraceParseError) as exc:
        parse_trace(text.splitlines())
    assert exc.value.lineno == line
    assert f"line {line}" in str(exc.value)


def test_comments_and_params():
    out = parse_trace(["# c", "", "0.5,x,media_audio,fan_out=3  # inline"])
    assert out[0][0] == 0.5 and out[0][1].params == {"fan_out": "3"}
