import json
import signal
import subprocess
import sys
import time

import pytest

from iotmediator.cli import EXIT_NEGATIVE, EXIT_OK, EXIT_USAGE, main
from iotmediator.testbed.traces import TraceFile, state_event


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def write_trace(path, events, init=None):
    TraceFile("home.json", init or {}, events).write(path)


def test_check_scenario_reports_violation(capsys):
    code, out, _ = run(capsys, "check", "--policy", "builtin:home-policy",
                       "--trace", "builtin:door_left_unlocked")
    assert code == EXIT_NEGATIVE
    assert "violation at position 2: I1" in out


def test_check_json(capsys):
    code, out, _ = run(capsys, "check", "--policy", "builtin:home-policy",
                       "--trace", "builtin:door_left_unlocked", "--json")
    assert code == EXIT_NEGATIVE
    data = json.loads(out)
    assert data


def test_check_clean_and_empty_traces(capsys, tmp_path):
    clean = tmp_path / "clean.jsonl"
    write_trace(clean, [state_event("HomeMode", "status", "Home"),
                        state_event("FrontDoorLock", "status", "unlocked")])
    code, out, _ = run(capsys, "check", "--policy", "builtin:home-policy", "--trace", str(clean))
    assert code == EXIT_OK and "violation at" not in out
    empty = tmp_path / "empty.jsonl"
    write_trace(empty, [])
    code, _, _ = run(capsys, "check", "--policy", "builtin:home-policy", "--trace", str(empty))
    assert code == EXIT_OK


def test_analyze_builtin(capsys, tmp_path):
    report = tmp_path / "report.json"
    code, out, _ = run(capsys, "analyze", "--policy", "builtin:home-policy",
                       "--registry", "builtin:home", "--report", str(report))
    assert code == EXIT_OK
    assert "overall: pass" in out
    assert json.loads(report.read_text())["lint"] == []


def test_analyze_failing_policy(capsys, tmp_path):
    pol = tmp_path / "bad.pol"
    pol.write_text('RULE R1 IF AirConditioner.switch == "on" THEN Heater.switch == "off" '
                   'CORRECT send(Heater.turn_on)\n')
    code, out, _ = run(capsys, "analyze", "--policy", str(pol), "--registry", "builtin:home",
                       "--json")
    assert code == EXIT_NEGATIVE
    assert json.loads(out)["status"] == "fail"


@pytest.mark.parametrize("argv", [
    ["check", "--policy", "missing.pol", "--trace", "builtin:door_left_unlocked"],
    ["check", "--policy", "builtin:home-policy", "--trace", "missing.jsonl"],
    ["analyze", "--policy", "builtin:nope", "--registry", "builtin:home"],
])
def test_missing_files_are_usage_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == EXIT_USAGE and ("not found" in err or "unknown bundled" in err)


def test_bad_arguments_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bench", "--mode", "sideways"])
    assert exc.value.code == EXIT_USAGE


def test_policy_syntax_error_is_runtime(capsys, tmp_path):
    pol = tmp_path / "broken.pol"
    pol.write_text("RULE R1 IF THEN\n")
    code, _, err = run(capsys, "check", "--policy", str(pol),
                       "--trace", "builtin:door_left_unlocked")
    assert code == 3 and "line 1" in err


def _synth_dirs(tmp_path):
    pos, neg = tmp_path / "pos", tmp_path / "neg"
    pos.mkdir()
    neg.mkdir()
    # positive: Home/locked then Away/locked; negative: Home/unlocked then Away/unlocked
    write_trace(pos / "a.jsonl", [state_event("HomeMode", "status", "Home"),
                                  state_event("HomeMode", "status", "Away")])
    write_trace(neg / "a.jsonl", [state_event("FrontDoorLock", "status", "unlocked"),
                                  state_event("HomeMode", "status", "Away")])
    preds = tmp_path / "i1.pred"
    preds.write_text('Away = HomeMode.status == "Away"\n'
                     'FrontDoorLocked = FrontDoorLock.status == "locked"\n')
    return pos, neg, preds


def test_synthesize_from_directories(capsys, tmp_path):
    pos, neg, preds = _synth_dirs(tmp_path)
    argv = ["synthesize", "--pos", str(pos), "--neg", str(neg), "--preds", str(preds),
            "-k", "6", "--json"]
    code, out, _ = run(capsys, *argv)
    assert code == EXIT_OK
    cands = json.loads(out)
    assert len(cands) == 6
    assert cands[0]["invariant"] == \
        'IF HomeMode.status == "Away" THEN FrontDoorLock.status == "locked"'
    assert [c["size"] for c in cands] == sorted(c["size"] for c in cands)
    assert run(capsys, *argv)[1] == out
    code, text, _ = run(capsys, *argv[:-1])
    assert len(text.strip().splitlines()) == 6


def test_synthesize_no_separator(capsys, tmp_path):
    pos, neg, preds = _synth_dirs(tmp_path)
    write_trace(pos / "d.jsonl", [state_event("FrontDoorLock", "status", "unlocked"),
                                  state_event("HomeMode", "status", "Away")])
    code, _, err = run(capsys, "synthesize", "--pos", str(pos), "--neg", str(neg),
                       "--preds", str(preds))
    assert code == EXIT_NEGATIVE and "no separator" in err


def test_gen_is_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for p in (a, b):
        assert run(capsys, "gen", "--seed", "7", "--length", "60", "--flavor", "down",
                   "--out", str(p))[0] == EXIT_OK
    assert a.read_text() == b.read_text()
    assert len(a.read_text().splitlines()) == 61
    code, out, _ = run(capsys, "gen", "--seed", "8", "--length", "60")
    assert out != a.read_text()


def test_gen_lists_scenarios(capsys):
    code, out, _ = run(capsys, "gen", "--list-scenarios")
    assert code == EXIT_OK
    assert "builtin:door_left_unlocked" in out.split()


def test_replay_private_broker(capsys, tmp_path):
    out_path = tmp_path / "report.json"
    code, _, _ = run(capsys, "replay", "--trace", "builtin:unlock_while_away",
                     "--policy", "builtin:home-policy", "--out", str(out_path))
    assert code == EXIT_OK
    assert json.loads(out_path.read_text())


def test_bench_latency_csv(capsys):
    code, out, _ = run(capsys, "bench", "--mode", "latency", "-n", "1,10", "--messages", "40",
                       "--rounds", "1")
    assert code == EXIT_OK
    lines = out.strip().splitlines()
    assert lines[0] == "n_invariants,mode,metric,value"
    assert any(line.startswith("10,added,median_ms,") for line in lines)


def test_broker_subprocess_sigterm():
    proc = subprocess.Popen([sys.executable, "-m", "iotmediator", "broker", "--port", "0",
                             "--policy", "builtin:home-policy", "--registry", "builtin:home"],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        deadline = time.monotonic() + 30
        line = ""
        while "listening on" not in line and time.monotonic() < deadline:
            line = proc.stdout.readline()
        assert "listening on" in line
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(15) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
