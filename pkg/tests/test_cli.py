import json
import math
import subprocess
import sys
from fractions import Fraction

import pytest

from mpusketch.cli import fmt6, main, query_rows
from mpusketch.estimator import MpuEnsemble
from mpusketch.hashing import flow_key


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def synth(tmp_path, capsys):
    def make(*extra, name="t.csv"):
        path = tmp_path / name
        code, _, err = run(capsys, "synth", "--out", path, *extra)
        assert code == 0 and err.startswith("# seed=")
        return path
    return make


def test_fmt6_exact_rounding():
    assert fmt6(Fraction(1, 3)) == "0.333333"
    assert fmt6(Fraction(2, 3)) == "0.666667"
    assert fmt6(Fraction(-5, 2)) == "-2.500000"
    assert fmt6(Fraction(1, 2 * 10 ** 6)) == "0.000000"  # half-even
    assert fmt6(Fraction(3, 2 * 10 ** 6)) == "0.000002"


def test_synth_truth_row(synth):
    path = synth("--flows", 100, "--epoch", 4000, "--pair", "3:7:200", "--q", 0, "--seed", 1)
    truth = (path.parent / "t.csv.truth.tsv").read_text().splitlines()
    assert truth == ["flow_i\tflow_j\tplanted\tcor", "f3\tf7\t200\t200"]


def test_synth_byte_identical(synth):
    a = synth("--flows", 20, "--epoch", 500, "--pair", "f1:f2:30", "--q", 0.05, "--seed", 9, name="a.csv")
    b = synth("--flows", 20, "--epoch", 500, "--pair", "f1:f2:30", "--q", 0.05, "--seed", 9, name="b.csv")
    assert a.read_bytes() == b.read_bytes()


def test_synth_to_stdout(capsys):
    code, out, err = run(capsys, "synth", "--flows", 3, "--epoch", 10, "--pair", "0:1:2")
    assert code == 0 and out.startswith("#mpu-trace v1 mode=slot epoch=10\n")
    assert "f0\tf1\t2\t2" in err


@pytest.mark.parametrize("argv", [["--flows", 10, "--epoch", 4000, "--pair", "1:2:5000"],
                                  ["--flows", 10, "--pair", "1:2:5"],
                                  ["--flows", 10, "--epoch", 40, "--q", 2]])
def test_synth_errors_exit_2(capsys, argv):
    assert run(capsys, "synth", *argv)[0] == 2


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--pair", "nonsense", "--flows", "2", "--epoch", "5"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def track(capsys, trace, out, *extra):
    code, stdout, err = run(capsys, "track", trace, "--out", out, *extra)
    return code, (json.loads(stdout) if code == 0 else None), err


def test_track_plan_echo(tmp_path, capsys, synth):
    trace = synth("--flows", 50, "--epoch", 1000, "--pair", "0:1:100", "--seed", 2)
    code, report, err = track(capsys, trace, tmp_path / "e.mpu", "--eps", 0.1, "--delta", 0.1, "--p", 2,
                              "--flows", 1000, "--seed", 3)
    assert code == 0 and "# seed=3" in err
    pl = report["plan"]
    assert (pl["s"], pl["m"], pl["w"], pl["copies"]) == (100, 2000, 50000, 19)
    assert pl["counter_width"] == 16
    assert report["bytes"] == 19 * 2 * 2000 * 100 * 2 == (tmp_path / "e.mpu").stat().st_size - (
        4 + 64 + 19 * (48 + 4 * 16 + 8))
    assert report["ingest"]["events"] == 200


def test_track_deterministic_and_first_pass_count(tmp_path, capsys, synth):
    trace = synth("--flows", 30, "--epoch", 500, "--pair", "0:1:50", "--q", 0.02, "--seed", 4)
    _, r1, _ = track(capsys, trace, tmp_path / "a.mpu", "--seed", 8)
    _, r2, _ = track(capsys, trace, tmp_path / "b.mpu", "--seed", 8)
    assert (tmp_path / "a.mpu").read_bytes() == (tmp_path / "b.mpu").read_bytes()
    assert r1["plan"]["flow_count"] == 30 and r1["plan"] == r2["plan"]


def test_track_empty_trace(tmp_path, capsys):
    trace = tmp_path / "empty.csv"
    trace.write_text("#mpu-trace v1 mode=slot epoch=100\n")
    code, report, _ = track(capsys, trace, tmp_path / "e.mpu", "--seed", 1)
    assert code == 0 and report["ingest"]["events"] == 0
    ens = MpuEnsemble.from_bytes((tmp_path / "e.mpu").read_bytes())
    assert all((sk.counters == sk.params.w + 1).all() for sk in ens.sketches)
    code, out, _ = run(capsys, "query", tmp_path / "e.mpu", "--pair", "a:b")
    assert out.splitlines()[1].split("\t")[2:5] == ["0", "1", "0.000000"]


def test_track_memory_cap_exit_2(tmp_path, capsys, synth):
    trace = synth("--flows", 10, "--epoch", 5000, "--seed", 1)
    code, _, err = track(capsys, trace, tmp_path / "e.mpu", "--eps", 0.01, "--memory-cap", 10 ** 6)
    assert code == 2 and "bytes" in err and not (tmp_path / "e.mpu").exists()


def test_track_bad_trace_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("not a header\n1,a\n")
    assert track(capsys, bad, tmp_path / "e.mpu")[0] == 2
    noisy = tmp_path / "noisy.csv"
    noisy.write_text("#mpu-trace v1 mode=slot epoch=10\n" + "1,a\n" * 5 + "junk\n" * 5)
    assert track(capsys, noisy, tmp_path / "e.mpu")[0] == 2
    assert track(capsys, tmp_path / "missing.csv", tmp_path / "e.mpu")[0] == 2


def test_track_related_without_src_exit_3(tmp_path, capsys):
    trace = tmp_path / "r.csv"
    trace.write_text("#mpu-trace v1 mode=slot epoch=10\n1,svc1,,c1\n2,svc2\n")
    assert track(capsys, trace, tmp_path / "e.mpu", "--related", "--flows", 2, "--universe", 10)[0] == 3


def test_query_matches_library_and_is_symmetric(tmp_path, capsys, synth):
    trace = synth("--flows", 20, "--epoch", 800, "--pair", "0:1:100", "--q", 0.05, "--seed", 5)
    track(capsys, trace, tmp_path / "e.mpu", "--seed", 6)
    code, out, _ = run(capsys, "query", tmp_path / "e.mpu", "--pair", "f0:f1", "--pair", "f1:f0")
    header, r1, r2 = (line.split("\t") for line in out.splitlines())
    assert header[:5] == ["key_i", "key_j", "estimate_num", "estimate_den", "estimate"]
    assert r1[2:] == r2[2:]
    ens = MpuEnsemble.from_bytes((tmp_path / "e.mpu").read_bytes())
    est = ens.estimate_median(flow_key("f0"), flow_key("f1"))
    assert Fraction(int(r1[2]), int(r1[3])) == est and r1[4] == fmt6(est)
    parts = ens.estimates(flow_key("f0"), flow_key("f1"))
    assert int(r1[8]) == sum(p.a for p in parts) and int(r1[10]) == sum(p.c for p in parts)
    code, out, _ = run(capsys, "query", tmp_path / "e.mpu", "--pair", "f0:f1", "--json")
    row = json.loads(out)[0]
    assert Fraction(row["estimate_num"], row["estimate_den"]) == est


def test_query_errors(tmp_path, capsys, synth):
    trace = synth("--flows", 5, "--epoch", 50, "--seed", 5)
    track(capsys, trace, tmp_path / "e.mpu")
    raw = bytearray((tmp_path / "e.mpu").read_bytes())
    raw[100] ^= 0xFF
    (tmp_path / "bad.mpu").write_bytes(bytes(raw))
    assert run(capsys, "query", tmp_path / "bad.mpu", "--pair", "a:b")[0] == 2
    assert run(capsys, "query", tmp_path / "e.mpu", "--pair", "a:b", "--groups", "--related")[0] == 2
    assert run(capsys, "query", tmp_path / "e.mpu", "--pair", "a:b", "--tau", 1, "--groups")[0] == 2
    assert run(capsys, "query", tmp_path / "e.mpu")[0] == 2


def test_oracle_matches_truth_and_tau_zero(tmp_path, capsys, synth):
    trace = synth("--flows", 20, "--epoch", 600, "--pair", "0:1:80", "--pair", "2:5:40", "--q", 0.05, "--seed", 7)
    truth = trace.parent / "t.csv.truth.tsv"
    code, out, _ = run(capsys, "oracle", trace, "--pairs-from", truth)
    rows = [r.split("\t") for r in out.splitlines()[1:]]
    expected = [r.split("\t") for r in truth.read_text().splitlines()[1:]]
    assert [(r[0], r[1], r[3]) for r in rows] == [(e[0], e[1], e[3]) for e in expected]
    _, out0, _ = run(capsys, "oracle", trace, "--pairs-from", truth, "--tau", 0)
    assert [r.split("\t")[3] for r in out0.splitlines()[1:]] == [r[3] for r in rows]


def test_oracle_toy_self_cor_and_modes(tmp_path, capsys):
    trace = tmp_path / "toy.csv"
    trace.write_text("#mpu-trace v1 mode=slot epoch=10\n1,i,G\n2,i,G,c1\n6,i,G\n2,j,H,c1\n3,k,H\n")
    code, out, _ = run(capsys, "oracle", trace, "--pair", "i:i", "--json")
    assert json.loads(out)[0]["value"] == 3
    _, out, _ = run(capsys, "oracle", trace, "--pair", "G:H", "--groups")
    assert out.splitlines()[1].split("\t")[2:] == ["gcor_any", "1"]
    gm = tmp_path / "g.ndjson"
    gm.write_text('{"flow": "i", "group": "X"}\n{"flow": "k", "group": "X"}\n')
    _, out, _ = run(capsys, "oracle", trace, "--pair", "X:j", "--groups", gm)
    assert out.splitlines()[1].endswith("\t1")
    _, out, _ = run(capsys, "oracle", trace, "--pair", "i:k", "--tau", 1)
    assert out.splitlines()[1].split("\t")[2:] == ["cor_tau1", "1"]
    assert run(capsys, "oracle", trace, "--pair", "i:j", "--related", "--tau", 1)[0] == 2


def test_lagged_query_end_to_end(tmp_path, capsys):
    rows = ["#mpu-trace v1 mode=slot epoch=400"]
    rows += [f"{t},i" for t in range(0, 400, 8)] + [f"{t + 1},j" for t in range(0, 392, 8)]
    trace = tmp_path / "lag.csv"
    trace.write_text("\n".join(rows) + "\n")
    code, report, _ = track(capsys, trace, tmp_path / "e.mpu", "--tau", 2, "--seed", 1)
    assert code == 0 and report["ingest"]["mode"] == "lag"
    ens = MpuEnsemble.from_bytes((tmp_path / "e.mpu").read_bytes())
    rows_ = query_rows(ens, [("i", "j")], tau=2)
    assert rows_[0]["key_j"] == "j@tau=2"
    _, out, _ = run(capsys, "query", tmp_path / "e.mpu", "--pair", "i:j", "--tau", 2)
    assert out.splitlines()[1].split("\t")[1] == "j@tau=2"


def test_query_accuracy_over_seeded_runs(tmp_path, capsys, synth):
    epoch, shared = 4000, 200
    trace = synth("--flows", 100, "--epoch", epoch, "--pair", f"0:1:{shared}", "--q", 0, "--seed", 1)
    tol = 0.1 * math.sqrt(shared * epoch)
    hits = 0
    for seed in range(100):
        out = tmp_path / "e.mpu"
        assert track(capsys, trace, out, "--eps", 0.1, "--delta", 0.1, "--flows", 100, "--seed", seed)[0] == 0
        _, q, _ = run(capsys, "query", out, "--pair", "f0:f1")
        num, den = q.splitlines()[1].split("\t")[2:4]
        hits += abs(Fraction(int(num), int(den)) - shared) < tol
    assert hits >= 90


def test_bench_small_run_and_exit_codes(tmp_path, capsys):
    out = tmp_path / "r.json"
    code, tsv, err = run(capsys, "bench", "--scenarios", "collisions", "--trials", 40, "--seed", 3, "--out", out)
    assert "# seed=3" in err
    report = json.loads(out.read_text())
    assert code == (0 if report["passed"] else 1)
    assert tsv.splitlines()[0].startswith("check\tlabel")
    assert run(capsys, "bench", "--trials", 10)[0] == 2


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mpusketch.cli", "synth", "--flows", "3", "--epoch", "5",
                          "--pair", "0:1:2", "--seed", "4"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("#mpu-trace")
    assert "# seed=4" in res.stderr
