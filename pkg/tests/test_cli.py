import hashlib
import json
import os

import pytest

from starcache.cli import main


def _files_digest(root):
    out = {}
    for name in sorted(os.listdir(root)):
        with open(os.path.join(root, name), "rb") as fh:
            out[name] = hashlib.sha256(fh.read()).hexdigest()
    return out


def test_attack_fr_spectre_writes_outputs(tmp_path, capsys):
    out = tmp_path / "o"
    rc = main(["attack", "fr-spectre", "--model", "sa-lru", "--trials", "4",
               "--secret", "42", "--out", str(out)])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "recovered: 42" in stdout
    matrix = out / "fr-spectre-sa-lru-matrix.csv"
    summary = out / "fr-spectre-sa-lru-summary.json"
    assert matrix.exists() and summary.exists()
    head = matrix.read_text().splitlines()
    assert head[0].startswith("# model=sa-lru")
    payload = json.loads(summary.read_text())
    assert payload["attack"] == "fr-spectre"
    assert payload["recovered"] == 42
    assert payload["trials"] == 4


def test_attack_rejects_bad_key(tmp_path, capsys):
    rc = main(["attack", "fr-aes", "--key", "xyz",
               "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "starcache: error:" in capsys.readouterr().err


def test_attack_rejects_unknown_model():
    with pytest.raises(SystemExit):
        main(["attack", "fr-aes", "--model", "plru"])


def test_attack_rejects_k_on_non_news(tmp_path, capsys):
    rc = main(["attack", "fr-spectre", "--model", "sa-lru", "--k", "2",
               "--trials", "1", "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "star-news" in capsys.readouterr().err


def test_pp_spectre_echoes_pinned_geometry(tmp_path):
    out = tmp_path / "o"
    rc = main(["attack", "pp-spectre", "--model", "star-farr", "--trials", "2",
               "--out", str(out)])
    assert rc == 0
    text = (out / "pp-spectre-star-farr-matrix.csv").read_text()
    assert "# l1_assoc=2" in text           # the harness geometry, not 8


def test_replay_synth_writes_stats(tmp_path, capsys):
    out = tmp_path / "o"
    rc = main(["replay", "--synth", "spec-mix", "--events", "2000",
               "--model", "star-news", "--out", str(out)])
    assert rc == 0
    lines = (out / "replay-star-news.csv").read_text().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    assert body[0] == "stat,value"
    stats = dict(ln.split(",") for ln in body[1:])
    assert int(stats["loads"]) > 0
    assert "squashed_load_fraction" in stats
    assert "loads" in capsys.readouterr().out


def test_replay_trace_file(tmp_path):
    trace = tmp_path / "t.trace"
    trace.write_text("L 0x1000\nL 0x1000\n")
    out = tmp_path / "o"
    assert main(["replay", str(trace), "--out", str(out)]) == 0
    text = (out / "replay-sa-lru.csv").read_text()
    assert "l1_hits,1" in text
    assert "# trace=t.trace" in text


def test_replay_bad_trace_file(tmp_path, capsys):
    trace = tmp_path / "t.trace"
    trace.write_text("L zz\n")
    assert main(["replay", str(trace), "--out", str(tmp_path / "o")]) == 2
    assert "line 1" in capsys.readouterr().err


def test_replay_wants_exactly_one_input(tmp_path, capsys):
    trace = tmp_path / "t.trace"
    trace.write_text("L 0x1000\n")
    assert main(["replay", "--out", str(tmp_path / "o")]) == 2
    assert main(["replay", str(trace), "--synth", "spec-mix",
                 "--out", str(tmp_path / "o")]) == 2
    assert "exactly one input" in capsys.readouterr().err


def test_replay_ksweep(tmp_path, capsys):
    out = tmp_path / "o"
    rc = main(["replay", "--synth", "conflict-heavy", "--events", "2000",
               "--model", "star-news", "--sweep-k", "0,2",
               "--out", str(out)])
    assert rc == 0
    lines = (out / "replay-star-news-ksweep.csv").read_text().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    assert body[0].startswith("k,loads,")
    assert body[1].startswith("0,") and body[2].startswith("2,")
    t0 = int(body[1].split(",")[8])
    t2 = int(body[2].split(",")[8])
    assert t0 > t2                          # widening retires conflicts


def test_replay_ksweep_guards(tmp_path, capsys):
    assert main(["replay", "--synth", "spec-mix", "--sweep-k", "0,2",
                 "--model", "sa-lru", "--out", str(tmp_path / "o")]) == 2
    assert main(["replay", "--synth", "spec-mix", "--sweep-k", "0,x",
                 "--model", "star-news", "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "only applies to star-news" in err
    assert "bad --sweep-k" in err


def test_env_layer_reaches_the_run(tmp_path, monkeypatch):
    monkeypatch.setenv("STARCACHE_SEED", "77")
    out = tmp_path / "o"
    main(["replay", "--synth", "uniform-random", "--events", "500",
          "--out", str(out)])
    assert "# seed=77" in (out / "replay-sa-lru.csv").read_text()


def test_repeat_invocation_is_byte_identical(tmp_path):
    out = tmp_path / "o"
    argv = ["attack", "fr-spectre", "--model", "star-news", "--trials", "4",
            "--out", str(out)]
    assert main(argv) == 0
    first = _files_digest(out)
    assert main(argv) == 0
    assert _files_digest(out) == first


def test_sweep_command_smoke(tmp_path, capsys):
    out = tmp_path / "o"
    rc = main(["sweep", "fr-spectre", "--model", "sa-lru", "--trials", "1",
               "--out", str(out)])
    assert rc == 0
    assert "256/256 exact" in capsys.readouterr().out
    lines = (out / "fr-spectre-sweep-sa-lru-secrets.csv").read_text().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    assert body[0] == "secret,recovered,margin"
    assert len(body) == 257
    assert body[1].startswith("0,0,")
    assert (out / "fr-spectre-sweep-sa-lru-matrix.csv").exists()
    assert (out / "fr-spectre-sweep-sa-lru-summary.json").exists()
