import json
from pathlib import Path

import pytest

from farecourt.cli import main
from farecourt.config import load_config, parse_config, write_effective
from farecourt.errors import ConfigError
from farecourt.seeding import derive_seed

FIX = Path(__file__).parent / "fixtures"


def test_minimal_file_gets_defaults(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("seed = 3\n")
    cfg = load_config(path)
    assert cfg.retrieval.k == 4 and cfg.coa.max_turns == 8
    assert (cfg.reward.lambda_ans, cfg.reward.lambda_fmt, cfg.reward.beta) == (0.8, 0.2, 0.5)
    assert cfg.network.seed == derive_seed(3, "network")
    assert cfg.workers >= 1


def test_negative_sigma_names_field():
    with pytest.raises(ConfigError, match=r"mutation\.sigma"):
        parse_config({"mutation": {"sigma": -1}})


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="colour"):
        parse_config({"render": {"colour": "red"}})


def test_other_formats(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"retrieval": {"k": 2}}))
    (tmp_path / "c.yaml").write_text("retrieval:\n  k: 6\n")
    assert load_config(tmp_path / "c.json").retrieval.k == 2
    assert load_config(tmp_path / "c.yaml").retrieval.k == 6


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
    (tmp_path / "bad.toml").write_text("seed = = 1")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")


def test_reward_weights_must_sum_to_one():
    with pytest.raises(ConfigError):
        parse_config({"reward": {"lambda_ans": 0.5}})


def test_effective_config_echo(tmp_path):
    cfg = parse_config({"seed": 9})
    doc = json.loads(write_effective(cfg, tmp_path).read_text())
    assert doc["seed"] == 9 and doc["mutation"]["seed"] == derive_seed(9, "mutation")


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_unknown_subcommand(capsys):
    code, _, _ = _run(capsys, "frobnicate")
    assert code == 2


def test_missing_required_flag(capsys):
    code, _, err = _run(capsys, "score", "--pred", "x")
    assert code == 2 and "--gt" in err


def test_bad_config_exits_2(tmp_path, capsys):
    path = tmp_path / "c.toml"
    path.write_text("[mutation]\nsigma = -4\n")
    code, _, err = _run(capsys, "synth", "--config", path, "--out", tmp_path / "o")
    assert code == 2
    assert "mutation.sigma" in json.loads(err.strip().splitlines()[-1])["message"]


def test_synth_smoke(tmp_path, capsys):
    path = tmp_path / "c.toml"
    path.write_text("seed = 1\nworkers = 1\n[network]\nwidth = 5\nheight = 5\n[render]\nwidth = 96\nheight = 96\n[dataset]\nn_samples = 5\n")
    out = tmp_path / "d"
    code, _, _ = _run(capsys, "synth", "--config", path, "--out", out)
    assert code == 0
    lines = (out / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 5 == len(list((out / "images").glob("*.png")))
    assert (out / "network.json").exists() and (out / "effective_config.json").exists()


def test_score_matches_golden(tmp_path, capsys):
    out = tmp_path / "scores.jsonl"
    code, _, _ = _run(capsys, "score", "--pred", FIX / "score_pred.jsonl", "--gt", FIX / "score_gt.jsonl", "--labels", FIX / "labels.json", "--out", out)
    assert code == 0
    got = [json.loads(l) for l in out.read_text().splitlines()]
    want = [json.loads(l) for l in (FIX / "score_expected.jsonl").read_text().splitlines()]
    assert len(got) == len(want)
    for g, w in zip(got, want):
        for key, value in w.items():
            assert g[key] == pytest.approx(value, abs=1e-12), (w, key)


def test_score_binary(capsys):
    code, out, _ = _run(capsys, "score", "--pred", FIX / "score_pred.jsonl", "--gt", FIX / "score_gt.jsonl", "--labels", FIX / "labels.json", "--binary")
    assert code == 0
    rows = [json.loads(l) for l in out.splitlines()]
    assert [r["r_ans"] for r in rows[:-1]] == [1.0, 0.0, 0.0, 0.0, 0.0]


def test_score_missing_prediction(tmp_path, capsys):
    pred = tmp_path / "p.jsonl"
    pred.write_text('{"id": "s1", "output": "x"}\n')
    code, _, _ = _run(capsys, "score", "--pred", pred, "--gt", FIX / "score_gt.jsonl", "--labels", FIX / "labels.json")
    assert code == 2


def test_filter(capsys):
    code, out, _ = _run(capsys, "filter", "--rollouts", FIX / "rollouts.jsonl")
    assert code == 0
    assert [json.loads(l)["id"] for l in out.splitlines()] == ["r1", "r3", "r5"]


def _bench_toml(tmp_path):
    path = tmp_path / "bench.toml"
    path.write_text(
        "seed = 4\nworkers = 1\n[network]\nwidth = 6\nheight = 6\n[render]\nwidth = 96\nheight = 96\n"
        "[bench]\nn_orders = 8\n[bench.grouping]\ndriver_not_liable = 'normal'\ndriver_partially_liable = 'normal'\n"
        "driver_liable = 'malicious'\ndriver_malicious = 'malicious'\n"
    )
    return path


def test_bench_cli(tmp_path, capsys):
    code, out, _ = _run(capsys, "bench", "--config", _bench_toml(tmp_path), "--out", tmp_path / "b")
    assert code == 0 and json.loads(out)["accuracy"] == 1.0


def test_calibrate_retrieve_adjudicate(tmp_path, capsys):
    bench = tmp_path / "b"
    assert _run(capsys, "bench", "--config", _bench_toml(tmp_path), "--out", bench)[0] == 0
    orders = [json.loads(l) for l in (bench / "orders.jsonl").read_text().splitlines()]
    rules = json.loads((bench / "rules.json").read_text())
    train = tmp_path / "train.jsonl"
    with open(train, "w") as fh:
        for i, o in enumerate(orders):
            o["applicable_rules"] = [r["id"] for j, r in enumerate(rules["rules"]) if (i + j) % 2 == 0]
            fh.write(json.dumps(o) + "\n")
    code, out, _ = _run(capsys, "calibrate", "--train", train, "--rules", bench / "rules.json", "--out", tmp_path / "ens.json", "--workers", 1)
    assert code == 0 and set(json.loads(out)) == {r["id"] for r in rules["rules"]}

    code, out, _ = _run(capsys, "retrieve", "--store", bench / "store.jsonl", "--query", "driver left", "--at", 1e12, "-k", 3)
    assert code == 0 and len(out.splitlines()) == 3

    script = tmp_path / "script.json"
    script.write_text(
        json.dumps(
            {
                "adjudicator": {"default": "<result>driver_liable</result>"},
                "analyst": {"default": "<answer>n/a</answer>"},
                "refiner": {
                    "default": "<reason>(1) Information Analysis: a (2) Visual Evidence Integration: b (3) Rule Grounding: c "
                    "(4) Comprehensive Adjudication: d</reason><judge>j</judge><result>driver_liable</result>"
                },
                "summarizer": {"default": "past cases"},
            }
        )
    )
    one = tmp_path / "one.jsonl"
    one.write_text((bench / "orders.jsonl").read_text().splitlines()[-1] + "\n")
    oid = json.loads(one.read_text())["order_id"]
    adj_out = tmp_path / "adj"
    code, out, _ = _run(
        capsys, "adjudicate", "--order", one, "--rules", bench / "rules.json", "--ensemble", tmp_path / "ens.json",
        "--store", bench / "store.jsonl", "--backend", f"mock:{script}", "--out", adj_out, "--workers", 1,
    )
    assert code == 0 and json.loads(out)["verdict"] == "driver_liable"
    assert (adj_out / f"{oid}.transcript.json").exists() and (adj_out / f"{oid}.reasoning.json").exists()


def test_adjudicate_failure_exits_1(tmp_path, capsys):
    bench = tmp_path / "b"
    _run(capsys, "bench", "--config", _bench_toml(tmp_path), "--out", bench)
    script = tmp_path / "script.json"
    script.write_text(json.dumps({r: {"default": "no tags"} for r in ("adjudicator", "analyst", "refiner", "summarizer")}))
    code, _, _ = _run(
        capsys, "adjudicate", "--order", bench / "orders.jsonl", "--rules", bench / "rules.json", "--ensemble", bench / "ensemble.json",
        "--store", bench / "store.jsonl", "--backend", f"mock:{script}", "--out", tmp_path / "adj", "--workers", 1,
    )
    assert code == 1
    assert list((tmp_path / "adj").glob("*.error.json"))


def test_json_logs_to_file(tmp_path, capsys):
    log = tmp_path / "log.jsonl"
    _run(capsys, "--log-level", "info", "--log-file", log, "filter", "--rollouts", FIX / "rollouts.jsonl")
    docs = [json.loads(l) for l in log.read_text().splitlines()]
    assert any(d.get("event") == "done" and d["command"] == "filter" for d in docs)
