"""Exit codes, flag plumbing, and artifact layout of the command-line front end."""
import json
import shlex
import sys
from pathlib import Path

import pytest

from nebula import storage
from nebula.cli import GRAMMAR, main, parse_policy
from nebula.policies import JitterPolicy, ScriptedExpert, ZeroPolicy
from nebula.query import filter_episodes, query_from_json
from nebula.simworld import render_background
from nebula.taskgen import generate_task

CHILD = Path(__file__).parent / "children" / "bridge_child.py"


def run(*argv):
    return main(list(argv))


def gen_small(out, *extra):
    return run("gen", "--family", "Control", "--tier", "Easy", "--template", "1",
               "--n", "1", "--seed", "0", "--image-size", "8", "--out", str(out), *extra)


# ---------------------------------------------------------------------------
# Usage and exit codes.


def test_no_subcommand_prints_grammar_exit_2(capsys):
    assert run() == 2
    err = capsys.readouterr().err
    assert "usage: nebula" in err
    assert "exit codes" in err


def test_missing_required_flag_exit_2(capsys):
    assert run("gen") == 2
    assert "requires --out" in capsys.readouterr().err


def test_unknown_subcommand_exit_2(capsys):
    assert run("frobnicate") == 2
    assert "usage: nebula" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    for cmd in ("gen", "run-capability", "run-stress", "ablate-isolation",
                "query", "split", "verify", "report"):
        assert run(cmd, "--help") == 0
        assert "--config" in capsys.readouterr().out


def test_bad_policy_selector_exit_2(capsys):
    assert run("run-capability", "--policy", "nonsense") == 2
    assert "unknown policy selector" in capsys.readouterr().err


def test_grammar_documents_every_subcommand():
    for cmd in ("gen", "run-capability", "run-stress", "ablate-isolation",
                "query", "split", "verify", "report"):
        assert cmd in GRAMMAR


def test_parse_policy_selectors():
    assert isinstance(parse_policy("zero")(), ZeroPolicy)
    assert isinstance(parse_policy("expert")(), ScriptedExpert)
    jitter = parse_policy("jitter:0.25")()
    assert isinstance(jitter, JitterPolicy)
    assert jitter.amplitude == 0.25
    with pytest.raises(Exception):
        parse_policy("jitter:not-a-number")


# ---------------------------------------------------------------------------
# gen


def test_gen_writes_shard_manifest_and_succeeds(tmp_path):
    assert gen_small(tmp_path) == 0
    manifest = storage.load_manifest(tmp_path / "nebula.manifest.json")
    rows = manifest.all_episodes()
    assert [r.episode_id for r in rows] == ["Control-Easy-t1-s0"]
    assert rows[0].final_success == 1  # the expert solves its own catalog
    shard = storage.open_shard(tmp_path / "nebula.shard")
    episode = storage.read_episode(shard, 0)
    assert episode.task_meta.family == "Control"
    assert episode.steps[0].observation.views[("front", "rgb")].width == 8


def test_gen_covers_three_templates_per_cell(tmp_path):
    assert run("gen", "--family", "Control", "--tier", "Easy", "--n", "2",
               "--seed", "7", "--image-size", "8", "--out", str(tmp_path)) == 0
    manifest = storage.load_manifest(tmp_path / "nebula.manifest.json")
    assert len(manifest.all_episodes()) == 6  # 3 templates x 2 seeds


def test_gen_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert gen_small(a) == 0
    assert gen_small(b) == 0
    assert (a / "nebula.shard").read_bytes() == (b / "nebula.shard").read_bytes()
    assert (a / "nebula.manifest.json").read_bytes() == (b / "nebula.manifest.json").read_bytes()


def test_gen_camera_mask_and_scene_dump(tmp_path):
    def top_rgb(out):
        shard = storage.open_shard(out / "nebula.shard")
        return storage.read_episode(shard, 0).steps[0].observation.views[("top", "rgb")]

    masked, open_dir = tmp_path / "masked", tmp_path / "open"
    base = ["gen", "--family", "Control", "--tier", "Easy", "--template", "1",
            "--n", "1", "--seed", "0", "--image-size", "32"]
    assert run(*base, "--out", str(masked), "--camera-mask", "top", "--dump-scene") == 0
    assert run(*base, "--out", str(open_dir)) == 0

    scene_doc = json.loads((masked / "scenes" / "Control-Easy-t1-s0.json").read_text())
    assert scene_doc["scene_id"]
    assert scene_doc["objects"]
    _, scene = generate_task("Control", "Easy", 1, 0)
    background = render_background(scene, "top", "rgb", 32, 32)
    assert top_rgb(masked).data == background.data
    assert top_rgb(open_dir).data != background.data


def test_gen_rejects_unknown_camera(capsys, tmp_path):
    assert gen_small(tmp_path, "--camera-mask", "drone") == 2
    assert "unknown camera" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# Config file and environment seed.


def test_config_supplies_flags_and_cli_wins(tmp_path):
    config = tmp_path / "conf.json"
    config.write_text(json.dumps({
        "family": "Control", "tier": "Easy", "template": 1, "n": 1,
        "image-size": 8, "out": str(tmp_path / "from_config")}))
    cli_out = tmp_path / "from_cli"
    assert run("gen", "--config", str(config), "--out", str(cli_out), "--seed", "0") == 0
    assert (cli_out / "nebula.shard").exists()
    assert not (tmp_path / "from_config").exists()


def test_config_rejects_unknown_key(capsys, tmp_path):
    config = tmp_path / "conf.json"
    config.write_text(json.dumps({"no-such-flag": 1}))
    assert run("gen", "--config", str(config), "--out", str(tmp_path)) == 2
    assert "no-such-flag" in capsys.readouterr().err


def test_env_seed_fills_default_and_flag_wins(tmp_path, monkeypatch):
    monkeypatch.setenv("NEBULA_SEED", "5")
    env_dir = tmp_path / "env"
    assert run("gen", "--family", "Control", "--tier", "Easy", "--template", "1",
               "--n", "1", "--image-size", "8", "--out", str(env_dir)) == 0
    manifest = storage.load_manifest(env_dir / "nebula.manifest.json")
    assert manifest.all_episodes()[0].episode_id == "Control-Easy-t1-s5"

    flag_dir = tmp_path / "flag"
    assert gen_small(flag_dir) == 0  # --seed 0 beats the env var
    manifest = storage.load_manifest(flag_dir / "nebula.manifest.json")
    assert manifest.all_episodes()[0].episode_id == "Control-Easy-t1-s0"


# ---------------------------------------------------------------------------
# query / split / verify


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("dataset")
    assert run("gen", "--family", "Control", "--tier", "Easy", "--n", "2",
               "--seed", "0", "--image-size", "8", "--out", str(out)) == 0
    return out


def test_query_cli_matches_library(dataset_dir, capsys):
    assert run("query", "--query", '{"final_success": 1}', str(dataset_dir)) == 0
    rows = json.loads(capsys.readouterr().out)
    manifest = storage.load_manifest(dataset_dir / "nebula.manifest.json")
    expected = filter_episodes(manifest, query_from_json({"final_success": 1}))
    assert [r["episode_id"] for r in rows] == [r.episode_id for r in expected]
    assert len(rows) == 6


def test_query_rejects_bad_json(dataset_dir, capsys):
    assert run("query", "--query", "{not json", str(dataset_dir)) == 2
    assert "bad --query" in capsys.readouterr().err


def test_split_cli_partitions_dataset(dataset_dir, capsys):
    assert run("split", str(dataset_dir), "--train-ratio", "0.5", "--seed", "3") == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["train"]) == 3
    assert len(doc["test"]) == 3
    assert not set(doc["train"]) & set(doc["test"])
    assert run("split", str(dataset_dir), "--train-ratio", "1.5") == 2


def test_verify_clean_and_corrupted(dataset_dir, tmp_path):
    assert run("verify", str(dataset_dir)) == 0
    shard_copy = tmp_path / "nebula.shard"
    data = bytearray((dataset_dir / "nebula.shard").read_bytes())
    data[len(data) // 2] ^= 0xFF
    shard_copy.write_bytes(bytes(data))
    assert run("verify", str(shard_copy)) == 1


def test_verify_field_checksums_repeatable(dataset_dir, tmp_path, capsys):
    assert run("verify", str(dataset_dir), "--field-checksums") == 0
    first = json.loads(capsys.readouterr().out)
    other = tmp_path / "again"
    assert run("gen", "--family", "Control", "--tier", "Easy", "--n", "2",
               "--seed", "0", "--image-size", "8", "--out", str(other)) == 0
    assert run("verify", str(other), "--field-checksums") == 0
    second = json.loads(capsys.readouterr().out)
    assert first == second
    fields = first["shards"]["nebula.shard"]["fields"]
    assert set(fields) == {"episode_id", "instruction", "task_meta", "final_success",
                           "actions", "q", "q_dot", "success_flags", "images"}


def test_query_without_manifest_is_io_failure(tmp_path):
    assert run("query", "--query", "{}", str(tmp_path)) == 2  # no manifest to pick
    assert run("query", "--query", "{}", "--dataset", "ghost", str(tmp_path)) == 1


# ---------------------------------------------------------------------------
# run-capability / report / run-stress / ablate-isolation


def test_run_capability_and_report_pipeline(tmp_path):
    out = tmp_path / "cap"
    assert run("run-capability", "--policy", "expert", "--family", "Control",
               "--tier", "Easy", "--n", "1", "--seed", "0", "--out", str(out)) == 0
    doc = json.loads((out / "capability_report.json").read_text())
    assert doc["kind"] == "capability_report"
    assert doc["metadata"]["policy_id"] == "scripted-expert"
    assert all(row["successes"] == row["episodes_run"] for row in doc["templates"])

    rep_out = tmp_path / "rep"
    assert run("report", str(out / "capability_report.json"),
               "--format", "radar_json", "--tier-mask", "Hard",
               "--out", str(rep_out)) == 0
    radar = json.loads((rep_out / "radar.json").read_text())
    assert len(radar["axes"]) == 6
    assert "Hard" not in radar["tiers"]
    assert run("report", str(out / "capability_report.json"),
               "--format", "csv", "--out", str(rep_out)) == 0
    header = (rep_out / "eval_report.csv").read_text().splitlines()[0]
    assert header == "policy_id,family,tier,template_id,episodes,successes,rate"


def test_run_capability_report_deterministic(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run("run-capability", "--policy", "zero", "--family", "Language",
                   "--tier", "Easy", "--n", "1", "--seed", "4", "--out", str(out)) == 0
        outs.append((out / "capability_report.json").read_bytes())
    assert outs[0] == outs[1]


def test_run_capability_record_writes_dataset(tmp_path):
    out = tmp_path / "cap"
    assert run("run-capability", "--policy", "expert", "--family", "Control",
               "--tier", "Easy", "--n", "1", "--seed", "0", "--record",
               "--out", str(out)) == 0
    manifest = storage.load_manifest(out / "episodes.manifest.json")
    assert len(manifest.all_episodes()) == 3
    assert run("verify", str(out)) == 0


def test_run_stress_stability_exact_via_cli(capsys):
    assert run("run-stress", "--kind", "stability", "--level", "v1",
               "--policy", "jitter:0.0", "--seed", "0") == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["stability"] == 1.0
    assert doc["failure"] is None


def test_run_stress_dead_bridge_child_exit_1(tmp_path):
    assert run("run-stress", "--kind", "frequency", "--level", "v1",
               "--policy", "bridge:false", "--steps", "20",
               "--out", str(tmp_path)) == 1
    doc = json.loads((tmp_path / "stress_Frequency_v1.json").read_text())
    assert "BridgeDisconnected" in doc["failure"]


def test_run_stress_resources_over_bridge(capsys):
    selector = f"bridge:{shlex.quote(sys.executable)} {shlex.quote(str(CHILD))} --mode sized"
    assert run("run-stress", "--kind", "resources", "--level", "v1",
               "--policy", selector, "--steps", "10") == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["resources"]["policy_artifact_bytes"] == 123456789
    assert doc["resources"]["accelerator_mem_bytes"] == 2048


def test_run_stress_rejects_unknown_kind(capsys):
    assert run("run-stress", "--kind", "gravity", "--level", "v1",
               "--policy", "zero") == 2
    assert "unknown stress kind" in capsys.readouterr().err


def test_ablate_isolation_cli(tmp_path):
    out = tmp_path / "iso"
    assert run("ablate-isolation", "--policy", "reach-only", "--n", "1",
               "--seed", "0", "--out", str(out)) == 0
    doc = json.loads((out / "isolation_report.json").read_text())
    assert doc["overall"]["isolated_rate"] == 1.0
    assert doc["overall"]["entangled_rate"] == 0.0
