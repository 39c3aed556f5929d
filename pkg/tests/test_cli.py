import json

import pytest

from ghostarm.cli import main
from ghostarm.dataset import list_episodes, read_episode
from ghostarm.executor import load_trace_records


@pytest.fixture(scope="module")
def pipeline_dirs(tmp_path_factory):
    """recipe -> record once; later tests reuse the outputs read-only."""
    root = tmp_path_factory.mktemp("cli")
    bundles = root / "bundles"
    dataset = root / "dataset"
    assert main(["recipe", "--task", "pickplace", "--seed", "0",
                 "--out", str(bundles)]) == 0
    scene = bundles / "pickplace" / "scene" / "scene.json"
    trajectory = bundles / "pickplace" / "trajectory.json"
    assert scene.exists() and trajectory.exists()
    assert main(["record", "--scripted", str(trajectory),
                 "--scene", str(scene), "--out", str(dataset)]) == 0
    return {"root": root, "scene": scene, "trajectory": trajectory,
            "dataset": dataset}


def test_recipe_all_materializes_three(tmp_path):
    out = tmp_path / "bundles"
    assert main(["recipe", "--task", "all", "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["pickplace", "pickplace-wall", "stack"]
    for name in names:
        assert (out / name / "scene" / "scene.json").exists()
        assert (out / name / "trajectory.json").exists()


def test_record_produces_full_episode(pipeline_dirs):
    paths = list_episodes(pipeline_dirs["dataset"])
    assert len(paths) == 1
    episode = read_episode(paths[0])
    assert len(episode.robot) == 104


def test_validate_reports_clean_dataset(pipeline_dirs, capsys):
    report = pipeline_dirs["root"] / "report.json"
    code = main(["validate", "--dataset", str(pipeline_dirs["dataset"]),
                 "--scene", str(pipeline_dirs["scene"]),
                 "--report", str(report)])
    out = capsys.readouterr().out
    assert code == 0
    assert "100%" in out
    data = json.loads(report.read_text())
    assert data["summary"]["success_count"] == 1


def test_validate_exit_one_on_failure(pipeline_dirs, tmp_path, capsys):
    # validating against the wrong scene must fail the audit, not crash
    wrong = tmp_path / "bundles"
    assert main(["recipe", "--task", "pickplace-wall",
                 "--out", str(wrong)]) == 0
    code = main(["validate", "--dataset", str(pipeline_dirs["dataset"]),
                 "--scene", str(wrong / "pickplace-wall" / "scene" / "scene.json"),
                 "--allow-scene-mismatch"])
    assert code == 1
    assert "EnvCollision" in capsys.readouterr().out


def test_validate_scene_mismatch_is_error(pipeline_dirs, tmp_path, capsys):
    wrong = tmp_path / "bundles"
    assert main(["recipe", "--task", "stack", "--out", str(wrong)]) == 0
    code = main(["validate", "--dataset", str(pipeline_dirs["dataset"]),
                 "--scene", str(wrong / "stack" / "scene" / "scene.json")])
    assert code == 2
    assert "recorded against" in capsys.readouterr().err


def test_validate_empty_dataset_exit_two(pipeline_dirs, tmp_path, capsys):
    code = main(["validate", "--dataset", str(tmp_path / "nothing"),
                 "--scene", str(pipeline_dirs["scene"])])
    assert code == 2
    assert "no episodes" in capsys.readouterr().err


def test_replay_writes_trace(pipeline_dirs, tmp_path):
    episode_dir = list_episodes(pipeline_dirs["dataset"])[0]
    trace_path = tmp_path / "trace.jsonl"
    assert main(["replay", "--episode", str(episode_dir),
                 "--trace", str(trace_path), "--ticks", "125"]) == 0
    records = load_trace_records(trace_path)
    assert records[0]["kind"] == "header"
    kinds = [r["kind"] for r in records[1:]]
    assert kinds.count("query") == 5
    assert kinds.count("emit") == 125


def test_replay_honors_schedule_file(pipeline_dirs, tmp_path):
    schedule = tmp_path / "schedule.json"
    schedule.write_text(json.dumps({
        "format_version": 1, "control_rate_hz": 10.0,
        "execute_per_chunk": 10, "horizon": 20}))
    trace_path = tmp_path / "trace.jsonl"
    assert main(["replay", "--episode",
                 str(list_episodes(pipeline_dirs["dataset"])[0]),
                 "--schedule", str(schedule),
                 "--trace", str(trace_path), "--ticks", "30"]) == 0
    records = load_trace_records(trace_path)
    assert records[0]["schedule"]["control_rate_hz"] == 10.0
    assert [r["kind"] for r in records[1:]].count("query") == 3


def test_scene_argument_accepts_directory(pipeline_dirs, capsys):
    scene_dir = pipeline_dirs["scene"].parent
    code = main(["validate", "--dataset", str(pipeline_dirs["dataset"]),
                 "--scene", str(scene_dir)])
    assert code == 0


def test_missing_input_is_reported(tmp_path, capsys):
    code = main(["record", "--scripted", str(tmp_path / "no.json"),
                 "--scene", str(tmp_path / "also-no.json"),
                 "--out", str(tmp_path / "out")])
    assert code == 2
    assert capsys.readouterr().err.strip() != ""
