import csv
import json

import numpy as np
import pytest

from radarmot.backbone import PfeConfig
from radarmot.cli import RECALL_COLUMNS, SWEEP_COLUMNS, main
from radarmot.detector import DetectConfig
from radarmot.model import ModelConfig, init_model
from radarmot.training import LOG_COLUMNS

TINY = ModelConfig(
    pfe=PfeConfig(sa_radii=(0.6, 1.2, 2.4), sa_neighbors=(2, 3, 4),
                  sa_channels=(4, 4, 4), fp_channels=(3, 3, 2), global_dim=6),
    flow_pfe=PfeConfig(sa_radii=(0.6, 1.2, 2.4), sa_neighbors=(2, 3, 4),
                       sa_channels=(4, 4, 4), fp_channels=(2, 2, 2),
                       global_dim=5),
    cost_k=3, cost_channels=4, flow_head_hidden=(6, 4), motion_hidden=5,
    affinity_hidden=(5, 4), detect=DetectConfig(embed_channels=3))

TINY_MODEL_YAML = """\
model:
  pfe: {sa_radii: [0.6, 1.2, 2.4], sa_neighbors: [2, 3, 4],
        sa_channels: [4, 4, 4], fp_channels: [3, 3, 2], global_dim: 6}
  flow_pfe: {sa_radii: [0.6, 1.2, 2.4], sa_neighbors: [2, 3, 4],
             sa_channels: [4, 4, 4], fp_channels: [2, 2, 2], global_dim: 5}
  cost_k: 3
  cost_channels: 4
  flow_head_hidden: [6, 4]
  motion_hidden: 5
  affinity_hidden: [5, 4]
  detect: {embed_channels: 3}
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--output", str(d / "data"), "--count", "2",
                 "--seed", "0", "--frames", "4", "--objects", "2",
                 "--points-per-object", "6", "--static", "15"]) == 0
    assert main(["track", "--sequence", str(d / "data/seq_000"),
                 "--output", str(d / "tracks.jsonl"), "--cheat"]) == 0
    return d


class TestSynth:
    def test_sequence_layout(self, workdir):
        for name in ("seq_000", "seq_001"):
            seq = workdir / "data" / name
            assert (seq / "frames").is_dir()
            assert (seq / "poses.csv").is_file()
            assert (seq / "annotations.jsonl").is_file()
            assert (seq / "gt_objects.jsonl").is_file()
            assert (seq / "meta.json").is_file()

    def test_distinct_seeds_distinct_scenes(self, workdir):
        # membership layout is seed-independent, point coordinates are not
        first = [sorted((workdir / "data" / name / "frames").iterdir())[0]
                 for name in ("seq_000", "seq_001")]
        assert first[0].read_bytes() != first[1].read_bytes()


class TestTrack:
    def test_cheat_records_parse(self, workdir):
        lines = (workdir / "tracks.jsonl").read_text().splitlines()
        assert lines
        for line in lines:
            rec = json.loads(line)
            assert {"frame_index", "track_id", "point_indices"} <= set(rec)

    def test_learned_without_weights_warns_but_runs(self, workdir, tmp_path):
        cfg = tmp_path / "tiny.yaml"
        cfg.write_text(TINY_MODEL_YAML)
        out = tmp_path / "learned.jsonl"
        assert main(["track", "--sequence", str(workdir / "data/seq_000"),
                     "--output", str(out), "--config", str(cfg)]) == 0
        assert out.exists()

    def test_flow_dump(self, workdir, tmp_path):
        dump = tmp_path / "flows.npz"
        assert main(["track", "--sequence", str(workdir / "data/seq_000"),
                     "--output", str(tmp_path / "t.jsonl"), "--cheat",
                     "--flow-dump", str(dump)]) == 0
        with np.load(dump) as payload:
            keys = sorted(payload.files)
            assert keys == [f"flow_{t:06d}" for t in range(4)]
            for key in keys:
                arr = payload[key]
                assert arr.dtype == np.float32
                assert arr.ndim == 2 and arr.shape[1] == 3

    def test_external_detections(self, workdir, tmp_path):
        det_path = tmp_path / "detections.jsonl"
        groups = []
        with open(workdir / "data/seq_000/gt_objects.jsonl") as fh:
            for line in fh:
                rec = json.loads(line)
                groups.append({"frame_index": rec["frame_index"],
                               "point_indices": rec["point_indices"]})
        det_path.write_text("\n".join(json.dumps(g) for g in groups) + "\n")
        out = tmp_path / "ext.jsonl"
        assert main(["track", "--sequence", str(workdir / "data/seq_000"),
                     "--output", str(out), "--cheat",
                     "--detections", str(det_path)]) == 0
        got = {(rec["frame_index"], tuple(rec["point_indices"]))
               for rec in map(json.loads, out.read_text().splitlines())}
        want = {(g["frame_index"], tuple(sorted(g["point_indices"])))
                for g in groups}
        assert got == want

    def test_malformed_detections_exit_2(self, workdir, tmp_path):
        det_path = tmp_path / "bad.jsonl"
        det_path.write_text('{"frame_index": 0}\n')
        assert main(["track", "--sequence", str(workdir / "data/seq_000"),
                     "--output", str(tmp_path / "t.jsonl"), "--cheat",
                     "--detections", str(det_path)]) == 2

    def test_repeat_runs_byte_identical(self, workdir, tmp_path):
        outs = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
        for out in outs:
            assert main(["track", "--sequence", str(workdir / "data/seq_000"),
                         "--output", str(out), "--cheat"]) == 0
        assert outs[0].read_bytes() == outs[1].read_bytes()

    def test_missing_sequence_exit_2(self, tmp_path):
        assert main(["track", "--sequence", str(tmp_path / "nope"),
                     "--output", str(tmp_path / "t.jsonl"), "--cheat"]) == 2

    def test_missing_weights_exit_2(self, workdir, tmp_path):
        assert main(["track", "--sequence", str(workdir / "data/seq_000"),
                     "--output", str(tmp_path / "t.jsonl"),
                     "--weights", str(tmp_path / "nope.npz")]) == 2

    def test_wrong_architecture_weights_exit_1(self, workdir, tmp_path):
        wrong = tmp_path / "tiny.npz"
        init_model(TINY, seed=0).save(wrong)
        assert main(["track", "--sequence", str(workdir / "data/seq_000"),
                     "--output", str(tmp_path / "t.jsonl"),
                     "--weights", str(wrong)]) == 1


class TestEval:
    def test_perfect_cheat_scores(self, workdir, tmp_path, capsys):
        out = tmp_path / "report"
        assert main(["eval",
                     "--gt", str(workdir / "data/seq_000/gt_objects.jsonl"),
                     "--pred", str(workdir / "tracks.jsonl"),
                     "--output", str(out)]) == 0
        report = json.loads((out / "metrics.json").read_text())
        assert report["mota"] == 1.0
        assert report["moda"] == 1.0
        with open(out / "sweep.csv", newline="") as fh:
            header = next(csv.reader(fh))
        assert header == RECALL_COLUMNS
        assert json.loads(capsys.readouterr().out)["mota"] == 1.0

    def test_plot_written(self, workdir, tmp_path):
        out = tmp_path / "report"
        assert main(["eval",
                     "--gt", str(workdir / "data/seq_000/gt_objects.jsonl"),
                     "--pred", str(workdir / "tracks.jsonl"),
                     "--output", str(out), "--plot"]) == 0
        svg = (out / "recall_curves.svg").read_bytes()
        assert svg.startswith(b"<?xml")

    def test_pair_count_mismatch_exit_1(self, workdir, tmp_path):
        gt = str(workdir / "data/seq_000/gt_objects.jsonl")
        assert main(["eval", "--gt", gt, "--gt", gt,
                     "--pred", str(workdir / "tracks.jsonl"),
                     "--output", str(tmp_path / "r")]) == 1

    def test_unknown_config_key_exit_1(self, workdir, tmp_path):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("nope: 1\n")
        assert main(["eval",
                     "--gt", str(workdir / "data/seq_000/gt_objects.jsonl"),
                     "--pred", str(workdir / "tracks.jsonl"),
                     "--output", str(tmp_path / "r"),
                     "--config", str(cfg)]) == 1


class TestSweep:
    def test_min_points_axis(self, workdir, tmp_path):
        out = tmp_path / "sweep"
        assert main(["sweep",
                     "--gt", str(workdir / "data/seq_000/gt_objects.jsonl"),
                     "--pred", str(workdir / "tracks.jsonl"),
                     "--output", str(out), "--axis", "min_points_valid",
                     "--values", "1,5"]) == 0
        with open(out / "sweep.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == SWEEP_COLUMNS
        assert len(rows) == 3
        assert [r[0] for r in rows[1:]] == ["1", "5"]

    def test_empty_values_exit_1(self, workdir, tmp_path):
        assert main(["sweep",
                     "--gt", str(workdir / "data/seq_000/gt_objects.jsonl"),
                     "--pred", str(workdir / "tracks.jsonl"),
                     "--output", str(tmp_path / "s"),
                     "--axis", "iou_threshold", "--values", " "]) == 1


class TestTrain:
    def test_smoke_writes_artifacts(self, workdir, tmp_path):
        cfg = tmp_path / "tiny.yaml"
        cfg.write_text(TINY_MODEL_YAML +
                       "train: {stage1_epochs: 1, stage2_epochs: 1}\n")
        out = tmp_path / "run"
        assert main(["train", "--data", str(workdir / "data"),
                     "--output", str(out), "--config", str(cfg)]) == 0
        assert (out / "stage1.npz").is_file()
        assert (out / "final.npz").is_file()
        with open(out / "training_log.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == list(LOG_COLUMNS)
        assert len(rows) > 1

    def test_empty_data_dir_exit_1(self, tmp_path):
        (tmp_path / "data").mkdir()
        assert main(["train", "--data", str(tmp_path / "data"),
                     "--output", str(tmp_path / "run")]) == 1

    def test_divergence_exit_3(self, workdir, tmp_path):
        cfg = tmp_path / "tiny.yaml"
        cfg.write_text(TINY_MODEL_YAML +
                       "train: {stage1_epochs: 1, stage2_epochs: 1}\n")
        run = tmp_path / "run"
        run.mkdir()
        # float32-safe poison that stays finite through the forward pass
        # but overflows the squared flow error
        store = init_model(TINY, seed=0)
        for name in store.names():
            if name.startswith(("flow_pfe.", "flow_head.")) \
                    and name.endswith(".w"):
                store[name] = np.full_like(store[name], 1e38)
        store.save(run / "stage1.npz")
        with np.errstate(all="ignore"):
            rc = main(["train", "--data", str(workdir / "data"),
                       "--output", str(run), "--config", str(cfg),
                       "--resume"])
        assert rc == 3


class TestGradCheck:
    def test_passes_on_tiny_model(self, tmp_path, capsys):
        cfg = tmp_path / "tiny.yaml"
        cfg.write_text(TINY_MODEL_YAML)
        assert main(["grad-check", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert out.count("ok") == 4
        assert "FAIL" not in out
