import json

import numpy as np
import pytest
from PIL import Image

from wildkit.cli import (EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main)
from wildkit.geometry import BinaryMask

from fixtures import build_table_manifest, solid_image


@pytest.fixture(scope="module")
def manifest_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("data") / "manifest.csv"
    # synthetic + static subset keeps the file small but real
    m = build_table_manifest(include_video=False)
    m.save(p)
    return p


def write_perfect_pair(tmp_path):
    gt = tmp_path / "gt.csv"
    det = tmp_path / "det.csv"
    rows = [("i0", "bear", 0, 0, 10, 10), ("i1", "deer", 5, 5, 20, 25)]
    gt.write_text("image_id,class,x_min,y_min,x_max,y_max\n" + "".join(
        f"{r[0]},{r[1]},{r[2]},{r[3]},{r[4]},{r[5]}\n" for r in rows))
    det.write_text(
        "image_id,class,x_min,y_min,x_max,y_max,confidence\n" + "".join(
            f"{r[0]},{r[1]},{r[2]},{r[3]},{r[4]},{r[5]},0.9\n" for r in rows))
    return gt, det


class TestExitCodes:
    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert "wildkit" in capsys.readouterr().out

    def test_unknown_subcommand_is_usage(self):
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_bad_flag_is_usage(self):
        assert main(["plan", "--no-such-flag"]) == EXIT_USAGE

    def test_missing_file_is_io(self, tmp_path, capsys):
        rc = main(["plan", "--manifest", str(tmp_path / "nope.csv"),
                   "--strategy", "static", "--n", "5", "--classes", "bear",
                   "--seed", "0", "--out", str(tmp_path / "plan.json")])
        assert rc == EXIT_IO
        assert "nope.csv" in capsys.readouterr().err

    def test_validation_error(self, manifest_csv, tmp_path):
        rc = main(["plan", "--manifest", str(manifest_csv),
                   "--strategy", "static", "--n", "99999",
                   "--classes", "bear", "--seed", "0",
                   "--out", str(tmp_path / "plan.json")])
        assert rc == EXIT_VALIDATION


class TestPlan:
    def test_table_config_5(self, manifest_csv, tmp_path):
        out = tmp_path / "plan.json"
        rc = main(["plan", "--manifest", str(manifest_csv),
                   "--strategy", "static", "--n", "500",
                   "--classes", "bear,coyote,deer", "--seed", "0",
                   "--out", str(out)])
        assert rc == EXIT_OK
        doc = json.loads(out.read_text())
        assert len(doc["train"]) == 1500
        assert len(doc["test"]) == 2900
        assert doc["provenance"]["tool"] == "wildkit"
        assert doc["seed"] == 0

    def test_idempotent_rerun(self, manifest_csv, tmp_path):
        out = tmp_path / "plan.json"
        args = ["plan", "--manifest", str(manifest_csv),
                "--strategy", "poses-per-background", "--k", "3",
                "--classes", "bear,coyote,deer", "--seed", "1",
                "--out", str(out)]
        assert main(args) == EXIT_OK
        first = out.read_bytes()
        assert main(args) == EXIT_OK
        assert out.read_bytes() == first


class TestEvaluate:
    def test_perfect_pair(self, tmp_path):
        gt, det = write_perfect_pair(tmp_path)
        out = tmp_path / "report.json"
        curves = tmp_path / "curves.csv"
        rc = main(["evaluate", "--gt", str(gt), "--det", str(det),
                   "--iou", "0.5", "--out", str(out),
                   "--curves", str(curves)])
        assert rc == EXIT_OK
        doc = json.loads(out.read_text())
        assert doc["mAP"] == 1.0
        assert doc["mRP"]["value"] == 1.0
        assert doc["cRP"]["value"] == 1.0
        assert doc["iou_threshold"] == 0.5
        assert curves.read_text().startswith("#")


class TestMaskCommands:
    def test_maskprop_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        m = BinaryMask(rng.random((20, 20)) > 0.4)
        src = tmp_path / "m.png"
        dst = tmp_path / "out.png"
        m.save(src)
        rc = main(["maskprop", "--prev-mask", str(src),
                   "--prev-box", "0,0,20,20", "--cur-box", "10,5,30,25",
                   "--out", str(dst)])
        assert rc == EXIT_OK
        assert BinaryMask.load(dst) == m  # pure translation

    def test_maskrefine(self, tmp_path):
        edges = np.zeros((40, 40))
        edges[10, 10:31] = edges[30, 10:31] = 1.0
        edges[10:31, 10] = edges[10:31, 30] = 1.0
        src = tmp_path / "e.png"
        Image.fromarray((edges * 255).astype(np.uint8)).save(src)
        dst = tmp_path / "mask.png"
        rc = main(["maskrefine", "--edges", str(src), "--box", "5,5,35,35",
                   "--window", "9", "--offset", "0.05", "--out", str(dst)])
        assert rc == EXIT_OK
        out = BinaryMask.load(dst)
        assert out.data[20, 20]  # interior filled
        assert not out.data[0, 0]

    def test_maskrefine_no_boundary(self, tmp_path):
        src = tmp_path / "e.png"
        Image.fromarray(np.full((20, 20), 128, dtype=np.uint8)).save(src)
        rc = main(["maskrefine", "--edges", str(src), "--box", "2,2,18,18",
                   "--window", "5", "--offset", "0.2",
                   "--out", str(tmp_path / "o.png")])
        assert rc == EXIT_VALIDATION


@pytest.fixture
def composite_tree(tmp_path):
    (tmp_path / "sources" / "bear").mkdir(parents=True)
    (tmp_path / "masks" / "bear").mkdir(parents=True)
    (tmp_path / "backgrounds").mkdir()
    for i in range(2):
        Image.fromarray(solid_image(16, 16, (200, 30, 30))).save(
            tmp_path / "sources" / "bear" / f"p{i}.png")
        BinaryMask(np.ones((16, 16), dtype=bool)).save(
            tmp_path / "masks" / "bear" / f"p{i}.png")
    for i in range(3):
        Image.fromarray(solid_image(64, 64, (0, 60 + i, 0))).save(
            tmp_path / "backgrounds" / f"bg{i}.png")
    return tmp_path


class TestComposite:
    def test_generates_expected_count(self, composite_tree):
        out = composite_tree / "out"
        rc = main(["composite", "--sources", str(composite_tree / "sources"),
                   "--masks", str(composite_tree / "masks"),
                   "--backgrounds", str(composite_tree / "backgrounds"),
                   "--mode", "mask", "--seed", "0", "--out", str(out)])
        assert rc == EXIT_OK
        pngs = sorted(p.name for p in out.glob("syn_*.png"))
        assert len(pngs) == 6  # 3 backgrounds x 2 poses
        assert (out / "manifest.csv").exists()
        assert (out / "annotations.csv").exists()

    def test_rerun_byte_identical(self, composite_tree):
        import hashlib
        digests = []
        for run in range(2):
            out = composite_tree / f"run{run}"
            rc = main(["composite",
                       "--sources", str(composite_tree / "sources"),
                       "--masks", str(composite_tree / "masks"),
                       "--backgrounds", str(composite_tree / "backgrounds"),
                       "--seed", "7", "--jobs", str(run + 1),
                       "--out", str(out)])
            assert rc == EXIT_OK
            h = hashlib.sha256()
            for p in sorted(out.iterdir()):
                h.update(p.name.encode())
                h.update(p.read_bytes())
            digests.append(h.hexdigest())
        assert digests[0] == digests[1]


class TestFusePool:
    def write_seq_dets(self, path):
        path.write_text(
            "image_id,class,x_min,y_min,x_max,y_max,confidence,"
            "sequence_id,frame_index\n"
            "s0_f0,bear,50,50,70,70,0.9,s0,0\n"
            "s0_f1,bear,50,50,70,70,0.9,s0,1\n"
            "s0_f3,bear,50,50,70,70,0.9,s0,3\n")
        return path

    def test_fuse_bridges_gap(self, tmp_path):
        det = self.write_seq_dets(tmp_path / "det.csv")
        out = tmp_path / "fused.csv"
        rc = main(["fuse", "--det", str(det), "--out", str(out)])
        assert rc == EXIT_OK
        text = out.read_text()
        assert "s0_f2" in text  # gap frame bridged
        assert text.startswith("# wildkit")

    def test_pool_two_sets(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        for p in (a, b):
            p.write_text(
                "image_id,class,x_min,y_min,x_max,y_max,confidence\n"
                "i0,bear,0,0,10,10,0.9\n")
        out = tmp_path / "pooled.csv"
        rc = main(["pool", "--det", str(a), "--det", str(b),
                   "--nms-iou", "0.5", "--out", str(out)])
        assert rc == EXIT_OK
        lines = [ln for ln in out.read_text().splitlines()
                 if ln and not ln.startswith("#")]
        assert len(lines) == 2  # header + one surviving detection


class TestPipeline:
    def test_config_chains_stages(self, composite_tree, tmp_path):
        gt, det = write_perfect_pair(tmp_path)
        cfg = tmp_path / "cfg.yaml"
        out_dir = composite_tree / "pipe_out"
        cfg.write_text(f"""
seed: 3
composite:
  sources: {composite_tree / 'sources'}
  masks: {composite_tree / 'masks'}
  backgrounds: {composite_tree / 'backgrounds'}
  out: {out_dir}
evaluate:
  gt: {gt}
  det: {det}
  out: {tmp_path / 'report.json'}
""")
        rc = main(["pipeline", "--config", str(cfg)])
        assert rc == EXIT_OK
        assert (out_dir / "manifest.csv").exists()
        assert json.loads((tmp_path / "report.json").read_text())["mAP"] == 1.0

    def test_empty_config_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("seed: 1\n")
        assert main(["pipeline", "--config", str(cfg)]) == EXIT_VALIDATION
