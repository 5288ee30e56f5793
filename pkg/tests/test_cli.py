import json
import subprocess
import sys

import numpy as np
import pytest

from curvrepair.cli import main
from curvrepair.images import save_png
from curvrepair.mesh import boundary_loops, validate
from curvrepair.meshio import load_mesh, save_mesh
from fixtures import icosphere, sphere_with_cap_hole


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    damaged, truth = sphere_with_cap_hole(3, 0.05)
    save_mesh(root / "damaged.ply", damaged)
    save_mesh(root / "truth.ply", truth)
    save_mesh(root / "closed.ply", icosphere(2))
    return root


def repair_args(scene, out, extra=()):
    return [
        "repair",
        "--input", str(scene / "damaged.ply"),
        "--output", str(out),
        "--resolution", "192",
        "--rings", "6",
        *extra,
    ]


# ----------------------------------------------------------------------
# repair


def test_repair_closes_and_reports(scene, tmp_path):
    out = tmp_path / "fixed.ply"
    assert main(repair_args(scene, out, ["--seed", "7"])) == 0
    assert validate(load_mesh(out)).watertight
    report = json.loads((tmp_path / "fixed.report.json").read_text())
    assert len(report["holes"]) == 1
    entry = report["holes"][0]
    assert entry["backend"] == "builtin"
    assert "seconds" not in entry  # reports must be reproducible files


def test_repair_is_bit_deterministic(scene, tmp_path):
    a, b = tmp_path / "a.ply", tmp_path / "b.ply"
    assert main(repair_args(scene, a)) == 0
    assert main(repair_args(scene, b)) == 0
    assert a.read_bytes() == b.read_bytes()
    report_a = (tmp_path / "a.report.json").read_text()
    report_b = (tmp_path / "b.report.json").read_text()
    assert report_a.replace('"a.ply"', '"x"') == report_b.replace('"b.ply"', '"x"')


def test_repair_watertight_input_roundtrips(scene, tmp_path):
    out = tmp_path / "closed_out.ply"
    assert main([
        "repair", "--input", str(scene / "closed.ply"), "--output", str(out),
    ]) == 0
    assert out.read_bytes() == (scene / "closed.ply").read_bytes()
    report = json.loads((tmp_path / "closed_out.report.json").read_text())
    assert report["holes"] == []


def test_repair_failing_backend_exits_2_with_fallback(scene, tmp_path):
    out = tmp_path / "fb.ply"
    code = main(repair_args(scene, out, [
        "--backend", "external", "--backend-cmd", "/nonexistent/inpainter",
    ]))
    assert code == 2
    assert validate(load_mesh(out)).watertight
    report = json.loads((tmp_path / "fb.report.json").read_text())
    assert "error" in report["holes"][0]


def test_repair_external_requires_command(scene, tmp_path):
    code = main(repair_args(scene, tmp_path / "x.ply", ["--backend", "external"]))
    assert code == 1


def test_repair_unreadable_input_exits_1(tmp_path):
    code = main([
        "repair", "--input", str(tmp_path / "missing.ply"),
        "--output", str(tmp_path / "out.ply"),
    ])
    assert code == 1


def test_repair_multiple_inputs_to_directory(scene, tmp_path):
    out = tmp_path / "batch"
    code = main([
        "repair",
        "--input", str(scene / "damaged.ply"), str(scene / "closed.ply"),
        "--output", str(out),
        "--resolution", "128", "--rings", "6", "--jobs", "2",
    ])
    assert code == 0
    assert validate(load_mesh(out / "damaged.ply")).watertight
    assert (out / "closed.report.json").exists()


# ----------------------------------------------------------------------
# make-holes


def test_make_holes_defaults_to_five_loops(scene, tmp_path):
    out = tmp_path / "holed.ply"
    assert main([
        "make-holes", "--input", str(scene / "truth.ply"),
        "--output", str(out), "--seed", "3",
    ]) == 0
    assert len(boundary_loops(load_mesh(out))) == 5
    spec = json.loads((tmp_path / "holed.holes.json").read_text())
    assert len(spec["holes"]) == 5


def test_make_holes_deterministic(scene, tmp_path):
    for name in ("h1.ply", "h2.ply"):
        main([
            "make-holes", "--input", str(scene / "truth.ply"),
            "--output", str(tmp_path / name), "--seed", "9",
        ])
    assert (tmp_path / "h1.ply").read_bytes() == (tmp_path / "h2.ply").read_bytes()


def test_make_holes_infeasible_count_exits_1(scene, tmp_path):
    code = main([
        "make-holes", "--input", str(scene / "truth.ply"),
        "--output", str(tmp_path / "h.ply"), "--holes", "5000",
    ])
    assert code == 1


# ----------------------------------------------------------------------
# gen-dataset


def toy_models(root, count=2):
    paths = []
    for i in range(count):
        base = icosphere(3)
        bump = 1.0 + 0.15 * np.sin(3.0 * base.vertices[:, [i % 3]] + i)
        path = root / f"toy{i}.ply"
        save_mesh(path, base.with_vertices(base.vertices * bump))
        paths.append(str(path))
    return paths


def test_gen_dataset_arithmetic_and_rerun(tmp_path):
    models = toy_models(tmp_path)
    corrupt = tmp_path / "corrupt.ply"
    corrupt.write_bytes(b"junk")
    code = main([
        "gen-dataset", "--input", *models, str(corrupt),
        "--output", str(tmp_path / "d1"), "--seed", "5",
        "--resolution", "96", "--jobs", "2",
    ])
    assert code == 0
    manifest = json.loads((tmp_path / "d1" / "manifest.json").read_text())
    assert manifest["config"]["models"] == ["toy0", "toy1"]
    assert manifest["counts"]["charts"] == 2 * 17
    assert manifest["counts"]["achieved_pairs"] <= 2 * 17 * 30

    assert main([
        "gen-dataset", "--input", *models,
        "--output", str(tmp_path / "d2"), "--seed", "5", "--resolution", "96",
    ]) == 0
    again = json.loads((tmp_path / "d2" / "manifest.json").read_text())
    assert again == manifest


# ----------------------------------------------------------------------
# eval / validate


def test_eval_identical_meshes_are_zero(scene, tmp_path):
    out = tmp_path / "metrics.json"
    assert main([
        "eval", "--input", str(scene / "truth.ply"),
        "--truth", str(scene / "truth.ply"), "--output", str(out),
    ]) == 0
    row = json.loads(out.read_text())
    assert row["max"] == 0.0 and row["mean"] == 0.0
    assert row["method"] == "ours"


def test_eval_repaired_sphere_row_and_coloring(scene, tmp_path):
    fixed = tmp_path / "fixed.ply"
    main(repair_args(scene, fixed))
    out = tmp_path / "metrics.json"
    colored = tmp_path / "colored.ply"
    assert main([
        "eval", "--input", str(fixed), "--truth", str(scene / "truth.ply"),
        "--output", str(out), "--color-output", str(colored),
        "--method", "curvature-inpaint",
    ]) == 0
    row = json.loads(out.read_text())
    assert 0.0 <= row["mean"] <= row["max"] < 0.05
    assert row["model"] == "fixed"
    assert colored.exists()


def test_eval_images_and_identity(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    save_png(tmp_path / "a.png", img)
    save_png(tmp_path / "b.png", img)
    out = tmp_path / "im.json"
    assert main([
        "eval", "--input", str(tmp_path / "a.png"),
        "--truth", str(tmp_path / "b.png"), "--output", str(out),
    ]) == 0
    row = json.loads(out.read_text())
    assert row["l1"] == 0.0
    assert row["psnr"] == "inf"
    assert row["ssim"] == 1.0


def test_eval_mismatched_image_sizes_exit_1(tmp_path):
    rng = np.random.default_rng(1)
    save_png(tmp_path / "a.png",
             rng.integers(0, 256, (32, 32, 3), dtype=np.uint8))
    save_png(tmp_path / "b.png",
             rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))
    assert main([
        "eval", "--input", str(tmp_path / "a.png"),
        "--truth", str(tmp_path / "b.png"),
    ]) == 1


def test_eval_rejects_mixed_modes(scene, tmp_path):
    save_png(tmp_path / "a.png", np.zeros((16, 16, 3), dtype=np.uint8))
    assert main([
        "eval", "--input", str(tmp_path / "a.png"),
        "--truth", str(scene / "truth.ply"),
    ]) == 1


def test_validate_reports_flags(scene, tmp_path):
    out = tmp_path / "v.json"
    assert main([
        "validate", "--input", str(scene / "damaged.ply"),
        "--output", str(out),
    ]) == 0
    row = json.loads(out.read_text())
    assert row["manifold"] is True
    assert row["watertight"] is False
    assert row["ok"] is False


# ----------------------------------------------------------------------
# parser behavior


def test_help_exits_zero():
    with pytest.raises(SystemExit) as stop:
        main(["--help"])
    assert stop.value.code == 0


def test_missing_required_flag_exits_1():
    with pytest.raises(SystemExit) as stop:
        main(["repair", "--output", "x.ply"])
    assert stop.value.code == 1


def test_console_script_entry_point(scene):
    proc = subprocess.run(
        ["curvrepair", "validate", "--input", str(scene / "closed.ply")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["ok"] is True
