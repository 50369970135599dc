import json
import os

import pytest

import app
from modules.pipeline import load_detections, save_detections
from tests.conftest import make_det


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in list(os.environ):
        if name.startswith("READORDER_"):
            monkeypatch.delenv(name)


@pytest.fixture
def synth_pages(tmp_path):
    spec = tmp_path / "spec.yaml"
    spec.write_text("seed: 3\nn_horizontal: 1\nn_vertical: 1\ncolumns_per_region: 2\nchars_per_column: 4\n"
                    "chars_per_column_max: 6\ndouble_column_prob: 0.5\n", encoding="utf-8")
    out = tmp_path / "pages"
    assert app.main(["synth", "--output-dir", str(out), "--count", "2", "--spec", str(spec)]) == app.EXIT_OK
    return out


def test_synth_writes_manifest(synth_pages):
    assert (synth_pages / "manifest.yaml").exists()
    assert (synth_pages / "page_00003.detections.json").exists()
    assert (synth_pages / "page_00004.lines.json").exists()


def test_parse_is_deterministic(synth_pages, tmp_path):
    manifest = str(synth_pages / "manifest.yaml")
    first, second = tmp_path / "a.txt", tmp_path / "b.txt"
    assert app.main(["parse", "--manifest", manifest, "--output", str(first)]) == app.EXIT_OK
    assert app.main(["--workers", "2", "parse", "--manifest", manifest, "--output", str(second)]) == app.EXIT_OK
    assert first.read_bytes() == second.read_bytes()


def test_parse_single_page_matches_ground_truth(synth_pages, tmp_path):
    out = tmp_path / "out"
    code = app.main(["parse", "--detections", str(synth_pages / "page_00003.detections.json"),
                     "--mask", str(synth_pages / "page_00003.mask.png"), "--page-id", "p3",
                     "--output-dir", str(out)])
    assert code == app.EXIT_OK
    gt = json.loads((synth_pages / "page_00003.gt.json").read_text(encoding="utf-8"))
    assert (out / "p3.txt").read_text(encoding="utf-8") == gt["transcript"] + "\n"
    record = json.loads((out / "p3.json").read_text(encoding="utf-8"))
    assert record["text"] == gt["transcript"]


def test_rescore_requires_lines(synth_pages, tmp_path):
    code = app.main(["rescore", "--detections", str(synth_pages / "page_00003.detections.json"),
                     "--mask", str(synth_pages / "page_00003.mask.png")])
    assert code == app.EXIT_INPUT


def test_rescore_outputs_fused_text(synth_pages, tmp_path):
    out = tmp_path / "fused"
    code = app.main(["rescore", "--manifest", str(synth_pages / "manifest.yaml"), "--output-dir", str(out)])
    assert code == app.EXIT_OK
    assert (out / "page_00003.fused.txt").exists()


def test_eval_report(synth_pages, tmp_path):
    report_path = tmp_path / "report.json"
    code = app.main(["eval", "--manifest", str(synth_pages / "manifest.yaml"), "--output", str(report_path),
                     "--per-page"])
    assert code == app.EXIT_OK
    report = json.loads(report_path.read_text(encoding="utf-8"))
    assert report["text"]["cr"] == 1.0
    assert [r["threshold"] for r in report["detection"]["sweep"]] == [0.5, 0.6, 0.7]
    assert len(report["pages"]) == 2


def test_lines_command(synth_pages, tmp_path):
    out = tmp_path / "lines.json"
    code = app.main(["lines", "--mask", str(synth_pages / "page_00003.mask.png"), "--output", str(out)])
    assert code == app.EXIT_OK
    assert len(json.loads(out.read_text(encoding="utf-8"))) == 2


def test_merge_windows_command(tmp_path):
    save_detections([make_det(900, 10, 940, 50, "甲", 0.9)], str(tmp_path / "w0.json"))
    save_detections([make_det(1, 10, 41, 50, "甲", 0.7)], str(tmp_path / "w1.json"))
    windows = tmp_path / "windows.json"
    windows.write_text(json.dumps([
        {"offset": [0, 0], "detections": "w0.json"},
        {"offset": [900, 0], "detections": "w1.json"},
    ]), encoding="utf-8")
    out = tmp_path / "merged.json"
    assert app.main(["merge-windows", "--windows", str(windows), "--output", str(out)]) == app.EXIT_OK
    merged = load_detections(str(out))
    assert len(merged) == 1 and merged[0].score == 0.9


def test_merge_windows_planned_offsets(tmp_path):
    # 2000x900 page, 1024 windows with 100 overlap: offsets (0,0), (924,0), (976,0)
    save_detections([make_det(930, 10, 970, 50, "甲", 0.9)], str(tmp_path / "w0.json"))
    save_detections([make_det(6, 10, 46, 50, "甲", 0.6)], str(tmp_path / "w1.json"))
    save_detections([], str(tmp_path / "w2.json"))
    windows = tmp_path / "windows.json"
    windows.write_text(json.dumps([{"detections": f"w{k}.json"} for k in range(3)]), encoding="utf-8")
    out = tmp_path / "merged.json"

    assert app.main(["merge-windows", "--windows", str(windows), "--output", str(out)]) == app.EXIT_INPUT
    assert app.main(["merge-windows", "--windows", str(windows), "--page-size", "2000", "900",
                     "--output", str(out)]) == app.EXIT_OK
    merged = load_detections(str(out))
    assert len(merged) == 1 and merged[0].score == 0.9


def test_render_debug_command(synth_pages, tmp_path):
    out = tmp_path / "debug"
    code = app.main(["render-debug", "--manifest", str(synth_pages / "manifest.yaml"), "--output", str(out)])
    assert code == app.EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ["page_00003.debug.png", "page_00004.debug.png"]


def test_missing_input_exits_one(tmp_path):
    code = app.main(["parse", "--detections", str(tmp_path / "none.json"), "--mask", str(tmp_path / "none.png")])
    assert code == app.EXIT_INPUT


def test_continue_on_error(synth_pages, tmp_path):
    manifest = tmp_path / "mixed.yaml"
    manifest.write_text(
        "pages:\n"
        f"  - page_id: good\n    detections: {synth_pages / 'page_00003.detections.json'}\n"
        f"    mask: {synth_pages / 'page_00003.mask.png'}\n"
        "  - page_id: bad\n    detections: missing.json\n    mask: missing.png\n",
        encoding="utf-8",
    )
    out = tmp_path / "out.txt"
    assert app.main(["parse", "--manifest", str(manifest), "--output", str(out)]) == app.EXIT_INPUT
    assert app.main(["--continue-on-error", "parse", "--manifest", str(manifest),
                     "--output", str(out)]) == app.EXIT_OK
    assert out.read_text(encoding="utf-8").strip()


def test_invalid_override_exits_one(synth_pages):
    code = app.main(["--set", "grouping.tol_frac=-1", "parse", "--manifest", str(synth_pages / "manifest.yaml")])
    assert code == app.EXIT_INPUT


def test_no_command_prints_help(capsys):
    assert app.main([]) == app.EXIT_INPUT
    assert "usage" in capsys.readouterr().out


def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_synth_is_byte_identical(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        assert app.main(["synth", "--output-dir", str(out), "--count", "2", "--corrupt"]) == app.EXIT_OK
    assert _tree(first) and _tree(first) == _tree(second)


def test_render_debug_is_byte_identical(synth_pages, tmp_path):
    manifest = str(synth_pages / "manifest.yaml")
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        assert app.main(["render-debug", "--manifest", manifest, "--output", str(out)]) == app.EXIT_OK
    assert _tree(first) == _tree(second)


def test_merge_windows_is_byte_identical(tmp_path):
    save_detections([make_det(930, 10, 970, 50, "甲", 0.9), make_det(100, 10, 140, 50, "乙", 0.8)],
                    str(tmp_path / "w0.json"))
    save_detections([make_det(6, 10, 46, 50, "甲", 0.6)], str(tmp_path / "w1.json"))
    windows = tmp_path / "windows.json"
    windows.write_text(json.dumps([{"detections": "w0.json"}, {"detections": "w1.json"}]), encoding="utf-8")
    outputs = []
    for name in ("a.json", "b.json"):
        assert app.main(["merge-windows", "--windows", str(windows), "--page-size", "2000", "900",
                         "--output", str(tmp_path / name)]) == app.EXIT_OK
        outputs.append((tmp_path / name).read_bytes())
    assert outputs[0] == outputs[1]
