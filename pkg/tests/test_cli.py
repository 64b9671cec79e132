"""End-to-end command-line tests: the full tool chain in temp dirs plus
error-path diagnostics."""

import filecmp
import json
import subprocess
import sys

import pytest

from crowdpost.cli import main
from crowdpost.data_model import BODY, HEAD, read_detection_groups, read_scenes


def _chain(base):
    """Run simulate -> estimate-ratio -> train-rdm -> run -> eval x4 -> report."""
    base.mkdir(parents=True, exist_ok=True)
    scenes = base / "scenes.jsonl"
    dets = base / "dets.jsonl"
    assert main(["simulate", "--out-scenes", str(scenes), "--out-dets", str(dets),
                 "--num-scenes", "12", "--seed", "5", "--noise-seed", "7",
                 "--cluster-prob", "0.5"]) == 0
    assert main(["estimate-ratio", "--scenes", str(scenes),
                 "--out", str(base / "ratio.json")]) == 0
    assert main(["train-rdm", "--scenes", str(scenes), "--dets", str(dets),
                 "--out-model", str(base / "model.json"),
                 "--out-loss", str(base / "loss.csv"),
                 "--epochs", "5", "--seed", "0", "--hidden-dim", "16"]) == 0
    out = base / "out"
    assert main(["run", "--dets", str(dets), "--model", str(base / "model.json"),
                 "--out-dir", str(out)]) == 0
    evals = base / "eval"
    evals.mkdir(exist_ok=True)
    for variant in ("baseline", "rdm"):
        for cls in (HEAD, BODY):
            assert main(["eval", "--results", str(out / f"{variant}.jsonl"),
                         "--scenes", str(scenes), "--class", cls,
                         "--out-prefix", str(evals / f"{variant}_{cls}"),
                         "--name", variant]) == 0
    assert main(["report", "--dir", str(evals),
                 "--out", str(base / "report.md")]) == 0
    return base


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    return _chain(tmp_path_factory.mktemp("cli") / "a")


def test_chain_artifacts_exist(chain):
    for rel in ("scenes.jsonl", "dets.jsonl", "ratio.json", "model.json",
                "loss.csv", "out/baseline.jsonl", "out/rdm.jsonl",
                "out/audit.json", "report.md"):
        assert (chain / rel).is_file(), rel
    for variant in ("baseline", "rdm"):
        for cls in (HEAD, BODY):
            stem = f"eval/{variant}_{cls}"
            for suffix in (".eval.json", ".curve.csv", ".svg"):
                assert (chain / (stem + suffix)).is_file(), stem + suffix


def test_simulate_respects_num_scenes(chain):
    assert len(read_scenes(chain / "scenes.jsonl")) == 12


def test_run_outputs_keep_invariants(chain):
    def by_scene(path):
        slots = {}
        for g in read_detection_groups(path):
            slots.setdefault(g.scene_id, {})[g.class_name] = \
                {d.det_id for d in g.dets}
        return slots

    baseline = by_scene(chain / "out" / "baseline.jsonl")
    rdm = by_scene(chain / "out" / "rdm.jsonl")
    assert baseline.keys() == rdm.keys()
    for sid in baseline:
        assert rdm[sid][BODY] >= baseline[sid][BODY]
        assert rdm[sid][HEAD] <= baseline[sid][HEAD]


def test_audit_matches_outputs(chain):
    with open(chain / "out" / "audit.json", encoding="utf-8") as fh:
        audit = json.load(fh)
    slots = {}
    for path in ("baseline.jsonl", "rdm.jsonl"):
        for g in read_detection_groups(chain / "out" / path):
            slots[(path, g.scene_id, g.class_name)] = {d.det_id for d in g.dets}
    for rec in audit["scenes"]:
        sid = rec["scene_id"]
        added = slots[("rdm.jsonl", sid, BODY)] - slots[("baseline.jsonl", sid, BODY)]
        dropped = slots[("baseline.jsonl", sid, HEAD)] - slots[("rdm.jsonl", sid, HEAD)]
        assert set(rec["recalled_body_ids"]) >= added
        assert set(rec["removed_head_ids"]) == dropped


def test_eval_json_fields(chain):
    with open(chain / "eval" / f"rdm_{BODY}.eval.json", encoding="utf-8") as fh:
        obj = json.load(fh)
    assert obj["name"] == "rdm"
    assert obj["class"] == BODY
    assert 0.0 <= obj["mr2"] <= 1.0
    assert obj["num_images"] == 12


def test_report_table(chain):
    text = (chain / "report.md").read_text(encoding="utf-8")
    lines = text.splitlines()
    assert "| variant | head MR-2 | body MR-2 |" in lines
    rows = [ln for ln in lines if ln.startswith("| baseline") or ln.startswith("| rdm")]
    assert len(rows) == 2
    for row in rows:
        cells = [c.strip() for c in row.strip("|").split("|")]
        assert cells[1].endswith("%") and cells[2].endswith("%")


def test_chain_rerun_is_byte_identical(chain, tmp_path_factory):
    other = _chain(tmp_path_factory.mktemp("cli-rerun") / "b")
    rel_a = sorted(p.relative_to(chain) for p in chain.rglob("*") if p.is_file())
    rel_b = sorted(p.relative_to(other) for p in other.rglob("*") if p.is_file())
    assert rel_a == rel_b
    for rel in rel_a:
        assert filecmp.cmp(chain / rel, other / rel, shallow=False), rel


def test_console_script_entry_point(chain, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-c",
         "from crowdpost.cli import main; import sys; sys.exit(main(sys.argv[1:]))",
         "estimate-ratio", "--scenes", str(chain / "scenes.jsonl"),
         "--out", str(tmp_path / "ratio.json")],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "ratio.json").is_file()


# ---------------------------------------------------------------------------
# error paths: exit code 1 and a single-line diagnostic on stderr

def _expect_error(capsys, argv, fragment):
    assert main(argv) == 1
    err = capsys.readouterr().err
    assert err.startswith(f"crowdpost {argv[0]}: error:")
    assert fragment in err
    assert err.count("\n") == 1


def test_missing_scenes_file(capsys, tmp_path):
    _expect_error(capsys, ["estimate-ratio", "--scenes", str(tmp_path / "nope.jsonl"),
                           "--out", str(tmp_path / "r.json")], "nope.jsonl")


def test_eval_empty_results(capsys, chain, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    _expect_error(capsys, ["eval", "--results", str(empty),
                           "--scenes", str(chain / "scenes.jsonl"),
                           "--class", BODY, "--out-prefix", str(tmp_path / "x")],
                  "empty results file")


def test_eval_missing_class_groups(capsys, chain, tmp_path):
    heads_only = [g for g in read_detection_groups(chain / "out" / "baseline.jsonl")
                  if g.class_name == HEAD]
    from crowdpost.data_model import write_detection_groups
    path = tmp_path / "heads.jsonl"
    write_detection_groups(heads_only, path)
    _expect_error(capsys, ["eval", "--results", str(path),
                           "--scenes", str(chain / "scenes.jsonl"),
                           "--class", BODY, "--out-prefix", str(tmp_path / "x")],
                  "no post-NMS body groups")


def test_unknown_config_key(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sim": {"bogus": 1}}))
    _expect_error(capsys, ["simulate", "--config", str(cfg),
                           "--out-scenes", str(tmp_path / "s.jsonl"),
                           "--out-dets", str(tmp_path / "d.jsonl")],
                  "unknown SimConfig keys: bogus")


def test_config_must_be_object(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2]")
    _expect_error(capsys, ["simulate", "--config", str(cfg),
                           "--out-scenes", str(tmp_path / "s.jsonl"),
                           "--out-dets", str(tmp_path / "d.jsonl")],
                  "config must be a JSON object")


def test_config_invalid_json(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    assert main(["simulate", "--config", str(cfg),
                 "--out-scenes", str(tmp_path / "s.jsonl"),
                 "--out-dets", str(tmp_path / "d.jsonl")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("crowdpost simulate: error:")


def test_negative_num_scenes(capsys, tmp_path):
    _expect_error(capsys, ["simulate", "--out-scenes", str(tmp_path / "s.jsonl"),
                           "--out-dets", str(tmp_path / "d.jsonl"),
                           "--num-scenes", "-1"], "non-negative")


def test_report_empty_dir(capsys, tmp_path):
    _expect_error(capsys, ["report", "--dir", str(tmp_path),
                           "--out", str(tmp_path / "r.md")], "no .eval.json")


def test_report_missing_class_shows_dash(capsys, chain, tmp_path):
    src = chain / "eval" / f"baseline_{HEAD}.eval.json"
    (tmp_path / "only_head.eval.json").write_bytes(src.read_bytes())
    assert main(["report", "--dir", str(tmp_path),
                 "--out", str(tmp_path / "r.md")]) == 0
    capsys.readouterr()
    text = (tmp_path / "r.md").read_text(encoding="utf-8")
    row = next(ln for ln in text.splitlines() if ln.startswith("| baseline"))
    cells = [c.strip() for c in row.strip("|").split("|")]
    assert cells[1].endswith("%")
    assert cells[2] == "-"


def test_failed_command_leaves_no_output(capsys, chain, tmp_path):
    out = tmp_path / "r.json"
    assert main(["estimate-ratio", "--scenes", str(tmp_path / "missing.jsonl"),
                 "--out", str(out)]) == 1
    capsys.readouterr()
    assert not out.exists()
