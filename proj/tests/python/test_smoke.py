import json
import pathlib

import pytest

import supervisor_engine as se

DATA = pathlib.Path(__file__).resolve().parents[2] / "data"


def test_classify_reconciles_missing_attachment():
    assert se.classify("transcribe this recording", ["audio"]) == ("audio", "audio")
    _, final = se.classify("transcribe this recording", [])
    assert final != "audio"
    _, final = se.classify("what is in this picture", ["audio"])
    assert final != "vision"


def test_detect_modality_by_extension(tmp_path):
    p = tmp_path / "clip.mp3"
    p.write_bytes(b"\x00")
    assert se.detect_modality(str(p)) == "audio"


def test_route_simple_query_goes_weak():
    d = se.route("hello", "closed_src")
    assert d["route"] == "weak"
    assert 0.0 <= d["win_probability"] <= 1.0
    assert d["model"]


def test_token_cost_rounds_to_micro_dollars():
    assert se.token_cost("5.00", 1_000_000) == "5.000000"
    assert se.token_cost("0.50", 333_333) == "0.166667"
    with pytest.raises(Exception):
        se.token_cost("0.0000001", 1)


def test_memory_store_retrieves_and_windows():
    m = se.MemoryStore(64)
    for i in range(7):
        m.add(f"note number {i} about invoices", "text", i)
    m.add("the cat sat on the mat", "text", 7)
    assert len(m) == 8
    assert len(m.short_term()) == 5
    hits = m.retrieve("cat on a mat", "text", k=3)
    assert len(hits) == 3
    assert hits[0]["content"] == "the cat sat on the mat"
    with pytest.raises(ValueError):
        m.retrieve("x", "smell")


def test_cli_run_json():
    code, out, err = se.cli("run", "hello", "--json", "--store-root", "/tmp/supervisor-py-smoke")
    assert code == 0, err
    j = json.loads(out)
    assert j["flag"] == "routellm"
    assert j["status"] == "answered"


def test_cli_case_study_fixture():
    code, out, err = se.cli(
        "run", "What products are shown in this advertisement video? Provide timestamps and descriptions.",
        "--attach", str(DATA / "case_studies" / "nike_ad.mp4"),
        "--fixtures", str(DATA / "case_studies"),
        "--store-root", "/tmp/supervisor-py-smoke", "--json",
    )
    assert code == 0, err
    assert "sneakers" in json.loads(out)["answer_text"]


def test_policies_compare_on_small_workload():
    spec = se.default_workload_spec()
    spec["total_queries"] = 60
    w = se.generate_workload(spec)
    assert len(w["queries"]) == 60
    c = se.run_policy(w, "centralized", threads=2, sessions=8)
    h = se.run_policy(w, "hierarchical", threads=2, sessions=8)
    again = se.run_policy(w, "centralized", threads=1, sessions=8)
    assert c == again
    d = se.compare(h, c)
    assert d["tta_reduction"]["median"] > 0
    assert d["cost_reduction"] > 0
