import json

import numpy as np
import pytest

from vizmark.chartgen import gen_corpus
from vizmark.detect import DetectionConfig, extract_regions
from vizmark.errors import (
    AnalysisError,
    PromptParseError,
    SchemaValidationError,
    TransportError,
)
from vizmark.intent import (
    ComponentLabel,
    HttpBackend,
    IntentReport,
    RefinedRegion,
    TamperMethod,
    analyze,
    build_intent_prompt,
    build_refinement_prompt,
    mock_backend,
    parse_and_validate,
    rule_lookup,
)

M = TamperMethod
C = ComponentLabel


def test_rule_table_exact():
    assert rule_lookup(C.REGION).primary_methods == (M.MDV, M.ARD, M.DVD)
    assert rule_lookup(C.REGION).secondary_methods == (M.MC,)
    assert rule_lookup(C.DATA_LABELS).primary_methods == (M.MDV, M.HL)
    assert rule_lookup(C.DATA_LABELS).secondary_methods == (M.ARD, M.DVD)
    assert rule_lookup(C.AXIS).primary_methods == (M.MCV,)
    assert rule_lookup(C.AXIS).secondary_methods == (M.HL,)
    assert rule_lookup(C.LEGEND).primary_methods == (M.ML,)
    assert rule_lookup(C.LEGEND).secondary_methods == ()
    assert rule_lookup(C.ANNOTATION).primary_methods == (M.DAA,)
    assert rule_lookup(C.LOGO).primary_methods == (M.ARL,)
    assert rule_lookup(C.COLORMAP).primary_methods == (M.MC,)


def test_rules_total_and_disjoint():
    for comp in ComponentLabel:
        rule = rule_lookup(comp)
        assert rule.primary_methods
        assert not set(rule.primary_methods) & set(rule.secondary_methods)


def test_refinement_prompt_contents():
    p = build_refinement_prompt("chart_0001.png")
    assert "marked them with green lines" in p
    for comp in ComponentLabel:
        assert f"`{comp.value}`" in p
    assert "chart_0001.png" in p
    assert '"tampered_regions"' in p
    assert p.rstrip().endswith("```")
    assert p == build_refinement_prompt("chart_0001.png")


def test_intent_prompt_contents():
    refined = [RefinedRegion("box x=1..5, y=2..6", [C.LEGEND], "why")]
    p = build_intent_prompt("img.png", refined)
    for m in TamperMethod:
        assert f"**{m.value}**" in p
    assert "box x=1..5, y=2..6" in p
    assert '"tampering_intents"' in p
    assert "evaluate the Primary Methods first" in p
    assert p == build_intent_prompt("img.png", refined)
    with pytest.raises(ValueError):
        build_intent_prompt("img.png", [])


def _refinement_payload():
    return {"tampered_regions": [{
        "tampered_region": "box x=1..5, y=2..6",
        "tampered_component": ["legend"],
        "reason": "outline encloses swatches",
    }]}


def _intent_payload():
    return {"tampering_intents": [{
        "tampered_region": "box x=1..5, y=2..6",
        "method": "Modifying the legend",
        "tamper": "Swapped swatch colors.",
        "intent": "Mislabel the series.",
    }]}


def _fenced(obj):
    return "noise before\n```json\n" + json.dumps(obj) + "\n```\nafter"


def test_parse_refinement_roundtrip():
    out = parse_and_validate(_fenced(_refinement_payload()), "refinement")
    assert len(out) == 1
    assert out[0].tampered_component == [C.LEGEND]


def test_parse_intent_method_names():
    rep = parse_and_validate(_fenced(_intent_payload()), "intent")
    assert isinstance(rep, IntentReport)
    assert rep.entries[0].method is M.ML


def test_parse_rejects_unknown_component():
    bad = _refinement_payload()
    bad["tampered_regions"][0]["tampered_component"] = ["title"]
    with pytest.raises(SchemaValidationError) as ei:
        parse_and_validate(_fenced(bad), "refinement")
    assert "tampered_component" in ei.value.field_path


def test_parse_rejects_unknown_method():
    bad = _intent_payload()
    bad["tampering_intents"][0]["method"] = "Repainting the chart"
    with pytest.raises(SchemaValidationError) as ei:
        parse_and_validate(_fenced(bad), "intent")
    assert ei.value.field_path.endswith(".method")


def test_parse_requires_fenced_json():
    with pytest.raises(PromptParseError):
        parse_and_validate("no json here", "refinement")
    with pytest.raises(PromptParseError):
        parse_and_validate("```json\n{oops\n```", "refinement")


def test_every_missing_key_is_rejected():
    # property: deleting any required key anywhere fails validation
    for key in ("tampered_region", "tampered_component", "reason"):
        broken = _refinement_payload()
        del broken["tampered_regions"][0][key]
        with pytest.raises(SchemaValidationError) as ei:
            parse_and_validate(_fenced(broken), "refinement")
        assert key in ei.value.field_path
    for key in ("tampered_region", "method", "tamper", "intent"):
        broken = _intent_payload()
        del broken["tampering_intents"][0][key]
        with pytest.raises(SchemaValidationError) as ei:
            parse_and_validate(_fenced(broken), "intent")
        assert key in ei.value.field_path


def _detected_regions(item):
    return extract_regions(item.truth_mask, DetectionConfig(min_area=4))


def test_analyze_empty_regions_makes_no_backend_calls():
    class Exploding:
        def complete(self, images, prompt):
            raise AssertionError("backend must not be called")

    rep = analyze(Exploding(), np.ones((32, 32, 3)), [])
    assert rep.entries == []


def test_analyze_geometric_mock_end_to_end():
    items, _ = gen_corpus(4, seed=17, ops_per_item=2)
    saw_entries = False
    for item in items:
        regions = _detected_regions(item)
        rep = analyze(mock_backend(), item.tampered, regions)
        for e in rep.entries:
            assert e.conformant, (e.method, e.tampered_region)
            assert e.method in rule_lookup(C.REGION).reachable + (M.MCV, M.ML)
        saw_entries = saw_entries or bool(rep.entries)
    assert saw_entries


def test_analyze_truth_mock_reproduces_labels():
    items, manifest = gen_corpus(4, seed=23, ops_per_item=1)
    for item, meta in zip(items, manifest["items"]):
        regions = _detected_regions(item)
        if not regions:
            continue
        rep = analyze(mock_backend(meta), item.tampered, regions)
        want = [op["method"] for op in meta["ops"]]
        got = [e.method.name for e in rep.entries]
        assert got == want


def test_analyze_flags_rule_violation_non_conformant():
    class Liar:
        def complete(self, images, prompt):
            if "tampering_intents" in prompt:
                return _fenced({"tampering_intents": [{
                    "tampered_region": "r0",
                    "method": "Modifying the legend",  # axis can't reach ML
                    "tamper": "t", "intent": "i"}]})
            return _fenced({"tampered_regions": [{
                "tampered_region": "r0",
                "tampered_component": ["axis"],
                "reason": "x"}]})

    regions = _one_region()
    rep = analyze(Liar(), np.ones((32, 32, 3)), regions)
    assert rep.entries[0].method is M.ML
    assert not rep.entries[0].conformant
    flagged = rep.to_json_obj()["tampering_intents"][0]
    assert flagged.get("non_conformant") is True


def _one_region():
    from vizmark.detect import TamperMask

    bits = np.zeros((32, 32), dtype=bool)
    bits[10:18, 8:20] = True
    return extract_regions(TamperMask(bits), DetectionConfig(min_area=4))


def test_analyze_single_reask_then_success():
    calls = []

    class FlakyOnce:
        def complete(self, images, prompt):
            calls.append(prompt)
            if "tampering_intents" in prompt:
                return _fenced({"tampering_intents": [{
                    "tampered_region": "r", "method": "Modifying data point values",
                    "tamper": "t", "intent": "i"}]})
            if len(calls) == 1:
                return "static, no json"
            return _fenced({"tampered_regions": [{
                "tampered_region": "r", "tampered_component": ["region"],
                "reason": "x"}]})

    rep = analyze(FlakyOnce(), np.ones((32, 32, 3)), _one_region())
    assert len(rep.entries) == 1
    assert "failed validation" in calls[1]


def test_analyze_persistent_garbage_raises():
    class Broken:
        def complete(self, images, prompt):
            return "never json"

    with pytest.raises(AnalysisError):
        analyze(Broken(), np.ones((32, 32, 3)), _one_region())


def test_http_backend_retries_then_transport_error(monkeypatch):
    import requests

    import vizmark.intent as intent_mod

    attempts = []

    def fake_post(url, json=None, headers=None, timeout=None):
        attempts.append(url)
        raise requests.ConnectionError("refused")

    monkeypatch.setattr(requests, "post", fake_post)
    monkeypatch.setattr(intent_mod.time, "sleep", lambda s: None)
    be = HttpBackend("http://backend.test/v1", retries=2)
    with pytest.raises(TransportError):
        be.complete([np.ones((8, 8, 3))], "hello")
    assert len(attempts) == 3


def test_http_backend_reads_text_field(monkeypatch):
    import requests

    class FakeResp:
        text = "raw"

        def raise_for_status(self):
            pass

        def json(self):
            return {"text": "the answer"}

    seen = {}

    def fake_post(url, json=None, headers=None, timeout=None):
        seen["auth"] = headers.get("Authorization")
        seen["n_images"] = len(json["images"])
        return FakeResp()

    monkeypatch.setattr(requests, "post", fake_post)
    monkeypatch.setenv("VIZMARK_API_TOKEN", "sk-test")
    be = HttpBackend("http://backend.test/v1")
    out = be.complete([np.ones((8, 8, 3))], "hello")
    assert out == "the answer"
    assert seen["auth"] == "Bearer sk-test"
    assert seen["n_images"] == 1


def test_http_backend_validation():
    with pytest.raises(ValueError):
        HttpBackend("http://x", retries=-1)
