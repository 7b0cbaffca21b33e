import json

import numpy as np
import pytest

from visq.instructions import (
    TASKS,
    ExpansionConfig,
    ExpansionError,
    InstructionCorpus,
    InstructionError,
    InstructionTemplate,
    Variant,
    corpus_from_dict,
    expand_paraphrases,
    load_corpus,
    placeholders_of,
    render,
    sample_instruction,
)


def test_bundled_corpus_loads_and_validates(corpus):
    corpus.validate()
    for task in TASKS:
        assert len(corpus.variants_for(task, "train")) >= 6
        assert len(corpus.variants_for(task, "heldout")) >= 4


def test_every_variant_preserves_placeholders(corpus):
    for v in corpus.variants:
        tpl = corpus.templates[v.template_id]
        assert placeholders_of(v.text) == placeholders_of(tpl.text)


def test_train_heldout_disjoint(corpus):
    for task in TASKS:
        train = {v.text for v in corpus.variants_for(task, "train")}
        held = {v.text for v in corpus.variants_for(task, "heldout")}
        assert not train & held


def test_render_res_template():
    out = render(
        "Please segment the {object} with color {color}.",
        {"object": "red circle", "color": "green"},
    )
    assert out == "Please segment the red circle with color green."


def test_render_no_placeholders_identity():
    assert render("Provide a caption for this image.", {}) == "Provide a caption for this image."


def test_render_missing_binding_errors():
    with pytest.raises(InstructionError):
        render("Segment the {object} with color {color}.", {"object": "red circle"})


def test_render_unknown_binding_errors():
    with pytest.raises(InstructionError):
        render("Provide a caption for this image.", {"color": "red"})


def test_sample_deterministic(corpus):
    a = sample_instruction(corpus, "res", np.random.default_rng(9), "train")
    b = sample_instruction(corpus, "res", np.random.default_rng(9), "train")
    assert a == b


def test_sample_heldout_never_returns_train(corpus):
    train_texts = {v.text for v in corpus.variants_for("rec", "train")}
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = sample_instruction(corpus, "rec", rng, "heldout")
        assert v.split == "heldout"
        assert v.text not in train_texts


def test_sample_uniformity_binomial_bound():
    # 4 train variants; over 10k draws each frequency within 5 sigma of 0.25
    d = {
        "templates": [{"id": "t", "task": "caption", "text": "Caption it."}],
        "variants": [
            {"template_id": "t", "text": f"variant number {i}", "split": "train"}
            for i in range(4)
        ]
        + [{"template_id": "t", "text": "held out one", "split": "heldout"}],
    }
    corpus = corpus_from_dict(d)
    rng = np.random.default_rng(42)
    n = 10_000
    counts = {}
    for _ in range(n):
        v = sample_instruction(corpus, "caption", rng, "train")
        counts[v.text] = counts.get(v.text, 0) + 1
    sigma = (0.25 * 0.75 / n) ** 0.5
    for c in counts.values():
        assert abs(c / n - 0.25) < 5 * sigma


def test_no_matching_split_errors(corpus):
    empty = InstructionCorpus(
        templates={"x": InstructionTemplate("x", "caption", "Caption it.")},
        variants=[Variant("x", "Caption it.", "train")],
    )
    with pytest.raises(InstructionError):
        sample_instruction(empty, "caption", np.random.default_rng(0), "heldout")


def test_variant_with_wrong_placeholders_rejected():
    d = {
        "templates": [{"id": "r", "task": "res", "text": "Segment the {object} with color {color}."}],
        "variants": [{"template_id": "r", "text": "Segment the {object}.", "split": "train"}],
    }
    with pytest.raises(InstructionError):
        corpus_from_dict(d)


def test_template_only_keeps_one_train_variant_per_task(corpus):
    t = corpus.template_only()
    for task in TASKS:
        train = t.variants_for(task, "train")
        assert len(train) == 1
        assert train[0].text == corpus.template_for_task(task).text
        assert t.variants_for(task, "heldout") == corpus.variants_for(task, "heldout")


# --- expansion client -------------------------------------------------------


def make_transport(response_obj):
    calls = []

    def transport(url, headers, body):
        calls.append((url, headers, json.loads(body.decode())))
        return json.dumps(response_obj).encode()

    return transport, calls


def test_expansion_accepts_valid_and_rejects_invalid(tmp_path, corpus):
    tpl = corpus.template_for_task("res")
    good = "Shade the {object} using {color} paint."
    bad = "Shade the {object} please."  # lacks {color}
    transport, calls = make_transport([good, bad])
    cfg = ExpansionConfig(url="http://localhost/expand")
    work = InstructionCorpus(templates=dict(corpus.templates), variants=list(corpus.variants))
    path = tmp_path / "corpus.json"
    accepted = expand_paraphrases(cfg, work, tpl, 2, corpus_path=path, transport=transport)
    assert accepted == [good]
    assert calls[0][2] == {"template": tpl.text, "placeholders": ["color", "object"], "n": 2}
    saved = json.loads(path.read_text())
    assert any(v["text"] == good and v["split"] == "train" for v in saved["variants"])


def test_expansion_n_zero_makes_no_request(corpus):
    tpl = corpus.template_for_task("rec")
    transport, calls = make_transport(["anything {object}"])
    cfg = ExpansionConfig(url="http://localhost/expand")
    assert expand_paraphrases(cfg, corpus, tpl, 0, transport=transport) == []
    assert calls == []


def test_expansion_offline_gate(corpus):
    tpl = corpus.template_for_task("rec")
    with pytest.raises(ExpansionError):
        expand_paraphrases(ExpansionConfig(url=""), corpus, tpl, 3)


def test_expansion_failure_leaves_corpus_untouched(corpus):
    tpl = corpus.template_for_task("res")

    def failing_transport(url, headers, body):
        raise ExpansionError("boom")

    work = InstructionCorpus(templates=dict(corpus.templates), variants=list(corpus.variants))
    before = len(work.variants)
    cfg = ExpansionConfig(url="http://localhost/expand")
    with pytest.raises(ExpansionError):
        expand_paraphrases(cfg, work, tpl, 2, transport=failing_transport)
    assert len(work.variants) == before


def test_expansion_all_invalid_returns_empty(corpus):
    tpl = corpus.template_for_task("res")
    transport, _ = make_transport(["no placeholders here", "only {object}"])
    cfg = ExpansionConfig(url="http://localhost/expand")
    work = InstructionCorpus(templates=dict(corpus.templates), variants=list(corpus.variants))
    before = len(work.variants)
    assert expand_paraphrases(cfg, work, tpl, 2, transport=transport) == []
    assert len(work.variants) == before
