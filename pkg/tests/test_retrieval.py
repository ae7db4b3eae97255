from __future__ import annotations

import re

from conftest import LLM, scripted
from kerap.gateway import LlmSettings
from kerap.kg_store import PolarityLexicon, ingest
from kerap.linkage import LinkResult
from kerap.retrieval import EMPTY_KNOWLEDGE, Retriever, render_triple

LEX = PolarityLexicon()
TRIPLE_LINE = re.compile(r"^\(.*\)$", re.MULTILINE)


def echo_summary(req):
    """Summary that lists the rendered triples it was given."""
    return "Summary: " + " ".join(TRIPLE_LINE.findall(req.messages[-1].content))


def link_to(entity, name, mention="mention"):
    return LinkResult(mention, entity, name, 1, ())


def test_pravastatin_only(write_kg):
    store = ingest(
        *write_kg(
            [("D1", "Cognitive dysfunction", "disease"), ("P1", "Pravastatin", "drug")],
            [("P1", "Not treats", "D1")],
        )
    )
    bundle = Retriever(scripted(echo_summary), store, LEX).retrieve(link_to("D1", "Cognitive dysfunction"))
    assert bundle.positive_summary == EMPTY_KNOWLEDGE
    assert "pravastatin" in bundle.negative_summary.lower()
    assert bundle.source_counts == (0, 1)


def test_isolated_entity(write_kg):
    store = ingest(*write_kg([("A", "Alone", "disease")], []))
    gw = scripted(echo_summary)
    bundle = Retriever(gw, store, LEX).retrieve(link_to("A", "Alone"))
    assert (bundle.positive_summary, bundle.negative_summary) == (EMPTY_KNOWLEDGE, EMPTY_KNOWLEDGE)
    assert bundle.source_counts == (0, 0)
    assert bundle.usage.total_tokens == 0
    assert gw.requests == []


def _five_three(write_kg):
    ents = [("D", "Target", "disease")] + [(f"N{i}", f"Neighbor {i}", "drug") for i in range(8)]
    tris = [(f"N{i}", "Associates", "D") for i in range(4)] + [("D", "Presents", "N4")]
    tris += [("N5", "Not treats", "D"), ("N6", "Contraindicated for", "D"), ("D", "NO_EFFECT", "N7")]
    return ingest(*write_kg(ents, tris))


def test_counts_and_polarity_separation(write_kg):
    store = _five_three(write_kg)
    gw = scripted(echo_summary)
    bundle = Retriever(gw, store, LEX).retrieve(link_to("D", "Target"))
    assert bundle.source_counts == (5, 3)
    assert bundle.positive_summary and bundle.negative_summary
    assert bundle.usage == gw.ledger()[0].usage + gw.ledger()[1].usage

    prompts = [r.messages[-1].content for r in gw.requests]
    pos_prompt = next(p for p in prompts if "indicate or support" in p)
    neg_prompt = next(p for p in prompts if "negate or exclude" in p)
    assert len(TRIPLE_LINE.findall(pos_prompt)) == 5
    assert len(TRIPLE_LINE.findall(neg_prompt)) == 3
    hood = store.neighborhood("D", LEX)
    for t in hood.positive:
        assert pos_prompt.count(render_triple(store, t)) == 1
        assert render_triple(store, t) not in neg_prompt
    for t in hood.negative:
        assert neg_prompt.count(render_triple(store, t)) == 1
        assert render_triple(store, t) not in pos_prompt


def test_cap_bounds_source_counts(write_kg):
    store = _five_three(write_kg)
    bundle = Retriever(scripted(echo_summary), store, LEX, cap=2).retrieve(link_to("D", "Target"))
    assert bundle.source_counts == (2, 2)


def test_triples_rendered_with_names(write_kg):
    store = _five_three(write_kg)
    rendered = [render_triple(store, t) for t in store.neighborhood("D", LEX).negative]
    assert rendered == [
        "(Neighbor 6, Contraindicated for, Target)",
        "(Target, NO_EFFECT, Neighbor 7)",
        "(Neighbor 5, Not treats, Target)",
    ]


def test_cache_hit_spends_nothing(write_kg, tmp_path):
    store = _five_three(write_kg)
    gw = scripted(echo_summary)
    r = Retriever(gw, store, LEX, cache_dir=tmp_path / "bundles")
    first = r.retrieve(link_to("D", "Target", "first mention"))
    second = r.retrieve(link_to("D", "Target", "other mention"))
    assert len(gw.requests) == 2
    assert second.disease == "other mention"
    assert second.positive_summary == first.positive_summary
    assert len(list((tmp_path / "bundles").glob("*.json"))) == 1

    # a fresh retriever reads the disk cache
    gw2 = scripted(echo_summary)
    again = Retriever(gw2, store, LEX, cache_dir=tmp_path / "bundles").retrieve(link_to("D", "Target", "first mention"))
    assert gw2.requests == []
    assert again == first


def test_cache_key_inputs(write_kg):
    store = _five_three(write_kg)
    gw = scripted(echo_summary)
    base = Retriever(gw, store, LEX).cache_key("D")
    assert Retriever(gw, store, LEX, cap=3).cache_key("D") != base
    assert Retriever(gw, store, PolarityLexicon(negative_markers=("not",))).cache_key("D") != base
    assert Retriever(gw, store, LEX, llm=LlmSettings(model="other")).cache_key("D") != base
    assert Retriever(gw, store, LEX, llm=LLM).cache_key("D") == base
    assert Retriever(gw, store, LEX).cache_key("N1") != base
