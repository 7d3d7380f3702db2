import json

import pytest

from treepool.kernels import enumerate_fragments
from treepool.synth import SynthCorpusSpec, contains_pattern, generate, write_corpus
from treepool.treebank import parse_bracketed, read_jsonl, tree_depth


@pytest.fixture(scope="module")
def corpus():
    spec = SynthCorpusSpec(n_per_class=60, seed=11)
    return spec, generate(spec)


def test_balanced_and_sized(corpus):
    spec, recs = corpus
    labels = [r.label for r in recs]
    assert labels.count("claim") == labels.count("other") == 60
    assert all(r.tree.n_nodes <= spec.max_nodes for r in recs)
    assert len({r.id for r in recs}) == len(recs)


def test_positives_embed_pattern(corpus):
    spec, recs = corpus
    for r in recs:
        if r.label == "claim":
            assert contains_pattern(r.tree, spec.pattern_tree)
            assert "should" in r.tree.tokens()


def test_negatives_pattern_free_by_enumeration(corpus):
    spec, recs = corpus
    target = str(spec.pattern_tree)
    for r in recs:
        if r.label != "other":
            continue
        assert "should" not in r.tree.tokens()
        for node in r.tree.nodes:
            if node.label == "VP" and node.children:
                sub = r.tree.subtree(node.id)
                frags = {f.canonical for f in enumerate_fragments(sub, "sstk", max_nodes=sub.n_nodes)}
                assert target not in frags


def test_deterministic_bytes(tmp_path):
    spec = SynthCorpusSpec(n_per_class=20, seed=3)
    write_corpus(spec, tmp_path / "a.jsonl")
    write_corpus(spec, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    meta = json.loads((tmp_path / "a.jsonl.spec.json").read_text())
    assert meta["seed"] == 3 and meta["planted_pattern"] == spec.planted_pattern
    assert len(read_jsonl(tmp_path / "a.jsonl")) == 40
    other = SynthCorpusSpec(n_per_class=20, seed=4)
    write_corpus(other, tmp_path / "c.jsonl")
    assert (tmp_path / "c.jsonl").read_bytes() != (tmp_path / "a.jsonl").read_bytes()


def test_noise_flips_some_labels():
    recs = generate(SynthCorpusSpec(n_per_class=100, noise=0.2, seed=1))
    flipped = sum(1 for r in recs if not r.id.startswith(r.label))
    assert 20 <= flipped <= 60


def test_other_pattern():
    spec = SynthCorpusSpec(n_per_class=10, planted_pattern="(VP (VBZ suggests) (NP))",
                           anchor_tokens=("suggests",), seed=2)
    recs = generate(spec)
    for r in recs:
        assert contains_pattern(r.tree, spec.pattern_tree) == (r.label == "claim")


@pytest.mark.parametrize("kw", [
    {"classes": ("a",)},
    {"classes": ("a", "a")},
    {"noise": 0.5},
    {"max_depth": 3},
    {"anchor_tokens": ("maybe",)},
    {"planted_pattern": "(VP (MD should)"},
])
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        SynthCorpusSpec(**kw)


def test_contains_pattern_partial():
    pat = parse_bracketed("(VP (MD should) (VP))")
    assert contains_pattern(parse_bracketed("(S (NP x) (VP (MD should) (VP (VB be) (ADJP (JJ new)))))"), pat)
    assert not contains_pattern(parse_bracketed("(S (NP x) (VP (MD can) (VP (VB be))))"), pat)
    assert not contains_pattern(parse_bracketed("(S (VP (MD should) (NP (PRP it))))"), pat)


def test_depth_respected(corpus):
    spec, recs = corpus
    assert max(tree_depth(r.tree) for r in recs) <= spec.max_depth + 2
