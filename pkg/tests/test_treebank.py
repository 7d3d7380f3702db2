import json

import numpy as np
import pytest
from hypothesis import given

from treepool.treebank import (OOV, ConstituencyTree, Node, Record, TreeGraph, TreeParseError, TreeSizeError,
                               Vocabulary, build_tree, induced_tree, parse_bracketed, read_jsonl,
                               render_bracketed, to_graph, tree_depth, write_jsonl)

from conftest import tree_strategy

SIX = "(S (NP (PRP it)) (VP (VBZ works)))"


def naive_render(tree, i=None):
    i = tree.root if i is None else i
    n = tree.nodes[i]
    if not n.children:
        return n.label
    return "(" + " ".join([n.label] + [naive_render(tree, c) for c in n.children]) + ")"


def test_parse_six_node_example():
    t = parse_bracketed(SIX)
    # tokens are nodes: S NP PRP it VP VBZ works
    assert t.n_nodes == 7
    assert t.nodes[t.root].label == "S"
    assert t.tokens() == ["it", "works"]
    assert len(t.leaves()) == 2


def test_preorder_ids():
    t = parse_bracketed(SIX)
    assert t.labels() == ["S", "NP", "PRP", "it", "VP", "VBZ", "works"]
    assert t.nodes[1].parent == 0 and t.nodes[4].parent == 0
    assert t.nodes[0].children == [1, 4]


def test_premise_shape():
    t = parse_bracketed("(NP (PRP$ their) (NNS studies))")
    assert t.n_nodes == 5
    assert t.tokens() == ["their", "studies"]
    assert all(t.is_preterminal(c) for c in t.nodes[0].children)


def test_render_matches_independent_printer():
    t = parse_bracketed("  (S   (NP (PRP it))\n (VP (VBZ works)))")
    assert render_bracketed(t) == naive_render(t) == SIX


def test_single_node_renders_in_brackets():
    t = ConstituencyTree([Node(0, "NN", None)])
    assert render_bracketed(t) == "(NN)"
    assert parse_bracketed("(NN)").n_nodes == 1


@pytest.mark.parametrize("text,offset,msg", [
    ("(S (NP", 7, "unbalanced '('"),
    ("(S (NP x)))", 11, "unbalanced ')'"),
    ("(S x) (T y)", 7, "multiple roots"),
    ("(S ())", 4, "empty label"),
    ("(S (NP x) ()", 11, "empty label"),
    ("", 1, "empty input"),
    ("x (S y)", 1, "token outside brackets"),
])
def test_parse_errors(text, offset, msg):
    with pytest.raises(TreeParseError) as exc:
        parse_bracketed(text)
    assert exc.value.offset == offset
    assert msg in str(exc.value)


def test_error_offset_counts_utf8_bytes():
    with pytest.raises(TreeParseError) as exc:
        parse_bracketed("(S (NP é)")
    assert exc.value.offset == len("(S (NP é)".encode()) + 1


def test_size_cap():
    text = "(S " + " ".join(f"(X{i} w)" for i in range(20)) + ")"
    with pytest.raises(TreeSizeError):
        parse_bracketed(text, max_nodes=10)
    assert parse_bracketed(text, max_nodes=None).n_nodes == 41


def test_chain_graph():
    g = to_graph(parse_bracketed("(A (B (C c)))"))
    assert g.a_fwd[0, 1] == g.a_fwd[1, 2] == g.a_fwd[2, 3] == 1
    assert g.a_fwd.sum() == 3
    assert g.leaf_mask.tolist() == [0, 0, 0, 1]


@given(tree_strategy(15))
def test_graph_invariants(tree):
    g = to_graph(tree)
    assert np.array_equal(g.a_bwd, g.a_fwd.T)
    assert np.array_equal(g.d_fwd, g.a_fwd.sum(axis=1))
    assert np.array_equal(g.leaf_mask, (g.d_fwd == 0).astype(float))
    assert g.a_fwd.sum() == tree.n_nodes - 1
    non_root = [i for i in range(tree.n_nodes) if i != tree.root]
    assert np.all(g.d_bwd[non_root] == 1) and g.d_bwd[tree.root] == 0


@given(tree_strategy(15))
def test_round_trip(tree):
    again = parse_bracketed(render_bracketed(tree))
    assert again.labels() == tree.labels()
    assert [n.children for n in again.nodes] == [n.children for n in tree.nodes]
    assert render_bracketed(again) == render_bracketed(tree)


@given(tree_strategy(15))
def test_tree_invariants(tree):
    tree.validate()
    assert sum(1 for n in tree.nodes if n.parent is None) == 1
    assert tree.descendants(tree.root) == list(range(tree.n_nodes))


def test_validate_rejects_inconsistent_links():
    nodes = [Node(0, "S", None, [1]), Node(1, "x", None)]
    with pytest.raises(ValueError):
        ConstituencyTree(nodes).validate()


def test_induced_tree():
    t = parse_bracketed(SIX)
    sub = induced_tree(t, [0, 1, 4])
    assert render_bracketed(sub) == "(S NP VP)"
    with pytest.raises(ValueError):
        induced_tree(t, [1, 4])
    with pytest.raises(ValueError):
        induced_tree(t, [])


def test_build_tree_and_depth():
    t = build_tree("S", [build_tree("NP", ["it"]), "x"])
    assert render_bracketed(t) == "(S (NP it) x)"
    assert tree_depth(t) == 3


def test_vocabulary_namespaces_and_oov():
    t = parse_bracketed("(S (NN Dog) (VB runs))")
    v = Vocabulary.build([t])
    assert v.tags[OOV] == 0 and v.tokens[OOV] == 1
    assert v.index("NN", False) != v.index("NN", True)
    assert v.index("unseen", True) == 1 and v.index("ZZ", False) == 0
    assert v.index("dog", True) == 1  # case-sensitive by default
    low = Vocabulary.build([t], lowercase_tokens=True)
    assert low.index("DOG", True) == low.index("dog", True) != 1
    assert Vocabulary.from_json(json.loads(json.dumps(v.to_json()))).digest() == v.digest()


def test_feature_ids_follow_vocab():
    t = parse_bracketed(SIX)
    v = Vocabulary.build([t])
    g = to_graph(t, v)
    assert g.feature_ids[3] == v.index("it", True)
    assert g.feature_ids[0] == v.index("S", False)


def test_jsonl_round_trip(tmp_path):
    recs = [Record("a", "claim", parse_bracketed(SIX)), Record("b", "other", parse_bracketed("(X y)"))]
    path = tmp_path / "d.jsonl"
    write_jsonl(path, recs)
    back = read_jsonl(path)
    assert [(r.id, r.label, render_bracketed(r.tree)) for r in back] == [
        ("a", "claim", SIX), ("b", "other", "(X y)")]


def test_jsonl_reports_bad_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "label": "c", "tree": "(S (NP"}\n')
    with pytest.raises(ValueError, match="bad.jsonl:1"):
        read_jsonl(path)


def test_from_edges():
    g = TreeGraph.from_edges(3, [(0, 1), (0, 2)])
    assert g.leaf_mask.tolist() == [0, 1, 1]
