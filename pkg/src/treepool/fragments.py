"""Fragment extraction from trained pooling assignments."""
from __future__ import annotations

import hashlib
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .constraints import OracleKind, binary_validity_oracle
from .kernels import canonical_form, display_form
from .model import ForwardTrace, forward
from .treebank import ConstituencyTree, Record, parse_bracketed, to_graph

DEFAULT_THRESHOLD = 0.3


@dataclass
class NodeSet:
    nodes: tuple[int, ...]
    block: int
    cluster: int
    activation: float
    flags: dict[str, bool]
    canonical: str
    display: str

    @property
    def connected(self) -> bool:
        return self.flags[OracleKind.CONNECTED.value]


def components(tree: ConstituencyTree, nodes: Iterable[int]) -> list[list[int]]:
    """Connected components of a node set, ordered by their top node."""
    keep = set(nodes)
    tops = sorted(i for i in keep if tree.nodes[i].parent not in keep)
    out = []
    for t in tops:
        comp, stack = [], [t]
        while stack:
            i = stack.pop()
            comp.append(i)
            stack.extend(c for c in tree.nodes[i].children if c in keep)
        out.append(sorted(comp))
    return out


def largest_component(tree: ConstituencyTree, nodes: Iterable[int]) -> list[int]:
    comps = components(tree, nodes)
    return max(comps, key=lambda c: (len(c), -c[0])) if comps else []


def fragment_strings(tree: ConstituencyTree, nodes: Sequence[int]) -> tuple[str, str]:
    """Canonical and display strings; disconnected sets join their components with ``|``."""
    comps = components(tree, nodes)
    canon = " | ".join(canonical_form(tree, c) for c in comps)
    disp = " | ".join(display_form(tree, c) for c in comps)
    return canon, disp


def extract(trace: ForwardTrace, tree: ConstituencyTree, threshold: float = DEFAULT_THRESHOLD,
            blocks: Sequence[int] | None = None, largest_cc: bool = False) -> list[NodeSet]:
    """Threshold each cluster column into a node set, annotated with oracle flags.

    Deeper blocks use the cumulative assignment back to the input nodes; the
    final single-cluster block is skipped unless listed in ``blocks``.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    if trace.graph is None or trace.graph.n != tree.n_nodes:
        raise ValueError("trace does not belong to this tree")
    if blocks is None:
        blocks = range(max(len(trace.assignments) - 1, 1))
    out = []
    for b in blocks:
        p = trace.cumulative_assignment(b).data
        for c in range(p.shape[1]):
            nodes = [int(i) for i in np.nonzero(p[:, c] >= threshold)[0]]
            if largest_cc:
                nodes = largest_component(tree, nodes)
            if not nodes:
                continue
            flags = {k.value: binary_validity_oracle(trace.graph, nodes, k) for k in OracleKind}
            canon, disp = fragment_strings(tree, nodes)
            out.append(NodeSet(tuple(nodes), b, c, float(p[nodes, c].mean()), flags, canon, disp))
    return out


@dataclass
class FragmentRecord:
    fragment: str
    label: str
    frequency: int
    activation: float
    sources: list[str]
    flags: dict[str, bool]
    display: str

    def to_json(self) -> dict:
        return asdict(self)


def aggregate(samples: Iterable[tuple[str, str, Sequence[NodeSet]]]) -> list[FragmentRecord]:
    """Pool node sets of ``(sample_id, label, node_sets)`` into per-class records.

    A fragment is counted once per (sample, cluster) pair.
    """
    acc: dict[tuple[str, str], dict] = {}
    for sid, label, sets in samples:
        for ns in sets:
            key = (label, ns.canonical)
            if key not in acc:
                acc[key] = {"n": 0, "act": 0.0, "src": set(), "flags": ns.flags, "display": ns.display}
            e = acc[key]
            e["n"] += 1
            e["act"] += ns.activation
            e["src"].add(sid)
    recs = [FragmentRecord(canon, label, e["n"], e["act"] / e["n"], sorted(e["src"]), dict(e["flags"]),
                           e["display"]) for (label, canon), e in acc.items()]
    return sorted(recs, key=lambda r: (r.label, -r.frequency, r.fragment))


def class_unique(records: Sequence[FragmentRecord], classes: Sequence[str] | None = None
                 ) -> dict[str, list[FragmentRecord]]:
    """Per class, fragments seen for that class only, by frequency then canonical form."""
    classes = sorted({r.label for r in records} | set(classes or ()))
    if len(classes) < 2:
        raise ValueError("class_unique needs at least two classes")
    seen: dict[str, set[str]] = defaultdict(set)
    for r in records:
        seen[r.fragment].add(r.label)
    return {c: sorted((r for r in records if r.label == c and seen[r.fragment] == {c}),
                      key=lambda r: (-r.frequency, r.fragment)) for c in classes}


def flag_stats(records: Sequence[FragmentRecord]) -> dict[str, float]:
    """Frequency-weighted fraction of extracted node sets passing each oracle."""
    total = sum(r.frequency for r in records)
    return {k.value: (sum(r.frequency for r in records if r.flags[k.value]) / total if total else 0.0)
            for k in OracleKind}


def render_report(records: Sequence[FragmentRecord], top: int = 10, as_json: bool = False) -> str:
    header = "# class-unique fragments (frequency, mean activation, flags)"
    if not records:
        return json.dumps({"classes": {}, "stats": {}}, sort_keys=True) if as_json else header + "\n"
    classes = sorted({r.label for r in records})
    unique = class_unique(records) if len(classes) > 1 else {classes[0]: list(records)}
    stats = flag_stats(records)
    if as_json:
        return json.dumps({"classes": {c: [r.to_json() for r in unique[c][:top]] for c in unique},
                           "stats": stats, "n_records": len(records)}, sort_keys=True)
    lines = [header]
    for c in sorted(unique):
        lines.append(f"[{c}]")
        for r in unique[c][:top]:
            marks = "".join(k[0].upper() if v else "-" for k, v in sorted(r.flags.items()))
            lines.append(f"{r.frequency:6d}  {r.activation:.3f}  {marks}  {r.display}")
    lines.append("stats " + " ".join(f"{k}={v:.3f}" for k, v in sorted(stats.items())))
    return "\n".join(lines) + "\n"


def report_digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def extract_dataset(ckpt, records: Sequence[Record], threshold: float = DEFAULT_THRESHOLD,
                    largest_cc: bool = False) -> list[FragmentRecord]:
    """Run a checkpoint over ``records`` and aggregate every thresholded cluster."""
    samples = []
    for r in records:
        graph = to_graph(r.tree, ckpt.vocab)
        trace = forward(graph, ckpt.model_config, ckpt.params)
        samples.append((r.id, r.label, extract(trace, r.tree, threshold, largest_cc=largest_cc)))
    return aggregate(samples)


# ---------------------------------------------------------------------------
# planted-pattern matching


def _matches_at(pat: ConstituencyTree, pi: int, frag: ConstituencyTree, fi: int) -> bool:
    """``pat`` rooted at ``pi`` occurs at ``frag`` node ``fi`` with identical productions."""
    pn, fn = pat.nodes[pi], frag.nodes[fi]
    if pn.label != fn.label:
        return False
    if not pn.children:
        return True
    if len(pn.children) != len(fn.children):
        return False
    return all(_matches_at(pat, a, frag, b) for a, b in zip(pn.children, fn.children))


def _embeds(frag: ConstituencyTree, fi: int, pat: ConstituencyTree, pi: int) -> bool:
    """``frag`` rooted at ``fi`` is a partial fragment of ``pat`` at ``pi`` (ordered child subset)."""
    fn, pn = frag.nodes[fi], pat.nodes[pi]
    if fn.label != pn.label:
        return False
    j = 0
    for fc in fn.children:
        while j < len(pn.children) and not _embeds(frag, fc, pat, pn.children[j]):
            j += 1
        if j == len(pn.children):
            return False
        j += 1
    return True


def recovers_pattern(fragment: str, pattern: "str | ConstituencyTree", anchors: Sequence[str] = ()) -> bool:
    """Whether an extracted fragment is the planted pattern.

    True when the pattern occurs inside the fragment with the same productions
    (frontier nodes of the pattern may be expanded), or when the fragment is a piece of the pattern of
    at least two nodes that keeps an anchor token.  Disconnected fragments never
    match.
    """
    if "|" in fragment:
        return False
    pat = parse_bracketed(pattern) if isinstance(pattern, str) else pattern
    frag = parse_bracketed(fragment)
    if any(_matches_at(pat, pat.root, frag, i) for i in range(frag.n_nodes)):
        return True
    if frag.n_nodes < 2 or (anchors and not set(anchors) & set(frag.labels())):
        return False
    return any(_embeds(frag, frag.root, pat, i) for i in range(pat.n_nodes))
