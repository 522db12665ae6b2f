"""Shared test utilities: graph isomorphism and small graph builders."""

from __future__ import annotations

import networkx as nx

from esgkg.model import Entity, KnowledgeGraph, Provenance, Relationship, Stage
from esgkg.synth import SectionSpec, layout_bundle


def norm(text: str) -> str:
    return " ".join(str(text).casefold().split())


def to_nx(graph: KnowledgeGraph) -> nx.DiGraph:
    g = nx.DiGraph()
    for e in graph.entities:
        g.add_node(
            e.id,
            sig=(e.kind, e.metric_subtype, norm(e.label), norm(e.properties.get("code", ""))),
        )
    for r in graph.relationships:
        g.add_edge(r.subject, r.object, predicate=r.predicate)
    return g


def isomorphic(a: KnowledgeGraph, b: KnowledgeGraph) -> bool:
    """Same shape, same node signatures, same predicates; ids may differ."""
    ga, gb = to_nx(a), to_nx(b)
    if ga.number_of_nodes() != gb.number_of_nodes() or ga.number_of_edges() != gb.number_of_edges():
        return False
    return nx.is_isomorphic(
        ga,
        gb,
        node_match=lambda x, y: x["sig"] == y["sig"],
        edge_match=lambda x, y: x["predicate"] == y["predicate"],
    )


TEST_PROV = Provenance("test", "seg_01", "Test section", (1, 1))


def stamped(graph: KnowledgeGraph) -> KnowledgeGraph:
    """Give every entity without a source a fixed provenance record."""
    for e in graph.entities:
        if not e.provenance:
            e.provenance = [TEST_PROV]
    return graph


def metric(eid: str, subtype: str = "DirectMetric", label: str | None = None, **props) -> Entity:
    base = {"measurement_type": "Quantitative", "unit": "Number", "code": f"C-{eid}"}
    base.update(props)
    return Entity(eid, "Metric", label or f"Metric {eid}", f"About {eid}.", subtype, base, [TEST_PROV])


def model(eid: str, inputs=("x",)) -> Entity:
    return Entity(
        eid, "Model", f"Model {eid}", f"Computes {eid}.",
        properties={"equation": " + ".join(inputs), "input_variables": list(inputs)},
        provenance=[TEST_PROV],
    )


def clean_graph() -> KnowledgeGraph:
    """Small graph that satisfies every schema rule."""
    ents = [
        Entity("ind", "Industry", "Commercial Banks", "Banks.", properties={"sector": "Financials"}),
        Entity("fw", "ReportingFramework", "SASB", "Standards.", properties={"name": "SASB"}),
        Entity("cat", "Category", "Data Security", "Topic.", properties={"section_title": "Data Security"}),
        metric("m_direct"),
        metric("m_calc", "CalculatedMetric"),
        metric("m_in", "InputMetric"),
        model("mod"),
    ]
    rels = [
        Relationship("ind", "ReportUsing", "fw"),
        Relationship("fw", "Include", "cat"),
        Relationship("cat", "ConsistOf", "m_direct"),
        Relationship("cat", "ConsistOf", "m_calc"),
        Relationship("cat", "ConsistOf", "m_in"),
        Relationship("m_calc", "IsCalculatedBy", "mod"),
        Relationship("mod", "RequiresInputFrom", "m_in"),
    ]
    return stamped(KnowledgeGraph(ents, rels, Stage.CONSOLIDATED))


FINANCIAL_LINE_ITEMS = [
    "Net Income", "Return on Equity", "Total Assets", "Operating Revenue", "Tier 1 Capital",
    "Net Interest Margin", "Earnings per Share", "Total Deposits", "Loan Loss Provisions",
    "Operating Expenses", "Dividends Paid",
]


def commercial_banks_graph() -> KnowledgeGraph:
    """53 entities and 53 relationships; 11 metrics are financial line items.

    One Industry, one Framework, five Categories, one Model and 45 Metrics
    (one calculated, one input, 43 direct). Every metric hangs off exactly one
    category, so rejecting a metric cascades exactly one edge.
    """
    ents = [
        Entity("industry_cb_1_01", "Industry", "Commercial Banks", "Deposit-taking lenders."),
        Entity("framework_cb_1_01", "ReportingFramework", "SASB", "Standards.", properties={"name": "SASB"}),
    ]
    cats = [
        Entity(f"category_cb_{p}_01", "Category", f"Topic {p}", "Topic.", properties={"section_title": f"Topic {p}"})
        for p in range(3, 8)
    ]
    ents += cats
    mets = [metric(f"metric_cb_8_{i:02d}", "DirectMetric", label=f"Disclosure item {i}") for i in range(1, 33)]
    mets += [metric(f"metric_cb_9_{i:02d}", "DirectMetric", label=FINANCIAL_LINE_ITEMS[i - 1]) for i in range(1, 12)]
    calc = metric("metric_cb_10_01", "CalculatedMetric", label="Financed emissions intensity")
    inp = metric("metric_cb_10_02", "InputMetric", label="Financed emissions")
    mets += [calc, inp]
    mod = model("model_cb_10_01", inputs=("financed_emissions",))
    ents += mets + [mod]
    rels = [Relationship("industry_cb_1_01", "ReportUsing", "framework_cb_1_01")]
    rels += [Relationship("framework_cb_1_01", "Include", c.id) for c in cats]
    rels += [Relationship(cats[i % 5].id, "ConsistOf", m.id) for i, m in enumerate(mets)]
    rels += [Relationship(calc.id, "IsCalculatedBy", mod.id), Relationship(mod.id, "RequiresInputFrom", inp.id)]
    return stamped(KnowledgeGraph(ents, rels, Stage.CONSOLIDATED))


def strict_backend(rejected_labels=FINANCIAL_LINE_ITEMS):
    """Semantic judge that refuses the given labels and affirms everything else."""
    import json

    from esgkg.extraction import FunctionBackend
    from esgkg.extraction.backends import entity_from_semantic_prompt

    bad = {norm(x) for x in rejected_labels}

    def judge(req):
        e = entity_from_semantic_prompt(req.prompt)
        ok = e is not None and norm(e.get("label", "")) not in bad
        return json.dumps({"verdict": "yes" if ok else "no"})

    return FunctionBackend(judge)


def commercial_banks_like():
    """23 pages: cover, TOC and ten sections over pages 3-23."""
    sizes = [2, 3, 2, 2, 3, 2, 2, 2, 1, 2]
    titles = [
        "Introduction", "Data Security", "Financial Inclusion and Capacity Building",
        "Incorporation of ESG Factors in Credit Analysis", "Financed Emissions", "Business Ethics",
        "Systemic Risk Management", "Activity Metrics", "Climate Risk", "Appendix",
    ]
    specs = [SectionSpec(t, n, [f"Guidance on {t.lower()}."]) for t, n in zip(titles, sizes)]
    return layout_bundle("sasb_cb", "Commercial Banks", specs)
