"""Conflict predicate and dependency graph tests, checked against the
pairwise and path-enumeration oracles."""

import random

import pytest

from txpar import (
    AccessSet,
    DependencyGraph,
    StorageKey,
    Transaction,
    ValidationError,
    Workload,
    build_graph,
    conflicts,
    critical_path,
    gen_payments,
    gen_token_distribution,
    graph_from_json_dict,
    graph_to_edgelist,
    graph_to_json_dict,
    heaviest_from,
)

from oracles import oracle_critical_weight, oracle_edges, oracle_heaviest_from, random_workload

K = StorageKey("c", "K")


def _tx(i, reads=(), writes=(), cadds=(), gas=10):
    return Transaction(
        id=i,
        sender=f"s{i}",
        gas=gas,
        access=AccessSet(frozenset(reads), frozenset(writes), tuple(cadds)),
    )


def test_write_read_conflicts_in_both_modes():
    a = _tx(0, writes={K})
    b = _tx(1, reads={K})
    assert conflicts(a, b) is True
    assert conflicts(a, b, cadd_aware=True) is True


def test_disjoint_key_sets_never_conflict():
    a = _tx(0, writes={StorageKey("c", "x")})
    b = _tx(1, reads={StorageKey("c", "y")})
    assert conflicts(a, b) is False
    assert conflicts(a, b, cadd_aware=True) is False


def test_cadd_vs_cadd_exempt_only_in_cadd_aware_mode():
    a = _tx(0, cadds=[(K, 1)])
    b = _tx(1, cadds=[(K, 2)])
    assert conflicts(a, b) is True
    assert conflicts(a, b, cadd_aware=True) is False


def test_cadd_vs_read_conflicts_in_both_modes():
    # Reordering the pair changes the read result, so this must stay an edge.
    a = _tx(0, cadds=[(K, 1)])
    b = _tx(1, reads={K})
    assert conflicts(a, b) is True
    assert conflicts(a, b, cadd_aware=True) is True
    assert conflicts(b, a, cadd_aware=True) is True


def test_write_vs_cadd_conservative_default_and_relaxed_mode():
    a = _tx(0, writes={K})
    b = _tx(1, cadds=[(K, 1)])
    assert conflicts(a, b, cadd_aware=True) is True
    assert conflicts(a, b, cadd_aware=True, write_cadd_conflicts=False) is False
    # relaxing never affects read involvement
    c = _tx(2, reads={K}, cadds=[(K, 1)])
    assert conflicts(a, c, cadd_aware=True, write_cadd_conflicts=False) is True


def test_conflicts_rejects_same_id():
    a = _tx(0, writes={K})
    with pytest.raises(ValidationError):
        conflicts(a, a)


def test_build_graph_single_sender_clique():
    w = gen_token_distribution(5, senders=1, seed=0)
    g = build_graph(w)
    assert g.edges == frozenset((j, i) for j in range(5) for i in range(j))


def test_build_graph_payments_empty():
    assert build_graph(gen_payments(12, seed=0)).edges == frozenset()


def test_build_graph_four_tx_example_single_edge():
    # 4 txs; tx0 writes an entry read by tx2, others disjoint.
    w = Workload(
        transactions=(
            _tx(0, writes={K}, gas=30),
            _tx(1, writes={StorageKey("c", "a")}, gas=10),
            _tx(2, reads={K}, writes={StorageKey("c", "l")}, gas=10),
            _tx(3, writes={StorageKey("c", "b")}, gas=10),
        )
    )
    g = build_graph(w)
    assert g.edges == frozenset({(2, 0)})
    assert g.edge_keys[(2, 0)] == frozenset({K})


def test_edge_orientation_validated():
    with pytest.raises(ValidationError):
        DependencyGraph(n=3, edges=frozenset({(0, 2)}), weights=(1, 1, 1))


def test_critical_path_no_edges_max_vertex():
    g = DependencyGraph(n=3, edges=frozenset(), weights=(5, 7, 3))
    report = critical_path(g)
    assert report.critical_weight == 7
    assert report.critical_path == (1,)
    assert report.total_weight == 15


def test_critical_path_chain():
    g = DependencyGraph(n=3, edges=frozenset({(1, 0), (2, 1)}), weights=(10, 10, 10))
    report = critical_path(g)
    assert report.critical_weight == 30
    assert report.critical_path == (0, 1, 2)


DIAMOND = DependencyGraph(
    n=4,
    edges=frozenset({(1, 0), (2, 0), (3, 1), (3, 2)}),
    weights=(1, 2, 3, 1),
)


def test_critical_path_diamond_matches_enumeration():
    assert oracle_critical_weight(DIAMOND) == 5
    report = critical_path(DIAMOND)
    assert report.critical_weight == 5
    assert report.critical_path == (0, 2, 3)


def test_heaviest_from_examples():
    g = DependencyGraph(n=3, edges=frozenset(), weights=(5, 7, 3))
    assert heaviest_from(g) == (5, 7, 3)
    chain = DependencyGraph(n=3, edges=frozenset({(1, 0), (2, 1)}), weights=(10, 10, 10))
    assert heaviest_from(chain) == (30, 20, 10)
    # Enumeration gives (5, 3, 4, 1) on the diamond: tx1 heads only 1->3.
    assert oracle_heaviest_from(DIAMOND) == [5, 3, 4, 1]
    assert heaviest_from(DIAMOND) == (5, 3, 4, 1)


def test_build_graph_matches_pairwise_oracle():
    rng = random.Random(20240)
    for trial in range(120):
        w = random_workload(rng, max_n=20)
        for cadd_aware in (False, True):
            assert build_graph(w, cadd_aware).edges == frozenset(oracle_edges(w, cadd_aware)), (
                trial,
                cadd_aware,
            )
        assert build_graph(w, True, write_cadd_conflicts=False).edges == frozenset(
            oracle_edges(w, True, write_cadd_conflicts=False)
        )


def test_build_graph_matches_oracle_on_wider_instances():
    rng = random.Random(77)
    for _ in range(15):
        w = random_workload(rng, max_n=64, key_pool=12)
        assert build_graph(w).edges == frozenset(oracle_edges(w))


def test_critical_weight_matches_enumeration_on_small_dags():
    rng = random.Random(99)
    from oracles import random_dag

    for _ in range(200):
        g = random_dag(rng, max_n=12 if rng.random() < 0.2 else 7)
        assert critical_path(g).critical_weight == oracle_critical_weight(g)
        assert list(heaviest_from(g)) == oracle_heaviest_from(g)


def test_critical_path_is_a_real_path_with_matching_weight():
    rng = random.Random(123)
    from oracles import random_dag

    for _ in range(100):
        g = random_dag(rng, max_n=10)
        report = critical_path(g)
        assert list(report.critical_path) == sorted(report.critical_path)
        assert sum(g.weights[i] for i in report.critical_path) == report.critical_weight
        for a, b in zip(report.critical_path, report.critical_path[1:]):
            assert (b, a) in g.edges


def test_removing_an_edge_never_increases_critical_weight():
    rng = random.Random(7)
    from oracles import random_dag

    for _ in range(100):
        g = random_dag(rng, max_n=9)
        if not g.edges:
            continue
        drop = rng.choice(sorted(g.edges))
        smaller = DependencyGraph(n=g.n, edges=g.edges - {drop}, weights=g.weights)
        assert critical_path(smaller).critical_weight <= critical_path(g).critical_weight


def test_cadd_aware_edges_subset_of_plain():
    rng = random.Random(55)
    for _ in range(80):
        w = random_workload(rng, max_n=16)
        assert build_graph(w, True).edges <= build_graph(w, False).edges


def test_graph_json_round_trip():
    g = build_graph(gen_token_distribution(6, senders=2, seed=1))
    again = graph_from_json_dict(graph_to_json_dict(g))
    assert again == DependencyGraph(n=g.n, edges=g.edges, weights=g.weights)


def test_graph_edgelist_format():
    text = graph_to_edgelist(DIAMOND)
    lines = text.strip().splitlines()
    assert lines[0] == "# weights 1 2 3 1"
    assert lines[1:] == ["1 0", "2 0", "3 1", "3 2"]
