"""Conflict predicate, transaction dependency graph, and heaviest-path
metrics. Two transactions conflict when they touch a common storage key and
at least one side writes it; commutative-add-only overlaps are exempt in
cadd-aware mode."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ValidationError
from .workload import AccessSet, StorageKey, Transaction, Workload


@dataclass(frozen=True)
class DependencyGraph:
    """DAG over block-ordered transactions.

    Edges are (later_id, earlier_id) pairs: the later transaction depends on
    the earlier one. Acyclic by construction since every edge points from a
    higher id to a strictly lower one. `edge_keys` annotates each edge with
    the storage keys that justify it; it is derived data and excluded from
    equality.
    """

    n: int
    edges: frozenset[tuple[int, int]]
    weights: tuple[int, ...]
    edge_keys: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "edges", frozenset((int(j), int(i)) for j, i in self.edges))
        object.__setattr__(self, "weights", tuple(int(w) for w in self.weights))
        if len(self.weights) != self.n:
            raise ValidationError(f"expected {self.n} weights, got {len(self.weights)}")
        for w in self.weights:
            if w < 1:
                raise ValidationError(f"vertex weights must be positive, got {w}")
        for j, i in self.edges:
            if not 0 <= i < j < self.n:
                raise ValidationError(f"edge ({j},{i}) must point from a later id to an earlier id")

    @property
    def total_weight(self) -> int:
        return sum(self.weights)

    def dependents(self) -> list[list[int]]:
        """For each id, the sorted ids that depend on it."""
        out: list[list[int]] = [[] for _ in range(self.n)]
        for j, i in self.edges:
            out[i].append(j)
        for lst in out:
            lst.sort()
        return out

    def dependencies(self) -> list[list[int]]:
        """For each id, the sorted ids it depends on."""
        out: list[list[int]] = [[] for _ in range(self.n)]
        for j, i in self.edges:
            out[j].append(i)
        for lst in out:
            lst.sort()
        return out


@dataclass(frozen=True)
class PathReport:
    critical_weight: int
    critical_path: tuple[int, ...]
    total_weight: int


def _pair_conflict(x: AccessSet, y: AccessSet, cadd_aware: bool, write_cadd_conflicts: bool) -> bool:
    if not cadd_aware:
        # Commutative adds degrade to plain read+write accesses.
        x_write = x.writes | x.cadd_keys
        y_write = y.writes | y.cadd_keys
        return bool(x_write & (y.reads | y_write)) or bool(y_write & (x.reads | x_write))
    x_cadds = x.cadd_keys
    y_cadds = y.cadd_keys
    y_vs_write = y.reads | y.writes | (y_cadds if write_cadd_conflicts else frozenset())
    x_vs_write = x.reads | x.writes | (x_cadds if write_cadd_conflicts else frozenset())
    if x.writes & y_vs_write or y.writes & x_vs_write:
        return True
    return bool(x_cadds & y.reads) or bool(y_cadds & x.reads)


def conflicts(
    a: Transaction,
    b: Transaction,
    cadd_aware: bool = False,
    *,
    write_cadd_conflicts: bool = True,
) -> bool:
    """True iff the two transactions have a storage conflict.

    Plain mode treats commutative adds as ordinary read+write accesses. In
    cadd-aware mode a key conflicts unless both sides touch it with cadds
    only; `write_cadd_conflicts=False` additionally exempts a plain write on
    one side against a cadd on the other (sound under in-order commits, kept
    behind a flag because the conservative default is the baseline).
    """
    if a.id == b.id:
        raise ValidationError("conflicts() requires two distinct transactions")
    return _pair_conflict(a.access, b.access, cadd_aware, write_cadd_conflicts)


def build_graph(
    workload: Workload,
    cadd_aware: bool = False,
    *,
    write_cadd_conflicts: bool = True,
) -> DependencyGraph:
    """Build the dependency graph via per-key access indexes.

    Produces exactly the edge set of the naive pairwise conflicts() scan
    (the normative oracle), in O(sum of per-key conflicting pairs).
    """
    readers: dict[StorageKey, list[int]] = {}
    writers: dict[StorageKey, list[int]] = {}
    cadders: dict[StorageKey, list[int]] = {}
    for tx in workload:
        for key in tx.access.reads:
            readers.setdefault(key, []).append(tx.id)
        for key in tx.access.writes:
            writers.setdefault(key, []).append(tx.id)
        for key in tx.access.cadd_keys:
            cadders.setdefault(key, []).append(tx.id)

    edge_keys: dict[tuple[int, int], set[StorageKey]] = {}
    all_keys = set(readers) | set(writers) | set(cadders)
    for key in all_keys:
        r = readers.get(key, ())
        w = writers.get(key, ())
        c = cadders.get(key, ())
        if cadd_aware:
            write_like = set(w)
            touch_vs_write = set(r) | set(w) | (set(c) if write_cadd_conflicts else set())
            pairs = {(a, b) for a in write_like for b in touch_vs_write if a != b}
            pairs |= {(a, b) for a in c for b in r if a != b}
        else:
            write_like = set(w) | set(c)
            touching = set(r) | write_like
            pairs = {(a, b) for a in write_like for b in touching if a != b}
        for a, b in pairs:
            edge = (max(a, b), min(a, b))
            edge_keys.setdefault(edge, set()).add(key)

    frozen = {edge: frozenset(keys) for edge, keys in edge_keys.items()}
    return DependencyGraph(
        n=len(workload),
        edges=frozenset(frozen),
        weights=tuple(tx.gas for tx in workload),
        edge_keys=frozen,
    )


def heaviest_from(g: DependencyGraph) -> tuple[int, ...]:
    """For each tx, the weight of the heaviest dependency chain it heads:
    its own gas plus the heaviest chain among its dependents."""
    hf = list(g.weights)
    dependents = g.dependents()
    for i in range(g.n - 1, -1, -1):
        best = 0
        for j in dependents[i]:
            if hf[j] > best:
                best = hf[j]
        hf[i] += best
    return tuple(hf)


def critical_path(g: DependencyGraph) -> PathReport:
    """Vertex-weighted longest path, computed exactly by DP over reverse-id
    order. Ties are broken toward the lowest id so the reported path is
    deterministic."""
    if g.n == 0:
        return PathReport(critical_weight=0, critical_path=(), total_weight=0)
    hf = heaviest_from(g)
    dependents = g.dependents()
    best = max(hf)
    start = min(i for i in range(g.n) if hf[i] == best)
    path = [start]
    current = start
    while hf[current] > g.weights[current]:
        target = hf[current] - g.weights[current]
        current = min(j for j in dependents[current] if hf[j] == target)
        path.append(current)
    return PathReport(critical_weight=best, critical_path=tuple(path), total_weight=g.total_weight)


# ---------------------------------------------------------------------------
# Export formats
# ---------------------------------------------------------------------------


def graph_to_json_dict(g: DependencyGraph) -> dict:
    return {
        "n": g.n,
        "weights": list(g.weights),
        "edges": sorted([j, i] for j, i in g.edges),
    }


def graph_from_json_dict(data: dict) -> DependencyGraph:
    try:
        return DependencyGraph(
            n=int(data["n"]),
            edges=frozenset((int(j), int(i)) for j, i in data["edges"]),
            weights=tuple(int(w) for w in data["weights"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed graph JSON: {exc}") from None


def graph_to_edgelist(g: DependencyGraph) -> str:
    """Edge-list text: a weights header comment, then one `j i` line per edge."""
    lines = ["# weights " + " ".join(str(w) for w in g.weights)]
    for j, i in sorted(g.edges):
        lines.append(f"{j} {i}")
    return "\n".join(lines) + "\n"
