"""Knowledge graph storage: interning, indexing, traversal.

Triples are held in three parallel numpy arrays sorted by (subject,
relation, object) with a two-level CSR index on top: per-subject ranges
over the unique (subject, relation) pairs, and per-pair ranges over the
object column.  Lookup of neighbors(e, r) is a binary search inside the
subject's relation slice, so it stays O(log degree) even on graphs with
millions of triples.  All structures are read-only after load; concurrent
readers need no locking.
"""
from __future__ import annotations

from array import array
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, ParseError

INVERSE_SUFFIX = "_inverse"

# Documented budget for loading a 5.7M-triple knowledge base (index arrays
# plus interned vocabularies): peak additional RSS must stay under this.
MEMORY_BUDGET_BYTES = 2 * 1024**3


@dataclass(frozen=True)
class Triple:
    """One directed edge, by interned ids."""

    subject: int
    relation: int
    object: int


# A relation path is a sequence of relation ids, length 1..max_hops.
RelationPath = tuple[int, ...]


@dataclass(frozen=True)
class ReasoningPath:
    """A grounded relation path: a chain of adjacent triples."""

    triples: tuple[Triple, ...]

    def relation_sequence(self) -> RelationPath:
        return tuple(t.relation for t in self.triples)

    def entity_sequence(self) -> tuple[int, ...]:
        """Topic entity followed by the object of every hop."""
        if not self.triples:
            return ()
        return (self.triples[0].subject,) + tuple(t.object for t in self.triples)

    def terminal_entity(self) -> int:
        return self.triples[-1].object


class KnowledgeGraph:
    """Immutable interned triple store with a subject/relation CSR index."""

    def __init__(
        self,
        entities: list[str],
        relations: list[str],
        sub: np.ndarray,
        rel: np.ndarray,
        obj: np.ndarray,
        duplicates_dropped: int,
        inverses_added: bool,
    ):
        self.entities = entities
        self.relations = relations
        self._entity_ids = {name: i for i, name in enumerate(entities)}
        self._relation_ids = {name: i for i, name in enumerate(relations)}
        self._sub = sub
        self._rel = rel
        self._obj = obj
        self.duplicates_dropped = duplicates_dropped
        self.inverses_added = inverses_added
        self._build_index()
        for a in (self._sub, self._rel, self._obj, self._ent_off,
                  self._pair_rel, self._pair_obj_off):
            a.setflags(write=False)

    def _build_index(self) -> None:
        n = len(self._sub)
        n_ent = len(self.entities)
        if n == 0:
            self._ent_off = np.zeros(n_ent + 1, dtype=np.int64)
            self._pair_rel = np.empty(0, dtype=np.int32)
            self._pair_obj_off = np.zeros(1, dtype=np.int64)
            return
        # Runs of identical (subject, relation) are contiguous because the
        # triple arrays are sorted; pair k covers objects in
        # [_pair_obj_off[k], _pair_obj_off[k+1]).
        new_pair = np.empty(n, dtype=bool)
        new_pair[0] = True
        new_pair[1:] = (self._sub[1:] != self._sub[:-1]) | (self._rel[1:] != self._rel[:-1])
        starts = np.flatnonzero(new_pair)
        self._pair_rel = self._rel[starts].astype(np.int32)
        self._pair_obj_off = np.concatenate([starts, [n]]).astype(np.int64)
        pair_sub = self._sub[starts]
        counts = np.bincount(pair_sub, minlength=n_ent)
        self._ent_off = np.zeros(n_ent + 1, dtype=np.int64)
        np.cumsum(counts, out=self._ent_off[1:])

    # -- vocabulary ------------------------------------------------------

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_triples(self) -> int:
        return len(self._sub)

    def entity_id(self, surface: str) -> int | None:
        return self._entity_ids.get(surface)

    def relation_id(self, surface: str) -> int | None:
        return self._relation_ids.get(surface)

    def entity(self, eid: int) -> str:
        self._check_entity(eid)
        return self.entities[eid]

    def relation(self, rid: int) -> str:
        self._check_relation(rid)
        return self.relations[rid]

    def _check_entity(self, eid: int) -> None:
        if not 0 <= eid < len(self.entities):
            raise ValueError(f"unknown entity id {eid}")

    def _check_relation(self, rid: int) -> None:
        if not 0 <= rid < len(self.relations):
            raise ValueError(f"unknown relation id {rid}")

    # -- triples ---------------------------------------------------------

    def triple(self, i: int) -> Triple:
        if not 0 <= i < len(self._sub):
            raise ValueError(f"triple index {i} out of range")
        return Triple(int(self._sub[i]), int(self._rel[i]), int(self._obj[i]))

    def iter_triples(self) -> Iterator[Triple]:
        for s, r, o in zip(self._sub, self._rel, self._obj):
            yield Triple(int(s), int(r), int(o))

    def surface_triple(self, t: Triple) -> tuple[str, str, str]:
        return (self.entity(t.subject), self.relation(t.relation), self.entity(t.object))

    # -- lookup ----------------------------------------------------------

    def relations_of(self, eid: int) -> list[int]:
        """Relation ids leaving ``eid``, sorted ascending, no duplicates."""
        self._check_entity(eid)
        a, b = self._ent_off[eid], self._ent_off[eid + 1]
        return self._pair_rel[a:b].tolist()

    def neighbors(self, eid: int, rid: int) -> list[int]:
        """Object ids of (eid, rid, ?), sorted ascending.  Pure."""
        self._check_entity(eid)
        self._check_relation(rid)
        a, b = self._ent_off[eid], self._ent_off[eid + 1]
        k = a + int(np.searchsorted(self._pair_rel[a:b], rid))
        if k >= b or self._pair_rel[k] != rid:
            return []
        return self._obj[self._pair_obj_off[k]:self._pair_obj_off[k + 1]].tolist()

    def out_degree(self, eid: int) -> int:
        self._check_entity(eid)
        a, b = self._ent_off[eid], self._ent_off[eid + 1]
        if a == b:
            return 0
        return int(self._pair_obj_off[b] - self._pair_obj_off[a])

    # -- traversal -------------------------------------------------------

    def ground_relation_path(
        self, topic: int, path: Sequence[int], limit: int
    ) -> list[ReasoningPath]:
        """Depth-first grounding of ``path`` starting at ``topic``.

        Returns at most ``limit`` reasoning paths in lexicographic order of
        their entity-id sequences (children are explored in sorted object
        order, so plain DFS emission is already lexicographic).
        """
        if limit < 1:
            raise ValueError(f"limit must be >= 1, got {limit}")
        self._check_entity(topic)
        if not path:
            raise ValueError("relation path must be non-empty")
        for rid in path:
            self._check_relation(rid)
        out: list[ReasoningPath] = []
        chain: list[Triple] = []

        def walk(node: int, depth: int) -> bool:
            if depth == len(path):
                out.append(ReasoningPath(tuple(chain)))
                return len(out) >= limit
            rid = path[depth]
            for nxt in self.neighbors(node, rid):
                chain.append(Triple(node, rid, nxt))
                done = walk(nxt, depth + 1)
                chain.pop()
                if done:
                    return True
            return False

        walk(topic, 0)
        return out

    # -- reporting -------------------------------------------------------

    def summary(self) -> dict:
        return {
            "entities": self.n_entities,
            "relations": self.n_relations,
            "triples": self.n_triples,
            "duplicates_dropped": self.duplicates_dropped,
            "inverses_added": self.inverses_added,
        }

    def dump_lines(self) -> Iterator[str]:
        """Triples back in source form, one ``s|r|o`` line per triple."""
        ent, rel = self.entities, self.relations
        for s, r, o in zip(self._sub, self._rel, self._obj):
            yield f"{ent[s]}|{rel[r]}|{ent[o]}"


def load_kg(lines: Iterable[str], add_inverses: bool = False) -> KnowledgeGraph:
    """Parse ``subject|relation|object`` lines into an indexed graph.

    Fields are trimmed and must be non-empty; blank lines are skipped.
    Surfaces are interned in first-appearance order.  Duplicate triples are
    collapsed (counted in the summary) before inverse edges are added, so
    the duplicate count reflects the source file only.
    """
    entities: list[str] = []
    relations: list[str] = []
    ent_ids: dict[str, int] = {}
    rel_ids: dict[str, int] = {}
    subs = array("q")
    rels = array("q")
    objs = array("q")

    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split("|")
        if len(parts) != 3:
            raise ParseError(
                f"line {lineno}: expected 3 '|'-separated fields, got {len(parts)}"
            )
        s, r, o = (p.strip() for p in parts)
        if not s or not r or not o:
            raise ParseError(f"line {lineno}: empty field after trimming")
        si = ent_ids.get(s)
        if si is None:
            si = ent_ids[s] = len(entities)
            entities.append(s)
        ri = rel_ids.get(r)
        if ri is None:
            ri = rel_ids[r] = len(relations)
            relations.append(r)
        oi = ent_ids.get(o)
        if oi is None:
            oi = ent_ids[o] = len(entities)
            entities.append(o)
        subs.append(si)
        rels.append(ri)
        objs.append(oi)

    sub = np.frombuffer(subs, dtype=np.int64).copy() if subs else np.empty(0, np.int64)
    rel = np.frombuffer(rels, dtype=np.int64).copy() if rels else np.empty(0, np.int64)
    obj = np.frombuffer(objs, dtype=np.int64).copy() if objs else np.empty(0, np.int64)
    del subs, rels, objs

    sub, rel, obj, dropped = _sort_dedup(sub, rel, obj)

    if add_inverses:
        n_orig = len(relations)
        for name in relations:
            inv = name + INVERSE_SUFFIX
            if inv in rel_ids:
                raise ConfigError(
                    f"inverse relation name collides with existing relation: {inv!r}"
                )
        for r_id in range(n_orig):
            inv = relations[r_id] + INVERSE_SUFFIX
            rel_ids[inv] = len(relations)
            relations.append(inv)
        # Inverse of relation r is relation n_orig + r; the source arrays
        # are already duplicate-free, so the union needs only a re-sort.
        sub2 = np.concatenate([sub, obj])
        rel2 = np.concatenate([rel, rel + n_orig])
        obj2 = np.concatenate([obj, sub])
        sub, rel, obj, _ = _sort_dedup(sub2, rel2, obj2)

    sub32 = sub.astype(np.int32)
    rel32 = rel.astype(np.int32)
    obj32 = obj.astype(np.int32)
    return KnowledgeGraph(entities, relations, sub32, rel32, obj32, dropped, add_inverses)


def _sort_dedup(sub: np.ndarray, rel: np.ndarray, obj: np.ndarray):
    if len(sub) == 0:
        return sub, rel, obj, 0
    order = np.lexsort((obj, rel, sub))
    sub, rel, obj = sub[order], rel[order], obj[order]
    keep = np.empty(len(sub), dtype=bool)
    keep[0] = True
    keep[1:] = (sub[1:] != sub[:-1]) | (rel[1:] != rel[:-1]) | (obj[1:] != obj[:-1])
    dropped = int(len(sub) - keep.sum())
    if dropped:
        sub, rel, obj = sub[keep], rel[keep], obj[keep]
    return sub, rel, obj, dropped


def load_kg_path(path: str, add_inverses: bool = False) -> KnowledgeGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return load_kg(fh, add_inverses=add_inverses)


def surface_triples(p: ReasoningPath, g: KnowledgeGraph) -> tuple[tuple[str, str, str], ...]:
    return tuple(g.surface_triple(t) for t in p.triples)
