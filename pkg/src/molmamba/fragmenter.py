"""Principal-subgraph vocabulary mining and molecule fragmentation.

Vocabulary mining is byte-pair encoding lifted to graphs: every atom starts
as its own fragment, and each round merges the pair of bonded fragments whose
union pattern occurs most often across the corpus.  Occurrences are counted
without overlap inside a molecule, scanning candidate pairs in a fixed order,
so the recorded frequency is exactly the number of merges the round applied.
Fragmenting a new molecule replays the merge sequence in vocabulary order.
"""

from __future__ import annotations

import itertools
import json
from collections import Counter, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from molmamba.errors import ParseError, ValidationError
from molmamba.molgraph import Molecule

DEFAULT_MAX_PATTERN_ATOMS = 8


# ---------------------------------------------------------------- patterns
_signature_cache: dict[tuple, str] = {}


def pattern_signature(elements: Sequence[int], edges: Sequence[tuple[int, int, int]]) -> str:
    """Canonical string for a small labelled graph.

    ``edges`` use local indices into ``elements``.  Atoms are grouped by
    (element, degree) refined by neighbour classes, and the lexicographically
    smallest edge list over all class-preserving relabellings is kept, so
    isomorphic patterns share one signature.
    """
    key = (tuple(elements), tuple(edges))
    cached = _signature_cache.get(key)
    if cached is not None:
        return cached
    n = len(elements)
    nbrs: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for i, j, order in edges:
        nbrs[i].append((j, order))
        nbrs[j].append((i, order))
    base = [(elements[i], len(nbrs[i])) for i in range(n)]
    colors = _ranks(base)
    while True:
        refined = _ranks([(colors[i], tuple(sorted((colors[j], o) for j, o in nbrs[i]))) for i in range(n)])
        if len(set(refined)) == len(set(colors)):
            colors = refined
            break
        colors = refined
    blocks: dict[int, list[int]] = {}
    for atom in sorted(range(n), key=lambda a: colors[a]):
        blocks.setdefault(colors[atom], []).append(atom)
    ordered_blocks = [blocks[c] for c in sorted(blocks)]
    best = None
    for choice in itertools.product(*(itertools.permutations(b) for b in ordered_blocks)):
        order = [atom for block in choice for atom in block]
        position = {atom: k for k, atom in enumerate(order)}
        edge_list = sorted(
            (min(position[i], position[j]), max(position[i], position[j]), o) for i, j, o in edges
        )
        if best is None or edge_list < best[1]:
            best = (order, edge_list)
    order, edge_list = best
    atoms_part = ",".join(f"{elements[a]}.{len(nbrs[a])}" for a in order)
    edges_part = ",".join(f"{i}-{j}-{o}" for i, j, o in edge_list)
    signature = f"{atoms_part}|{edges_part}"
    _signature_cache[key] = signature
    return signature


def signature_size(signature: str) -> int:
    return signature.split("|", 1)[0].count(",") + 1


def singleton_signature(z: int) -> str:
    return pattern_signature([z], [])


def _ranks(keys: list) -> list[int]:
    table = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [table[k] for k in keys]


# ------------------------------------------------------------- vocabulary
@dataclass(frozen=True)
class VocabEntry:
    id: int
    pattern: str
    freq: int


class FragmentVocab:
    """Ordered fragment patterns; ids are dense and follow merge order."""

    def __init__(self, entries: Iterable[VocabEntry]):
        self.entries = list(entries)
        self._by_pattern = {}
        for k, entry in enumerate(self.entries):
            if entry.id != k:
                raise ValidationError(f"vocabulary ids must be dense, entry {k} has id {entry.id}")
            if entry.pattern in self._by_pattern:
                raise ValidationError(f"duplicate vocabulary pattern {entry.pattern!r}")
            self._by_pattern[entry.pattern] = entry.id

    @property
    def size(self) -> int:
        return len(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def id_of(self, pattern: str) -> int:
        return self._by_pattern[pattern]

    def __contains__(self, pattern: str) -> bool:
        return pattern in self._by_pattern

    def elements(self) -> set[int]:
        return {int(e.pattern.split(".", 1)[0]) for e in self.entries if signature_size(e.pattern) == 1}

    def merges(self) -> list[VocabEntry]:
        return [e for e in self.entries if signature_size(e.pattern) > 1]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"vocab_size": self.size}) + "\n")
            for e in self.entries:
                fh.write(json.dumps({"id": e.id, "pattern": e.pattern, "freq": e.freq}) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> FragmentVocab:
        with open(path, encoding="utf-8") as fh:
            lines = [(n, text) for n, text in enumerate(fh, start=1) if text.strip()]
        if not lines:
            raise ParseError("empty vocabulary file", 1)
        try:
            header = json.loads(lines[0][1])
            size = int(header["vocab_size"])
            entries = []
            for number, text in lines[1:]:
                obj = json.loads(text)
                if set(obj) != {"id", "pattern", "freq"}:
                    raise ParseError(f"vocabulary entry keys must be id/pattern/freq, got {sorted(obj)}", number)
                entries.append(VocabEntry(int(obj["id"]), str(obj["pattern"]), int(obj["freq"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"malformed vocabulary: {exc}") from exc
        if size != len(entries):
            raise ValidationError(f"vocabulary header says {size} entries, file has {len(entries)}")
        return cls(entries)


class _MergeState:
    """Mutable fragmentation of one molecule during mining or replay."""

    def __init__(self, mol: Molecule):
        self.mol = mol
        self.elements = [a.z for a in mol.atoms]
        self.owner = list(range(mol.n_atoms))  # atom -> fragment key (its minimum atom)
        self.members = {i: (i,) for i in range(mol.n_atoms)}
        self._bond_order = {}
        for i, j, o in mol.bonds:
            self._bond_order[(min(i, j), max(i, j))] = o
        self._candidates: list[tuple[tuple[int, int], str]] | None = None

    def candidates(self) -> list[tuple[tuple[int, int], str]]:
        """Bonded fragment pairs in scan order with the signature of their union."""
        if self._candidates is None:
            pairs = set()
            for i, j, _ in self.mol.bonds:
                a, b = self.owner[i], self.owner[j]
                if a != b:
                    pairs.add((min(a, b), max(a, b)))
            self._candidates = [(pair, self._union_signature(pair)) for pair in sorted(pairs)]
        return self._candidates

    def _union_signature(self, pair: tuple[int, int]) -> str:
        atoms = tuple(sorted(self.members[pair[0]] + self.members[pair[1]]))
        return self.signature(atoms)

    def signature(self, atoms: tuple[int, ...]) -> str:
        local = {a: k for k, a in enumerate(atoms)}
        edges = []
        for (i, j), o in self._bond_order.items():
            if i in local and j in local:
                edges.append((local[i], local[j], o))
        return pattern_signature([self.elements[a] for a in atoms], sorted(edges))

    def select(self, signature: str) -> list[tuple[int, int]]:
        """Non-overlapping occurrences of ``signature``, first-come in scan order."""
        used: set[int] = set()
        picked = []
        for pair, sig in self.candidates():
            if sig == signature and pair[0] not in used and pair[1] not in used:
                used.update(pair)
                picked.append(pair)
        return picked

    def counts(self, max_atoms: int, known: set[str]) -> Counter:
        out: Counter = Counter()
        for sig in {sig for _, sig in self.candidates()}:
            if sig not in known and signature_size(sig) <= max_atoms:
                out[sig] = len(self.select(sig))
        return out

    def merge(self, pairs: list[tuple[int, int]]) -> None:
        for a, b in pairs:
            atoms = tuple(sorted(self.members.pop(a) + self.members.pop(b)))
            key = atoms[0]
            self.members[key] = atoms
            for atom in atoms:
                self.owner[atom] = key
        if pairs:
            self._candidates = None


def build_vocabulary(
    corpus: Sequence[Molecule], target_size: int, max_pattern_atoms: int = DEFAULT_MAX_PATTERN_ATOMS
) -> FragmentVocab:
    """Mine a fragment vocabulary of at most ``target_size`` patterns."""
    if not corpus:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    element_counts = Counter(a.z for mol in corpus for a in mol.atoms)
    if target_size < len(element_counts):
        raise ValidationError(
            f"target size {target_size} is below the {len(element_counts)} element types in the corpus"
        )
    entries = [
        VocabEntry(k, singleton_signature(z), element_counts[z]) for k, z in enumerate(sorted(element_counts))
    ]
    # a pattern already in the vocabulary is never merged again, so replay
    # (which applies each pattern once, in order) reproduces mining exactly
    known = {e.pattern for e in entries}
    states = [_MergeState(mol) for mol in corpus]
    per_state = [s.counts(max_pattern_atoms, known) for s in states]
    totals: Counter = Counter()
    for c in per_state:
        totals.update(c)
    while len(entries) < target_size:
        if not totals:
            break
        signature, freq = min(totals.items(), key=lambda kv: (-kv[1], kv[0]))
        if freq < 2:
            break
        applied = 0
        known.add(signature)
        for k, state in enumerate(states):
            if per_state[k].get(signature, 0) == 0:
                continue
            pairs = state.select(signature)
            applied += len(pairs)
            state.merge(pairs)
            totals.subtract(per_state[k])
            per_state[k] = state.counts(max_pattern_atoms, known)
            totals.update(per_state[k])
        for k, state in enumerate(states):
            if signature in per_state[k]:
                totals[signature] -= per_state[k].pop(signature)
        totals = +totals
        entries.append(VocabEntry(len(entries), signature, applied))
    return FragmentVocab(entries)


# ----------------------------------------------------------- fragmentation
@dataclass(frozen=True)
class Fragmentation:
    """Partition of atoms into fragments.

    ``assignment[i]`` is the fragment ordinal of atom ``i``; fragment ordinals
    are numbered by ascending minimum atom index.
    """

    assignment: np.ndarray
    frag_vocab_ids: np.ndarray

    @property
    def h(self) -> int:
        return len(self.frag_vocab_ids)

    def members(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.assignment == f) for f in range(self.h)]


@dataclass(frozen=True)
class FragmentGraph:
    n_nodes: int
    edges: tuple[tuple[int, int], ...]

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_nodes, self.n_nodes))
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = 1.0
        return adj


@dataclass(frozen=True)
class NodeOrdering:
    perm: np.ndarray
    frag_pos: np.ndarray
    intra_pos: np.ndarray


def fragment_molecule(mol: Molecule, vocab: FragmentVocab) -> Fragmentation:
    known = vocab.elements()
    for atom in mol.atoms:
        if atom.z not in known:
            raise ValidationError(f"element {atom.z} of molecule {mol.id!r} is not in the vocabulary")
    state = _MergeState(mol)
    for entry in vocab.merges():
        if any(sig == entry.pattern for _, sig in state.candidates()):
            state.merge(state.select(entry.pattern))
    keys = sorted(state.members)
    ordinal = {key: k for k, key in enumerate(keys)}
    assignment = np.array([ordinal[state.owner[i]] for i in range(mol.n_atoms)], dtype=np.int64)
    vocab_ids = np.array([vocab.id_of(state.signature(state.members[key])) for key in keys], dtype=np.int64)
    frag = Fragmentation(assignment, vocab_ids)
    check_fragmentation(mol, frag)
    return frag


def check_fragmentation(mol: Molecule, frag: Fragmentation) -> None:
    """Raise unless ``frag`` is a disjoint cover of connected fragments."""
    assignment = np.asarray(frag.assignment)
    if assignment.shape != (mol.n_atoms,):
        raise ValidationError(f"assignment covers {assignment.shape} atoms, molecule has {mol.n_atoms}")
    if assignment.size and (assignment.min() < 0 or assignment.max() >= frag.h):
        raise ValidationError("assignment references a fragment ordinal outside 0..h-1")
    nbrs = mol.neighbors()
    for f, atoms in enumerate(frag.members()):
        if atoms.size == 0:
            raise ValidationError(f"fragment {f} is empty")
        inside = set(atoms.tolist())
        seen = {int(atoms[0])}
        queue = deque(seen)
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if v in inside and v not in seen:
                    seen.add(v)
                    queue.append(v)
        if seen != inside:
            raise ValidationError(f"fragment {f} of molecule {mol.id!r} is not connected")


def fragment_graph(mol: Molecule, frag: Fragmentation) -> FragmentGraph:
    edges = set()
    for i, j, _ in mol.bonds:
        a, b = int(frag.assignment[i]), int(frag.assignment[j])
        if a != b:
            edges.add((min(a, b), max(a, b)))
    return FragmentGraph(frag.h, tuple(sorted(edges)))


def sort_nodes(mol: Molecule, frag: Fragmentation) -> NodeOrdering:
    """Group atoms by fragment, then order each group by degree (high first).

    Fragments appear by ascending minimum atom index; degree ties fall back
    to atom index.
    """
    degrees = mol.degrees()
    members = frag.members()
    frag_order = sorted(range(frag.h), key=lambda f: int(members[f].min()))
    perm, frag_pos, intra_pos = [], [], []
    for f in frag_order:
        block = sorted(members[f].tolist(), key=lambda a: (-degrees[a], a))
        perm.extend(block)
        frag_pos.extend([f] * len(block))
        intra_pos.extend(range(len(block)))
    return NodeOrdering(
        perm=np.array(perm, dtype=np.int64),
        frag_pos=np.array(frag_pos, dtype=np.int64),
        intra_pos=np.array(intra_pos, dtype=np.int64),
    )


def trunk_path(graph: FragmentGraph) -> list[int]:
    """One diameter path of the fragment graph.

    The longest shortest path; among all of them the lexicographically
    smallest sequence of fragment ordinals is returned.
    """
    n = graph.n_nodes
    if n == 0:
        return []
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for i, j in graph.edges:
        nbrs[i].append(j)
        nbrs[j].append(i)
    for adj in nbrs:
        adj.sort()
    dist = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        dist[s, s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if dist[s, v] < 0:
                    dist[s, v] = dist[s, u] + 1
                    queue.append(v)
    diameter = int(dist.max())
    start = min(s for s in range(n) if dist[s].max() == diameter)
    ends = {t for t in range(n) if dist[start, t] == diameter}
    path = [start]
    for step in range(1, diameter + 1):
        u = path[-1]
        path.append(
            min(v for v in nbrs[u] if dist[start, v] == step and any(dist[v, t] == diameter - step for t in ends))
        )
    return path
