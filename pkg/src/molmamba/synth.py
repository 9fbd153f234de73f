"""Seeded synthetic molecule corpus for tests and the overfit task.

Molecules have 4-24 atoms drawn from C, N, O, S, F, a random spanning tree
plus up to three extra short-range bonds, and a 3D layout with ~1.5 A bonds.
Random bonds are single or double; about half the molecules carry a planted
N#C-S motif (the only source of triple bonds), recorded in the ``planted``
label.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from molmamba.molgraph import AtomRecord, Molecule, synth_descriptors

ELEMENTS = (6, 7, 8, 16, 9)
MIN_ATOMS, MAX_ATOMS = 4, 24
BOND_LENGTH = 1.5
# (element, element, element), (bond order a-b, bond order b-c)
MOTIF = ((7, 6, 16), (3, 1))


def contains_motif(mol: Molecule) -> bool:
    orders = {}
    for i, j, o in mol.bonds:
        orders[(i, j)] = orders[(j, i)] = o
    (za, zb, zc), (ab, bc) = MOTIF
    z = mol.elements
    for (a, b), o in orders.items():
        if o != ab or z[a] != za or z[b] != zb:
            continue
        for (b2, c), o2 in orders.items():
            if b2 == b and c != a and o2 == bc and z[c] == zc:
                return True
    return False


def _layout(rng: np.random.Generator, parents: list[int]) -> np.ndarray:
    n = len(parents) + 1
    pos = np.zeros((n, 3))
    for child, parent in enumerate(parents, start=1):
        best, best_gap = None, -1.0
        for _ in range(20):
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            candidate = pos[parent] + direction * (BOND_LENGTH + 0.05 * rng.normal())
            gap = np.min(np.linalg.norm(pos[:child] - candidate, axis=1)) if child else np.inf
            if gap > best_gap:
                best, best_gap = candidate, gap
            if gap >= 1.2:
                break
        pos[child] = best
    return pos


def synth_molecule(rng: np.random.Generator, mol_id: str, descriptor_seed: int = 0) -> Molecule:
    n = int(rng.integers(MIN_ATOMS, MAX_ATOMS + 1))
    parents = [int(rng.integers(0, k)) for k in range(1, n)]
    elements = [ELEMENTS[k] for k in rng.integers(0, len(ELEMENTS), size=n)]
    orders = {(parents[k - 1], k): (2 if rng.random() < 0.15 else 1) for k in range(1, n)}
    pos = _layout(rng, parents)

    if rng.random() < 0.5:
        # nitrile carbon u bonded to leaf v (N, triple) and to w (S, single)
        degree = np.zeros(n, dtype=int)
        for a, b in orders:
            degree[a] += 1
            degree[b] += 1
        leaves = [v for v in range(1, n) if degree[v] == 1]
        v = leaves[int(rng.integers(len(leaves)))]
        u = parents[v - 1]
        others = [w for (a, b) in orders for w in (a, b) if u in (a, b) and w not in (u, v)]
        w = others[int(rng.integers(len(others)))]
        elements[v], elements[u], elements[w] = MOTIF[0]
        orders[(min(u, v), max(u, v))] = MOTIF[1][0]
        orders[(min(u, w), max(u, w))] = MOTIF[1][1]
        direction = pos[v] - pos[u]
        pos[v] = pos[u] + direction / np.linalg.norm(direction) * 1.16

    n_extra = int(rng.integers(0, 4))
    dist = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    close = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in orders and dist[i, j] < 2.3]
    for k in rng.permutation(len(close))[:n_extra]:
        orders[close[k]] = 1

    charges = [int(rng.choice([-1, 1])) if z in (7, 8) and rng.random() < 0.05 else 0 for z in elements]
    mol = Molecule(
        id=mol_id,
        atoms=tuple(AtomRecord(z, c) for z, c in zip(elements, charges)),
        positions=pos,
        bonds=tuple((i, j, o) for (i, j), o in sorted(orders.items())),
    )
    z = mol.elements
    labels = {
        "planted": float(contains_motif(mol)),
        "size_score": 0.1 * n + 0.5 * float(np.count_nonzero(z == 8)) - 0.3 * float(np.count_nonzero(z == 16)),
    }
    return replace(mol, labels=labels, descriptors=synth_descriptors(mol, descriptor_seed))


def synth_corpus(n: int, seed: int, descriptor_seed: int = 0) -> list[Molecule]:
    if n < 1:
        raise ValueError("need at least one molecule")
    rng = np.random.default_rng(seed)
    return [synth_molecule(rng, f"syn-{seed}-{k:05d}", descriptor_seed) for k in range(n)]
