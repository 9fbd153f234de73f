"""Molecule data model, JSONL ingestion and derived graph matrices."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from molmamba.errors import ParseError, ValidationError

log = logging.getLogger(__name__)

# Descriptor families and their row counts: E-state, molecular property,
# quantum chemical, charge.
SEGMENTS: tuple[tuple[str, int], ...] = (("S", 25), ("M", 55), ("Q", 7), ("C", 25))
N_DESCRIPTORS = sum(width for _, width in SEGMENTS)
SEGMENT_OF_ROW = np.repeat(np.arange(len(SEGMENTS)), [width for _, width in SEGMENTS])
NORMALIZED_CLAMP = 10.0

BOND_ORDERS = (1, 2, 3, 4)  # 4 = aromatic
_REQUIRED_KEYS = ("id", "atoms", "pos", "bonds")
_OPTIONAL_KEYS = ("labels", "desc")

assert N_DESCRIPTORS == 112 and [w for _, w in SEGMENTS] == [25, 55, 7, 25]


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class AtomRecord:
    z: int
    charge: int = 0


@dataclass(frozen=True)
class EDescriptorVector:
    """Descriptor matrix of shape (112, 2): raw value and corpus-normalized value."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (N_DESCRIPTORS, 2):
            raise ValidationError(f"descriptor matrix must be ({N_DESCRIPTORS}, 2), got {values.shape}")
        if not np.isfinite(values[:, 0]).all():
            raise ValidationError("descriptor raw values must be finite")
        if self.normalized and np.abs(values[:, 1]).max() > NORMALIZED_CLAMP:
            raise ValidationError("normalized descriptors must lie in [-10, 10]")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def from_raw(cls, raw: Sequence[float]) -> EDescriptorVector:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape != (N_DESCRIPTORS,):
            raise ValidationError(f"expected {N_DESCRIPTORS} raw descriptors, got {raw.shape[0] if raw.ndim else 0}")
        return cls(np.stack([raw, np.zeros_like(raw)], axis=1))

    @property
    def raw(self) -> np.ndarray:
        return self.values[:, 0]

    def segment(self, name: str) -> np.ndarray:
        start = 0
        for seg, width in SEGMENTS:
            if seg == name:
                return self.values[start : start + width]
            start += width
        raise KeyError(name)


@dataclass(frozen=True)
class Molecule:
    id: str
    atoms: tuple[AtomRecord, ...]
    positions: np.ndarray
    bonds: tuple[tuple[int, int, int], ...]
    labels: dict[str, float] | None = None
    descriptors: EDescriptorVector | None = None

    def __post_init__(self):
        atoms = tuple(self.atoms)
        positions = np.array(self.positions, dtype=np.float64).reshape(-1, 3) if len(self.positions) else np.zeros((0, 3))
        bonds = tuple((int(i), int(j), int(o)) for i, j, o in self.bonds)
        n = len(atoms)
        if n < 1:
            raise ValidationError(f"molecule {self.id!r}: at least one atom required")
        if positions.shape != (n, 3):
            raise ValidationError(f"molecule {self.id!r}: {positions.shape[0]} positions for {n} atoms")
        if not np.isfinite(positions).all():
            raise ValidationError(f"molecule {self.id!r}: non-finite coordinates")
        for atom in atoms:
            if atom.z < 1:
                raise ValidationError(f"molecule {self.id!r}: element number must be positive, got {atom.z}")
        seen = set()
        for i, j, order in bonds:
            if not (0 <= i < n and 0 <= j < n):
                raise ValidationError(f"molecule {self.id!r}: bond ({i}, {j}) out of range for {n} atoms")
            if i == j:
                raise ValidationError(f"molecule {self.id!r}: self-bond on atom {i}")
            if order not in BOND_ORDERS:
                raise ValidationError(f"molecule {self.id!r}: bond order {order} not in {BOND_ORDERS}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValidationError(f"molecule {self.id!r}: duplicate bond {key}")
            seen.add(key)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "positions", _frozen(positions))
        object.__setattr__(self, "bonds", bonds)
        if self.labels is not None:
            object.__setattr__(self, "labels", {str(k): float(v) for k, v in self.labels.items()})

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    @property
    def elements(self) -> np.ndarray:
        return np.array([a.z for a in self.atoms], dtype=np.int64)

    def neighbors(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.atoms]
        for i, j, _ in self.bonds:
            out[i].append(j)
            out[j].append(i)
        return out

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_atoms, dtype=np.int64)
        for i, j, _ in self.bonds:
            deg[i] += 1
            deg[j] += 1
        return deg


@dataclass(frozen=True)
class GraphMatrices:
    adjacency: np.ndarray
    distance: np.ndarray
    degrees: np.ndarray = field(repr=False)


# ---------------------------------------------------------------- ingestion
def parse_molecule(record: str, line: int | None = None, lenient: bool = False) -> Molecule:
    """Decode one JSONL line into a validated :class:`Molecule`."""
    try:
        obj = json.loads(record)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON at column {exc.colno}: {exc.msg}", line) from exc
    if not isinstance(obj, dict):
        raise ParseError("record is not a JSON object", line)
    unknown = sorted(set(obj) - set(_REQUIRED_KEYS) - set(_OPTIONAL_KEYS))
    if unknown:
        message = f"unknown keys {unknown}"
        if not lenient:
            raise ValidationError(message if line is None else f"line {line}: {message}")
        log.warning("line %s: ignoring %s", line, message)
    missing = [k for k in _REQUIRED_KEYS if k not in obj]
    if missing:
        raise ParseError(f"missing keys {missing}", line)
    try:
        atoms = tuple(_atom(a) for a in obj["atoms"])
        positions = [[float(c) for c in p] for p in obj["pos"]]
        if any(len(p) != 3 for p in positions):
            raise ParseError("every position must have 3 coordinates", line)
        bonds = []
        for b in obj["bonds"]:
            if len(b) != 3 or not all(isinstance(v, int) and not isinstance(v, bool) for v in b):
                raise ParseError(f"bond {b!r} must be [i, j, order] integers", line)
            bonds.append(tuple(b))
        labels = obj.get("labels")
        if labels is not None and not isinstance(labels, dict):
            raise ParseError("labels must be an object", line)
        desc = obj.get("desc")
        descriptors = EDescriptorVector.from_raw(desc) if desc is not None else None
        return Molecule(
            id=str(obj["id"]),
            atoms=atoms,
            positions=np.array(positions, dtype=np.float64).reshape(-1, 3),
            bonds=tuple(bonds),
            labels=labels,
            descriptors=descriptors,
        )
    except ValidationError as exc:
        if isinstance(exc, ParseError) or line is None:
            raise
        raise ValidationError(f"line {line}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad field value: {exc}", line) from exc


def _atom(value) -> AtomRecord:
    if not isinstance(value, dict) or set(value) - {"z", "charge"} or "z" not in value:
        raise ParseError(f"atom {value!r} must be {{'z': int, 'charge': int}}")
    z, charge = value["z"], value.get("charge", 0)
    if not isinstance(z, int) or not isinstance(charge, int):
        raise ParseError(f"atom {value!r}: z and charge must be integers")
    return AtomRecord(z=z, charge=charge)


def serialize_molecule(mol: Molecule) -> str:
    obj: dict = {
        "id": mol.id,
        "atoms": [{"z": a.z, "charge": a.charge} for a in mol.atoms],
        "pos": mol.positions.tolist(),
        "bonds": [list(b) for b in mol.bonds],
    }
    if mol.labels is not None:
        obj["labels"] = mol.labels
    if mol.descriptors is not None:
        obj["desc"] = mol.descriptors.raw.tolist()
    return json.dumps(obj, separators=(",", ":"))


def read_molecules(path: str | Path, lenient: bool = False) -> list[Molecule]:
    molecules = []
    with open(path, encoding="utf-8") as fh:
        for number, text in enumerate(fh, start=1):
            if text.strip():
                molecules.append(parse_molecule(text, line=number, lenient=lenient))
    return molecules


def write_molecules(path: str | Path, molecules: Iterable[Molecule]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for mol in molecules:
            fh.write(serialize_molecule(mol) + "\n")


# ----------------------------------------------------------------- matrices
def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def graph_matrices(mol: Molecule) -> GraphMatrices:
    n = mol.n_atoms
    adjacency = np.zeros((n, n), dtype=np.float64)
    for i, j, _ in mol.bonds:
        adjacency[i, j] = adjacency[j, i] = 1.0
    return GraphMatrices(
        adjacency=_frozen(adjacency),
        distance=_frozen(pairwise_distances(mol.positions)),
        degrees=_frozen(adjacency.sum(axis=1).astype(np.int64)),
    )


# ------------------------------------------------------------- relabelling
def relabel(mol: Molecule, perm: Sequence[int]) -> Molecule:
    """Molecule whose atom ``k`` is ``mol``'s atom ``perm[k]``; bonds stored as sorted (i<j) pairs."""
    perm = np.asarray(perm, dtype=np.int64)
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(len(perm))
    bonds = []
    for i, j, order in mol.bonds:
        a, b = int(inverse[i]), int(inverse[j])
        bonds.append((min(a, b), max(a, b), order))
    return replace(
        mol,
        atoms=tuple(mol.atoms[p] for p in perm),
        positions=mol.positions[perm],
        bonds=tuple(sorted(bonds)),
    )


def canonical_permutation(mol: Molecule) -> np.ndarray:
    """Atom order that depends only on the labelled geometry, not on file order.

    Colours start from (element, charge, degree, sorted distances to every
    other atom) and are refined with neighbour colour/bond/distance multisets
    until the partition stops splitting.  Atoms that remain indistinguishable
    keep their input order.
    """
    n = mol.n_atoms
    dist = pairwise_distances(mol.positions)
    degrees = mol.degrees()
    nbrs: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for i, j, order in mol.bonds:
        nbrs[i].append((j, order))
        nbrs[j].append((i, order))
    keys = [(mol.atoms[i].z, mol.atoms[i].charge, int(degrees[i]), tuple(np.sort(dist[i]).tolist())) for i in range(n)]
    colors = _rank(keys)
    n_classes = len(set(colors))
    while True:
        keys = [
            (colors[i], tuple(sorted((colors[j], order, float(dist[i, j])) for j, order in nbrs[i])))
            for i in range(n)
        ]
        colors = _rank(keys)
        refined = len(set(colors))
        if refined == n_classes:
            break
        n_classes = refined
    return np.array(sorted(range(n), key=lambda i: (colors[i], i)), dtype=np.int64)


def canonicalize(mol: Molecule) -> tuple[Molecule, np.ndarray]:
    perm = canonical_permutation(mol)
    return relabel(mol, perm), perm


def _rank(keys: list) -> list[int]:
    table = {key: rank for rank, key in enumerate(sorted(set(keys)))}
    return [table[key] for key in keys]


# ------------------------------------------------------------- descriptors
def normalize_descriptors(corpus: Sequence[Molecule]) -> list[Molecule]:
    """Fill the normalized column with per-descriptor z-scores over ``corpus``.

    Population standard deviation; zero-variance descriptors map to 0 and
    everything is clamped to [-10, 10].
    """
    for mol in corpus:
        if mol.descriptors is None:
            raise ValidationError(f"molecule {mol.id!r} has no descriptor rows")
    if not corpus:
        return []
    raw = np.stack([mol.descriptors.raw for mol in corpus])
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    z = np.where(constant, 0.0, (raw - mean) / np.where(constant, 1.0, std))
    z = np.clip(z, -NORMALIZED_CLAMP, NORMALIZED_CLAMP)
    out = []
    for mol, row in zip(corpus, z):
        values = np.stack([mol.descriptors.raw, row], axis=1)
        out.append(replace(mol, descriptors=EDescriptorVector(values, normalized=True)))
    return out


_COMPOSITION_ELEMENTS = (1, 6, 7, 8, 9, 15, 16, 17, 35, 53)


def _composition_stats(mol: Molecule) -> np.ndarray:
    z = mol.elements
    counts = [np.count_nonzero(z == e) for e in _COMPOSITION_ELEMENTS]
    counts.append(np.count_nonzero(~np.isin(z, _COMPOSITION_ELEMENTS)))
    return np.array(counts + [mol.n_atoms, mol.n_bonds], dtype=np.float64)


def _degree_histogram(mol: Molecule) -> np.ndarray:
    return np.bincount(np.minimum(mol.degrees(), 6), minlength=7).astype(np.float64)


def _bond_order_counts(mol: Molecule) -> np.ndarray:
    orders = [o for _, _, o in mol.bonds]
    return np.array([orders.count(o) for o in BOND_ORDERS], dtype=np.float64)


def _charge_stats(mol: Molecule) -> np.ndarray:
    charges = np.array([a.charge for a in mol.atoms], dtype=np.float64)
    return np.array([charges.sum(), (charges > 0).sum(), (charges < 0).sum(), np.abs(charges).sum()])


def _distance_moments(mol: Molecule) -> np.ndarray:
    n = mol.n_atoms
    if n < 2:
        return np.zeros(5)
    dist = pairwise_distances(mol.positions)
    pairs = np.sort(dist[np.triu_indices(n, k=1)])
    mean = math.fsum(pairs) / len(pairs)
    second = math.fsum(np.sort(pairs * pairs)) / len(pairs)
    std = math.sqrt(max(second - mean * mean, 0.0))
    bonded = sorted(dist[i, j] for i, j, _ in mol.bonds)
    bond_mean = math.fsum(bonded) / len(bonded) if bonded else 0.0
    gyration = math.sqrt(math.fsum(np.sort(pairs * pairs)) / (n * n))
    return np.array([mean, std, float(pairs[-1]), bond_mean, gyration])


def synth_descriptors(mol: Molecule, seed: int) -> EDescriptorVector:
    """Deterministic stand-in descriptors built from permutation-invariant statistics.

    Each family is a fixed random linear mix (drawn from ``seed``) of
    log-compressed statistics: composition and degrees feed the E-state rows,
    composition, degrees and bond orders the property rows, distance moments
    alone the quantum rows, and charges plus composition the charge rows.
    """
    rng = np.random.default_rng(seed)
    comp = np.log1p(_composition_stats(mol))
    deg = np.log1p(_degree_histogram(mol))
    bonds = np.log1p(_bond_order_counts(mol))
    charge = np.sign(_charge_stats(mol)) * np.log1p(np.abs(_charge_stats(mol)))
    geom = _distance_moments(mol)
    sources = {
        "S": np.concatenate([comp, deg]),
        "M": np.concatenate([comp, deg, bonds]),
        "Q": geom,
        "C": np.concatenate([charge, comp]),
    }
    rows = []
    for name, width in SEGMENTS:
        feats = sources[name]
        weights = rng.normal(size=(width, feats.size))
        rows.append(weights @ feats)
    return EDescriptorVector.from_raw(np.concatenate(rows))
