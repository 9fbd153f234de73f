"""Per-molecule featurization and the composed encoder stack."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from molmamba.config import TrainConfig
from molmamba.encoders import AtomGNN, DescriptorEncoder, FragmentGNN
from molmamba.errors import ValidationError
from molmamba.fragmenter import (
    FragmentGraph,
    Fragmentation,
    FragmentVocab,
    NodeOrdering,
    fragment_graph,
    fragment_molecule,
    sort_nodes,
)
from molmamba.fuser import MTFuser, PredictionHead, mask_loss
from molmamba.gssm import MambaGraph, MGOutput, graph_gate, structure_targets
from molmamba.molgraph import (
    N_DESCRIPTORS,
    GraphMatrices,
    Molecule,
    canonicalize,
    graph_matrices,
    normalize_descriptors,
    synth_descriptors,
)
from molmamba.tensor import MLP, Module, Tensor, seeded_rng
from molmamba.tensor import ops
from molmamba.training.losses import distribution_loss


@dataclass
class MolFeatures:
    """Everything the model needs for one molecule, precomputed once.

    Atom indices refer to the canonical relabelling ``mol``; ``atom_order[k]``
    is the input-file index of canonical atom ``k``.
    """

    mol: Molecule
    atom_order: np.ndarray
    frag: Fragmentation
    graph: FragmentGraph
    frag_adjacency: np.ndarray
    ordering: NodeOrdering
    matrices: GraphMatrices
    gate: np.ndarray
    trunk_target: np.ndarray
    frag_target: np.ndarray
    descriptors: np.ndarray | None

    @property
    def id(self) -> str:
        return self.mol.id

    @property
    def labels(self) -> dict[str, float]:
        return self.mol.labels or {}


def featurize(mol: Molecule, vocab: FragmentVocab, shuffle_rng: np.random.Generator | None = None) -> MolFeatures:
    """Canonicalize, fragment and sort one molecule.

    With ``shuffle_rng`` the sequence order is a random permutation instead of
    the fragment/degree sort; fragment labels and ranks stay attached to
    their atoms.
    """
    canon, atom_order = canonicalize(mol)
    frag = fragment_molecule(canon, vocab)
    graph = fragment_graph(canon, frag)
    ordering = sort_nodes(canon, frag)
    if shuffle_rng is not None:
        shuffle = shuffle_rng.permutation(len(ordering.perm))
        ordering = NodeOrdering(ordering.perm[shuffle], ordering.frag_pos[shuffle], ordering.intra_pos[shuffle])
    matrices = graph_matrices(canon)
    trunk, present = structure_targets(graph, frag, vocab.size)
    descriptors = None
    if canon.descriptors is not None:
        descriptors = np.array(canon.descriptors.values)
    return MolFeatures(
        mol=canon,
        atom_order=atom_order,
        frag=frag,
        graph=graph,
        frag_adjacency=graph.adjacency(),
        ordering=ordering,
        matrices=matrices,
        gate=graph_gate(matrices.adjacency, matrices.distance, ordering.perm),
        trunk_target=trunk,
        frag_target=present,
        descriptors=descriptors,
    )


def prepare_corpus(molecules: Sequence[Molecule], descriptor_seed: int = 0) -> list[Molecule]:
    """Attach synthetic descriptors where a record has none, then z-score over the corpus."""
    filled = [
        mol if mol.descriptors is not None else replace(mol, descriptors=synth_descriptors(mol, descriptor_seed))
        for mol in molecules
    ]
    return normalize_descriptors(filled)


def featurize_corpus(
    molecules: Sequence[Molecule], vocab: FragmentVocab, config: TrainConfig
) -> list[MolFeatures]:
    shuffle_rng = None if config.use_sort else seeded_rng(config.seed + 7919)
    return [featurize(mol, vocab, shuffle_rng) for mol in prepare_corpus(molecules, config.descriptor_seed)]


class MolMamba(Module):
    """GNN_F, the Mamba-Graph stack, the descriptor encoder, the MT fuser and heads."""

    def __init__(self, config: TrainConfig, vocab_size: int, n_tasks: int = 0, seed: int | None = None):
        rng = seeded_rng(config.seed if seed is None else seed)
        width, inner = config.width, config.inner
        self.use_gssm = config.use_gssm
        self.gnn_f = FragmentGNN(rng, vocab_size, width, config.gnn_f_layers)
        self.gnn_a = AtomGNN(rng, width, config.gnn_a_layers, config.n_rbf, config.rbf_cutoff)
        self.mg = MambaGraph(
            rng,
            vocab_size,
            width=width,
            inner=inner,
            state_size=config.state_size,
            depth=config.mamba_layers,
            kernel=config.conv_kernel,
            frag_table=config.frag_table,
            rank_table=config.rank_table,
            pe_width=config.pe_width,
            use_pe=config.use_pe,
        )
        self.e_encoder = DescriptorEncoder(rng, width)
        self.mt = MTFuser(rng, width, inner, config.state_size, config.attn_heads, config.mt_layers, config.conv_kernel)
        self.mask_head = MLP(rng, width, width, width)
        self.head = PredictionHead(rng, width, n_tasks) if n_tasks else None

    # ------------------------------------------------------------- forward
    def structure(self, feat: MolFeatures) -> tuple[Tensor, MGOutput]:
        frag_feats = self.gnn_f(feat.frag.frag_vocab_ids, feat.frag_adjacency)
        atom_feats = self.gnn_a(feat.mol.elements, feat.matrices.adjacency, feat.matrices.distance)
        out = self.mg(atom_feats, feat.ordering, feat.frag, feat.gate if self.use_gssm else None)
        return frag_feats, out

    def pretrain_losses(
        self, feat: MolFeatures, tau: float, mask: np.ndarray | None = None
    ) -> dict[str, Tensor]:
        """Structure losses, plus the masked-descriptor loss when ``mask`` is given."""
        frag_feats, out = self.structure(feat)
        losses = {
            "d": distribution_loss(frag_feats, out.pooled, tau),
            "s": ops.binary_cross_entropy_with_logits(out.trunk_logits, feat.trunk_target),
            "f": ops.binary_cross_entropy_with_logits(out.frag_logits, feat.frag_target),
        }
        if mask is not None:
            values = self._descriptors(feat)
            tokens = self.e_encoder(values, mask)
            fused = self.mt(tokens, out.pooled)
            reconstruction = self.mask_head(fused[: N_DESCRIPTORS])
            target = self.e_encoder(values, np.zeros(N_DESCRIPTORS, dtype=bool)).data
            losses["mask"] = mask_loss(reconstruction, target, mask)
        return losses

    def fuse(self, feat: MolFeatures) -> Tensor:
        """Unmasked fused sequence: descriptor tokens, then GNN_F rows, then pooled MG rows."""
        frag_feats, out = self.structure(feat)
        tokens = self.e_encoder(self._descriptors(feat), np.zeros(N_DESCRIPTORS, dtype=bool))
        return self.mt(tokens, frag_feats, out.pooled)

    def predict(self, feat: MolFeatures) -> Tensor:
        if self.head is None:
            raise ValidationError("model has no prediction head; construct it with n_tasks > 0")
        return self.head(self.fuse(feat))

    @staticmethod
    def _descriptors(feat: MolFeatures) -> np.ndarray:
        if feat.descriptors is None:
            raise ValidationError(f"molecule {feat.id!r} has no descriptors")
        return feat.descriptors

    # --------------------------------------------------------------- state
    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy matching parameters in; returns the names left at their initial values."""
        own = dict(self.named_parameters())
        unexpected = sorted(set(state) - set(own))
        missing = sorted(set(own) - set(state))
        if strict and (unexpected or missing):
            raise ValidationError(f"checkpoint mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, value in state.items():
            if name not in own:
                continue
            if own[name].shape != value.shape:
                raise ValidationError(f"checkpoint shape mismatch for {name}: {value.shape} vs {own[name].shape}")
            own[name].data = np.array(value, dtype=np.float64)
        return missing
