import sys

import numpy as np
import pytest

from molmamba.config import TrainConfig
from molmamba.fragmenter import build_vocabulary
from molmamba.molgraph import AtomRecord, Molecule
from molmamba.synth import synth_corpus


def make_molecule(elements, bonds, positions=None, mol_id="m", **kwargs):
    n = len(elements)
    if positions is None:
        positions = np.column_stack([1.5 * np.arange(n), np.zeros(n), np.zeros(n)])
    return Molecule(
        id=mol_id,
        atoms=tuple(AtomRecord(z, 0) for z in elements),
        positions=np.asarray(positions, dtype=np.float64),
        bonds=tuple(bonds),
        **kwargs,
    )


@pytest.fixture(scope="session")
def corpus():
    return synth_corpus(64, seed=3)


@pytest.fixture(scope="session")
def vocab(corpus):
    return build_vocabulary(corpus, 40)


@pytest.fixture
def tiny_config():
    return TrainConfig(
        width=8, state_size=4, gnn_f_layers=2, gnn_a_layers=2, mamba_layers=1, mt_layers=1,
        attn_heads=2, pe_width=4, epochs=2, batch_size=4, lr=1e-3,
    )


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(acceptance.RESULTS):
        terminalreporter.write_line(line)
