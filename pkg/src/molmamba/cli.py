"""Command-line entry point.

Every command writes a run manifest next to its outputs: ``<dir>/manifest.json``
when ``--out`` is a directory, ``<file>.manifest.json`` when it is a file.
Exit codes: 0 success, 1 usage or validation error, 2 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

import molmamba
from molmamba.config import TrainConfig, load_config
from molmamba.errors import MolMambaError, ValidationError
from molmamba.fragmenter import FragmentVocab, build_vocabulary, fragment_molecule
from molmamba.model import MolMamba, featurize_corpus
from molmamba.molgraph import canonicalize, read_molecules, write_molecules
from molmamba.synth import synth_corpus
from molmamba.tensor import checkpoint, no_grad
from molmamba.training.loop import evaluate, finetune, pretrain

log = logging.getLogger("molmamba")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Collects what a manifest records while a command executes."""

    def __init__(self, command: str, args: argparse.Namespace, config: TrainConfig | None):
        self.command = command
        self.args = args
        self.config = config
        self.inputs: dict[str, str] = {}
        self.started = time.perf_counter()
        self.timings: dict[str, float] = {}

    def input(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        if not p.is_file():
            raise ValidationError(f"input file {path} does not exist")
        self.inputs[str(p)] = _sha256(p)
        return p

    def lap(self, name: str, since: float) -> float:
        now = time.perf_counter()
        self.timings[name] = now - since
        return now

    def write_manifest(self, out: Path, outputs: list[Path]) -> Path:
        target = out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")
        self.timings["total"] = time.perf_counter() - self.started
        manifest = {
            "command": self.command,
            "argv": list(getattr(self.args, "argv", [])),
            "config": self.config.to_dict() if self.config else None,
            "inputs": self.inputs,
            "outputs": {str(p): _sha256(p) for p in outputs},
            "seed": self.config.seed if self.config else getattr(self.args, "seed", None),
            "version": molmamba.__version__,
            "timings": self.timings,
        }
        target.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return target


def _config(args) -> TrainConfig:
    return load_config(args.config, seed=args.seed)


def _out_dir(path: str) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise ValidationError(f"--out {path} exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _out_file(path: str) -> Path:
    out = Path(path)
    if out.is_dir():
        raise ValidationError(f"--out {path} is a directory; expected a file path")
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(args, config: TrainConfig, vocab: FragmentVocab, run: Run) -> MolMamba:
    state = checkpoint.load(run.input(args.checkpoint))
    head = [name for name in state if name.startswith("head.")]
    n_tasks = int(state["head.mlp.fc2.b"].shape[0]) if head else 0
    model = MolMamba(config, vocab.size, n_tasks=n_tasks)
    model.load_state_dict(state, strict=True)
    return model


# ------------------------------------------------------------------ commands
def cmd_synth_data(args) -> int:
    run = Run("synth-data", args, None)
    out = _out_file(args.out)
    t = time.perf_counter()
    write_molecules(out, synth_corpus(args.molecules, args.seed, args.descriptor_seed))
    run.lap("generate", t)
    run.write_manifest(out, [out])
    return 0


def cmd_build_vocab(args) -> int:
    config = _config(args)
    run = Run("build-vocab", args, config)
    molecules = read_molecules(run.input(args.corpus), lenient=args.lenient)
    out = _out_file(args.out)
    t = time.perf_counter()
    size = args.size if args.size is not None else config.vocab_size
    vocab = build_vocabulary(molecules, size, config.max_pattern_atoms)
    run.lap("mine", t)
    vocab.save(out)
    run.write_manifest(out, [out])
    log.info("vocabulary of %d patterns written to %s", vocab.size, out)
    return 0


def cmd_fragment(args) -> int:
    run = Run("fragment", args, None)
    molecules = read_molecules(run.input(args.corpus), lenient=args.lenient)
    vocab = FragmentVocab.load(run.input(args.vocab))
    out = _out_file(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        for mol in molecules:
            canon, atom_order = canonicalize(mol)
            frag = fragment_molecule(canon, vocab)
            assignment = np.empty(mol.n_atoms, dtype=np.int64)
            assignment[atom_order] = frag.assignment
            record = {
                "id": mol.id,
                "assignment": assignment.tolist(),
                "fragments": frag.frag_vocab_ids.tolist(),
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
    run.write_manifest(out, [out])
    return 0


def cmd_pretrain(args) -> int:
    config = _config(args)
    run = Run("pretrain", args, config)
    molecules = read_molecules(run.input(args.corpus), lenient=args.lenient)
    vocab = FragmentVocab.load(run.input(args.vocab))
    out = _out_dir(args.out)
    t = time.perf_counter()
    features = featurize_corpus(molecules, vocab, config)
    t = run.lap("featurize", t)
    result = pretrain(features, vocab.size, config)
    run.lap("train", t)
    ckpt, curves = out / "checkpoint.ckpt", out / "curves.csv"
    checkpoint.save(ckpt, result.best_state)
    curves.write_text(result.curves_csv(), encoding="utf-8")
    run.write_manifest(out, [ckpt, curves])
    log.info("best validation epoch %d", result.best_epoch)
    return 0


def cmd_finetune(args) -> int:
    config = _config(args)
    run = Run("finetune", args, config)
    molecules = read_molecules(run.input(args.corpus), lenient=args.lenient)
    vocab = FragmentVocab.load(run.input(args.vocab))
    state = checkpoint.load(run.input(args.checkpoint)) if args.checkpoint else None
    out = _out_dir(args.out)
    t = time.perf_counter()
    features = featurize_corpus(molecules, vocab, config)
    t = run.lap("featurize", t)
    report, models = finetune(features, args.task, vocab.size, config, state=state, folds=args.folds)
    run.lap("train", t)
    outputs = []
    for k, model in enumerate(models):
        path = out / f"model-fold{k}.ckpt"
        checkpoint.save(path, model.state_dict())
        outputs.append(path)
    metrics = out / "metrics.json"
    metrics.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    outputs.append(metrics)
    run.write_manifest(out, outputs)
    return 0


def cmd_evaluate(args) -> int:
    config = _config(args)
    run = Run("evaluate", args, config)
    molecules = read_molecules(run.input(args.corpus), lenient=args.lenient)
    vocab = FragmentVocab.load(run.input(args.vocab))
    model = _load_model(args, config, vocab, run)
    if model.head is None:
        raise ValidationError("checkpoint has no prediction head; fine-tune it first")
    out = _out_file(args.out)
    result = evaluate(model, featurize_corpus(molecules, vocab, config), args.task)
    out.write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    run.write_manifest(out, [out])
    return 0


def cmd_inspect(args) -> int:
    """Per-atom node weights: the feature sum of the graph-SSM output, in input atom order."""
    config = _config(args)
    run = Run("inspect", args, config)
    molecules = read_molecules(run.input(args.corpus), lenient=args.lenient)
    vocab = FragmentVocab.load(run.input(args.vocab))
    model = _load_model(args, config, vocab, run)
    out = _out_file(args.out)
    with open(out, "w", encoding="utf-8") as fh, no_grad():
        for feat in featurize_corpus(molecules, vocab, config):
            _, mg = model.structure(feat)
            weights = np.zeros(feat.mol.n_atoms)
            canonical = feat.ordering.perm
            weights[feat.atom_order[canonical]] = mg.y.data.sum(axis=1)
            fh.write(json.dumps({"id": feat.id, "node_weights": weights.tolist()}) + "\n")
    run.write_manifest(out, [out])
    return 0


# -------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="molmamba", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, handler, *, corpus=True, vocab=False, config=False, ckpt=None, task=False):
        p = sub.add_parser(name)
        p.set_defaults(handler=handler)
        p.add_argument("--out", required=True)
        if corpus:
            p.add_argument("--corpus", "--in", dest="corpus", required=True)
            p.add_argument("--lenient", action="store_true", help="warn on unknown molecule keys instead of failing")
        if vocab:
            p.add_argument("--vocab", required=True)
        if config:
            p.add_argument("--config")
            p.add_argument("--seed", type=int)
        if ckpt is not None:
            p.add_argument("--checkpoint", required=ckpt)
        if task:
            p.add_argument("--task", required=True)
        return p

    synth = add("synth-data", cmd_synth_data, corpus=False)
    synth.add_argument("--molecules", type=int, required=True)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--descriptor-seed", type=int, default=0)
    vocab = add("build-vocab", cmd_build_vocab, config=True)
    vocab.add_argument("--size", type=int)
    add("fragment", cmd_fragment, vocab=True)
    add("pretrain", cmd_pretrain, vocab=True, config=True)
    fine = add("finetune", cmd_finetune, vocab=True, config=True, ckpt=False, task=True)
    fine.add_argument("--folds", type=int, default=1)
    add("evaluate", cmd_evaluate, vocab=True, config=True, ckpt=True, task=True)
    add("inspect", cmd_inspect, vocab=True, config=True, ckpt=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = int(os.environ.get("MOLMAMBA_THREADS", "1"))
    try:
        if args.command == "synth-data" and args.molecules < 1:
            raise ValidationError("--molecules must be >= 1")
        with threadpool_limits(limits=max(threads, 1)):
            return args.handler(args)
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (MolMambaError, FloatingPointError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
