"""Program learning: distillation, one-level deepening, greedy multi-program loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import grad as G
from .dsl.ast import HEAD_KEY, Architecture, structural_cost
from .dsl.grammar import Grammar, enumerate_children
from .dsl.printing import format_architecture
from .dsl.semantics import Program
from .grad import Param
from .vae import NeurosymbolicVAE, TrainConfig, train

log = logging.getLogger(__name__)


class SearchExhausted(RuntimeError):
    """No admissible child remains; ``count`` programs were completed."""

    def __init__(self, message: str, count: int = 0):
        super().__init__(message)
        self.count = count


@dataclass
class SynthesisConfig:
    max_depth: int = 2
    penalty: float = 0.01
    neural_epochs: int = 10
    symbolic_epochs: int = 10
    frontier_size: int = 30
    learning_rate: float = 0.01
    batch_size: int = 32
    standin_hidden: int = 16

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.frontier_size < 1:
            raise ValueError("frontier_size must be >= 1")
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DistillationSet:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray

    def __post_init__(self):
        for y in (self.y_train, self.y_val):
            if not np.isin(y, (0, 1)).all():
                raise ValueError("distillation labels must be 0/1")


@dataclass
class ChildScore:
    program: Program
    val_bce: float
    cost: float
    heuristic: float
    order: int

    def record(self) -> dict:
        return {"architecture": format_architecture(self.program.arch, schema=self.program.schema),
                "structural_cost": self.cost,
                "val_bce": self.val_bce if math.isfinite(self.val_bce) else None,
                "heuristic": self.heuristic if math.isfinite(self.heuristic) else None,
                "firings": self.program.arch.firings}


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from a tuple of non-negative ints."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def make_distillation_set(current: Program, x_train, x_val) -> DistillationSet:
    """Hard labels 1[logit > 0] of the current encoder on both splits."""
    lab = lambda x: (G.data_of(current.logits(x)) > 0).astype(np.int64)
    return DistillationSet(np.asarray(x_train), lab(x_train), np.asarray(x_val), lab(x_val))


def feature_stats(x) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    scale = x.std(axis=(0, 1))
    return x.mean(axis=(0, 1)), np.where(scale > 0, scale, 1.0)


def _bce(logits, y):
    return G.mean(G.softplus(logits) - y * logits)


def new_program(arch: Architecture, schema, rng, x_ref, hidden: int = 16) -> Program:
    """Fresh parameters; threshold at the median body value on ``x_ref``."""
    shift, scale = feature_stats(x_ref)
    prog = Program.initial(arch, schema, rng, hidden=hidden, shift=shift, scale=scale)
    prog.params[HEAD_KEY] = Param(np.array([float(np.median(prog.body_values(x_ref)))]), HEAD_KEY)
    return prog


def score_child(child: Architecture, dset: DistillationSet, config: SynthesisConfig,
                schema, seed) -> ChildScore:
    """Fit ``child`` to the distillation labels and return its heuristic.

    The heuristic is the structural cost plus validation BCE; a diverging
    fit scores +inf.
    """
    rng = np.random.default_rng(seed)
    prog = new_program(child, schema, rng, dset.x_train, config.standin_hidden)
    params = prog.parameters()
    opt = G.Adam(params, lr=config.learning_rate)
    epochs = config.symbolic_epochs if child.is_complete else max(config.neural_epochs,
                                                                   config.symbolic_epochs)
    n = len(dset.x_train)
    cost = structural_cost(child, config.penalty)
    y_tr = dset.y_train.astype(np.float64)
    try:
        with np.errstate(over="raise", invalid="raise"):
            for _ in range(epochs):
                order = rng.permutation(n)
                for b in range(0, n, config.batch_size):
                    idx = order[b:b + config.batch_size]
                    tape = G.Tape()
                    loss = _bce(prog.logits(dset.x_train[idx], tape), y_tr[idx])
                    grads = tape.param_grads(loss, params)
                    if not np.isfinite(G.data_of(loss)):
                        raise FloatingPointError("non-finite distillation loss")
                    G.clip_grad_norm(grads, 5.0)
                    opt.step(grads)
            val = float(G.data_of(_bce(prog.logits(dset.x_val), dset.y_val.astype(np.float64))))
    except FloatingPointError:
        val = math.inf
    if not math.isfinite(val):
        return ChildScore(prog, math.inf, cost, math.inf, -1)
    return ChildScore(prog, val, cost, cost + val, -1)


def _admissible(arch: Architecture, grammar: Grammar, max_depth: int, excluded) -> bool:
    """Whether some completion of ``arch`` within depth avoids ``excluded``."""
    if arch.is_complete:
        return arch not in excluded
    if not excluded:
        return True
    return any(_admissible(c, grammar, max_depth, excluded)
               for c in enumerate_children(arch, grammar, max_depth))


def admissible_children(arch, grammar, max_depth, excluded=()) -> list:
    excluded = list(excluded)
    return [c for c in enumerate_children(arch, grammar, max_depth)
            if _admissible(c, grammar, max_depth, excluded)]


def deepen_once(current: Program, grammar: Grammar, dset: DistillationSet,
                config: SynthesisConfig, seed: int, excluded=()) -> tuple:
    """Score every admissible child from scratch and commit to the best one.

    Ties go to fewer firings, then to rule order.  Returns ``(program, record)``
    where ``record`` lists up to ``frontier_size`` best candidates.
    """
    if current.is_complete:
        raise ValueError("cannot deepen a complete program")
    children = admissible_children(current.arch, grammar, config.max_depth, excluded)
    if not children:
        raise SearchExhausted(f"no admissible children of "
                              f"{format_architecture(current.arch, schema=current.schema)} "
                              f"within depth {config.max_depth}")
    scores = []
    for i, child in enumerate(children):
        s = score_child(child, dset, config, current.schema, derive_seed(seed, i))
        s.order = i
        scores.append(s)
    ranked = sorted(scores, key=lambda s: (s.heuristic, s.program.arch.firings, s.order))
    best = ranked[0]
    if not math.isfinite(best.heuristic):
        raise SearchExhausted("every child diverged during distillation")
    record = {
        "parent": format_architecture(current.arch, schema=current.schema),
        "n_children": len(children),
        "candidates": [s.record() for s in ranked[:config.frontier_size]],
        "winner": best.record(),
        "label_balance_train": float(dset.y_train.mean()),
    }
    return best.program, record


def label_agreement(program: Program, dset: DistillationSet) -> float:
    pred = (G.data_of(program.logits(dset.x_train)) > 0).astype(np.int64)
    return float((pred == dset.y_train).mean())


@dataclass
class SynthesisResult:
    programs: list
    model: NeurosymbolicVAE
    log: list = field(default_factory=list)
    history: list = field(default_factory=list)
    deepenings: list = field(default_factory=list)


def frontier_level(arch: Architecture) -> int:
    """Level of the shallowest hole (the root is level 0)."""
    return min(len(path) for path, _ in arch.holes())


def synthesize_program(x_train, x_val, model: NeurosymbolicVAE, grammar: Grammar,
                       config: SynthesisConfig, seed: int, excluded=(),
                       result: SynthesisResult | None = None) -> Program:
    """Learn one program next to the fixed ones already in ``model``.

    Alternates VAE training (architecture fixed) with a deepening distilled
    from the current encoder, then trains once more with the complete
    program.  A deepening commits children until every remaining hole lies
    below the level of the shallowest hole it started from, so each one
    adds a level and there are at most ``max_depth`` of them.  Appends the
    program to ``model`` and returns it.
    """
    result = result or SynthesisResult([], model)
    index = model.k
    rng = np.random.default_rng(derive_seed(seed, index, 1 << 20))
    program = new_program(grammar.root(), grammar.schema, rng, x_train, config.standin_hidden)
    model.add_program(program)
    deepenings = 0
    while True:
        stage = f"program{index}.depth{deepenings}"
        hist = train(x_train, model, seed=derive_seed(seed, index, deepenings))
        result.history.extend({"stage": stage, **row} for row in hist)
        if program.is_complete:
            break
        if deepenings >= config.max_depth:
            raise SearchExhausted(f"program {index} incomplete after {deepenings} deepenings",
                                  count=index)
        dset = make_distillation_set(program, x_train, x_val)
        level = frontier_level(program.arch)
        deepenings += 1
        step = 0
        while not program.is_complete and frontier_level(program.arch) <= level:
            program, record = deepen_once(program, grammar, dset, config,
                                          seed=derive_seed(seed, index, deepenings, step, 7),
                                          excluded=excluded)
            record.update(program=index, deepening=deepenings, step=step,
                          label_agreement=label_agreement(program, dset))
            result.log.append(record)
            step += 1
            log.info("program %d deepening %d.%d: %s (h=%.4f)", index, deepenings, step,
                     record["winner"]["architecture"], record["winner"]["heuristic"])
        model.replace_program(index, program)
    result.deepenings.append(deepenings)
    return program


def build_model(x_train, schema, vae_channels, train_config: TrainConfig, seed) -> NeurosymbolicVAE:
    rng = np.random.default_rng(seed)
    shift, scale = feature_stats(np.asarray(x_train)[..., list(vae_channels)])
    return NeurosymbolicVAE(schema.dim, vae_channels, train_config, rng, shift, scale)


def synthesize_k_programs(x_train, x_val, grammar: Grammar, train_config: TrainConfig,
                          config: SynthesisConfig, k: int, seed: int,
                          vae_channels=None) -> SynthesisResult:
    """Greedy loop: learn program ``i`` with programs ``0..i-1`` frozen.

    Architectures identical to earlier programs are never enumerated.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    schema = grammar.schema
    vae_channels = list(range(schema.dim)) if vae_channels is None else list(vae_channels)
    model = build_model(x_train, schema, vae_channels, train_config, seed)
    result = SynthesisResult([], model)
    for i in range(k):
        excluded = [p.arch for p in result.programs]
        try:
            prog = synthesize_program(x_train, x_val, model, grammar, config, seed,
                                      excluded=excluded, result=result)
        except SearchExhausted as e:
            raise SearchExhausted(f"grammar exhausted after {i} of {k} programs: {e}", count=i) from e
        result.programs.append(prog)
        model.frozen.add(i)
    return result
