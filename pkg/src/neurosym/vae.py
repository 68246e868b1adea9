"""Neurosymbolic trajectory VAE: objective terms, model container, training."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import grad as G
from .dsl.semantics import Program
from .grad import Param
from .nets import Adversary, RecurrentDecoder, RecurrentEncoder

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


class TrainingDivergence(FloatingPointError):
    """Loss became non-finite or exceeded the divergence bound."""

    def __init__(self, message: str, history=None, terms=None):
        super().__init__(message)
        self.history = history or []
        self.terms = terms


@dataclass
class LatentCode:
    z_neural: np.ndarray
    probs: np.ndarray
    relaxed: np.ndarray | None = None

    @property
    def bits(self) -> np.ndarray:
        return (self.probs > 0.5).astype(np.int64)


@dataclass
class TrainConfig:
    epochs: int = 50
    z_dim: int = 4
    h_dim: int = 16
    rnn_dim: int = 16
    adv_dim: int = 8
    disc_capacity: float = 0.6          # per symbolic bit
    cont_capacity: float | None = None  # None: plain KL with weight 1
    gamma_neural: float = 1.0
    gamma_symb: float = 10.0
    learning_rate: float = 0.0002
    program_learning_rate: float | None = None
    batch_size: int = 32
    temperature_start: float = 1.0
    temperature_end: float = 0.5
    anneal_fraction: float = 0.5
    adversary_weight: float = 1.0
    adversary_conditioning: bool = False   # bit i's adversary also sees bits < i
    adversary_learning_rate: float | None = None
    grad_clip: float = 5.0
    straight_through: bool = False
    divergence_bound: float = 1e6

    def __post_init__(self):
        if self.disc_capacity < 0 or (self.cont_capacity is not None and self.cont_capacity < 0):
            raise ValueError("capacities must be >= 0")
        if self.disc_capacity > LN2:
            raise ValueError(f"discrete capacity {self.disc_capacity} exceeds ln 2 per bit")
        if self.temperature_end <= 0 or self.temperature_start <= 0:
            raise ValueError("relaxation temperatures must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


# sampling and divergences -------------------------------------------------------
def sample_neural(mu, logvar, noise):
    """mu + exp(logvar / 2) * noise"""
    return mu + G.exp(logvar * 0.5) * noise


def gumbel(u):
    return -np.log(-np.log(u))


def sample_symbolic(logit, temperature: float, noise):
    """Binary Gumbel-softmax relaxation.

    ``noise`` stacks two uniform draws on its last axis, shape
    ``logit.shape + (2,)``.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    noise = np.asarray(noise, dtype=np.float64)
    g = gumbel(noise[..., 0]) - gumbel(noise[..., 1])
    return G.sigmoid((logit + g) * (1.0 / temperature))


def kl_gaussian(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over the last axis."""
    return (0.5 * (mu * mu + G.exp(logvar) - 1.0 - logvar)).sum(axis=-1)


def kl_bernoulli(p, prior: float = 0.5):
    """KL(Bern(p) || Bern(prior)), summed over the last axis."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    kl = p * np.log(p / prior) + (1 - p) * np.log((1 - p) / (1 - prior))
    return kl.sum(axis=-1)


def kl_bernoulli_logits(logit):
    """Elementwise KL(Bern(sigmoid(l)) || Bern(0.5)), stable for large |l|."""
    p = G.sigmoid(logit)
    return LN2 - p * G.softplus(-logit) - (1.0 - p) * G.softplus(logit)


def bce_with_logits(logit, target):
    """Elementwise binary cross-entropy of sigmoid(logit) against ``target``."""
    return G.softplus(logit) - target * logit


def capacity_at(step: int, cap: float, anneal_steps: int) -> float:
    """Linear ramp from 0 to ``cap`` over ``anneal_steps``."""
    if anneal_steps <= 0:
        return cap
    return cap * min(1.0, step / anneal_steps)


# model ------------------------------------------------------------------------
class NeurosymbolicVAE:
    """Encoder/decoder/adversary plus the symbolic programs.

    ``programs`` are evaluated on the program-feature array; the networks see
    ``vae_channels`` of it, standardized with ``shift``/``scale``.
    """

    def __init__(self, n_features: int, vae_channels, config: TrainConfig, rng,
                 shift=0.0, scale=1.0):
        self.vae_channels = list(vae_channels)
        self.config = config
        d = len(self.vae_channels)
        if config.z_dim < 1:
            raise ValueError("z_dim must be >= 1")
        self.n_features = n_features
        self.shift = np.asarray(shift, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.encoder = RecurrentEncoder(d, config.z_dim, config.rnn_dim, config.h_dim, rng)
        self.decoder = RecurrentDecoder(d, config.z_dim, config.rnn_dim, config.h_dim, rng)
        self.adversary = None
        self.programs: list = []
        self.frozen: set = set()
        self.global_step = 0
        self.anneal_steps = None
        self.bit_starts: list = []   # global step at which each bit was added
        self._rng = rng

    @property
    def k(self) -> int:
        return len(self.programs)

    def vae_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (x[..., self.vae_channels] - self.shift) / self.scale

    def add_program(self, program: Program) -> None:
        """Append a symbolic bit; the new decoder/adversary weights start at 0."""
        self.programs.append(program)
        self.bit_starts.append(self.global_step)
        dec = self.decoder
        dec.z_total += 1
        dec.rnn.w_in.data = np.vstack([dec.rnn.w_in.data, np.zeros((1, dec.rnn.w_in.data.shape[1]))])
        w = dec.init_hidden.weight
        w.data = np.vstack([w.data, np.zeros((1, w.data.shape[1]))])
        if self.adversary is None:
            self.adversary = Adversary(self.config.z_dim, 1, self.config.adv_dim, self._rng,
                                       self.config.adversary_conditioning)
            self.adversary.out.weight.data[:] = 0.0
        else:
            self.adversary.grow()

    def replace_program(self, index: int, program: Program) -> None:
        self.programs[index] = program

    def trainable_programs(self) -> list:
        return [p for i, p in enumerate(self.programs) if i not in self.frozen]

    def main_parameters(self, program_params: bool = True) -> list:
        params = self.encoder.parameters() + self.decoder.parameters()
        if program_params:
            for p in self.trainable_programs():
                params += p.parameters()
        return params

    # inference --------------------------------------------------------------
    def program_logits(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not self.programs:
            return np.zeros((x.shape[0], 0))
        return np.stack([p.logits(x) for p in self.programs], axis=1)

    def encode(self, x, batch_size: int = 512) -> LatentCode:
        """Posterior means and program probabilities (no sampling)."""
        x = np.asarray(x, dtype=np.float64)
        mus, probs = [], []
        for i in range(0, len(x), batch_size):
            xb = x[i:i + batch_size]
            mu, _ = self.encoder(None, self.vae_input(xb))
            mus.append(mu)
            probs.append(G.data_of(G.sigmoid(self.program_logits(xb))))
        if not mus:
            return LatentCode(np.zeros((0, self.config.z_dim)), np.zeros((0, self.k)))
        return LatentCode(np.concatenate(mus), np.concatenate(probs))

    def state_arrays(self) -> dict:
        out = {f"encoder.{k}": v for k, v in self.encoder.state_dict().items()}
        out.update({f"decoder.{k}": v for k, v in self.decoder.state_dict().items()})
        if self.adversary is not None:
            out.update({f"adversary.{k}": v for k, v in self.adversary.state_dict().items()})
        for i, p in enumerate(self.programs):
            for key, arr in p.params.arrays().items():
                out[f"program{i}.{key}"] = arr
            for skey, net in p.standins.items():
                out.update({f"program{i}.standin.{skey}.{k}": v
                            for k, v in net.state_dict().items()})
        out["vae.shift"] = np.broadcast_to(self.shift, (len(self.vae_channels),)).copy()
        out["vae.scale"] = np.broadcast_to(self.scale, (len(self.vae_channels),)).copy()
        return out


# objective -------------------------------------------------------------------
def draw_noise(rng, batch: int, z_dim: int, k: int) -> dict:
    u = rng.uniform(size=(batch, k, 2))
    return {"gauss": rng.normal(size=(batch, z_dim)),
            "uniform": np.clip(u, 1e-12, 1.0 - 1e-12)}


def schedule(model: NeurosymbolicVAE, step: int) -> tuple:
    """(relaxation temperature, total discrete capacity, continuous capacity).

    Each bit's capacity ramps from 0 starting at the step it was added.
    """
    cfg = model.config
    horizon = model.anneal_steps or 0
    frac = 1.0 if horizon <= 0 else min(1.0, step / horizon)
    temp = cfg.temperature_start + frac * (cfg.temperature_end - cfg.temperature_start)
    c_disc = sum(capacity_at(max(0, step - s), cfg.disc_capacity, horizon)
                 for s in model.bit_starts)
    c_cont = None if cfg.cont_capacity is None else capacity_at(step, cfg.cont_capacity, horizon)
    return temp, c_disc, c_cont


def loss_step(x, model: NeurosymbolicVAE, step_index: int, noise: dict, tape: G.Tape):
    """Build the training loss for one batch on ``tape``.

    Returns ``(total, terms)`` where ``terms`` maps each contribution and raw
    quantity to a float, plus the detached latents under ``"_z_neural"`` and
    ``"_z_symb"`` for the adversary update.  ``total`` equals
    ``recon + kl_neural_term + kl_symb_term + adv_term``.
    """
    cfg = model.config
    temp, c_disc, c_cont = schedule(model, step_index)
    x = np.asarray(x, dtype=np.float64)
    xv = model.vae_input(x)
    mu, logvar = model.encoder(tape, xv)
    zn = sample_neural(mu, logvar, noise["gauss"])

    trainable = {id(p) for p in model.trainable_programs()}
    logits, bits = [], []
    for i, prog in enumerate(model.programs):
        l = prog.logits(x, tape if id(prog) in trainable else None)
        b = sample_symbolic(l, temp, noise["uniform"][:, i])
        if cfg.straight_through:
            b = b + ((G.data_of(b) > 0.5).astype(np.float64) - G.data_of(b))
        logits.append(G.reshape(l, (-1, 1)))
        bits.append(G.reshape(b, (-1, 1)))

    z = G.concatenate([zn] + bits, axis=-1) if bits else zn
    loglik = model.decoder.loglik(tape, xv, z)
    recon = -G.mean(loglik)
    kl_n = G.mean(kl_gaussian(mu, logvar))
    if c_cont is None:
        kl_n_term = kl_n
    else:
        kl_n_term = cfg.gamma_neural * G.vabs(kl_n - c_cont)
    total = recon + kl_n_term
    terms = {"recon": G.data_of(recon).item(), "kl_neural": G.data_of(kl_n).item(),
             "kl_neural_term": G.data_of(kl_n_term).item(),
             "capacity_neural": c_cont, "capacity_symb": c_disc,
             "temperature": temp}

    if model.k:
        logit_mat = G.concatenate(logits, axis=-1)
        z_symb = G.concatenate(bits, axis=-1)
        kl_s = G.mean(kl_bernoulli_logits(logit_mat).sum(axis=-1))
        kl_s_term = cfg.gamma_symb * G.vabs(kl_s - c_disc)
        adv_logits = model.adversary.logits(None, zn, z_symb)  # adversary fixed in the main step
        adv = G.mean(bce_with_logits(adv_logits, z_symb).sum(axis=-1))
        adv_term = adv * (-cfg.adversary_weight)
        total = total + kl_s_term + adv_term
        terms.update(kl_symb=G.data_of(kl_s).item(), kl_symb_term=G.data_of(kl_s_term).item(),
                     adv=G.data_of(adv).item(), adv_term=G.data_of(adv_term).item(),
                     _z_symb=G.data_of(z_symb).copy())
    else:
        terms.update(kl_symb=0.0, kl_symb_term=0.0, adv=0.0, adv_term=0.0)
    terms["total"] = G.data_of(total).item()
    terms["_z_neural"] = G.data_of(zn).copy()
    if not np.isfinite(terms["total"]):
        bad = {k: v for k, v in terms.items() if not k.startswith("_")}
        raise TrainingDivergence(f"non-finite loss at step {step_index}: {bad}", terms=bad)
    return total, terms


def adversary_step(model: NeurosymbolicVAE, z_neural, z_symb, optimizer) -> float:
    """One minimizing update of the adversary on detached latents."""
    tape = G.Tape()
    logits = model.adversary.logits(tape, z_neural, z_symb)
    loss = G.mean(bce_with_logits(logits, z_symb).sum(axis=-1))
    grads = tape.param_grads(loss, model.adversary.parameters())
    G.clip_grad_norm(grads, model.config.grad_clip)
    optimizer.step(grads)
    return G.data_of(loss).item()


HISTORY_TERMS = ("recon", "kl_neural", "kl_symb", "adv", "total")


def train(x, model: NeurosymbolicVAE, seed: int, epochs: int | None = None,
          train_programs: bool = True) -> list:
    """Optimize the objective with architectures fixed; returns per-epoch history.

    The capacity/temperature schedule runs on ``model.global_step``; its
    horizon is fixed the first time the model is trained.
    """
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    n = len(x)
    n_batches = max(1, math.ceil(n / cfg.batch_size))
    if model.anneal_steps is None:
        model.anneal_steps = int(cfg.anneal_fraction * epochs * n_batches)

    # stand-ins are networks and train with them; symbolic parameters get
    # their own rate
    net_params = model.encoder.parameters() + model.decoder.parameters()
    prog_params = []
    if train_programs:
        for p in model.trainable_programs():
            prog_params += p.params.params()
            for key in sorted(p.standins):
                net_params += p.standins[key].parameters()
    opt = G.Adam(net_params, lr=cfg.learning_rate)
    prog_opt = G.Adam(prog_params, lr=cfg.program_learning_rate or cfg.learning_rate)
    adv_opt = G.Adam(model.adversary.parameters(), lr=cfg.adversary_learning_rate or cfg.learning_rate) if model.k else None
    all_params = net_params + prog_params

    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        sums = dict.fromkeys(HISTORY_TERMS, 0.0)
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            noise = draw_noise(rng, len(idx), cfg.z_dim, model.k)
            tape = G.Tape()
            total, terms = loss_step(x[idx], model, model.global_step, noise, tape)
            if terms["total"] > cfg.divergence_bound:
                raise TrainingDivergence(f"loss {terms['total']:.3g} exceeds bound", history, terms)
            grads = tape.param_grads(total, all_params)
            G.clip_grad_norm(grads, cfg.grad_clip)
            opt.step(grads[:len(net_params)])
            if prog_params:
                prog_opt.step(grads[len(net_params):])
            if adv_opt is not None:
                adversary_step(model, terms["_z_neural"], terms["_z_symb"], adv_opt)
            model.global_step += 1
            for k in HISTORY_TERMS:
                sums[k] += terms[k]
        row = {k: v / n_batches for k, v in sums.items()}
        row.update(epoch=epoch, step=model.global_step,
                   disc_capacity=schedule(model, model.global_step)[1])
        history.append(row)
        log.debug("epoch %d %s", epoch, row)
    return history


# persistence -------------------------------------------------------------------
def save_model(path, model: NeurosymbolicVAE, meta: dict | None = None) -> None:
    """Write weights, program texts and the training config to one ``.npz``."""
    from .dsl.printing import pretty_print
    from .nets import save_arrays

    for i, p in enumerate(model.programs):
        if not p.is_complete:
            raise ValueError(f"program {i} is incomplete and cannot be checkpointed")
    header = {
        "config": model.config.to_dict(),
        "n_features": model.n_features,
        "vae_channels": model.vae_channels,
        "schema": model.programs[0].schema.to_dict() if model.programs else None,
        "programs": [pretty_print(p.arch, p.params, p.schema) for p in model.programs],
        "ite_temperatures": [p.ite_temperature for p in model.programs],
        "frozen": sorted(model.frozen),
        "global_step": model.global_step,
        "anneal_steps": model.anneal_steps,
        "bit_starts": model.bit_starts,
        **(meta or {}),
    }
    save_arrays(path, model.state_arrays(), header)


def load_model(path, schema=None) -> tuple:
    """Inverse of :func:`save_model`; returns ``(model, header)``."""
    from .dsl.ast import FeatureSchema, ParameterStore
    from .dsl.printing import parse_program
    from .nets import load_arrays

    arrays, header = load_arrays(path)
    cfg = TrainConfig(**header["config"])
    if schema is None and header.get("schema"):
        schema = FeatureSchema.from_dict(header["schema"])
    model = NeurosymbolicVAE(header["n_features"], header["vae_channels"], cfg,
                             np.random.default_rng(0), arrays["vae.shift"], arrays["vae.scale"])
    for i, text in enumerate(header["programs"]):
        arch, params = parse_program(text, None, schema)
        prefix = f"program{i}."
        exact = {k[len(prefix):]: v for k, v in arrays.items()
                 if k.startswith(prefix) and ".standin." not in k}
        params = ParameterStore.from_arrays(exact) if exact else params
        model.add_program(Program(arch, params, schema, {}, header["ite_temperatures"][i]))
    model.encoder.load_state_dict(_section(arrays, "encoder."))
    model.decoder.load_state_dict(_section(arrays, "decoder."))
    if model.adversary is not None:
        model.adversary.load_state_dict(_section(arrays, "adversary."))
    model.frozen = set(header["frozen"])
    model.global_step = header["global_step"]
    model.anneal_steps = header["anneal_steps"]
    model.bit_starts = list(header["bit_starts"])
    return model, header


def _section(arrays: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


HISTORY_COLUMNS = ("stage", "epoch", "step") + HISTORY_TERMS + ("disc_capacity",)


def write_history_csv(path, history: list) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in history:
            writer.writerow({"stage": 0, **row})
