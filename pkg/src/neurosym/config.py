"""INI experiment configuration.

Sections and keys (all optional; defaults in ``configs/synthetic.ini``):

``[data]``       source (synthetic|files), path, n_train, n_val, n_test,
                 trajectory_length, seed
``[dsl]``        derived_channels, library_channels, vae_channels, algebraic, ite
``[vae]``        epochs, z_dim, h_dim, rnn_dim, adv_dim, disc_capacity,
                 cont_capacity, gamma_neural, gamma_symb, adversary_weight,
                 adversary_conditioning, adversary_learning_rate,
                 learning_rate, program_learning_rate, batch_size
``[synthesis]``  max_depth, penalty, neural_epochs, symbolic_epochs,
                 frontier_size, learning_rate
``[run]``        k, seeds, out

List values are comma separated; an empty value means unset.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, replace
from importlib import resources

from .data import SyntheticConfig
from .synthesis import SynthesisConfig
from .vae import TrainConfig


class ConfigError(ValueError):
    pass


def default_config_text() -> str:
    return resources.files("neurosym").joinpath("configs/synthetic.ini").read_text(encoding="utf-8")


def _list(value: str) -> list:
    return [v.strip() for v in value.split(",") if v.strip()]


def _opt_float(value: str):
    return float(value) if value.strip() else None


@dataclass
class DslSpec:
    derived_channels: list = field(default_factory=list)
    library_channels: list | None = None
    vae_channels: list | None = None
    algebraic: bool = True
    ite: bool = True


@dataclass
class ExperimentConfig:
    source: str
    data_path: str | None
    synthetic: SyntheticConfig
    dsl: DslSpec
    train: TrainConfig
    synthesis: SynthesisConfig
    k: int
    seeds: list
    out: str
    text: str = ""   # merged INI actually used

    def estimator_params(self) -> dict:
        t, s = self.train, self.synthesis
        return dict(
            n_programs=self.k, derived_channels=tuple(self.dsl.derived_channels),
            library_channels=self.dsl.library_channels, vae_channels=self.dsl.vae_channels,
            algebraic=self.dsl.algebraic, ite=self.dsl.ite,
            epochs=t.epochs, z_dim=t.z_dim, h_dim=t.h_dim, rnn_dim=t.rnn_dim, adv_dim=t.adv_dim,
            disc_capacity=t.disc_capacity, cont_capacity=t.cont_capacity,
            gamma_neural=t.gamma_neural, gamma_symb=t.gamma_symb,
            adversary_weight=t.adversary_weight,
            adversary_conditioning=t.adversary_conditioning,
            adversary_learning_rate=t.adversary_learning_rate, learning_rate=t.learning_rate,
            program_learning_rate=t.program_learning_rate, batch_size=t.batch_size,
            max_depth=s.max_depth, penalty=s.penalty, neural_epochs=s.neural_epochs,
            symbolic_epochs=s.symbolic_epochs, frontier_size=s.frontier_size,
            synthesis_learning_rate=s.learning_rate)

    def with_overrides(self, *, seed=None, out=None, k=None, max_depth=None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seeds=[seed])
        if out is not None:
            cfg = replace(cfg, out=out)
        if k is not None:
            if k < 0:
                raise ConfigError("k must be >= 0")
            cfg = replace(cfg, k=k)
        if max_depth is not None:
            try:
                cfg = replace(cfg, synthesis=replace(cfg.synthesis, max_depth=max_depth))
            except ValueError as e:
                raise ConfigError(str(e)) from None
        return cfg


def load_config(path: str | None = None) -> ExperimentConfig:
    """Defaults overlaid with ``path``; raises :class:`ConfigError`."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(default_config_text())
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file {path!r} does not exist")
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        try:
            parser.read_string(text, source=path)
        except configparser.Error as e:
            raise ConfigError(f"cannot parse {path}: {e}") from None
    known = configparser.ConfigParser(interpolation=None)
    known.read_string(default_config_text())
    for section in parser.sections():
        if not known.has_section(section):
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in known[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
    buf = io.StringIO()
    parser.write(buf)
    try:
        return _build(parser, buf.getvalue())
    except (ValueError, TypeError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from None


def _build(p: configparser.ConfigParser, text: str) -> ExperimentConfig:
    d, l, v, s, r = p["data"], p["dsl"], p["vae"], p["synthesis"], p["run"]
    source = d.get("source").strip()
    if source not in ("synthetic", "files"):
        raise ConfigError(f"[data] source must be 'synthetic' or 'files', not {source!r}")
    data_path = d.get("path").strip() or None
    if source == "files" and (data_path is None or not os.path.isdir(data_path)):
        raise ConfigError(f"[data] path {data_path!r} is not a directory")
    synthetic = SyntheticConfig(n_train=d.getint("n_train"), n_val=d.getint("n_val"),
                                n_test=d.getint("n_test"),
                                trajectory_length=d.getint("trajectory_length"),
                                seed=d.getint("seed"))
    dsl = DslSpec(derived_channels=_list(l.get("derived_channels")),
                  library_channels=_list(l.get("library_channels")) or None,
                  vae_channels=_list(l.get("vae_channels")) or None,
                  algebraic=l.getboolean("algebraic"), ite=l.getboolean("ite"))
    train = TrainConfig(
        epochs=v.getint("epochs"), z_dim=v.getint("z_dim"), h_dim=v.getint("h_dim"),
        rnn_dim=v.getint("rnn_dim"), adv_dim=v.getint("adv_dim"),
        disc_capacity=v.getfloat("disc_capacity"), cont_capacity=_opt_float(v.get("cont_capacity")),
        gamma_neural=v.getfloat("gamma_neural"), gamma_symb=v.getfloat("gamma_symb"),
        adversary_weight=v.getfloat("adversary_weight"),
        adversary_conditioning=v.getboolean("adversary_conditioning"),
        adversary_learning_rate=_opt_float(v.get("adversary_learning_rate")),
        learning_rate=v.getfloat("learning_rate"),
        program_learning_rate=_opt_float(v.get("program_learning_rate")),
        batch_size=v.getint("batch_size"))
    synthesis = SynthesisConfig(
        max_depth=s.getint("max_depth"), penalty=s.getfloat("penalty"),
        neural_epochs=s.getint("neural_epochs"), symbolic_epochs=s.getint("symbolic_epochs"),
        frontier_size=s.getint("frontier_size"), learning_rate=s.getfloat("learning_rate"),
        batch_size=train.batch_size)
    seeds = [int(x) for x in _list(r.get("seeds"))]
    if not seeds:
        raise ConfigError("[run] seeds must not be empty")
    k = r.getint("k")
    if k < 0:
        raise ConfigError("[run] k must be >= 0")
    return ExperimentConfig(source, data_path, synthetic, dsl, train, synthesis, k, seeds,
                            r.get("out").strip() or "runs/experiment", text)
