"""scikit-learn style front end for the neurosymbolic encoder."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from .data import Dataset, DerivedChannel, feature_augment
from .dsl.ast import FeatureSchema
from .dsl.grammar import trajectory_grammar
from .dsl.printing import pretty_print
from .metrics import bits_to_ids, purity
from .synthesis import SynthesisConfig, SynthesisResult, build_model, synthesize_k_programs
from .vae import TrainConfig, load_model, save_model, train


def check_trajectories(X, n_features=None, trajectory_length=None) -> np.ndarray:
    """Validate an (N, T, D) float array of finite values."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_2d=False)
    if X.ndim != 3:
        raise ValueError(f"expected trajectories shaped (N, T, D), got {X.shape}")
    if n_features is not None and X.shape[2] != n_features:
        raise ValueError(f"X has {X.shape[2]} channels, the estimator was fitted on {n_features}")
    if trajectory_length is not None and X.shape[1] != trajectory_length:
        raise ValueError(f"X has length {X.shape[1]}, the estimator was fitted on {trajectory_length}")
    return X


class NeurosymbolicEncoder(TransformerMixin, BaseEstimator):
    """Trajectory VAE whose latent code includes ``n_programs`` learned binary programs.

    ``transform`` returns the posterior mean of the neural latent followed by
    the program bits; ``predict`` returns the cluster id formed by the bits
    (bit ``i`` weighs ``2**i``).  ``n_programs=0`` gives a plain trajectory
    VAE.

    Parameters
    ----------
    feature_names : names of the input channels (default ``c0, c1, ...``).
    derived_channels : definitions such as ``"final(x)"`` appended to the
        inputs before programs see them.
    library_channels : channels that get an affine library function in the
        DSL; default all raw and derived channels.
    vae_channels : channels fed to the recurrent encoder and decoder;
        default the raw channels.
    """

    def __init__(self, n_programs=2, *, feature_names=None, derived_channels=(),
                 library_channels=None, vae_channels=None, algebraic=True, ite=True,
                 epochs=50, z_dim=4, h_dim=16, rnn_dim=16, adv_dim=8,
                 disc_capacity=0.6, cont_capacity=None, gamma_neural=1.0, gamma_symb=10.0,
                 adversary_weight=1.0, adversary_conditioning=False,
                 adversary_learning_rate=None, learning_rate=2e-4, program_learning_rate=None,
                 batch_size=32, max_depth=2, penalty=0.01, neural_epochs=10,
                 symbolic_epochs=10, frontier_size=30, synthesis_learning_rate=0.01,
                 validation_fraction=0.2, random_state=0):
        self.n_programs = n_programs
        self.feature_names = feature_names
        self.derived_channels = derived_channels
        self.library_channels = library_channels
        self.vae_channels = vae_channels
        self.algebraic = algebraic
        self.ite = ite
        self.epochs = epochs
        self.z_dim = z_dim
        self.h_dim = h_dim
        self.rnn_dim = rnn_dim
        self.adv_dim = adv_dim
        self.disc_capacity = disc_capacity
        self.cont_capacity = cont_capacity
        self.gamma_neural = gamma_neural
        self.gamma_symb = gamma_symb
        self.adversary_weight = adversary_weight
        self.adversary_conditioning = adversary_conditioning
        self.adversary_learning_rate = adversary_learning_rate
        self.learning_rate = learning_rate
        self.program_learning_rate = program_learning_rate
        self.batch_size = batch_size
        self.max_depth = max_depth
        self.penalty = penalty
        self.neural_epochs = neural_epochs
        self.symbolic_epochs = symbolic_epochs
        self.frontier_size = frontier_size
        self.synthesis_learning_rate = synthesis_learning_rate
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    # configuration -----------------------------------------------------------
    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, z_dim=self.z_dim, h_dim=self.h_dim, rnn_dim=self.rnn_dim,
            adv_dim=self.adv_dim, disc_capacity=self.disc_capacity,
            cont_capacity=self.cont_capacity, gamma_neural=self.gamma_neural,
            gamma_symb=self.gamma_symb, learning_rate=self.learning_rate,
            program_learning_rate=self.program_learning_rate, batch_size=self.batch_size,
            adversary_weight=self.adversary_weight,
            adversary_conditioning=self.adversary_conditioning,
            adversary_learning_rate=self.adversary_learning_rate)

    def synthesis_config(self) -> SynthesisConfig:
        return SynthesisConfig(
            max_depth=self.max_depth, penalty=self.penalty, neural_epochs=self.neural_epochs,
            symbolic_epochs=self.symbolic_epochs, frontier_size=self.frontier_size,
            learning_rate=self.synthesis_learning_rate, batch_size=self.batch_size)

    def _raw_schema(self, X) -> FeatureSchema:
        names = self.feature_names or [f"c{i}" for i in range(X.shape[2])]
        if len(names) != X.shape[2]:
            raise ValueError(f"{len(names)} feature names for {X.shape[2]} channels")
        return FeatureSchema(tuple(names), X.shape[1])

    def _augment(self, X) -> np.ndarray:
        ds = Dataset(X, self.raw_schema_)
        return feature_augment(ds, self.derived_).features

    def _validate(self, X):
        check_is_fitted(self, "model_")
        return check_trajectories(X, self.n_features_in_, self.trajectory_length_)

    # fitting -------------------------------------------------------------------
    def fit(self, X, y=None, X_val=None):
        """Learn programs and networks on raw trajectories ``X`` (N, T, D).

        Without ``X_val`` a ``validation_fraction`` share of ``X`` is held
        out for distillation scoring.  ``y`` is ignored.
        """
        X = check_trajectories(X)
        if self.n_programs < 0:
            raise ValueError("n_programs must be >= 0")
        self.raw_schema_ = self._raw_schema(X)
        self.n_features_in_ = X.shape[2]
        self.trajectory_length_ = X.shape[1]
        self.derived_ = [DerivedChannel.parse(d) if isinstance(d, str) else d
                         for d in self.derived_channels]
        seed = int(check_random_state(self.random_state).randint(2 ** 31 - 1))

        if X_val is None:
            perm = np.random.default_rng(seed).permutation(len(X))
            n_val = max(1, int(round(self.validation_fraction * len(X))))
            X, X_val = X[perm[n_val:]], X[perm[:n_val]]
        else:
            X_val = check_trajectories(X_val, self.n_features_in_, self.trajectory_length_)

        feats, feats_val = self._augment(X), self._augment(X_val)
        schema = feature_augment(Dataset(X[:1], self.raw_schema_), self.derived_).schema
        self.schema_ = schema
        vae_names = self.vae_channels or list(self.raw_schema_.names)
        vae_idx = [schema.index(n) for n in vae_names]
        lib = self.library_channels
        affine = None if lib is None else [(schema.index(n),) for n in lib]
        self.grammar_ = trajectory_grammar(schema, affine_channels=affine,
                                           algebraic=self.algebraic, ite=self.ite)
        cfg = self.train_config()
        if self.n_programs == 0:
            model = build_model(feats, schema, vae_idx, cfg, seed)
            history = [{"stage": "tvae", **row} for row in train(feats, model, seed)]
            result = SynthesisResult([], model, [], history, [])
        else:
            result = synthesize_k_programs(feats, feats_val, self.grammar_, cfg,
                                           self.synthesis_config(), self.n_programs, seed,
                                           vae_channels=vae_idx)
        self.model_ = result.model
        self.programs_ = result.programs
        self.history_ = result.history
        self.synthesis_log_ = result.log
        self.n_clusters_ = 2 ** len(result.programs)
        return self

    # inference -------------------------------------------------------------------
    def encode(self, X):
        X = self._validate(X)
        return self.model_.encode(self._augment(X))

    def program_bits(self, X) -> np.ndarray:
        return self.encode(X).bits

    def neural_latents(self, X) -> np.ndarray:
        return self.encode(X).z_neural

    def transform(self, X) -> np.ndarray:
        code = self.encode(X)
        return np.hstack([code.z_neural, code.bits.astype(np.float64)])

    def predict(self, X) -> np.ndarray:
        return bits_to_ids(self.program_bits(X))

    def score(self, X, y) -> float:
        """Purity of the program clustering against ``y``."""
        return purity(self.predict(X), y)

    def program_texts(self) -> list:
        check_is_fitted(self, "model_")
        return [pretty_print(p.arch, p.params, p.schema) for p in self.programs_]

    # persistence ---------------------------------------------------------------
    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_model(path, self.model_, {
            "estimator_params": {k: (list(v) if isinstance(v, tuple) else v)
                                 for k, v in self.get_params().items()},
            "raw_schema": self.raw_schema_.to_dict(),
        })

    @classmethod
    def load(cls, path) -> "NeurosymbolicEncoder":
        model, header = load_model(path)
        est = cls(**header["estimator_params"])
        est.raw_schema_ = FeatureSchema.from_dict(header["raw_schema"])
        est.n_features_in_ = est.raw_schema_.dim
        est.trajectory_length_ = est.raw_schema_.trajectory_length
        est.derived_ = [DerivedChannel.parse(d) if isinstance(d, str) else d
                        for d in est.derived_channels]
        est.schema_ = model.programs[0].schema if model.programs else est.raw_schema_
        est.model_ = model
        est.programs_ = list(model.programs)
        est.history_, est.synthesis_log_ = [], []
        est.n_clusters_ = 2 ** len(model.programs)
        return est
