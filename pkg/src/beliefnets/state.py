"""Network configuration, per-chain latent state, and posterior snapshots."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .distributions import dirichlet_cols, gamma_array, sample_gamma
from .streams import RandomStream

MBN = "mbn"
PGBN = "pgbn"


class DegenerateStateError(RuntimeError):
    """A chain reached a state the updates cannot continue from."""


@dataclass
class CountMatrix:
    """V x J matrix of non-negative integer counts (features x samples)."""

    x: np.ndarray
    feature_labels: list[str] | None = None
    sample_labels: list[str] | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x)
        if self.x.ndim != 2:
            raise ValueError("counts must be a 2-d array")
        if not np.issubdtype(self.x.dtype, np.integer):
            if not np.all(self.x == np.round(self.x)):
                raise ValueError("counts must be integers")
            self.x = self.x.astype(np.int64)
        if self.x.size and self.x.min() < 0:
            raise ValueError("counts must be non-negative")
        if self.feature_labels is not None and len(self.feature_labels) != self.V:
            raise ValueError("feature_labels length must match V")
        if self.sample_labels is not None and len(self.sample_labels) != self.J:
            raise ValueError("sample_labels length must match J")
        self._n_j = self.x.sum(axis=0)

    @property
    def V(self) -> int:
        return self.x.shape[0]

    @property
    def J(self) -> int:
        return self.x.shape[1]

    @property
    def n_j(self) -> np.ndarray:
        """Cached column totals."""
        return self._n_j


@dataclass(frozen=True)
class NetworkConfig:
    """Layer widths and hyperparameters for either network kind.

    eta may be a scalar (shared across layers) or a per-layer sequence of
    scalars.  eta_hyperprior, when set to (a, b, eta0), switches on inference
    of the topic-prior concentrations; eta0 is the base-measure Dirichlet
    parameter (scalar, shared across features).
    """

    kind: str
    layer_widths: tuple
    gamma0: float = 1.0
    e0: float = 1.0
    f0: float = 1.0
    eta: float | tuple = 0.05
    c0: float = 1.0
    eta_hyperprior: tuple | None = None

    def __post_init__(self):
        if self.kind not in (MBN, PGBN):
            raise ValueError(f"kind must be '{MBN}' or '{PGBN}'")
        object.__setattr__(self, "layer_widths", tuple(int(k) for k in self.layer_widths))
        if len(self.layer_widths) < 1:
            raise ValueError("need at least one layer")
        if any(k < 1 for k in self.layer_widths):
            raise ValueError("layer widths must be >= 1")
        for name in ("gamma0", "e0", "f0", "c0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        etas = self.eta if isinstance(self.eta, (tuple, list)) else (self.eta,) * self.T
        etas = tuple(float(e) for e in etas)
        if len(etas) != self.T:
            raise ValueError("eta must be scalar or one value per layer")
        if any(e <= 0 for e in etas):
            raise ValueError("eta must be positive")
        object.__setattr__(self, "eta", etas)
        if self.eta_hyperprior is not None:
            a, b, eta0 = self.eta_hyperprior
            if a <= 0 or b <= 0 or eta0 <= 0:
                raise ValueError("eta hyperprior parameters must be positive")
            object.__setattr__(self, "eta_hyperprior", (float(a), float(b), float(eta0)))

    @property
    def T(self) -> int:
        return len(self.layer_widths)

    def feature_dims(self, V: int) -> list[int]:
        """Input dimension of each layer: V_1 = V, V_{t+1} = K_t."""
        return [V] + list(self.layer_widths[:-1])

    def with_widths(self, widths) -> "NetworkConfig":
        eta = self.eta
        if len(widths) != self.T:
            # growing or pruning layers: extend/trim the per-layer eta
            base = list(self.eta)
            eta = tuple((base + [base[-1]] * len(widths))[:len(widths)])
        return replace(self, layer_widths=tuple(widths), eta=eta)


@dataclass
class PosteriorSample:
    """Immutable snapshot of the chain parameters at a recorded iteration."""

    phi: list
    theta: list
    c: np.ndarray
    r: np.ndarray
    iteration: int
    chain_id: int

    def to_dict(self) -> dict:
        return {
            "iteration": int(self.iteration),
            "chain_id": int(self.chain_id),
            "phi": [p.tolist() for p in self.phi],
            "theta": [t.tolist() for t in self.theta],
            "c": np.asarray(self.c).tolist(),
            "r": np.asarray(self.r).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorSample":
        return cls(
            phi=[np.asarray(p, float) for p in d["phi"]],
            theta=[np.asarray(t, float) for t in d["theta"]],
            c=np.asarray(d["c"], float),
            r=np.asarray(d["r"], float),
            iteration=int(d["iteration"]),
            chain_id=int(d["chain_id"]),
        )


@dataclass
class ChainState:
    """Mutable per-chain state: parameters, augmented counts, and activations.

    Layers are indexed from 0: phi[i] connects layer i+1 to its inputs, c[i]
    is the concentration feeding layer i+1 from above (the paper-level index
    i+2).  For the multinomial kind c[i] is a scalar per layer; for the
    Poisson-gamma kind it is one value per sample.  n holds per-sample integer
    totals per level for the multinomial kind; q holds the per-sample real
    scale factors for the Poisson-gamma kind.
    """

    config: NetworkConfig
    J: int
    phi: list = field(default_factory=list)          # [ (V_i, K_i) ]
    theta: list = field(default_factory=list)        # [ (K_i, J) ]
    c: np.ndarray | None = None                      # (T,) or (T, J)
    r: np.ndarray | None = None                      # (K_T,)
    x: list = field(default_factory=list)            # [ (V_i, J) ], x[0] = data
    m: list = field(default_factory=list)            # [ (J, K_i) ]
    y_vk: list = field(default_factory=list)         # [ (V_i, K_i) ], y summed over j
    n: np.ndarray | None = None                      # (T+1, J) ints, MBN
    q: np.ndarray | None = None                      # (T+1, J) reals, PGBN
    a: list = field(default_factory=list)            # [ (V_i, J) ] for levels 1..T+1
    eta: list = field(default_factory=list)          # [ (V_i,) ] topic-prior concentrations
    eta_alpha: np.ndarray | None = None              # (T,) when hyperprior enabled
    eta_dir: list = field(default_factory=list)      # [ (V_i,) ] when hyperprior enabled
    rng: RandomStream | None = None
    iteration: int = 0
    data: CountMatrix | None = None
    _quanta_cache: dict = field(default_factory=dict, repr=False)

    @property
    def T(self) -> int:
        return self.config.T

    @property
    def kind(self) -> str:
        return self.config.kind

    def __getstate__(self):
        # the quanta cache is large and rebuildable; never ship it to workers
        d = self.__dict__.copy()
        d["_quanta_cache"] = {}
        return d

    def __setstate__(self, d):
        self.__dict__.update(d)

    def set_data(self, data: CountMatrix):
        if data.J != self.J:
            raise ValueError("sample count mismatch")
        if data.V != self.phi[0].shape[0]:
            raise ValueError("feature count mismatch")
        self.data = data
        self.x[0] = data.x
        if self.kind == MBN:
            self.n[0] = data.n_j
        self._quanta_cache.clear()

    def refresh_top_activation(self):
        self.a[self.T] = np.repeat(self.r[:, None], self.J, axis=1)

    def refresh_activation(self, i: int):
        """Recompute a^(i+1) = phi^(i+1) theta^(i+1) (0-based layer i)."""
        if i == self.T:
            self.refresh_top_activation()
        else:
            self.a[i] = self.phi[i] @ self.theta[i]

    def snapshot(self, chain_id: int = 0) -> PosteriorSample:
        return PosteriorSample(
            phi=[p.copy() for p in self.phi],
            theta=[t.copy() for t in self.theta],
            c=np.array(self.c, copy=True),
            r=self.r.copy(),
            iteration=self.iteration,
            chain_id=chain_id,
        )

    def validate(self, atol: float = 1e-9):
        """Check the structural invariants; raises AssertionError on violation."""
        T = self.T
        for i in range(T):
            np.testing.assert_allclose(self.phi[i].sum(axis=0), 1.0, atol=atol)
            assert self.phi[i].shape[1] == self.config.layer_widths[i]
        if self.kind == MBN:
            for i in range(T):
                np.testing.assert_allclose(self.theta[i].sum(axis=0), 1.0, atol=atol)
            np.testing.assert_allclose(self.r.sum(), 1.0, atol=atol)
            assert (np.diff(self.n, axis=0) <= 0).all(), "n must be non-increasing in t"
            if self.data is not None:
                assert (self.n[0] == self.data.n_j).all()
        else:
            assert all((t > 0).all() for t in self.theta), "theta must stay positive"
            np.testing.assert_allclose(self.q[0], 1.0)
            assert (self.q > 0).all()
        if self.iteration > 0:
            for i in range(T):
                assert (self.m[i].sum(axis=1) == self.x[i].sum(axis=0)).all()
                assert self.y_vk[i].sum() == self.x[i].sum()
                assert (self.x[i + 1] <= self.m[i].T).all(), "CRT output exceeds its input"
                if self.kind == MBN:
                    assert (self.n[i + 1] == self.x[i + 1].sum(axis=0)).all()


def compute_activations(state: ChainState, i: int) -> np.ndarray:
    """Activation matrix of level i+1 (0-based): phi^(i+1) @ theta^(i+1).

    For the multinomial kind the result columns sum to 1 (product of
    column-stochastic matrices).
    """
    if i == state.T:
        return np.repeat(state.r[:, None], state.J, axis=1)
    return state.phi[i] @ state.theta[i]


def _layer_eta(config: NetworkConfig, i: int, V_i: int) -> np.ndarray:
    return np.full(V_i, config.eta[i])


def init_from_prior(config: NetworkConfig, J: int, n_or_data, stream: RandomStream,
                    shared: dict | None = None, V: int | None = None) -> ChainState:
    """Draw a fresh chain state from the prior.

    n_or_data is either a CountMatrix (bound as observed data) or a vector of
    per-sample totals (multinomial kind; used by the generators, which must
    then pass the observed feature count V explicitly).  Optionally, `shared`
    supplies pre-drawn global parameters (phi, c, r) so that two generators
    can be driven by identical weights.
    """
    if isinstance(n_or_data, CountMatrix):
        data, n1 = n_or_data, n_or_data.n_j
        V = data.V
        if J != data.J:
            raise ValueError("J disagrees with the data")
    else:
        data = None
        if n_or_data is None:
            n1 = np.zeros(J, dtype=np.int64)
        else:
            n1 = np.asarray(n_or_data)
            if np.isscalar(n_or_data) or n1.ndim == 0:
                n1 = np.full(J, int(n_or_data), dtype=np.int64)
        if n1.shape != (J,):
            raise ValueError("totals must be a length-J vector")
        if n1.size and n1.min() < 0:
            raise ValueError("totals must be non-negative")
        if V is None:
            raise ValueError("V is required when no data matrix is given")

    T = config.T
    widths = config.layer_widths
    dims = config.feature_dims(int(V))
    state = ChainState(config=config, J=J, rng=stream)

    shared = shared or {}
    # topic-prior concentrations, possibly under their hyperprior
    if config.eta_hyperprior is not None:
        a_h, b_h, eta0 = config.eta_hyperprior
        state.eta_alpha = np.array([sample_gamma(a_h, b_h, stream) for _ in range(T)])
        state.eta_dir = [dirichlet_cols(np.full(dims[i], eta0), stream) for i in range(T)]
        state.eta = [state.eta_alpha[i] * state.eta_dir[i] for i in range(T)]
    else:
        state.eta = [_layer_eta(config, i, dims[i]) for i in range(T)]

    if "phi" in shared:
        state.phi = [p.copy() for p in shared["phi"]]
    else:
        state.phi = [dirichlet_cols(np.repeat(state.eta[i][:, None], widths[i], axis=1),
                                    stream) for i in range(T)]

    if config.kind == MBN:
        state.c = (np.array(shared["c"], copy=True) if "c" in shared
                   else gamma_array(np.full(T, config.e0), config.f0, stream))
        state.r = (np.array(shared["r"], copy=True) if "r" in shared
                   else dirichlet_cols(np.full(widths[-1], config.gamma0 / widths[-1]),
                                       stream))
        state.n = np.zeros((T + 1, J), dtype=np.int64)
        state.n[0] = n1
    else:
        state.c = (np.array(shared["c"], copy=True) if "c" in shared
                   else gamma_array(np.full((T, J), config.e0), config.f0, stream))
        state.r = (np.array(shared["r"], copy=True) if "r" in shared
                   else gamma_array(np.full(widths[-1], config.gamma0 / widths[-1]),
                                    config.c0, stream))
        state.q = np.ones((T + 1, J))
        for i in range(T):
            state.q[i + 1] = np.log1p(state.q[i] / state.c[i])

    # hidden units, top-down from the prior
    state.a = [None] * (T + 1)
    state.theta = [None] * T
    state.a[T] = np.repeat(state.r[:, None], J, axis=1)
    for i in range(T - 1, -1, -1):
        if config.kind == MBN:
            conc = state.c[i] * state.a[i + 1]
            state.theta[i] = dirichlet_cols(conc, stream)
        else:
            state.theta[i] = gamma_array(state.a[i + 1], state.c[i][None, :], stream)
        state.a[i] = state.phi[i] @ state.theta[i]

    # augmented counts start zeroed; the first sweep populates them
    state.x = [np.zeros((dims[0], J), dtype=np.int64)] + \
              [np.zeros((widths[i], J), dtype=np.int64) for i in range(T)]
    state.m = [np.zeros((J, widths[i]), dtype=np.int64) for i in range(T)]
    state.y_vk = [np.zeros((dims[i], widths[i]), dtype=np.int64) for i in range(T)]
    if data is not None:
        state.data = data
        state.x[0] = data.x
    return state
