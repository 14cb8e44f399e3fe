"""A small frozen pre-norm transformer encoder for scalar regression.

The encoder weights are random and never trained. Only the linear readout
on mean-pooled token features is fitted, in closed form (ridge). This gives
an accurate deterministic predictor without backprop, around which
stochastic attention is then calibrated.

Stochastic passes are keyed by ``(master_seed, pass_index, layer, head,
row)``: every attention row draws from its own substream, so a pass is a
pure function of its arguments.
"""

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import jsonio, kernels
from .attention import check_nu, softmax_rows
from .errors import DimensionMismatch, InvalidConfig, NoStochasticLayers, SingularSystem
from .rng import Stream

FORMAT = "stochattn.model/1"
LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int = 2
    n_heads: int = 2
    d_model: int = 16
    d_ff: int = 64
    n_tokens: int = 4
    n_features: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("n_layers", "n_heads", "d_model", "d_ff", "n_tokens", "n_features"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads:
            raise InvalidConfig(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )

    @property
    def patch_width(self):
        return -(-self.n_features // self.n_tokens)

    @property
    def d_head(self):
        return self.d_model // self.n_heads


@dataclass(frozen=True)
class InputCase:
    features: np.ndarray
    target: float | None = None

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.features, dtype=np.float64))
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise ValueError("features must be a finite vector")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)
        if self.target is not None:
            object.__setattr__(self, "target", float(self.target))


@dataclass(frozen=True, eq=False)
class ModelBundle:
    config: EncoderConfig
    weights: dict
    readout_weights: np.ndarray
    readout_bias: float = 0.0
    stochastic_layers: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        w = np.asarray(self.readout_weights, dtype=np.float64).copy()
        if w.shape != (self.config.d_model,):
            raise DimensionMismatch(
                f"readout has shape {w.shape}, expected ({self.config.d_model},)"
            )
        w.setflags(write=False)
        object.__setattr__(self, "readout_weights", w)
        object.__setattr__(self, "readout_bias", float(self.readout_bias))
        layers = frozenset(int(i) for i in self.stochastic_layers)
        bad = [i for i in layers if not 0 <= i < self.config.n_layers]
        if bad:
            raise InvalidConfig(f"stochastic layer indices out of range: {sorted(bad)}")
        object.__setattr__(self, "stochastic_layers", layers)
        for arr in self.weights.values():
            arr.setflags(write=False)


def _weight_shapes(cfg):
    d, f = cfg.d_model, cfg.d_ff
    shapes = {"embed": (cfg.patch_width, d), "pos": (cfg.n_tokens, d)}
    for i in range(cfg.n_layers):
        shapes.update({
            f"l{i}.ln1_g": (d,), f"l{i}.ln1_b": (d,),
            f"l{i}.wq": (d, d), f"l{i}.wk": (d, d), f"l{i}.wv": (d, d), f"l{i}.wo": (d, d),
            f"l{i}.ln2_g": (d,), f"l{i}.ln2_b": (d,),
            f"l{i}.w1": (d, f), f"l{i}.b1": (f,), f"l{i}.w2": (f, d), f"l{i}.b2": (d,),
        })
    shapes.update({"lnf_g": (d,), "lnf_b": (d,)})
    return shapes


def init_encoder(config):
    """Random encoder with zero readout and no stochastic layers.

    Matrices are Gaussian with variance ``1/fan_in``; the feed-forward bias
    is standard normal so the ReLU features are not all centred at the
    origin; layer norms start at identity.
    """
    if not isinstance(config, EncoderConfig):
        raise InvalidConfig("config must be an EncoderConfig")
    rng = np.random.default_rng(Stream.from_seed(config.seed, 0xE1C0).key)
    weights = {}
    for name, shape in _weight_shapes(config).items():
        leaf = name.split(".")[-1]
        if leaf.endswith("_g"):
            arr = np.ones(shape)
        elif leaf.endswith("_b") or leaf == "b2":
            arr = np.zeros(shape)
        elif leaf == "b1" or leaf == "pos":
            arr = rng.standard_normal(shape)
        else:
            arr = rng.standard_normal(shape) / np.sqrt(shape[0])
        weights[name] = arr
    return ModelBundle(config, weights, np.zeros(config.d_model), 0.0, frozenset())


def with_stochastic_layers(model, layers=None):
    """Copy of ``model`` with stochastic attention enabled on ``layers`` (all if None)."""
    if layers is None:
        layers = range(model.config.n_layers)
    return replace(model, stochastic_layers=frozenset(layers))


def _layer_norm(h, g, b):
    mu = h.mean(axis=-1, keepdims=True)
    var = h.var(axis=-1, keepdims=True)
    return (h - mu) / np.sqrt(var + LN_EPS) * g + b


def _tokens(model, x):
    cfg = model.config
    x = x.features if isinstance(x, InputCase) else np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != (cfg.n_features,):
        raise DimensionMismatch(f"expected {cfg.n_features} features, got {x.shape[0]}")
    padded = np.zeros(cfg.n_tokens * cfg.patch_width)
    padded[: x.shape[0]] = x
    w = model.weights
    return padded.reshape(cfg.n_tokens, cfg.patch_width) @ w["embed"] + w["pos"]


def _encode(model, x, nu=None, streams=None):
    """Pooled features, one row per pass stream (a single row when deterministic)."""
    cfg = model.config
    w = model.weights
    n_h, d_h, n_t = cfg.n_heads, cfg.d_head, cfg.n_tokens
    n_p = 1 if streams is None else len(streams)
    scale = 1.0 / np.sqrt(d_h)
    h = np.repeat(_tokens(model, x)[None], n_p, axis=0)

    def heads(t):
        return t.reshape(n_p, n_t, n_h, d_h).transpose(0, 2, 1, 3)

    for i in range(cfg.n_layers):
        p = f"l{i}."
        a = _layer_norm(h, w[p + "ln1_g"], w[p + "ln1_b"])
        q, k, v = heads(a @ w[p + "wq"]), heads(a @ w[p + "wk"]), heads(a @ w[p + "wv"])
        pi = softmax_rows(q @ k.transpose(0, 1, 3, 2) * scale)
        if streams is not None and i in model.stochastic_layers:
            keys = [s.child(i).key for s in streams]
            pi = kernels.multinomial_counts_multi(pi, nu, keys) / nu
        o = (pi @ v).transpose(0, 2, 1, 3).reshape(n_p, n_t, cfg.d_model)
        h = h + o @ w[p + "wo"]
        f = _layer_norm(h, w[p + "ln2_g"], w[p + "ln2_b"])
        h = h + np.maximum(f @ w[p + "w1"] + w[p + "b1"], 0.0) @ w[p + "w2"] + w[p + "b2"]
    return _layer_norm(h, w["lnf_g"], w["lnf_b"]).mean(axis=1)


def pooled_features(model, x):
    """Mean-pooled final-layer features of the deterministic encoder."""
    return _encode(model, x)[0]


def _pass_streams(model, nu, pass_indices, master_seed):
    check_nu(nu)
    if not model.stochastic_layers:
        raise NoStochasticLayers("enable stochastic attention on at least one layer")
    return [Stream.from_seed(master_seed, int(m)) for m in pass_indices]


def pooled_features_stochastic(model, x, nu, pass_index, master_seed):
    nu = check_nu(nu)
    return _encode(model, x, nu, _pass_streams(model, nu, [pass_index], master_seed))[0]


def readout(model, phi):
    return float(phi @ model.readout_weights + model.readout_bias)


def forward_deterministic(model, x):
    """Deterministic prediction: softmax attention everywhere."""
    return readout(model, pooled_features(model, x))


def forward_stochastic(model, x, nu, pass_index, master_seed):
    """One stochastic pass; attention rows in ``model.stochastic_layers`` are sampled.

    The result depends only on the arguments: row ``r`` of head ``h`` in
    layer ``l`` draws from the stream ``(master_seed, pass_index, l, h, r)``.
    """
    return readout(model, pooled_features_stochastic(model, x, nu, pass_index, master_seed))


def forward_stochastic_passes(model, x, nu, pass_indices, master_seed):
    """Predictions for several passes at once, as a float array.

    Entry ``i`` equals ``forward_stochastic(model, x, nu, pass_indices[i],
    master_seed)``: the passes are stacked along a leading axis, every
    stacked product is evaluated slice by slice, and the readout is applied
    row by row, so batching does not change the arithmetic.
    """
    nu = check_nu(nu)
    phi = _encode(model, x, nu, _pass_streams(model, nu, pass_indices, master_seed))
    return np.array([readout(model, row) for row in phi])


def solve_ridge(features, targets, ridge):
    """Minimise ``sum (y - w.phi - b)^2 + ridge * |w|^2`` (bias unpenalised).

    Returns ``(w, b)``. Solved from the normal equations.
    """
    phi = np.asarray(features, dtype=np.float64)
    if phi.ndim == 1:
        phi = phi[:, None]
    y = np.asarray(targets, dtype=np.float64)
    if phi.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{phi.shape[0]} feature rows vs {y.shape[0]} targets")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    x = np.hstack([phi, np.ones((phi.shape[0], 1))])
    penalty = np.full(x.shape[1], float(ridge))
    penalty[-1] = 0.0
    a = x.T @ x + np.diag(penalty)
    if np.linalg.matrix_rank(a) < a.shape[0]:
        raise SingularSystem("normal matrix is singular; use ridge > 0")
    try:
        beta = np.linalg.solve(a, x.T @ y)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return beta[:-1], float(beta[-1])


def ridge_gradient(features, targets, ridge, w, b):
    """Gradient of the ridge objective at ``(w, b)``; zero at the optimum."""
    phi = np.asarray(features, dtype=np.float64)
    if phi.ndim == 1:
        phi = phi[:, None]
    resid = np.asarray(targets, dtype=np.float64) - phi @ w - b
    return np.concatenate([-2.0 * phi.T @ resid + 2.0 * ridge * w, [-2.0 * resid.sum()]])


def feature_matrix(model, cases):
    return np.array([pooled_features(model, c) for c in cases])


def fit_readout(model, train, ridge):
    """Refit the readout on ``train`` by ridge least squares; encoder untouched."""
    if len(train) < 2:
        raise ValueError("need at least 2 training cases")
    if any(c.target is None for c in train):
        raise ValueError("all training cases need targets")
    phi = feature_matrix(model, train)
    w, b = solve_ridge(phi, [c.target for c in train], ridge)
    return replace(model, readout_weights=w, readout_bias=b)


def to_dict(model):
    cfg = asdict(model.config)
    weights = {
        name: {"shape": list(arr.shape), "data": arr.ravel(order="C")}
        for name, arr in model.weights.items()
    }
    return {
        "format": FORMAT,
        "config": cfg,
        "weights": weights,
        "readout": {"weights": model.readout_weights, "bias": model.readout_bias},
        "stochastic_layers": sorted(model.stochastic_layers),
    }


def from_dict(doc):
    if doc.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} document")
    cfg = EncoderConfig(**doc["config"])
    expected = _weight_shapes(cfg)
    weights = {}
    for name, shape in expected.items():
        entry = doc["weights"][name]
        if tuple(entry["shape"]) != shape:
            raise DimensionMismatch(f"{name}: shape {entry['shape']} != {list(shape)}")
        weights[name] = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
    extra = set(doc["weights"]) - set(expected)
    if extra:
        raise ValueError(f"unexpected weights: {sorted(extra)}")
    return ModelBundle(
        cfg, weights,
        np.asarray(doc["readout"]["weights"], dtype=np.float64),
        doc["readout"]["bias"],
        frozenset(doc["stochastic_layers"]),
    )


def save_model(model, path):
    jsonio.dump(to_dict(model), path, indent=1)


def load_model(path):
    return from_dict(jsonio.load(path))
