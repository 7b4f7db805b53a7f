"""Small feedforward networks in numpy.

Everything here works on float64 arrays. Weight matrices are stored
``(out_features, in_features)`` so a layer computes ``x @ W.T + b``.

Batch normalization (when enabled for a hidden layer) sits between the affine
map and the ReLU. In ``"train"`` mode it uses batch statistics and refreshes the
running estimates in place; ``"eval"`` mode only reads the running estimates.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, CorruptionError, FormatVersionError, InvalidBatchError

BN_MOMENTUM = 0.99
BN_EPS = 1e-5

WEIGHTS_MAGIC = b"MLPW"
WEIGHTS_VERSION = 1
_HEADER = struct.Struct("<4sIQ")

_OUTPUT_ACTIVATIONS = ("linear", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    """Network topology.

    ``layer_sizes`` runs from input width to output width, so ``[8, 400, 300, 1]``
    is two hidden layers. ``use_batch_norm`` has one flag per hidden layer; a
    single bool is broadcast.
    """

    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "linear"
    use_batch_norm: tuple[bool, ...] = ()

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        if len(sizes) < 2:
            raise ContractError("layer_sizes needs at least input and output widths")
        if any(n < 1 for n in sizes[:-1]) or sizes[-1] < 0:
            raise ContractError(f"invalid layer sizes {sizes}")
        if self.hidden_activation != "relu":
            raise ContractError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation not in _OUTPUT_ACTIVATIONS:
            raise ContractError(f"unsupported output activation {self.output_activation!r}")
        n_hidden = len(sizes) - 2
        bn = self.use_batch_norm
        if isinstance(bn, (bool, np.bool_)):
            bn = (bool(bn),) * n_hidden
        bn = tuple(bool(b) for b in bn) if bn else (False,) * n_hidden
        if len(bn) != n_hidden:
            raise ContractError("use_batch_norm needs one flag per hidden layer")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "use_batch_norm", bn)

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    def with_output_size(self, n: int) -> "MlpSpec":
        return MlpSpec(self.layer_sizes[:-1] + (n,), self.hidden_activation,
                       self.output_activation, self.use_batch_norm)

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "use_batch_norm": list(self.use_batch_norm),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(tuple(d["layer_sizes"]), d["hidden_activation"], d["output_activation"],
                   tuple(d["use_batch_norm"]))


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM

    def copy(self) -> "BatchNormParams":
        return BatchNormParams(self.gamma.copy(), self.beta.copy(), self.running_mean.copy(),
                               self.running_var.copy(), self.momentum)


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    batch_norm: list[BatchNormParams | None] = field(default_factory=list)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         [bn.copy() if bn is not None else None for bn in self.batch_norm])

    def trainable(self) -> list[np.ndarray]:
        """Weights, then biases, then BN scale/shift pairs. Running stats excluded."""
        out = list(self.weights) + list(self.biases)
        for bn in self.batch_norm:
            if bn is not None:
                out += [bn.gamma, bn.beta]
        return out

    def with_trainable(self, tensors: Sequence[np.ndarray]) -> "MlpParams":
        n = len(self.weights)
        it = iter(tensors[2 * n:])
        bns = []
        for bn in self.batch_norm:
            if bn is None:
                bns.append(None)
            else:
                bns.append(BatchNormParams(next(it), next(it), bn.running_mean.copy(),
                                           bn.running_var.copy(), bn.momentum))
        return MlpParams(list(tensors[:n]), list(tensors[n:2 * n]), bns)

    def tensors(self) -> list[np.ndarray]:
        """Every stored array in serialization order."""
        out = list(self.weights) + list(self.biases)
        for bn in self.batch_norm:
            if bn is not None:
                out += [bn.gamma, bn.beta, bn.running_mean, bn.running_var]
        return out

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.tensors()))


@dataclass
class Gradients:
    """Gradients with the same layout as ``MlpParams.trainable()``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    bn_gamma: list[np.ndarray | None]
    bn_beta: list[np.ndarray | None]

    def trainable(self) -> list[np.ndarray]:
        out = list(self.weights) + list(self.biases)
        for g, b in zip(self.bn_gamma, self.bn_beta):
            if g is not None:
                out += [g, b]
        return out


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: MlpParams | Sequence[np.ndarray], lr: float = 1e-3, **kw) -> "AdamState":
        tensors = params.trainable() if isinstance(params, MlpParams) else list(params)
        return cls([np.zeros_like(p) for p in tensors], [np.zeros_like(p) for p in tensors], lr=lr, **kw)

    def copy(self) -> "AdamState":
        return AdamState([m.copy() for m in self.m], [v.copy() for v in self.v], self.t, self.lr,
                         self.beta1, self.beta2, self.eps)


def init_params(spec: MlpSpec, rng: np.random.Generator, final_scale: float | None = None) -> MlpParams:
    """Uniform fan-in init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``.

    ``final_scale`` overrides the output layer's range (DDPG actors use 3e-3).
    """
    weights, biases, bns = [], [], []
    sizes = spec.layer_sizes
    for i in range(spec.n_layers):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        if i == spec.n_layers - 1 and final_scale is not None:
            bound = final_scale
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    for i, use in enumerate(spec.use_batch_norm):
        if use:
            n = sizes[i + 1]
            bns.append(BatchNormParams(np.ones(n), np.zeros(n), np.zeros(n), np.ones(n)))
        else:
            bns.append(None)
    return MlpParams(weights, biases, bns)


def check_params(spec: MlpSpec, params: MlpParams) -> None:
    sizes = spec.layer_sizes
    if len(params.weights) != spec.n_layers or len(params.biases) != spec.n_layers:
        raise ContractError("parameter layer count does not match spec")
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
            raise ContractError(f"layer {i} has shape {w.shape}/{b.shape}, spec wants "
                                f"{(sizes[i + 1], sizes[i])}")
    if len(params.batch_norm) != len(spec.use_batch_norm):
        raise ContractError("batch-norm layer count does not match spec")
    for i, (use, bn) in enumerate(zip(spec.use_batch_norm, params.batch_norm)):
        if use != (bn is not None):
            raise ContractError(f"hidden layer {i}: batch-norm presence does not match spec")


def _output_affine(h: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Row-wise reduction keeps each output unit's value independent of how many
    # units the layer has, so growing the layer leaves old outputs bit-identical.
    return (h[:, None, :] * w[None, :, :]).sum(axis=-1) + b


def _as_batch(inputs, width: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError(f"expected a non-empty batch of vectors, got shape {np.shape(inputs)}")
    if x.shape[1] != width:
        raise ContractError(f"input width {x.shape[1]} != layer_sizes[0] = {width}")
    return x, single


def forward(spec: MlpSpec, params: MlpParams, inputs, mode: str = "eval",
            return_cache: bool = False, update_stats: bool = True):
    """Evaluate the network on a batch.

    A 1-D input is treated as a batch of one and a 1-D output is returned.
    With ``return_cache`` the intermediate values needed by ``backward`` come
    back as a second element.
    """
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    check_params(spec, params)
    x, single = _as_batch(inputs, spec.input_size)
    if mode == "train" and any(spec.use_batch_norm) and x.shape[0] < 2:
        raise InvalidBatchError("train-mode batch normalization needs at least 2 rows")

    cache = {"x": x, "layers": [], "mode": mode}
    h = x
    last = spec.n_layers - 1
    for i in range(spec.n_layers):
        w, b = params.weights[i], params.biases[i]
        if i == last:
            z = _output_affine(h, w, b)
            out = np.tanh(z) if spec.output_activation == "tanh" else z
            cache["layers"].append({"h_in": h, "out": out})
            h = out
            break
        z = h @ w.T + b
        layer = {"h_in": h}
        bn = params.batch_norm[i]
        if bn is not None:
            if mode == "train":
                mu = z.mean(axis=0)
                d = z - mu
                # zero-variance features are centred exactly
                d[:, np.ptp(z, axis=0) == 0.0] = 0.0
                var = (d * d).mean(axis=0)
                if update_stats:
                    bn.running_mean[...] = bn.momentum * bn.running_mean + (1 - bn.momentum) * mu
                    bn.running_var[...] = bn.momentum * bn.running_var + (1 - bn.momentum) * var
            else:
                d = z - bn.running_mean
                var = bn.running_var
            inv = 1.0 / np.sqrt(var + BN_EPS)
            xhat = d * inv
            z = bn.gamma * xhat + bn.beta
            layer.update(xhat=xhat, inv=inv)
        a = np.maximum(z, 0.0)
        layer["mask"] = z > 0.0
        cache["layers"].append(layer)
        h = a

    out = h[0] if single else h
    if return_cache:
        return out, cache
    return out


def backward(spec: MlpSpec, params: MlpParams, inputs, upstream, mode: str = "eval",
             cache: dict | None = None, input_only: bool = False) -> tuple[Gradients | None, np.ndarray]:
    """Reverse-mode gradients of ``sum(upstream * forward(inputs))``.

    Returns ``(parameter_gradients, input_gradients)``. When ``cache`` from a
    matching ``forward`` call is supplied the forward pass is not repeated.
    ``input_only`` skips the parameter gradients and returns ``None`` for them.
    """
    if cache is None:
        _, cache = forward(spec, params, inputs, mode=mode, return_cache=True, update_stats=False)
    mode = cache["mode"]
    x = cache["x"]
    g = np.asarray(upstream, dtype=np.float64)
    if g.ndim == 1 and x.shape[0] == 1 and g.shape[0] == spec.output_size:
        g = g[None, :]
    if g.shape != (x.shape[0], spec.output_size):
        raise ContractError(f"upstream shape {g.shape} != output shape {(x.shape[0], spec.output_size)}")

    n = spec.n_layers
    dws: list = [None] * n
    dbs: list = [None] * n
    dgam: list = [None] * (n - 1)
    dbet: list = [None] * (n - 1)

    out_layer = cache["layers"][-1]
    if spec.output_activation == "tanh":
        g = g * (1.0 - out_layer["out"] ** 2)
    for i in range(n - 1, -1, -1):
        layer = cache["layers"][i]
        if i < n - 1:
            g = g * layer["mask"]
            bn = params.batch_norm[i]
            if bn is not None:
                xhat, inv = layer["xhat"], layer["inv"]
                if not input_only:
                    dgam[i] = (g * xhat).sum(axis=0)
                    dbet[i] = g.sum(axis=0)
                dxhat = g * bn.gamma
                if mode == "train":
                    m = g.shape[0]
                    g = (inv / m) * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
                else:
                    g = dxhat * inv
        if not input_only:
            dws[i] = g.T @ layer["h_in"]
            dbs[i] = g.sum(axis=0)
        g = g @ params.weights[i]

    if input_only:
        return None, g
    grads = Gradients(dws, dbs, [dgam[i] if params.batch_norm[i] is not None else None for i in range(n - 1)],
                      [dbet[i] if params.batch_norm[i] is not None else None for i in range(n - 1)])
    return grads, g


def adam_update(tensors: Sequence[np.ndarray], gradients: Sequence[np.ndarray],
                state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """Bias-corrected Adam on a flat list of tensors."""
    if len(gradients) != len(tensors) or len(state.m) != len(tensors):
        raise ContractError("gradient / optimizer state does not match parameters")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(tensors, gradients, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise ContractError(f"shape mismatch {g.shape} vs {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)


def adam_step(params: MlpParams, gradients: Gradients | Sequence[np.ndarray],
              state: AdamState) -> tuple[MlpParams, AdamState]:
    """One Adam step on every trainable tensor. Inputs are left untouched."""
    gs = gradients.trainable() if isinstance(gradients, Gradients) else list(gradients)
    new_p, new_state = adam_update(params.trainable(), gs, state)
    return params.with_trainable(new_p), new_state


def adam_step_inplace(params: MlpParams, gradients: Gradients | Sequence[np.ndarray],
                      state: AdamState) -> None:
    """Same update as ``adam_step`` but overwrites ``params`` and ``state``.

    Training loops use this to avoid reallocating every tensor per step.
    """
    gs = gradients.trainable() if isinstance(gradients, Gradients) else list(gradients)
    ps = params.trainable()
    if len(gs) != len(ps) or len(state.m) != len(ps):
        raise ContractError("gradient / optimizer state does not match parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(ps, gs, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise ContractError(f"shape mismatch {g.shape} vs {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = v / c2
        np.sqrt(denom, out=denom)
        denom += state.eps
        step = m / c1
        step *= state.lr
        step /= denom
        p -= step


def clip_by_global_norm(gradients: Gradients, max_norm: float) -> Gradients:
    tensors = gradients.trainable()
    norm = float(np.sqrt(sum(float((t * t).sum()) for t in tensors)))
    if norm <= max_norm or norm == 0.0:
        return gradients
    s = max_norm / norm
    return Gradients([w * s for w in gradients.weights], [b * s for b in gradients.biases],
                     [g * s if g is not None else None for g in gradients.bn_gamma],
                     [b * s if b is not None else None for b in gradients.bn_beta])


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """Blend ``tau * online + (1 - tau) * target`` over every tensor, running stats included."""
    if not 0.0 < tau <= 1.0:
        raise ContractError(f"tau must lie in (0, 1], got {tau}")
    ts, os_ = target.tensors(), online.tensors()
    if len(ts) != len(os_) or any(a.shape != b.shape for a, b in zip(ts, os_)):
        raise ContractError("target and online parameters differ in shape")
    if tau == 1.0:
        return online.copy()
    blended = [tau * o + (1.0 - tau) * t for t, o in zip(ts, os_)]
    return _from_tensors(target, blended)


def soft_update_inplace(target: MlpParams, online: MlpParams, tau: float) -> None:
    """In-place form of ``soft_update``; ``target`` is overwritten."""
    if not 0.0 < tau <= 1.0:
        raise ContractError(f"tau must lie in (0, 1], got {tau}")
    ts, os_ = target.tensors(), online.tensors()
    if len(ts) != len(os_) or any(a.shape != b.shape for a, b in zip(ts, os_)):
        raise ContractError("target and online parameters differ in shape")
    for t, o in zip(ts, os_):
        if tau == 1.0:
            t[...] = o
        else:
            t *= 1.0 - tau
            t += tau * o


def _from_tensors(template: MlpParams, tensors: Sequence[np.ndarray]) -> MlpParams:
    n = len(template.weights)
    it = iter(tensors[2 * n:])
    bns = []
    for bn in template.batch_norm:
        if bn is None:
            bns.append(None)
        else:
            bns.append(BatchNormParams(next(it), next(it), next(it), next(it), bn.momentum))
    return MlpParams(list(tensors[:n]), list(tensors[n:2 * n]), bns)


def append_output_unit(params: MlpParams, weight_row: np.ndarray, bias: float) -> MlpParams:
    """Copy of ``params`` with one extra output unit; existing rows are untouched."""
    new = params.copy()
    new.weights[-1] = np.vstack([params.weights[-1], np.asarray(weight_row, dtype=np.float64)[None, :]])
    new.biases[-1] = np.append(params.biases[-1], float(bias))
    return new


def params_to_bytes(params: MlpParams) -> bytes:
    tensors = params.tensors()
    flat = np.concatenate([t.ravel() for t in tensors]) if tensors else np.zeros(0)
    header = _HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, flat.size)
    return header + flat.astype("<f8").tobytes()


def params_from_bytes(spec: MlpSpec, data: bytes, source: str = "<bytes>",
                      momentum: float = BN_MOMENTUM) -> MlpParams:
    flat = read_f64_blob(data, WEIGHTS_MAGIC, source)
    template = init_params(spec, np.random.default_rng(0))
    shapes = [t.shape for t in template.tensors()]
    expected = sum(int(np.prod(s)) for s in shapes)
    if flat.size != expected:
        raise CorruptionError(source, f"holds {flat.size} values, spec needs {expected}")
    tensors, pos = [], 0
    for s in shapes:
        k = int(np.prod(s))
        tensors.append(flat[pos:pos + k].reshape(s).copy())
        pos += k
    params = _from_tensors(template, tensors)
    for bn in params.batch_norm:
        if bn is not None:
            bn.momentum = momentum
    return params


def f64_blob(magic: bytes, values: np.ndarray) -> bytes:
    flat = np.ascontiguousarray(values, dtype=np.float64).ravel()
    return _HEADER.pack(magic, WEIGHTS_VERSION, flat.size) + flat.astype("<f8").tobytes()


def read_f64_blob(data: bytes, magic: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(data) < _HEADER.size:
        raise CorruptionError(source, "truncated header")
    got_magic, version, count = _HEADER.unpack_from(data)
    if got_magic != magic:
        raise CorruptionError(source, f"bad magic {got_magic!r}")
    if version != WEIGHTS_VERSION:
        raise FormatVersionError(f"{source}: format version {version}, expected {WEIGHTS_VERSION}")
    body = data[_HEADER.size:]
    if len(body) != 8 * count:
        raise CorruptionError(source, f"expected {8 * count} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)
