"""Small sequence models (dense / vanilla RNN / LSTM) with exact
layer-by-layer reverse-mode gradients, written directly in numpy.

A :class:`Model` is an ordered stack of hidden layers plus a linear ``head``
producing the flat ``(batch, lookforward * d_out)`` prediction.  Dense stacks
consume the flat ``(batch, lookback * d_in)`` window; recurrent stacks reshape
it to ``(batch, lookback, d_in)`` and unroll over time, after which the head
maps the final hidden state to all lookforward outputs at once.

``forward`` returns a :class:`ForwardCache` holding every intermediate the
backward pass needs; ``backward`` must be fed the cache of the immediately
preceding forward on the same model instance.  Gradients accumulate into
``Parameter.grad`` buffers, zeroed by the caller per batch.

Inner products here are plain BLAS-backed numpy matmuls: batches make them
big enough that jitting the unroll buys nothing (the numba kernels live in
the losses and simulators, whose loops are genuinely scalar).
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, StateError

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray


def _make_param(name, shape, rng, limit):
    if rng is None or limit == 0.0:
        value = np.zeros(shape)
    else:
        value = rng.uniform(size=shape, low=-limit, high=limit)
    return Parameter(name, value, np.zeros(shape))


# ---------------------------------------------------------------------------
# Layer specs (the serializable description) and layer implementations.

@dataclass
class DenseSpec:
    in_dim: int
    out_dim: int
    activation: str = "tanh"
    kind: str = "dense"


@dataclass
class RnnSpec:
    in_dim: int
    hidden: int
    kind: str = "rnn"


@dataclass
class LstmSpec:
    in_dim: int
    hidden: int
    kind: str = "lstm"


@dataclass
class DropoutSpec:
    rate: float
    kind: str = "dropout"


_SPEC_KINDS = {"dense": DenseSpec, "rnn": RnnSpec, "lstm": LstmSpec, "dropout": DropoutSpec}


def spec_to_dict(spec):
    d = dict(spec.__dict__)
    return d


def spec_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    if kind not in _SPEC_KINDS:
        raise ConfigError(f"unknown layer kind {kind!r}")
    return _SPEC_KINDS[kind](**d)


_ACTIVATIONS = ("tanh", "relu", "linear")


class Dense:
    """Affine map with tanh/relu/linear activation; consumes 2-D input."""

    def __init__(self, spec, name, rng):
        if spec.in_dim <= 0 or spec.out_dim <= 0:
            raise ShapeError(f"dense dims must be positive, got {spec}")
        if spec.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {spec.activation!r}")
        self.spec = spec
        limit = 1.0 / np.sqrt(spec.in_dim)
        self.w = _make_param(f"{name}.W", (spec.in_dim, spec.out_dim), rng, limit)
        self.b = _make_param(f"{name}.b", (1, spec.out_dim), rng, 0.0)

    @property
    def params(self):
        return [self.w, self.b]

    def forward(self, x, ctx):
        if x.ndim != 2 or x.shape[1] != self.spec.in_dim:
            raise ShapeError(
                f"dense layer expects (batch, {self.spec.in_dim}), got {x.shape}")
        z = x @ self.w.value + self.b.value
        act = self.spec.activation
        if act == "tanh":
            out = np.tanh(z)
            cache = (x, out)
        elif act == "relu":
            out = np.maximum(z, 0.0)
            cache = (x, z)
        else:
            out = z
            cache = (x, None)
        return out, cache

    def backward(self, cache, dout):
        x, saved = cache
        act = self.spec.activation
        if act == "tanh":
            dz = dout * (1.0 - saved * saved)
        elif act == "relu":
            dz = dout * (saved > 0.0)
        else:
            dz = dout
        self.w.grad += x.T @ dz
        self.b.grad += dz.sum(axis=0, keepdims=True)
        return dz @ self.w.value.T


class RnnCell:
    """tanh RNN unrolled over the full window; returns all hidden states."""

    def __init__(self, spec, name, rng):
        if spec.in_dim <= 0 or spec.hidden <= 0:
            raise ShapeError(f"rnn dims must be positive, got {spec}")
        self.spec = spec
        self.wx = _make_param(f"{name}.Wx", (spec.in_dim, spec.hidden), rng,
                              1.0 / np.sqrt(spec.in_dim))
        self.wh = _make_param(f"{name}.Wh", (spec.hidden, spec.hidden), rng,
                              1.0 / np.sqrt(spec.hidden))
        self.b = _make_param(f"{name}.b", (1, spec.hidden), rng, 0.0)

    @property
    def params(self):
        return [self.wx, self.wh, self.b]

    def forward(self, x, ctx):
        if x.ndim != 3 or x.shape[2] != self.spec.in_dim:
            raise ShapeError(
                f"rnn cell expects (batch, T, {self.spec.in_dim}), got {x.shape}")
        batch, steps, _ = x.shape
        hid = self.spec.hidden
        hs = np.zeros((batch, steps, hid))
        h = np.zeros((batch, hid))
        for t in range(steps):
            h = np.tanh(x[:, t, :] @ self.wx.value + h @ self.wh.value + self.b.value)
            hs[:, t, :] = h
        return hs, (x, hs)

    def backward(self, cache, dout):
        x, hs = cache
        batch, steps, _ = x.shape
        dx = np.zeros_like(x)
        dh_carry = np.zeros((batch, self.spec.hidden))
        for t in range(steps - 1, -1, -1):
            dh = dout[:, t, :] + dh_carry
            dz = dh * (1.0 - hs[:, t, :] ** 2)
            prev_h = hs[:, t - 1, :] if t > 0 else np.zeros((batch, self.spec.hidden))
            self.wx.grad += x[:, t, :].T @ dz
            self.wh.grad += prev_h.T @ dz
            self.b.grad += dz.sum(axis=0, keepdims=True)
            dx[:, t, :] = dz @ self.wx.value.T
            dh_carry = dz @ self.wh.value.T
        return dx


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LstmCell:
    """Standard LSTM (gate order i, f, o, g) unrolled over the window."""

    def __init__(self, spec, name, rng):
        if spec.in_dim <= 0 or spec.hidden <= 0:
            raise ShapeError(f"lstm dims must be positive, got {spec}")
        self.spec = spec
        hid = spec.hidden
        self.wx = _make_param(f"{name}.Wx", (spec.in_dim, 4 * hid), rng,
                              1.0 / np.sqrt(spec.in_dim))
        self.wh = _make_param(f"{name}.Wh", (hid, 4 * hid), rng, 1.0 / np.sqrt(hid))
        self.b = _make_param(f"{name}.b", (1, 4 * hid), rng, 0.0)

    @property
    def params(self):
        return [self.wx, self.wh, self.b]

    def forward(self, x, ctx):
        if x.ndim != 3 or x.shape[2] != self.spec.in_dim:
            raise ShapeError(
                f"lstm cell expects (batch, T, {self.spec.in_dim}), got {x.shape}")
        batch, steps, _ = x.shape
        hid = self.spec.hidden
        h = np.zeros((batch, hid))
        c = np.zeros((batch, hid))
        hs = np.zeros((batch, steps, hid))
        gates = []
        cells = []
        for t in range(steps):
            z = x[:, t, :] @ self.wx.value + h @ self.wh.value + self.b.value
            i = _sigmoid(z[:, :hid])
            f = _sigmoid(z[:, hid:2 * hid])
            o = _sigmoid(z[:, 2 * hid:3 * hid])
            g = np.tanh(z[:, 3 * hid:])
            c = f * c + i * g
            h = o * np.tanh(c)
            hs[:, t, :] = h
            gates.append((i, f, o, g))
            cells.append(c)
        return hs, (x, hs, gates, cells)

    def backward(self, cache, dout):
        x, hs, gates, cells = cache
        batch, steps, _ = x.shape
        hid = self.spec.hidden
        dx = np.zeros_like(x)
        dh_carry = np.zeros((batch, hid))
        dc_carry = np.zeros((batch, hid))
        for t in range(steps - 1, -1, -1):
            i, f, o, g = gates[t]
            c = cells[t]
            prev_c = cells[t - 1] if t > 0 else np.zeros((batch, hid))
            prev_h = hs[:, t - 1, :] if t > 0 else np.zeros((batch, hid))
            dh = dout[:, t, :] + dh_carry
            tanh_c = np.tanh(c)
            dc = dc_carry + dh * o * (1.0 - tanh_c * tanh_c)
            di = dc * g
            df = dc * prev_c
            do = dh * tanh_c
            dg = dc * i
            dz = np.hstack((
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                do * o * (1.0 - o),
                dg * (1.0 - g * g),
            ))
            self.wx.grad += x[:, t, :].T @ dz
            self.wh.grad += prev_h.T @ dz
            self.b.grad += dz.sum(axis=0, keepdims=True)
            dx[:, t, :] = dz @ self.wx.value.T
            dh_carry = dz @ self.wh.value.T
            dc_carry = dc * f
        return dx


class Dropout:
    """Inverted dropout: train mode zeroes a ``rate`` fraction and rescales
    survivors by 1/(1-rate); eval mode is the exact identity."""

    def __init__(self, spec, name, rng):
        if not 0.0 <= spec.rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {spec.rate}")
        self.spec = spec

    @property
    def params(self):
        return []

    def forward(self, x, ctx):
        if ctx.mode != "train" or self.spec.rate == 0.0:
            return x, None
        if ctx.rng is None:
            raise StateError("train-mode dropout needs an rng")
        keep = 1.0 - self.spec.rate
        mask = (ctx.rng.uniform(size=x.shape) >= self.spec.rate) / keep
        return x * mask, mask

    def backward(self, cache, dout):
        if cache is None:
            return dout
        return dout * cache


_LAYER_CLASSES = {"dense": Dense, "rnn": RnnCell, "lstm": LstmCell, "dropout": Dropout}


# ---------------------------------------------------------------------------
# Model: hidden stack + linear head over flat windows.

@dataclass
class _Ctx:
    mode: str
    rng: object


class ForwardCache:
    """Per-layer intermediates from one forward pass, bound to that pass."""

    def __init__(self, model, token, entries, head_cache, batch):
        self.model_id = id(model)
        self.token = token
        self.entries = entries          # list of (transition, layer_cache)
        self.head_cache = head_cache
        self.batch = batch


class Model:
    """Layer stack with a linear head; see module docstring for wiring."""

    def __init__(self, specs, rng, seq_shape=None):
        if not specs:
            raise ConfigError("model needs at least a head layer spec")
        *hidden_specs, head_spec = specs
        if not isinstance(head_spec, DenseSpec):
            raise ConfigError("the final layer spec (the head) must be dense")
        self.layers = []
        for idx, spec in enumerate(hidden_specs):
            cls = _LAYER_CLASSES[spec.kind]
            self.layers.append(cls(spec, f"layer{idx}", rng))
        self.head = Dense(head_spec, "head", rng)
        self.seq_shape = tuple(seq_shape) if seq_shape is not None else None
        if self._has_recurrent() and self.seq_shape is None:
            raise ConfigError("recurrent layers need seq_shape=(lookback, d_in)")
        self.mode = "eval"
        self._forward_token = 0
        self._check_dims()

    def _has_recurrent(self):
        return any(isinstance(l, (RnnCell, LstmCell)) for l in self.layers)

    def _check_dims(self):
        width = None if self.seq_shape is None else self.seq_shape[1]
        flat = None if self.seq_shape is None else self.seq_shape[0] * self.seq_shape[1]
        cur, seq = (flat, False) if flat is not None else (None, False)
        for layer in self.layers:
            if isinstance(layer, Dropout):
                continue
            if isinstance(layer, (RnnCell, LstmCell)):
                expect = width if not seq else cur
                if expect is not None and layer.spec.in_dim != expect:
                    raise ShapeError(
                        f"layer {layer.wx.name} expects in_dim {layer.spec.in_dim}, "
                        f"stack provides {expect}")
                cur, seq = layer.spec.hidden, True
            else:
                if seq:
                    expect = cur
                elif cur is not None:
                    expect = cur
                else:
                    expect = None
                if expect is not None and layer.spec.in_dim != expect:
                    raise ShapeError(
                        f"layer {layer.w.name} expects in_dim {layer.spec.in_dim}, "
                        f"stack provides {expect}")
                cur, seq = layer.spec.out_dim, False
        expect = cur
        if expect is not None and self.head.spec.in_dim != expect:
            raise ShapeError(
                f"head expects in_dim {self.head.spec.in_dim}, stack provides {expect}")

    # -- parameters ---------------------------------------------------------

    @property
    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params)
        out.extend(self.head.params)
        return out

    def param_count(self):
        return int(sum(p.value.size for p in self.params))

    def zero_grads(self):
        for p in self.params:
            p.grad[...] = 0.0

    def set_mode(self, mode):
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be train or eval, got {mode!r}")
        self.mode = mode

    # -- forward / backward -------------------------------------------------

    def forward(self, inputs, rng=None):
        """Run the stack on flat ``(batch, lookback * d_in)`` inputs.

        Returns ``(outputs, cache)``; in train mode dropout masks are drawn
        from ``rng``.
        """
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"inputs must be 2-D, got ndim={x.ndim}")
        ctx = _Ctx(self.mode, rng)
        batch = x.shape[0]
        entries = []
        seq = False
        for layer in self.layers:
            transition = None
            if isinstance(layer, (RnnCell, LstmCell)) and not seq:
                lb, d_in = self.seq_shape
                if x.shape[1] != lb * d_in:
                    raise ShapeError(
                        f"input width {x.shape[1]} != lookback*d_in {lb * d_in}")
                x = x.reshape(batch, lb, d_in)
                seq = True
                transition = "to_seq"
            elif isinstance(layer, Dense) and seq:
                x = x[:, -1, :]
                seq = False
                transition = "last_step"
            x, layer_cache = layer.forward(x, ctx)
            entries.append((transition, layer_cache))
        head_transition = None
        if seq:
            x = x[:, -1, :]
            head_transition = "last_step"
        out, head_cache = self.head.forward(x, ctx)
        self._forward_token += 1
        cache = ForwardCache(self, self._forward_token,
                             entries, (head_transition, head_cache), batch)
        return out, cache

    def backward(self, cache, grad_out):
        """Accumulate parameter gradients of ``outputs . grad_out``.

        ``cache`` must come from the immediately preceding ``forward`` on this
        model instance.
        """
        if not isinstance(cache, ForwardCache) or cache.model_id != id(self):
            raise StateError("cache does not belong to this model")
        if cache.token != self._forward_token:
            raise StateError("stale cache: model ran forward again since")
        grad_out = np.asarray(grad_out, dtype=np.float64)
        head_transition, head_cache = cache.head_cache
        dx = self.head.backward(head_cache, grad_out)
        seq_len = None if self.seq_shape is None else self.seq_shape[0]
        if head_transition == "last_step":
            dx = _expand_last_step(dx, seq_len)
        for layer, (transition, layer_cache) in zip(
                reversed(self.layers), reversed(cache.entries)):
            dx = layer.backward(layer_cache, dx)
            if transition == "last_step":
                dx = _expand_last_step(dx, seq_len)
            elif transition == "to_seq":
                dx = dx.reshape(cache.batch, -1)
        return dx


def _expand_last_step(dx, steps):
    full = np.zeros((dx.shape[0], steps, dx.shape[1]))
    full[:, -1, :] = dx
    return full


def init_model(specs, rng, seq_shape=None):
    """Build a model with 1/sqrt(fan-in) scaled-uniform weights, zero biases."""
    return Model(specs, rng, seq_shape=seq_shape)


def build_specs(arch, lb, d_in, lf, d_out, hidden=None, layers=None,
                dropout=0.0, activation="tanh"):
    """Standard stacks used by the CLI and experiments.

    ``arch`` is one of dense / rnn / lstm.  Desk-scale defaults: dense uses 2
    hidden layers of width 32, recurrent models one cell of hidden size 24.
    ``dropout > 0`` prepends an input-dropout layer.
    """
    if arch == "dense":
        hidden = 32 if hidden is None else hidden
        layers = 2 if layers is None else layers
        specs = []
        width = lb * d_in
        for _ in range(layers):
            specs.append(DenseSpec(width, hidden, activation))
            width = hidden
        specs.append(DenseSpec(width, lf * d_out, "linear"))
        seq_shape = None
    elif arch in ("rnn", "lstm"):
        hidden = 24 if hidden is None else hidden
        layers = 1 if layers is None else layers
        cell = RnnSpec if arch == "rnn" else LstmSpec
        specs = []
        width = d_in
        for _ in range(layers):
            specs.append(cell(width, hidden))
            width = hidden
        specs.append(DenseSpec(width, lf * d_out, "linear"))
        seq_shape = (lb, d_in)
    else:
        raise ConfigError(f"unknown architecture {arch!r}")
    if dropout > 0.0:
        specs.insert(0, DropoutSpec(dropout))
    return specs, seq_shape


# ---------------------------------------------------------------------------
# Checkpoints: JSON, bit-exact round trip (floats serialized via repr).

def save_checkpoint(model, path, seed=None, epoch=0, best_val_loss=None):
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "layer_specs": [spec_to_dict(l.spec) for l in model.layers]
                       + [spec_to_dict(model.head.spec)],
        "seq_shape": list(model.seq_shape) if model.seq_shape else None,
        "seed": seed,
        "epoch": epoch,
        "best_val_loss": best_val_loss,
        "parameters": {p.name: p.value.tolist() for p in model.params},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    """Rebuild the model from a checkpoint file; returns (model, doc)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    specs = [spec_from_dict(d) for d in doc["layer_specs"]]
    seq_shape = doc.get("seq_shape")
    model = Model(specs, rng=None, seq_shape=seq_shape)
    for p in model.params:
        stored = np.asarray(doc["parameters"][p.name], dtype=np.float64)
        if stored.shape != p.value.shape:
            raise ShapeError(
                f"checkpoint parameter {p.name} has shape {stored.shape}, "
                f"model expects {p.value.shape}")
        p.value[...] = stored
    return model, doc
