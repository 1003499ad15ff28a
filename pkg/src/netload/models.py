"""FCNN and two-layer LSTM regressors with hand-written backpropagation.

Arrays use the row-vector convention: a batch of inputs is ``(batch, features)``
and a dense layer computes ``x @ W + b``. LSTM gate blocks are stored fused,
``W`` of shape ``(in, 4H)``, in the order input, forget, output, candidate.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .numkernel import ShapeError, sigmoid

GATES = ("i", "f", "o", "g")
FORGET_BIAS = 1.0


@dataclass(frozen=True)
class DropoutSpec:
    rate: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.1 <= self.rate <= 0.3:
            raise ValueError(f"dropout rate {self.rate} outside [0.1, 0.3]")


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability ``rate``, else 1/(1-rate)."""
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def _mask_rng(dropout: DropoutSpec | None, rng: np.random.Generator | None):
    if rng is not None:
        return rng
    return np.random.default_rng(dropout.rng_seed)


# ---------------------------------------------------------------------------
# FCNN


@dataclass
class FcnnParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    Wout: np.ndarray
    bout: np.ndarray
    activation: str = "relu"

    kind = "fcnn"

    def __post_init__(self):
        if self.activation != "relu":
            raise ValueError("only ReLU hidden activations are supported")
        n_in, h1 = self.W1.shape
        h2 = self.W2.shape[1]
        if (self.b1.shape != (h1,) or self.W2.shape[0] != h1 or self.b2.shape != (h2,)
                or self.Wout.shape[0] != h2 or self.bout.shape != (self.Wout.shape[1],)):
            raise ShapeError("inconsistent FCNN parameter shapes: "
                             + ", ".join(f"{k}{v.shape}" for k, v in self.tensors().items()))

    @property
    def input_size(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden_sizes(self) -> tuple[int, int]:
        return self.W1.shape[1], self.W2.shape[1]

    @property
    def output_size(self) -> int:
        return self.Wout.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2,
                "Wout": self.Wout, "bout": self.bout}

    def copy(self) -> "FcnnParams":
        return FcnnParams(**{k: v.copy() for k, v in self.tensors().items()})


@dataclass
class FcnnCache:
    params: FcnnParams
    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    mask1: np.ndarray | None
    z2: np.ndarray
    a2: np.ndarray
    mask2: np.ndarray | None


def fcnn_forward(p: FcnnParams, x, dropout: DropoutSpec | None = None,
                 training: bool = False, rng: np.random.Generator | None = None):
    """Run the FCNN on a batch.

    Inputs with more than two dimensions (e.g. ``(batch, window, features)``)
    are flattened per sample. Dropout is applied to both hidden activations
    only when ``training`` is set and a ``DropoutSpec`` is given; masks come
    from ``rng`` or, failing that, a generator seeded from the spec.

    Returns:
        ``(prediction, cache)`` with prediction shaped ``(batch, outputs)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    elif x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    if x.shape[1] != p.input_size:
        raise ShapeError(f"FCNN expects {p.input_size} input features, got {x.shape[1]}")
    use_dropout = training and dropout is not None
    if use_dropout:
        rng = _mask_rng(dropout, rng)

    z1 = x @ p.W1 + p.b1
    a1 = np.maximum(z1, 0.0)
    mask1 = None
    if use_dropout:
        mask1 = dropout_mask(a1.shape, dropout.rate, rng)
        a1 = a1 * mask1
    z2 = a1 @ p.W2 + p.b2
    a2 = np.maximum(z2, 0.0)
    mask2 = None
    if use_dropout:
        mask2 = dropout_mask(a2.shape, dropout.rate, rng)
        a2 = a2 * mask2
    out = a2 @ p.Wout + p.bout
    return out, FcnnCache(p, x, z1, a1, mask1, z2, a2, mask2)


def fcnn_backward(cache: FcnnCache, grad_out) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every FCNN tensor given dL/dprediction."""
    p = cache.params
    grad_out = np.asarray(grad_out, dtype=np.float64)
    expected = (cache.x.shape[0], p.output_size)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match prediction {expected}")
    g = {"Wout": cache.a2.T @ grad_out, "bout": grad_out.sum(axis=0)}
    da2 = grad_out @ p.Wout.T
    if cache.mask2 is not None:
        da2 *= cache.mask2
    dz2 = da2 * (cache.z2 > 0)
    g["W2"] = cache.a1.T @ dz2
    g["b2"] = dz2.sum(axis=0)
    da1 = dz2 @ p.W2.T
    if cache.mask1 is not None:
        da1 *= cache.mask1
    dz1 = da1 * (cache.z1 > 0)
    g["W1"] = cache.x.T @ dz1
    g["b1"] = dz1.sum(axis=0)
    return {k: g[k] for k in p.tensors()}


# ---------------------------------------------------------------------------
# LSTM


@dataclass
class LstmLayer:
    W: np.ndarray  # (in, 4H)
    U: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)

    def __post_init__(self):
        H = self.U.shape[0]
        if self.U.shape != (H, 4 * H) or self.W.shape[1] != 4 * H or self.b.shape != (4 * H,):
            raise ShapeError(f"inconsistent LSTM layer shapes W{self.W.shape} "
                             f"U{self.U.shape} b{self.b.shape}")

    @property
    def hidden_size(self) -> int:
        return self.U.shape[0]

    @property
    def input_size(self) -> int:
        return self.W.shape[0]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views ``(W_name, U_name, b_name)`` of one gate block."""
        k = GATES.index(name)
        H = self.hidden_size
        sl = slice(k * H, (k + 1) * H)
        return self.W[:, sl], self.U[:, sl], self.b[sl]


@dataclass
class LstmParams:
    layers: list[LstmLayer]
    Wout: np.ndarray
    bout: np.ndarray

    kind = "lstm"

    def __post_init__(self):
        if len(self.layers) != 2:
            raise ValueError("the LSTM has exactly two recurrent layers")
        l1, l2 = self.layers
        if l2.input_size != l1.hidden_size:
            raise ShapeError("layer 2 input size must equal layer 1 hidden size")
        if self.Wout.shape[0] != l2.hidden_size or self.bout.shape != (self.Wout.shape[1],):
            raise ShapeError(f"output head Wout{self.Wout.shape} bout{self.bout.shape} "
                             f"does not fit hidden size {l2.hidden_size}")

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def hidden_sizes(self) -> tuple[int, int]:
        return self.layers[0].hidden_size, self.layers[1].hidden_size

    @property
    def output_size(self) -> int:
        return self.Wout.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for n, layer in enumerate(self.layers, start=1):
            out[f"l{n}.W"] = layer.W
            out[f"l{n}.U"] = layer.U
            out[f"l{n}.b"] = layer.b
        out["Wout"] = self.Wout
        out["bout"] = self.bout
        return out

    def copy(self) -> "LstmParams":
        return LstmParams([LstmLayer(l.W.copy(), l.U.copy(), l.b.copy()) for l in self.layers],
                          self.Wout.copy(), self.bout.copy())


def _activate_gates(z: np.ndarray, H: int) -> np.ndarray:
    a = np.empty_like(z)
    a[..., :3 * H] = sigmoid(z[..., :3 * H])
    np.tanh(z[..., 3 * H:], out=a[..., 3 * H:])
    return a


def lstm_cell_forward(layer: LstmLayer, x_t, h_prev, c_prev):
    """One LSTM step for a batch.

    Returns ``(h_t, c_t, cache)``; the cache holds the activated gates
    ``(i, f, o, g)``, ``c_prev`` and ``tanh(c_t)``.
    """
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    h_prev = np.atleast_2d(np.asarray(h_prev, dtype=np.float64))
    c_prev = np.atleast_2d(np.asarray(c_prev, dtype=np.float64))
    H = layer.hidden_size
    if x_t.shape[1] != layer.input_size:
        raise ShapeError(f"cell expects {layer.input_size} inputs, got {x_t.shape[1]}")
    if h_prev.shape != (x_t.shape[0], H) or c_prev.shape != h_prev.shape:
        raise ShapeError(f"state shapes h{h_prev.shape} c{c_prev.shape} do not match "
                         f"({x_t.shape[0]}, {H})")
    a = _activate_gates(x_t @ layer.W + h_prev @ layer.U + layer.b, H)
    i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
    c_t = f * c_prev + i * g
    tc = np.tanh(c_t)
    h_t = o * tc
    return h_t, c_t, {"gates": a, "c_prev": c_prev, "tanh_c": tc}


@dataclass
class _LayerTrace:
    # time-major, feature-major layout: state is (H, B), gates are (4H, B)
    xs: np.ndarray      # (T, in, B)
    gates: np.ndarray   # (T, 4H, B) activated i, f, o, g
    cs: np.ndarray      # (T+1, H, B), cs[0] is the zero initial state
    tcs: np.ndarray     # (T, H, B) tanh(c_t)
    hs: np.ndarray      # (T+1, H, B), hs[0] is the zero initial state


def _scaled(layer: LstmLayer):
    # sigmoid(z) = 0.5 * tanh(z / 2) + 0.5: halving the i, f, o pre-activations
    # lets one tanh pass cover all four gate blocks. Returned transposed for the
    # feature-major loop.
    H = layer.hidden_size
    pre = np.ones(4 * H)
    pre[:3 * H] = 0.5
    return (np.ascontiguousarray((layer.W * pre).T), np.ascontiguousarray((layer.U * pre).T),
            (layer.b * pre)[:, None])


def _input_gates(layer: LstmLayer, xs: np.ndarray):
    Wt, Ut, b = _scaled(layer)
    z = np.matmul(Wt, xs)
    z += b
    return z, Ut


def _layer_forward(layer: LstmLayer, xs: np.ndarray) -> _LayerTrace:
    T, _, B = xs.shape
    H = layer.hidden_size
    gates, Ut = _input_gates(layer, xs)
    hs = np.zeros((T + 1, H, B))
    cs = np.zeros((T + 1, H, B))
    tcs = np.empty((T, H, B))
    tmp = np.empty((H, B))
    rec = np.empty((4 * H, B))
    for t in range(T):
        a = gates[t]
        if t:
            np.matmul(Ut, hs[t], out=rec)
            a += rec
        np.tanh(a, out=a)
        sig = a[:3 * H]
        sig *= 0.5
        sig += 0.5
        np.multiply(a[H:2 * H], cs[t], out=cs[t + 1])
        np.multiply(a[:H], a[3 * H:], out=tmp)
        cs[t + 1] += tmp
        np.tanh(cs[t + 1], out=tcs[t])
        np.multiply(a[2 * H:3 * H], tcs[t], out=hs[t + 1])
    return _LayerTrace(xs, gates, cs, tcs, hs)


def _layer_infer(layer: LstmLayer, xs: np.ndarray, keep_sequence: bool) -> np.ndarray:
    """Forward pass without a backward trace; returns (T, H, B) or the final (H, B)."""
    T, _, B = xs.shape
    H = layer.hidden_size
    zx, Ut = _input_gates(layer, xs)
    hs = np.empty((T, H, B)) if keep_sequence else None
    h = np.zeros((H, B))
    c = np.zeros((H, B))
    tmp = np.empty((H, B))
    rec = np.empty((4 * H, B))
    for t in range(T):
        a = zx[t]
        if t:
            np.matmul(Ut, h, out=rec)
            a += rec
        np.tanh(a, out=a)
        sig = a[:3 * H]
        sig *= 0.5
        sig += 0.5
        c *= a[H:2 * H]
        np.multiply(a[:H], a[3 * H:], out=tmp)
        c += tmp
        np.tanh(c, out=tmp)
        out = hs[t] if keep_sequence else h
        np.multiply(a[2 * H:3 * H], tmp, out=out)
        if keep_sequence:
            h = out
    return hs if keep_sequence else h


def _layer_backward(layer: LstmLayer, tr: _LayerTrace, dhs: np.ndarray | None,
                    dh_last: np.ndarray | None, need_dx: bool):
    """BPTT through one layer.

    ``dhs`` is the upstream gradient on every emitted hidden state
    ``(T, H, B)``; ``dh_last`` is a gradient on the final state ``(H, B)``.
    Either may be None. Returns the layer gradients and, if asked, ``d xs`` as
    (T, in, B).
    """
    T, H4, B = tr.gates.shape
    H = H4 // 4
    a = tr.gates
    i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
    tc = tr.tcs
    # local derivative factors for every step at once; dz = dc * K except the
    # output-gate block, which is dh * tanh(c) * o(1-o)
    dc_from_dh = o * (1.0 - tc * tc)
    K = np.empty((T, 4, H, B))
    np.multiply(g * i, 1.0 - i, out=K[:, 0])
    np.multiply(tr.cs[:-1] * f, 1.0 - f, out=K[:, 1])
    np.multiply(i, 1.0 - g * g, out=K[:, 3])
    out_factor = tc * o * (1.0 - o)

    U = layer.U
    dz = np.empty((T, 4, H, B))
    dh = np.zeros((H, B)) if dh_last is None else dh_last.copy()
    dc = np.zeros((H, B))
    tmp = np.empty((H, B))
    for t in range(T - 1, -1, -1):
        if dhs is not None:
            dh += dhs[t]
        np.multiply(dh, dc_from_dh[t], out=tmp)
        dc += tmp
        d = dz[t]
        np.multiply(dc, K[t, 0], out=d[0])
        np.multiply(dc, K[t, 1], out=d[1])
        np.multiply(dh, out_factor[t], out=d[2])
        np.multiply(dc, K[t, 3], out=d[3])
        dc *= f[t]
        if t:
            np.matmul(U, d.reshape(H4, B), out=dh)
    dz = dz.reshape(T, H4, B)
    dz_T = dz.transpose(0, 2, 1)
    grads = {
        "W": np.matmul(tr.xs, dz_T).sum(axis=0),
        "U": np.matmul(tr.hs[:-1], dz_T).sum(axis=0),
        "b": dz.sum(axis=(0, 2)),
    }
    dxs = np.matmul(layer.W, dz) if need_dx else None
    return grads, dxs


@dataclass
class LstmCache:
    params: LstmParams
    trace1: _LayerTrace
    trace2: _LayerTrace
    mask: np.ndarray | None


def lstm_forward_sequence(p: LstmParams, x, dropout: DropoutSpec | None = None,
                          training: bool = False, rng: np.random.Generator | None = None,
                          look_back: int | None = None):
    """Unroll both LSTM layers over input windows and predict from the final state.

    ``x`` is either one window ``(T, features)`` or a batch ``(B, T, features)``.
    In training mode with a ``DropoutSpec``, the layer-1 hidden sequence is
    masked before it feeds layer 2; the recurrent state path is never masked.

    Returns:
        ``(prediction, cache)`` with prediction shaped ``(B, outputs)``; the
        cache is None outside training mode, where no trace is kept.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"LSTM input must be (window, features) or (batch, window, features), "
                         f"got {x.shape}")
    if look_back is not None and x.shape[1] != look_back:
        raise ShapeError(f"window length {x.shape[1]} does not match look-back {look_back}")
    if x.shape[2] != p.input_size:
        raise ShapeError(f"LSTM expects {p.input_size} features, got {x.shape[2]}")
    l1, l2 = p.layers
    xt = np.ascontiguousarray(x.transpose(1, 2, 0))
    if not training:
        h = _layer_infer(l2, _layer_infer(l1, xt, True), False)
        return h.T @ p.Wout + p.bout, None
    tr1 = _layer_forward(l1, xt)
    seq = tr1.hs[1:]
    mask = None
    if training and dropout is not None:
        rng = _mask_rng(dropout, rng)
        # drawn batch-major so a sample's mask does not depend on the batch layout
        mask = np.ascontiguousarray(
            dropout_mask((x.shape[0], x.shape[1], l1.hidden_size), dropout.rate, rng)
            .transpose(1, 2, 0))
        seq = seq * mask
    tr2 = _layer_forward(l2, seq)
    out = tr2.hs[-1].T @ p.Wout + p.bout
    return out, LstmCache(p, tr1, tr2, mask)


def lstm_backward(cache: LstmCache, grad_out) -> dict[str, np.ndarray]:
    """Backpropagation through time for both layers and the output head."""
    p = cache.params
    grad_out = np.asarray(grad_out, dtype=np.float64)
    B = cache.trace2.hs.shape[2]
    if grad_out.shape != (B, p.output_size):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match prediction "
                         f"{(B, p.output_size)}")
    l1, l2 = p.layers
    g2, dseq = _layer_backward(l2, cache.trace2, None, p.Wout @ grad_out.T, need_dx=True)
    if cache.mask is not None:
        dseq *= cache.mask
    g1, _ = _layer_backward(l1, cache.trace1, dseq, None, need_dx=False)
    out = {}
    for n, gl in ((1, g1), (2, g2)):
        for k, v in gl.items():
            out[f"l{n}.{k}"] = v
    out["Wout"] = cache.trace2.hs[-1] @ grad_out
    out["bout"] = grad_out.sum(axis=0)
    return out


# ---------------------------------------------------------------------------
# dispatch and initialization

Params = Union[FcnnParams, LstmParams]


def forward(p: Params, x, dropout=None, training=False, rng=None):
    if isinstance(p, FcnnParams):
        return fcnn_forward(p, x, dropout, training, rng)
    return lstm_forward_sequence(p, x, dropout, training, rng)


def backward(cache, grad_out) -> dict[str, np.ndarray]:
    if isinstance(cache, FcnnCache):
        return fcnn_backward(cache, grad_out)
    return lstm_backward(cache, grad_out)


def predict(p: Params, x, batch_size: int = 4096) -> np.ndarray:
    """Inference-mode predictions, evaluated in chunks to bound memory."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        return np.zeros((0, p.output_size))
    parts = [forward(p, x[s:s + batch_size])[0] for s in range(0, len(x), batch_size)]
    return np.concatenate(parts, axis=0)


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def _glorot(rng: np.random.Generator, shape) -> np.ndarray:
    lim = glorot_limit(*shape)
    return rng.uniform(-lim, lim, size=shape)


def init_params(kind: str, input_size: int, hidden_sizes=(64, 64), output_size: int = 1,
                seed: int = 0) -> Params:
    """Glorot-uniform weights, zero biases, LSTM forget biases at 1.0.

    ``input_size`` is the per-timestep feature count for the LSTM and the
    flattened window length times features for the FCNN.
    """
    h1, h2 = hidden_sizes
    if min(input_size, h1, h2, output_size) <= 0:
        raise ValueError("all sizes must be positive")
    rng = np.random.default_rng(seed)
    if kind == "fcnn":
        return FcnnParams(_glorot(rng, (input_size, h1)), np.zeros(h1),
                          _glorot(rng, (h1, h2)), np.zeros(h2),
                          _glorot(rng, (h2, output_size)), np.zeros(output_size))
    if kind == "lstm":
        layers = []
        for n_in, H in ((input_size, h1), (h1, h2)):
            b = np.zeros(4 * H)
            b[H:2 * H] = FORGET_BIAS
            layers.append(LstmLayer(_glorot(rng, (n_in, 4 * H)), _glorot(rng, (H, 4 * H)), b))
        return LstmParams(layers, _glorot(rng, (h2, output_size)), np.zeros(output_size))
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout (all integers little-endian):
#   8 bytes   magic  b"NLCKPT\x00\x01"  (last byte is the format version)
#   8 bytes   uint64 header length N
#   N bytes   UTF-8 JSON header: {"kind", "tensors": [{"name", "shape", "offset"}], "meta"}
#   payload   concatenated float64 '<f8' tensors; offsets are bytes from payload start

MAGIC = b"NLCKPT\x00\x01"


def save_checkpoint(path, p: Params, meta: dict | None = None) -> None:
    tensors = []
    offset = 0
    blobs = []
    for name, arr in p.tensors().items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"kind": p.kind, "tensors": tensors, "meta": meta or {}},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[Params, dict]:
    raw = Path(path).read_bytes()
    if raw[:6] != MAGIC[:6]:
        raise ValueError(f"{path}: not a checkpoint file")
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: unsupported checkpoint version {raw[7]}")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n].decode("utf-8"))
    payload = memoryview(raw)[16 + n:]
    arrays = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=t["offset"])
        arrays[t["name"]] = arr.astype(np.float64).reshape(t["shape"])
    if header["kind"] == "fcnn":
        p = FcnnParams(**arrays)
    elif header["kind"] == "lstm":
        layers = [LstmLayer(arrays[f"l{n}.W"], arrays[f"l{n}.U"], arrays[f"l{n}.b"])
                  for n in (1, 2)]
        p = LstmParams(layers, arrays["Wout"], arrays["bout"])
    else:
        raise ValueError(f"{path}: unknown model kind {header['kind']!r}")
    return p, header["meta"]
