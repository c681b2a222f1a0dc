"""Fixed-architecture conv net with analytic gradients and Adam.

Trunk: 4 conv layers (32 filters, 3x3, stride 1, pad 1, ELU) then one dense
layer of 128 units (ELU). Heads: 6-way softmax policy, linear value, sigmoid
terminal-progress estimate. Training runs in float32; tests build float64
networks so finite differences are meaningful.

Everything is plain numpy: forward/backward are pure functions of immutable
parameter snapshots, so workers can run them concurrently; only the global
store mutates parameters (one Adam step at a time, under its lock).
"""

from __future__ import annotations

import binascii
import struct
from typing import NamedTuple

import numpy as np

from .env import NUM_CHANNELS
from .errors import CheckpointError, ContractError

CONV_FILTERS = 32
DENSE_UNITS = 128
NUM_ACTIONS = 6
ELU_ALPHA = 1.0

TENSOR_NAMES = (
    "conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b",
    "conv4.w", "conv4.b", "dense.w", "dense.b", "policy.w", "policy.b",
    "value.w", "value.b", "tp.w", "tp.b",
)

# Adam defaults (lr, beta1, beta2, epsilon, weight decay)
ADAM_LR = 1e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-5
ADAM_WEIGHT_DECAY = 1e-5


def tensor_shapes(board_size, channels=NUM_CHANNELS):
    flat = CONV_FILTERS * board_size * board_size
    f = CONV_FILTERS
    return {
        "conv1.w": (f, channels, 3, 3), "conv1.b": (f,),
        "conv2.w": (f, f, 3, 3), "conv2.b": (f,),
        "conv3.w": (f, f, 3, 3), "conv3.b": (f,),
        "conv4.w": (f, f, 3, 3), "conv4.b": (f,),
        "dense.w": (flat, DENSE_UNITS), "dense.b": (DENSE_UNITS,),
        "policy.w": (DENSE_UNITS, NUM_ACTIONS), "policy.b": (NUM_ACTIONS,),
        "value.w": (DENSE_UNITS, 1), "value.b": (1,),
        "tp.w": (DENSE_UNITS, 1), "tp.b": (1,),
    }


def param_count(board_size, channels=NUM_CHANNELS):
    return sum(int(np.prod(s)) for s in tensor_shapes(board_size, channels).values())


class NetworkParams:
    """Named weight tensors plus a monotone version counter."""

    __slots__ = ("board_size", "channels", "dtype", "version", "tensors")

    def __init__(self, board_size, channels, dtype, version, tensors):
        self.board_size = board_size
        self.channels = channels
        self.dtype = np.dtype(dtype)
        self.version = version
        self.tensors = tensors

    def copy(self):
        return NetworkParams(self.board_size, self.channels, self.dtype,
                             self.version,
                             {k: v.copy() for k, v in self.tensors.items()})

    def __getitem__(self, name):
        return self.tensors[name]


class NetworkOutput(NamedTuple):
    policy: np.ndarray     # probabilities, shape (6,) or (B, 6)
    value: np.ndarray      # scalar or (B,)
    terminal_pred: np.ndarray  # in (0, 1), scalar or (B,)


def init_params(seed, board_size=8, channels=NUM_CHANNELS, dtype=np.float32):
    """Uniform fan-balanced init (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in tensor_shapes(board_size, channels).items():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape, dtype=dtype)
            continue
        if len(shape) == 4:
            fan_in = shape[1] * shape[2] * shape[3]
            fan_out = shape[0] * shape[2] * shape[3]
        else:
            fan_in, fan_out = shape
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        tensors[name] = rng.uniform(-lim, lim, size=shape).astype(dtype)
    return NetworkParams(board_size, channels, np.dtype(dtype), 0, tensors)


def _elu(z):
    return np.where(z > 0, z, ELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def _elu_grad(z):
    return np.where(z > 0, 1.0, ELU_ALPHA * np.exp(np.minimum(z, 0.0)))


def _im2col(x):
    """(B, C, H, W) -> (B*H*W, C*9) patches for a 3x3, pad-1 convolution."""
    b, c, h, w = x.shape
    padded = np.zeros((b, c, h + 2, w + 2), dtype=x.dtype)
    padded[:, :, 1:-1, 1:-1] = x
    cols = np.empty((b, c, 9, h, w), dtype=x.dtype)
    for ki in range(3):
        for kj in range(3):
            cols[:, :, ki * 3 + kj] = padded[:, :, ki:ki + h, kj:kj + w]
    return cols.transpose(0, 3, 4, 1, 2).reshape(b * h * w, c * 9)


def _col2im(dcols, b, c, h, w):
    """Scatter-add the im2col gradient back to (B, C, H, W)."""
    dcols = dcols.reshape(b, h, w, c, 9).transpose(0, 3, 4, 1, 2)
    dpad = np.zeros((b, c, h + 2, w + 2), dtype=dcols.dtype)
    for ki in range(3):
        for kj in range(3):
            dpad[:, :, ki:ki + h, kj:kj + w] += dcols[:, :, ki * 3 + kj]
    return dpad[:, :, 1:-1, 1:-1]


class ActivationCache:
    __slots__ = ("version", "batch", "single", "cols", "z_conv", "flat",
                 "z_dense", "a_dense", "probs", "tp_out")

    def __init__(self):
        self.cols = []
        self.z_conv = []


def forward(params, x):
    """Run the network. Accepts one stack (C, H, W) or a batch (B, C, H, W).

    Returns (NetworkOutput, cache); the cache feeds backward() and is tied to
    this exact parameter version.
    """
    single = x.ndim == 3
    if single:
        x = x[None]
    b, c, h, w = x.shape
    if c != params.channels or h != params.board_size or w != params.board_size:
        raise ContractError(
            f"input shape {x.shape[1:]} does not match network "
            f"({params.channels}, {params.board_size}, {params.board_size})")
    x = np.ascontiguousarray(x, dtype=params.dtype)
    t = params.tensors
    cache = ActivationCache()
    cache.version = params.version
    cache.batch = b
    cache.single = single

    cur = x
    for li in range(1, 5):
        wname = f"conv{li}.w"
        weights = t[wname]
        cols = _im2col(cur)
        wmat = weights.reshape(CONV_FILTERS, -1).T
        z = cols @ wmat + t[f"conv{li}.b"]
        cache.cols.append(cols)
        cache.z_conv.append(z)
        cur = _elu(z).reshape(b, h, w, CONV_FILTERS).transpose(0, 3, 1, 2)
    flat = cur.reshape(b, -1)
    cache.flat = flat
    z_dense = flat @ t["dense.w"] + t["dense.b"]
    a_dense = _elu(z_dense)
    cache.z_dense = z_dense
    cache.a_dense = a_dense

    logits = a_dense @ t["policy.w"] + t["policy.b"]
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    value = (a_dense @ t["value.w"] + t["value.b"])[:, 0]
    tp_z = (a_dense @ t["tp.w"] + t["tp.b"])[:, 0]
    tp = 1.0 / (1.0 + np.exp(-tp_z))
    cache.probs = probs
    cache.tp_out = tp

    if single:
        out = NetworkOutput(probs[0], value[0], tp[0])
    else:
        out = NetworkOutput(probs, value, tp)
    return out, cache


def backward(params, cache, head_grads):
    """Exact gradients of a scalar loss given its head-level partials.

    head_grads is (policy_grad, value_grad, tp_grad): derivatives of the loss
    with respect to the policy probabilities, the value output, and the
    post-sigmoid terminal prediction, batched like the forward inputs.
    Returns a dict of per-tensor gradients (summed over the batch).
    """
    if cache.version != params.version:
        raise ContractError("activation cache is stale "
                            f"(params v{params.version}, cache v{cache.version})")
    t = params.tensors
    b = cache.batch
    s = params.board_size
    dt = params.dtype
    gp, gv, gt = head_grads
    gp = np.asarray(gp, dtype=dt).reshape(b, NUM_ACTIONS)
    gv = np.asarray(gv, dtype=dt).reshape(b, 1)
    gt = np.asarray(gt, dtype=dt).reshape(b, 1)

    grads = {}
    probs = cache.probs
    # softmax jacobian: dz_i = p_i * (g_i - sum_j g_j p_j)
    dz_pol = probs * (gp - (gp * probs).sum(axis=1, keepdims=True))
    tp = cache.tp_out[:, None]
    dz_tp = gt * tp * (1.0 - tp)
    dz_val = gv

    a = cache.a_dense
    grads["policy.w"] = a.T @ dz_pol
    grads["policy.b"] = dz_pol.sum(axis=0)
    grads["value.w"] = a.T @ dz_val
    grads["value.b"] = dz_val.sum(axis=0)
    grads["tp.w"] = a.T @ dz_tp
    grads["tp.b"] = dz_tp.sum(axis=0)

    da = dz_pol @ t["policy.w"].T + dz_val @ t["value.w"].T + dz_tp @ t["tp.w"].T
    dz_dense = da * _elu_grad(cache.z_dense)
    grads["dense.w"] = cache.flat.T @ dz_dense
    grads["dense.b"] = dz_dense.sum(axis=0)
    dflat = dz_dense @ t["dense.w"].T

    dcur = dflat.reshape(b, CONV_FILTERS, s, s)
    for li in range(4, 0, -1):
        z = cache.z_conv[li - 1]
        cols = cache.cols[li - 1]
        dflat_out = dcur.transpose(0, 2, 3, 1).reshape(b * s * s, CONV_FILTERS)
        dz = dflat_out * _elu_grad(z)
        wmat = t[f"conv{li}.w"].reshape(CONV_FILTERS, -1)
        grads[f"conv{li}.w"] = (cols.T @ dz).T.reshape(t[f"conv{li}.w"].shape)
        grads[f"conv{li}.b"] = dz.sum(axis=0)
        if li > 1:
            dcur = _col2im(dz @ wmat, b, CONV_FILTERS, s, s)
    return grads


class AdamState:
    """First/second moment accumulators plus the optimizer hyperparameters."""

    __slots__ = ("m", "v", "step", "lr", "beta1", "beta2", "eps", "weight_decay")

    def __init__(self, params, lr=ADAM_LR, beta1=ADAM_BETA1, beta2=ADAM_BETA2,
                 eps=ADAM_EPS, weight_decay=ADAM_WEIGHT_DECAY):
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.step = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay

    def copy_for(self, params):
        fresh = AdamState(params, self.lr, self.beta1, self.beta2, self.eps,
                          self.weight_decay)
        fresh.m = {k: v.copy() for k, v in self.m.items()}
        fresh.v = {k: v.copy() for k, v in self.v.items()}
        fresh.step = self.step
        return fresh


def adam_apply(params, adam, grads):
    """One Adam step with L2 decay folded into the gradient.

    Mutates params/adam in place and bumps the version counter. Non-finite
    gradients reject the whole update and leave everything untouched;
    returns True when the step applied.
    """
    for name in TENSOR_NAMES:
        if not np.isfinite(grads[name]).all():
            return False
    adam.step += 1
    t = adam.step
    b1, b2 = adam.beta1, adam.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name in TENSOR_NAMES:
        theta = params.tensors[name]
        g = grads[name].astype(theta.dtype, copy=False)
        if adam.weight_decay:
            g = g + adam.weight_decay * theta
        m = adam.m[name]
        v = adam.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        theta -= adam.lr * (m / bc1) / (np.sqrt(v / bc2) + adam.eps)
    params.version += 1
    return True


# ---------------------------------------------------------------------------
# checkpoints: BACNET1 binary format with a CRC32 footer
# ---------------------------------------------------------------------------

MAGIC = b"BACNET1"
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPE_FROM_CODE = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}


def _pack_tensor(name, arr):
    data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    head = struct.pack("<H", len(name)) + name.encode()
    head += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + data


def checkpoint_save(params, adam, path):
    """Write params plus optimizer state; round-trips bit-exactly."""
    payload = bytearray()
    payload += struct.pack("<IIB", params.board_size, params.channels,
                           _DTYPE_CODES[params.dtype])
    for name in TENSOR_NAMES:
        payload += _pack_tensor(name, params.tensors[name])
    for name in TENSOR_NAMES:
        payload += _pack_tensor("m." + name, adam.m[name])
    for name in TENSOR_NAMES:
        payload += _pack_tensor("v." + name, adam.v[name])
    payload += struct.pack("<Q", adam.step)
    payload += struct.pack("<5d", adam.lr, adam.beta1, adam.beta2, adam.eps,
                           adam.weight_decay)
    payload += struct.pack("<Q", params.version)
    crc = binascii.crc32(bytes(payload))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(payload)
        fh.write(struct.pack("<I", crc))


class _Reader:
    def __init__(self, blob, offset):
        self.blob = blob
        self.pos = offset

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated while reading {what}", self.pos)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _read_tensor(rd, expect_name, dtype):
    (nlen,) = rd.unpack("<H", "tensor name length")
    name = rd.take(nlen, "tensor name").decode()
    if name != expect_name:
        raise CheckpointError(f"expected tensor {expect_name!r}, found {name!r}",
                              rd.pos)
    (rank,) = rd.unpack("<B", "tensor rank")
    shape = rd.unpack(f"<{rank}I", "tensor dims")
    count = int(np.prod(shape)) if rank else 1
    raw = rd.take(count * dtype.itemsize, f"tensor {name} data")
    arr = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype)
    return arr.reshape(shape)


def checkpoint_load(path, board_size=None):
    """Read a checkpoint back into (params, adam).

    When board_size is given, every tensor shape is validated against the
    architecture for that board and the first mismatch is reported by name.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic, not a BACNET1 checkpoint", 0)
    if len(blob) < len(MAGIC) + 13 + 4:
        raise CheckpointError("file too short for header", len(blob))
    body = blob[:-4]
    (crc_stored,) = struct.unpack("<I", blob[-4:])
    crc = binascii.crc32(body[len(MAGIC):])
    if crc != crc_stored:
        raise CheckpointError("payload CRC mismatch", len(body))
    rd = _Reader(body, len(MAGIC))
    ck_size, channels, dtype_code = rd.unpack("<IIB", "descriptor")
    if dtype_code not in _DTYPE_FROM_CODE:
        raise CheckpointError(f"unknown dtype code {dtype_code}", rd.pos)
    dtype = _DTYPE_FROM_CODE[dtype_code]
    expected = tensor_shapes(board_size if board_size is not None else ck_size,
                             channels)
    tensors = {}
    for name in TENSOR_NAMES:
        arr = _read_tensor(rd, name, dtype)
        if tuple(arr.shape) != expected[name]:
            raise CheckpointError(
                f"tensor {name} has shape {tuple(arr.shape)}, expected "
                f"{expected[name]} for board size "
                f"{board_size if board_size is not None else ck_size}", rd.pos)
        tensors[name] = arr
    params = NetworkParams(ck_size, channels, dtype, 0, tensors)
    adam = AdamState(params)
    for prefix, dest in (("m.", adam.m), ("v.", adam.v)):
        for name in TENSOR_NAMES:
            arr = _read_tensor(rd, prefix + name, dtype)
            if tuple(arr.shape) != expected[name]:
                raise CheckpointError(
                    f"moment {prefix}{name} has shape {tuple(arr.shape)}, "
                    f"expected {expected[name]}", rd.pos)
            dest[name] = arr
    (adam.step,) = rd.unpack("<Q", "adam step")
    adam.lr, adam.beta1, adam.beta2, adam.eps, adam.weight_decay = \
        rd.unpack("<5d", "adam hyperparameters")
    (params.version,) = rd.unpack("<Q", "version counter")
    if rd.pos != len(body):
        raise CheckpointError("trailing bytes after version counter", rd.pos)
    return params, adam
