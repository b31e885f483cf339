"""The attention-based convolutional recurrent classifier.

Eight stacked convolutions (channel-last, batch-normalized, ReLU) interleaved
with four max-pool stages, two bidirectional GRU layers with dropout, an
optional frame-level attention head, and a softmax classifier. Attention can
rescale a pooled convolutional map (placements l2/l4/l6/l8) or convexly
combine the GRU output sequence (placement l10); with no attention the head
is the final GRU time step.

A 128x128x2 input passes (32,42,32) -> (8,42,64) -> (8,14,128) -> (4,7,256)
through the pool stages, giving the GRU a 7-step sequence of 1024-wide
vectors.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, BiGRUParams, GRUDirParams, ShapeError, Tensor

CONV_KERNELS = ((3, 5), (3, 5), (3, 1), (3, 1), (1, 5), (1, 5), (3, 3), (3, 3))
POOLS = {2: (4, 3), 4: (4, 1), 6: (1, 3), 8: (2, 2)}
PLACEMENTS = ("none", "l2", "l4", "l6", "l8", "l10")

CHECKPOINT_MAGIC = b"ACRN"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    """Checkpoint bytes do not follow the ACRN container format."""


@dataclass
class ACRNNConfig:
    num_classes: int = 50
    attention_placement: str = "l10"
    conv_channels: tuple = (32, 32, 64, 64, 128, 128, 256, 256)
    gru_hidden: int = 256
    dropout_p: float = 0.5
    l2_coeff: float = 1e-4
    input_bands: int = 128
    input_frames: int = 128
    rnn_attention_form: str = "mlp"  # "mlp" (tanh hidden layer) or "linear" score

    def __post_init__(self):
        if self.attention_placement not in PLACEMENTS:
            raise ValueError(f"attention_placement must be one of {PLACEMENTS}, "
                             f"got {self.attention_placement!r}")
        if self.rnn_attention_form not in ("mlp", "linear"):
            raise ValueError(f"rnn_attention_form must be 'mlp' or 'linear', "
                             f"got {self.rnn_attention_form!r}")
        if len(self.conv_channels) != 8:
            raise ValueError(f"conv_channels needs 8 entries, got {len(self.conv_channels)}")

    def conv_output_dims(self):
        f, t = self.input_bands, self.input_frames
        for i in POOLS:
            f //= POOLS[i][0]
            t //= POOLS[i][1]
        return f, t

    def reduced(self, num_classes=2, scale=8, input_size=None):
        """A narrow copy for desk-scale checks: channels and GRU width / scale."""
        return ACRNNConfig(
            num_classes=num_classes,
            attention_placement=self.attention_placement,
            conv_channels=tuple(max(1, c // scale) for c in self.conv_channels),
            gru_hidden=max(1, self.gru_hidden // scale),
            dropout_p=self.dropout_p,
            l2_coeff=self.l2_coeff,
            input_bands=input_size or self.input_bands,
            input_frames=input_size or self.input_frames,
            rnn_attention_form=self.rnn_attention_form,
        )


@dataclass
class ModelParams:
    """Named parameter set: conv kernels, batch-norm state, GRU matrices,
    attention weights, and the classifier, all as graph leaves."""

    config: ACRNNConfig
    tensors: "OrderedDict[str, Tensor]"
    bn: "dict[str, BatchNormState]"
    gru1: BiGRUParams
    gru2: BiGRUParams
    weight_names: tuple = field(default_factory=tuple)

    def parameter_count(self):
        return sum(t.data.size for t in self.tensors.values())


def _gru_layer(tensors, prefix, din, hidden, dtype):
    def direction(side):
        w_x = Tensor(np.zeros((din, 3 * hidden), dtype=dtype), requires_grad=True)
        w_h = Tensor(np.zeros((hidden, 3 * hidden), dtype=dtype), requires_grad=True)
        b = Tensor(np.zeros(3 * hidden, dtype=dtype), requires_grad=True)
        tensors[f"{prefix}.{side}.w_x"] = w_x
        tensors[f"{prefix}.{side}.w_h"] = w_h
        tensors[f"{prefix}.{side}.b"] = b
        return GRUDirParams(w_x, w_h, b)
    return BiGRUParams(fw=direction("fw"), bw=direction("bw"))


def build(config, seed=0, std=0.05, dtype=np.float32):
    """Construct ModelParams: weights ~ N(0, std^2), biases 0, BN gamma 1 / beta 0.

    Two builds with the same seed are bitwise identical.
    """
    tensors = OrderedDict()
    bn = {}
    weight_names = []

    cin = 2
    for i, ((kf, kt), cout) in enumerate(zip(CONV_KERNELS, config.conv_channels), start=1):
        tensors[f"conv{i}.kernel"] = Tensor(np.zeros((kf, kt, cin, cout), dtype=dtype),
                                            requires_grad=True)
        tensors[f"conv{i}.bias"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        weight_names.append(f"conv{i}.kernel")
        state = BatchNormState.create(cout, dtype=dtype)
        bn[f"bn{i}"] = state
        tensors[f"bn{i}.gamma"] = state.gamma
        tensors[f"bn{i}.beta"] = state.beta
        cin = cout

    f_out, _ = config.conv_output_dims()
    hidden = config.gru_hidden
    gru1 = _gru_layer(tensors, "gru1", f_out * config.conv_channels[-1], hidden, dtype)
    gru2 = _gru_layer(tensors, "gru2", 2 * hidden, hidden, dtype)
    weight_names += ["gru1.fw.w_x", "gru1.fw.w_h", "gru1.bw.w_x", "gru1.bw.w_h",
                     "gru2.fw.w_x", "gru2.fw.w_h", "gru2.bw.w_x", "gru2.bw.w_h"]

    placement = config.attention_placement
    if placement in ("l2", "l4", "l6", "l8"):
        c_at = config.conv_channels[int(placement[1:]) - 1]
        tensors["att.kernel"] = Tensor(np.zeros((3, 3, c_at, 1), dtype=dtype), requires_grad=True)
        tensors["att.bias"] = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)
        weight_names.append("att.kernel")
    elif placement == "l10":
        if config.rnn_attention_form == "mlp":
            tensors["att.w1"] = Tensor(np.zeros((2 * hidden, hidden), dtype=dtype),
                                       requires_grad=True)
            tensors["att.b1"] = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)
            tensors["att.ctx"] = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)
            weight_names += ["att.w1", "att.ctx"]
        else:
            tensors["att.w"] = Tensor(np.zeros(2 * hidden, dtype=dtype), requires_grad=True)
            weight_names.append("att.w")

    tensors["fc.weight"] = Tensor(np.zeros((2 * hidden, config.num_classes), dtype=dtype),
                                  requires_grad=True)
    tensors["fc.bias"] = Tensor(np.zeros(config.num_classes, dtype=dtype), requires_grad=True)
    weight_names.append("fc.weight")

    params = ModelParams(config=config, tensors=tensors, bn=bn, gru1=gru1, gru2=gru2,
                         weight_names=tuple(weight_names))
    randomize_weights(params, std=std, seed=seed)
    return params


def randomize_weights(params, std=0.05, seed=0):
    """(Re)initialize in place: weights ~ N(0, std^2); biases 0; BN reset."""
    rng = np.random.default_rng(seed)
    weight_set = set(params.weight_names)
    for name, tensor in params.tensors.items():
        if name in weight_set:
            tensor.data = rng.normal(0.0, std, size=tensor.shape).astype(tensor.dtype)
        elif name.endswith(".gamma"):
            tensor.data = np.ones(tensor.shape, dtype=tensor.dtype)
        else:
            tensor.data = np.zeros(tensor.shape, dtype=tensor.dtype)
        tensor.grad = None
    for state in params.bn.values():
        state.running_mean = np.zeros_like(state.running_mean)
        state.running_var = np.ones_like(state.running_var)


# -- attention ------------------------------------------------------------------

def cnn_attention_weights(m, kernel, bias):
    """Per-frame attention map of a conv feature map: 3x3 conv to one channel,
    frequency average-pool, softmax over time. Shape (..., 1, T, 1); sums to 1."""
    scores = ad.conv2d(m, kernel, bias, (1, 1), "same")
    pooled = ad.avgpool_freq(scores)
    if pooled.ndim == 4:
        n, _, t, _ = pooled.shape
        weights = ad.softmax(ad.reshape(pooled, (n, t)))
        return ad.reshape(weights, (n, 1, t, 1))
    t = pooled.shape[1]
    return ad.reshape(ad.softmax(ad.reshape(pooled, (t,))), (1, t, 1))


def cnn_attention(m, kernel, bias):
    """Rescale each time column of a feature map by its attention weight."""
    return ad.mul(m, cnn_attention_weights(m, kernel, bias))


def rnn_attention_weights(h, params):
    """Softmax frame weights over a GRU output sequence (..., T, 2H)."""
    cfg = params.config
    if cfg.rnn_attention_form == "mlp":
        u = ad.tanh(ad.dense(h, params.tensors["att.w1"], params.tensors["att.b1"]))
        scores = ad.matmul(u, ad.reshape(params.tensors["att.ctx"], (-1, 1)))
    else:
        scores = ad.matmul(h, ad.reshape(params.tensors["att.w"], (-1, 1)))
    return ad.softmax(ad.reshape(scores, scores.shape[:-1]))


def rnn_attention(h, params):
    """Convex combination of GRU steps: v = sum_t beta_t * h_t."""
    h = ad.as_tensor(h)
    beta = rnn_attention_weights(h, params)
    weighted = ad.mul(h, ad.reshape(beta, beta.shape + (1,)))
    return ad.tensor_sum(weighted, axis=h.ndim - 2)


# -- forward --------------------------------------------------------------------

def forward(params, x, mode="infer", rng=None, trace=None):
    """Class probabilities (N, K) for a batch of (N, bands, frames, 2) inputs.

    ``trace``, when a list, collects (stage, per-example shape) pairs. Train
    mode needs ``rng`` whenever dropout is active.
    """
    cfg = params.config
    x = ad.as_tensor(x)
    expected = (cfg.input_bands, cfg.input_frames, 2)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeError(f"forward expects (N, {expected[0]}, {expected[1]}, 2), got {x.shape}")
    if mode == "train" and cfg.dropout_p > 0.0 and rng is None:
        raise ValueError("train-mode forward needs an rng for dropout")

    h = x
    for i in range(1, 9):
        h = ad.conv2d(h, params.tensors[f"conv{i}.kernel"], params.tensors[f"conv{i}.bias"],
                      (1, 1), "same")
        h = ad.batchnorm(h, params.bn[f"bn{i}"], mode)
        h = ad.relu(h)
        if i in POOLS:
            h = ad.maxpool2d(h, POOLS[i])
            if cfg.attention_placement == f"l{i}":
                h = cnn_attention(h, params.tensors["att.kernel"], params.tensors["att.bias"])
            if trace is not None:
                trace.append((f"l{i}-pool", h.shape[1:]))

    n, f, t, c = h.shape
    h = ad.reshape(ad.transpose(h, (0, 2, 1, 3)), (n, t, f * c))
    if trace is not None:
        trace.append(("gru-input", h.shape[1:]))
    h = ad.gru_bidirectional(h, params.gru1)
    h = ad.dropout(h, cfg.dropout_p, mode, rng)
    h = ad.gru_bidirectional(h, params.gru2)
    h = ad.dropout(h, cfg.dropout_p, mode, rng)
    if trace is not None:
        trace.append(("gru-output", h.shape[1:]))

    if cfg.attention_placement == "l10":
        head = rnn_attention(h, params)
    else:
        head = h[:, t - 1, :]
    if trace is not None:
        trace.append(("head", head.shape[1:]))
    return ad.softmax(ad.dense(head, params.tensors["fc.weight"], params.tensors["fc.bias"]))


def shape_trace(params):
    """The (stage, shape) sequence for one dummy example."""
    trace = []
    cfg = params.config
    dummy = np.zeros((1, cfg.input_bands, cfg.input_frames, 2), dtype=np.float32)
    forward(params, dummy, mode="infer", trace=trace)
    return trace


def regularization_loss(params, l2_coeff=None):
    """coeff * sum of squared entries over weight tensors (biases and batch-norm
    scale/shift excluded)."""
    coeff = params.config.l2_coeff if l2_coeff is None else l2_coeff
    total = None
    for name in params.weight_names:
        w = params.tensors[name]
        s = ad.tensor_sum(ad.mul(w, w))
        total = s if total is None else ad.add(total, s)
    return ad.mul(total, float(coeff))


# -- checkpoint container ---------------------------------------------------------

def state_arrays(params):
    """Copied arrays of every learnable tensor plus BN running statistics."""
    out = OrderedDict((name, t.data.copy()) for name, t in params.tensors.items())
    for name in sorted(params.bn):
        out[f"{name}.running_mean"] = params.bn[name].running_mean.copy()
        out[f"{name}.running_var"] = params.bn[name].running_var.copy()
    return out


def load_state(params, arrays):
    """Restore tensors and BN running stats from a state/checkpoint dict."""
    expected = set(state_arrays(params))
    got = set(arrays)
    if expected != got:
        missing, extra = expected - got, got - expected
        raise CheckpointFormatError(f"state names disagree: missing {sorted(missing)}, "
                                    f"unexpected {sorted(extra)}")
    for name, tensor in params.tensors.items():
        if arrays[name].shape != tensor.shape:
            raise CheckpointFormatError(f"{name}: shape {arrays[name].shape} != {tensor.shape}")
        tensor.data = arrays[name].astype(tensor.dtype).copy()
        tensor.grad = None
    for name, state in params.bn.items():
        state.running_mean = arrays[f"{name}.running_mean"].astype(state.running_mean.dtype).copy()
        state.running_var = arrays[f"{name}.running_var"].astype(state.running_var.dtype).copy()


def save_checkpoint(path, params_or_state):
    """Write the ACRN tensor container (little-endian, float32, lossless)."""
    state = params_or_state if isinstance(params_or_state, dict) else state_arrays(params_or_state)
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(state))]
    for name, arr in state.items():
        encoded = name.encode("utf-8")
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr32.ndim))
        chunks.append(struct.pack(f"<{arr32.ndim}I", *arr32.shape))
        chunks.append(arr32.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_checkpoint(path):
    """Parse an ACRN container into an ordered name -> float32 array dict."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad magic {blob[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    offset = 12
    out = OrderedDict()
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            if offset + 4 * size > len(blob):
                raise struct.error("truncated tensor data")
            data = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
            out[name] = data.reshape(dims).copy()
    except struct.error as exc:
        raise CheckpointFormatError(f"truncated checkpoint at byte {offset}: {exc}") from exc
    if offset != len(blob):
        raise CheckpointFormatError(f"{len(blob) - offset} trailing bytes after {count} tensors")
    return out
