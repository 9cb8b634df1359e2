"""
Encoder-decoder denoising network for multichannel capacitive ECG.

The encoder halves the sequence length at every level with a strided
convolution followed by batch norm, leaky ReLU, dropout and a dilated
residual inception block.  A 1x1 convolution sits at the bottleneck.  The
decoder mirrors the encoder with transposed convolutions; each decoder level
is concatenated with the same-resolution encoder features (the raw input at
full resolution) before the same post-ops, and a final 1x1 convolution maps
to a single output lead.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensor import (
    BatchNormState,
    ConvSpec,
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    batchnorm1d,
    concat_channels,
    conv1d,
    conv1d_transpose,
    dropout,
    leaky_relu,
)

__all__ = [
    "InceptionBlockConfig",
    "NetworkConfig",
    "Network",
    "build_network",
    "forward",
    "inception_block",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
    "read_checkpoint",
    "CheckpointError",
]


@dataclass(frozen=True)
class InceptionBlockConfig:
    channels: int = 0  # filled per level when used as a template
    branch_dilations: tuple[int, ...] = (1, 2, 4)
    branch_kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "branch_dilations", tuple(int(d) for d in self.branch_dilations))
        if len(self.branch_dilations) < 2:
            raise ValueError("an inception block needs at least two branches")
        if self.branch_kernel < 1 or any(d < 1 for d in self.branch_dilations):
            raise ValueError("branch kernel and dilations must be positive")
        for d in self.branch_dilations:
            if (d * (self.branch_kernel - 1)) % 2:
                raise ValueError(
                    f"kernel {self.branch_kernel} with dilation {d} cannot preserve length "
                    "(padding would be non-integral)"
                )

    def branch_spec(self, dilation: int) -> ConvSpec:
        c = self.channels
        pad = dilation * (self.branch_kernel - 1) // 2
        return ConvSpec(c, c, self.branch_kernel, 1, dilation, pad)


@dataclass(frozen=True)
class NetworkConfig:
    levels: int = 8
    in_channels: int = 3
    out_channels: int = 1
    base_filters: int = 16
    filter_cap: int = 512
    kernel: int = 4
    stride: int = 2
    dropout_rate: float = 0.3
    leaky_slope: float = 0.2
    inception: InceptionBlockConfig = field(default_factory=InceptionBlockConfig)
    init_seed: int = 0
    input_length: int = 2048
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if isinstance(self.inception, dict):
            object.__setattr__(self, "inception", InceptionBlockConfig(**self.inception))
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.base_filters < 1 or self.filter_cap < self.base_filters:
            raise ValueError("need 1 <= base_filters <= filter_cap")
        if (self.kernel - self.stride) % 2 or self.kernel < self.stride:
            raise ValueError(
                f"kernel {self.kernel} and stride {self.stride} cannot halve lengths exactly"
            )
        if self.input_length % self.stride**self.levels:
            raise ValueError(
                f"input_length {self.input_length} not divisible by stride**levels "
                f"= {self.stride ** self.levels}"
            )
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def padding(self) -> int:
        return (self.kernel - self.stride) // 2

    def filters(self, level: int) -> int:
        """Channel count produced by encoder level ``level`` (0-based)."""
        return min(self.base_filters * 2**level, self.filter_cap)

    def ladder(self) -> list[int]:
        return [self.filters(i) for i in range(self.levels)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inception"]["branch_dilations"] = list(self.inception.branch_dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        inc = d.pop("inception", None)
        if inc is not None:
            d["inception"] = InceptionBlockConfig(**inc)
        return cls(**d)


@dataclass
class Network:
    config: NetworkConfig
    params: "OrderedDict[str, Tensor]"
    bn_state: "OrderedDict[str, BatchNormState]"

    def parameter_count(self) -> int:
        return sum(t.values.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters followed by batch-norm running statistics, in build order."""
        out = OrderedDict((k, t.values) for k, t in self.params.items())
        for k, s in self.bn_state.items():
            out[f"{k}.running_mean"] = s.running_mean
            out[f"{k}.running_var"] = s.running_var
        return out


# ---------------------------------------------------------------------------
# construction


class _Builder:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.bn: OrderedDict[str, BatchNormState] = OrderedDict()

    def _uniform(self, shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return self.rng.uniform(-bound, bound, size=shape)

    def conv(self, name, c_in, c_out, k):
        fan_in = c_in * k
        self.params[f"{name}.weight"] = Tensor(self._uniform((c_out, c_in, k), fan_in), True, f"{name}.weight")
        self.params[f"{name}.bias"] = Tensor(self._uniform((c_out,), fan_in), True, f"{name}.bias")

    def conv_t(self, name, c_in, c_out, k):
        fan_in = c_out * k
        self.params[f"{name}.weight"] = Tensor(self._uniform((c_in, c_out, k), fan_in), True, f"{name}.weight")
        self.params[f"{name}.bias"] = Tensor(self._uniform((c_out,), fan_in), True, f"{name}.bias")

    def batchnorm(self, name, c):
        self.params[f"{name}.gamma"] = Tensor(np.ones(c), True, f"{name}.gamma")
        self.params[f"{name}.beta"] = Tensor(np.zeros(c), True, f"{name}.beta")
        self.bn[name] = BatchNormState.fresh(c)

    def inception(self, name, cfg: InceptionBlockConfig):
        c = cfg.channels
        for j in range(len(cfg.branch_dilations)):
            self.conv(f"{name}.branch{j}", c, c, cfg.branch_kernel)
        self.conv(f"{name}.combine", c * len(cfg.branch_dilations), c, 1)


def _decoder_channels(cfg: NetworkConfig) -> list[tuple[int, int, int]]:
    """(transposed-conv input, transposed-conv output, skip channels) per decoder level."""
    out = []
    c_prev = cfg.filters(cfg.levels - 1)
    for d in range(cfg.levels):
        skip_level = cfg.levels - 2 - d  # -1 means the raw input
        if skip_level >= 0:
            c_up = skip = cfg.filters(skip_level)
        else:
            c_up, skip = cfg.base_filters, cfg.in_channels
        out.append((c_prev, c_up, skip))
        c_prev = c_up + skip
    return out


def build_network(config: NetworkConfig) -> Network:
    """Instantiate every parameter of ``config`` from its seeded initializer."""
    b = _Builder(config.init_seed)
    k = config.kernel
    c_in = config.in_channels
    for lvl in range(config.levels):
        c = config.filters(lvl)
        b.conv(f"enc{lvl}.conv", c_in, c, k)
        b.batchnorm(f"enc{lvl}.bn", c)
        b.inception(f"enc{lvl}.inc", replace(config.inception, channels=c))
        c_in = c
    b.conv("bottleneck", c_in, c_in, 1)
    for d, (c_prev, c_up, skip) in enumerate(_decoder_channels(config)):
        c_cat = c_up + skip
        b.conv_t(f"dec{d}.up", c_prev, c_up, k)
        b.batchnorm(f"dec{d}.bn", c_cat)
        b.inception(f"dec{d}.inc", replace(config.inception, channels=c_cat))
    c_last = _decoder_channels(config)[-1]
    b.conv("head", c_last[1] + c_last[2], config.out_channels, 1)
    return Network(config, b.params, b.bn)


# ---------------------------------------------------------------------------
# forward


def inception_block(
    x: Tensor,
    params: dict[str, Tensor],
    name: str,
    cfg: InceptionBlockConfig,
) -> Tensor:
    """Parallel dilated convolutions, 1x1 channel combiner, residual add."""
    if x.channels != cfg.channels:
        raise ShapeError(f"{name}: input channels {x.channels} != block channels {cfg.channels}")
    branches = None
    for j, dil in enumerate(cfg.branch_dilations):
        spec = cfg.branch_spec(dil)
        h = conv1d(x, params[f"{name}.branch{j}.weight"], params[f"{name}.branch{j}.bias"], spec)
        branches = h if branches is None else concat_channels(branches, h)
    n = len(cfg.branch_dilations)
    combine = ConvSpec(cfg.channels * n, cfg.channels, 1)
    merged = conv1d(branches, params[f"{name}.combine.weight"], params[f"{name}.combine.bias"], combine)
    return add(x, merged)


def _post_ops(net: Network, h: Tensor, name: str, training: bool, rng) -> Tensor:
    cfg = net.config
    p = net.params
    try:
        h = batchnorm1d(
            h, p[f"{name}.bn.gamma"], p[f"{name}.bn.beta"], net.bn_state[f"{name}.bn"],
            training, cfg.bn_eps, cfg.bn_momentum,
        )
        h = leaky_relu(h, cfg.leaky_slope)
        h = dropout(h, cfg.dropout_rate, rng, training)
        h = inception_block(h, p, f"{name}.inc", replace(cfg.inception, channels=h.channels))
    except NonFiniteError as exc:
        raise NonFiniteError(f"non-finite activation at layer {name}: {exc}") from None
    if not np.all(np.isfinite(h.values)):
        raise NonFiniteError(f"non-finite activation at layer {name}")
    return h


def forward(net: Network, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Map ``[b, in_channels, input_length]`` to ``[b, out_channels, input_length]``."""
    cfg = net.config
    p = net.params
    if x.values.ndim != 3 or x.channels != cfg.in_channels or x.length != cfg.input_length:
        raise ShapeError(
            f"network expects [b, {cfg.in_channels}, {cfg.input_length}], got {x.shape}"
        )
    skips = [x]
    h = x
    c_in = cfg.in_channels
    for lvl in range(cfg.levels):
        c = cfg.filters(lvl)
        spec = ConvSpec(c_in, c, cfg.kernel, cfg.stride, 1, cfg.padding)
        h = conv1d(h, p[f"enc{lvl}.conv.weight"], p[f"enc{lvl}.conv.bias"], spec)
        h = _post_ops(net, h, f"enc{lvl}", training, rng)
        skips.append(h)
        c_in = c
    h = conv1d(h, p["bottleneck.weight"], p["bottleneck.bias"], ConvSpec(c_in, c_in, 1))
    for d, (c_prev, c_up, _skip) in enumerate(_decoder_channels(cfg)):
        spec = ConvSpec(c_prev, c_up, cfg.kernel, cfg.stride, 1, cfg.padding)
        h = conv1d_transpose(h, p[f"dec{d}.up.weight"], p[f"dec{d}.up.bias"], spec)
        h = concat_channels(h, skips[cfg.levels - 1 - d])
        h = _post_ops(net, h, f"dec{d}", training, rng)
    head = ConvSpec(h.channels, cfg.out_channels, 1)
    return conv1d(h, p["head.weight"], p["head.bias"], head)


def predict(net: Network, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Eval-mode inference on a ``[n, in_channels, length]`` array."""
    x = np.asarray(x, dtype=np.float64)
    out = []
    for i in range(0, len(x), batch_size):
        out.append(forward(net, Tensor(x[i : i + batch_size]), training=False).values)
    if not out:
        return np.zeros((0, net.config.out_channels, net.config.input_length))
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"CECGNET\x00"
FORMAT_VERSION = 1
_DTYPE_F64 = 1


class CheckpointError(ValueError):
    pass


def _write_arrays(fh, arrays: "OrderedDict[str, np.ndarray]") -> None:
    fh.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        fh.write(struct.pack("<I", len(nb)))
        fh.write(nb)
        fh.write(struct.pack("<BI", _DTYPE_F64, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"corrupt checkpoint: truncated while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def save_checkpoint(
    net: Network,
    path,
    extra_arrays: "dict[str, np.ndarray] | None" = None,
    meta: dict | None = None,
) -> None:
    """Write network config, parameters, running stats and optional extras.

    ``extra_arrays`` (e.g. optimizer velocity) and ``meta`` (JSON-able) are
    stored verbatim and returned by :func:`read_checkpoint`.
    """
    header = json.dumps({"network": net.config.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    arrays = net.state_arrays()
    extras = OrderedDict((f"extra/{k}", v) for k, v in (extra_arrays or {}).items())
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        _write_arrays(fh, OrderedDict(list(arrays.items()) + list(extras.items())))


def read_checkpoint(path) -> tuple[NetworkConfig, dict, "OrderedDict[str, np.ndarray]"]:
    """Return ``(config, meta, arrays)`` from a checkpoint file."""
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I", "format version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} != supported {FORMAT_VERSION}")
    (hlen,) = r.unpack("<I", "header length")
    try:
        header = json.loads(r.take(hlen, "header").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    config = NetworkConfig.from_dict(header["network"])
    (count,) = r.unpack("<I", "array count")
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (nlen,) = r.unpack("<I", "array name length")
        name = r.take(nlen, "array name").decode("utf-8")
        dtype, ndim = r.unpack("<BI", f"{name} dtype")
        if dtype != _DTYPE_F64:
            raise CheckpointError(f"array {name}: unsupported dtype tag {dtype}")
        shape = r.unpack(f"<{ndim}Q", f"{name} shape")
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        payload = r.take(nbytes, f"{name} payload")
        arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError("corrupt checkpoint: trailing bytes after last array")
    return config, header["meta"], arrays


def load_checkpoint(path, expected: NetworkConfig | None = None) -> Network:
    """Rebuild a :class:`Network` from ``path``.

    If ``expected`` is given the stored arrays are checked against a network
    built from it; the first array whose name or shape differs is reported.
    """
    config, _meta, arrays = read_checkpoint(path)
    template = build_network(expected if expected is not None else config)
    want = template.state_arrays()
    got = OrderedDict((k, v) for k, v in arrays.items() if not k.startswith("extra/"))
    for (wn, wa), (gn, ga) in zip(want.items(), got.items()):
        if wn != gn or wa.shape != ga.shape:
            raise CheckpointError(
                f"checkpoint mismatch at array {wn!r}: expected shape {wa.shape}, "
                f"found {gn!r} with shape {ga.shape}"
            )
    if len(want) != len(got):
        names_w, names_g = list(want), list(got)
        first = names_w[len(names_g)] if len(names_w) > len(names_g) else names_g[len(names_w)]
        raise CheckpointError(f"checkpoint mismatch at array {first!r}: array count differs")
    if expected is not None and expected != config:
        raise CheckpointError("checkpoint config differs from the expected config")
    for name, t in template.params.items():
        t.values = arrays[name].copy()
    for name, s in template.bn_state.items():
        s.running_mean = arrays[f"{name}.running_mean"].copy()
        s.running_var = arrays[f"{name}.running_var"].copy()
    return template
