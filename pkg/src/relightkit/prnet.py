"""Relighting network: encoder, confidence-weighted light head, decoder.

The network maps a masked source portrait plus a target light map to the
relit portrait, and predicts the source light map on the side.  Layout:

* Encoder stages: conv(stride 1) then conv(stride 2), every conv followed
  by group norm and a per-channel PReLU.  Spatial size halves per stage.
* Light head: a 1x1 conv at the bottleneck emits, per location, HL*WL*3
  light values and confidence logits (one per light pixel, or a single
  shared one).  Confidences pass through softplus and weight a per-light-
  pixel average over bottleneck locations.
* Light injection: the target light map is flattened to 1x1x(3*HL*WL),
  passed through two 1x1 conv + PReLU layers, broadcast across the
  bottleneck, and concatenated on channels.
* Decoder stages mirror the encoder: transposed conv (stride 2) with
  group norm + PReLU, concatenation of the same-resolution encoder
  activation, then a stride-1 conv block.  A final 1x1 conv + sigmoid
  produces RGB in [0, 1].
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import conv2d, conv2d_transpose, group_norm, prelu, sigmoid, softplus
from .optim import AdamState
from .tensor import Tensor, broadcast_to, concat, div, mul, narrow, reshape, tsum

CHECKPOINT_VERSION = 1


@dataclass
class PRNetConfig:
    """Architecture hyperparameters.

    ``resolution`` must be divisible by 2**len(enc_channels); the
    bottleneck is resolution / 2**stages on each side.  Group counts are
    clipped to the largest divisor of the channel count not exceeding
    ``gn_groups``.
    """

    resolution: int = 64
    light_shape: tuple[int, int] = (8, 16)
    enc_channels: tuple[int, ...] = (16, 32, 64, 128)
    light_embed: int = 64
    gn_groups: int = 8
    kernel_size: int = 3
    confidence_mode: str = "per_pixel"
    in_channels: int = 3

    def __post_init__(self):
        self.enc_channels = tuple(int(c) for c in self.enc_channels)
        self.light_shape = tuple(int(v) for v in self.light_shape)
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.confidence_mode not in ("per_pixel", "scalar"):
            raise ValueError(f"unknown confidence_mode {self.confidence_mode!r}")
        if not self.enc_channels or min(self.enc_channels) < 1:
            raise ValueError("enc_channels must be non-empty positive ints")
        if self.light_embed < 1:
            raise ValueError("light_embed must be positive")
        factor = 2 ** len(self.enc_channels)
        if self.resolution % factor != 0 or self.resolution < factor:
            raise ValueError(
                f"resolution {self.resolution} not divisible by 2^{len(self.enc_channels)}"
            )

    @property
    def n_stages(self) -> int:
        return len(self.enc_channels)

    @property
    def bottleneck_size(self) -> int:
        return self.resolution // (2 ** self.n_stages)

    @property
    def light_pixels(self) -> int:
        return self.light_shape[0] * self.light_shape[1]

    def groups_for(self, channels: int) -> int:
        g = min(self.gn_groups, channels)
        while channels % g:
            g -= 1
        return g

    def dec_out(self, stage: int) -> int:
        return self.enc_channels[stage - 1] if stage > 0 else self.enc_channels[0]


def toy_config() -> PRNetConfig:
    """The 64 x 64 desk-scale configuration (about 0.7M parameters)."""
    return PRNetConfig()


def gradcheck_config() -> PRNetConfig:
    """Tiny 16 x 16 network small enough for finite-difference sweeps."""
    return PRNetConfig(
        resolution=16,
        light_shape=(4, 8),
        enc_channels=(4, 8),
        light_embed=8,
        gn_groups=4,
    )


class PRNetParams:
    """Named parameter tensors in a fixed, serialization-defining order."""

    def __init__(self, tensors: dict[str, Tensor]):
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self) -> list[str]:
        return list(self._tensors)

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def astype(self, dtype) -> "PRNetParams":
        return PRNetParams(
            {
                n: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad, name=n)
                for n, t in self._tensors.items()
            }
        )

    def copy(self) -> "PRNetParams":
        return PRNetParams(
            {
                n: Tensor(t.data.copy(), requires_grad=t.requires_grad, name=n)
                for n, t in self._tensors.items()
            }
        )


def _param_spec(config: PRNetConfig) -> list[tuple[str, tuple[int, ...]]]:
    """(name, shape) for every parameter, in serialization order."""
    k = config.kernel_size
    spec: list[tuple[str, tuple[int, ...]]] = []

    def conv_block(prefix, cin, cout):
        spec.append((f"{prefix}.kernel", (k, k, cin, cout)))
        spec.append((f"{prefix}.bias", (cout,)))
        spec.append((f"{prefix}.gamma", (cout,)))
        spec.append((f"{prefix}.beta", (cout,)))
        spec.append((f"{prefix}.alpha", (cout,)))

    cin = config.in_channels
    for i, c in enumerate(config.enc_channels):
        conv_block(f"enc{i}.a", cin, c)
        conv_block(f"enc{i}.b", c, c)
        cin = c

    p = config.light_pixels
    n_conf = p if config.confidence_mode == "per_pixel" else 1
    c_bot = config.enc_channels[-1]
    spec.append(("light_head.kernel", (1, 1, c_bot, 3 * p + n_conf)))
    spec.append(("light_head.bias", (3 * p + n_conf,)))

    m = config.light_embed
    spec.append(("light_embed.0.kernel", (1, 1, 3 * p, m)))
    spec.append(("light_embed.0.bias", (m,)))
    spec.append(("light_embed.0.alpha", (m,)))
    spec.append(("light_embed.1.kernel", (1, 1, m, m)))
    spec.append(("light_embed.1.bias", (m,)))
    spec.append(("light_embed.1.alpha", (m,)))

    n = config.n_stages
    for i in reversed(range(n)):
        t_in = (config.enc_channels[-1] + m) if i == n - 1 else config.dec_out(i + 1)
        t_out = config.dec_out(i)
        spec.append((f"dec{i}.t.kernel", (k, k, t_out, t_in)))
        spec.append((f"dec{i}.t.bias", (t_out,)))
        spec.append((f"dec{i}.t.gamma", (t_out,)))
        spec.append((f"dec{i}.t.beta", (t_out,)))
        spec.append((f"dec{i}.t.alpha", (t_out,)))
        conv_block(f"dec{i}.c", t_out + config.enc_channels[i], t_out)

    spec.append(("out.kernel", (1, 1, config.dec_out(0), 3)))
    spec.append(("out.bias", (3,)))
    return spec


# The light head and the light embedding start two orders of magnitude
# smaller than the other kernels.  Both training branches pull on the
# predicted light: the estimation loss wants it to match the true light,
# while the reconstruction loss back-propagates image-scale gradients
# through it and would happily repurpose it as a free latent code long
# before the estimate means anything.  Starting the whole light path near
# zero mutes that second pull (its gradient is proportional to the embed
# kernels), so the head first settles against its own loss while the
# decoder learns the light-to-image mapping from the injected true light;
# by the time the embedding grows back, the two objectives agree.  The
# scale must stay nonzero so finite-difference probes of the loss surface
# are not sitting exactly on the prelu kinks.
LIGHT_PATH_INIT_SCALE = 0.01
_LIGHT_PATH_KERNELS = ("light_head.kernel", "light_embed.0.kernel", "light_embed.1.kernel")


def init_params(config: PRNetConfig, seed: int = 0, dtype=np.float32) -> PRNetParams:
    """Fan-in-scaled Gaussian kernels, zero biases, identity norms,
    PReLU slopes at 0.25.  Deterministic for a given seed."""
    rng = np.random.default_rng([seed, 0x9e3779b9])
    tensors: dict[str, Tensor] = {}
    for name, shape in _param_spec(config):
        kind = name.rsplit(".", 1)[1]
        if kind == "kernel":
            if ".t." in name:
                fan_in = shape[0] * shape[1] * shape[3]  # tconv input channels
            else:
                fan_in = shape[0] * shape[1] * shape[2]
            data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            if name in _LIGHT_PATH_KERNELS:
                data *= LIGHT_PATH_INIT_SCALE
        elif kind == "gamma":
            data = np.ones(shape)
        elif kind == "alpha":
            data = np.full(shape, 0.25)
        else:  # bias, beta
            data = np.zeros(shape)
        tensors[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
    return PRNetParams(tensors)


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------


@dataclass
class EncoderState:
    skips: list  # stride-1 activations, one per stage, finest first
    bottleneck: Tensor


def _conv_block(params: PRNetParams, config: PRNetConfig, prefix: str, x: Tensor, stride: int) -> Tensor:
    x = conv2d(x, params[f"{prefix}.kernel"], params[f"{prefix}.bias"], stride=stride)
    g = config.groups_for(x.shape[2])
    x = group_norm(x, g, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])
    return prelu(x, params[f"{prefix}.alpha"])


def _tconv_block(params: PRNetParams, config: PRNetConfig, prefix: str, x: Tensor) -> Tensor:
    x = conv2d_transpose(x, params[f"{prefix}.kernel"], params[f"{prefix}.bias"], stride=2)
    g = config.groups_for(x.shape[2])
    x = group_norm(x, g, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])
    return prelu(x, params[f"{prefix}.alpha"])


def encode(params: PRNetParams, config: PRNetConfig, image: Tensor) -> EncoderState:
    if image.shape != (config.resolution, config.resolution, config.in_channels):
        raise ValueError(
            f"input shape {image.shape}, expected "
            f"({config.resolution}, {config.resolution}, {config.in_channels})"
        )
    x = image
    skips = []
    for i in range(config.n_stages):
        x = _conv_block(params, config, f"enc{i}.a", x, stride=1)
        skips.append(x)
        x = _conv_block(params, config, f"enc{i}.b", x, stride=2)
    return EncoderState(skips, x)


def confidence_weighted_average(values: Tensor, conf: Tensor) -> Tensor:
    """Average (hb, wb, P, 3) values over locations with (hb, wb, P) or
    (hb, wb, 1) positive weights; returns (P, 3).

    Scaling all weights of one light pixel by a positive constant leaves
    that pixel's output unchanged.
    """
    hb, wb = conf.shape[0], conf.shape[1]
    cw = reshape(conf, (hb, wb, conf.shape[2], 1))
    num = tsum(mul(values, cw), axis=(0, 1))
    den = tsum(cw, axis=(0, 1))
    return div(num, den)


def predict_light(params: PRNetParams, config: PRNetConfig, bottleneck: Tensor):
    """(light map (HL, WL, 3), confidence (hb, wb, n_conf)) from the bottleneck."""
    head = conv2d(bottleneck, params["light_head.kernel"], params["light_head.bias"])
    hb, wb = head.shape[0], head.shape[1]
    p = config.light_pixels
    values = reshape(narrow(head, 2, 0, 3 * p), (hb, wb, p, 3))
    logits = narrow(head, 2, 3 * p, head.shape[2] - 3 * p)
    conf = softplus(logits)
    light = confidence_weighted_average(values, conf)
    hl, wl = config.light_shape
    return reshape(light, (hl, wl, 3)), conf


def embed_light(params: PRNetParams, config: PRNetConfig, light: Tensor) -> Tensor:
    """Two 1x1 conv + PReLU layers on the flattened light, -> (1, 1, m)."""
    hl, wl = config.light_shape
    if light.shape != (hl, wl, 3):
        raise ValueError(f"light shape {light.shape}, expected ({hl}, {wl}, 3)")
    x = reshape(light, (1, 1, 3 * config.light_pixels))
    x = conv2d(x, params["light_embed.0.kernel"], params["light_embed.0.bias"])
    x = prelu(x, params["light_embed.0.alpha"])
    x = conv2d(x, params["light_embed.1.kernel"], params["light_embed.1.bias"])
    x = prelu(x, params["light_embed.1.alpha"])
    return x


def decode(params: PRNetParams, config: PRNetConfig, enc: EncoderState, light_feature: Tensor) -> Tensor:
    b = config.bottleneck_size
    lb = broadcast_to(light_feature, (b, b, config.light_embed))
    x = concat([enc.bottleneck, lb], axis=2)
    for i in reversed(range(config.n_stages)):
        x = _tconv_block(params, config, f"dec{i}.t", x)
        x = concat([x, enc.skips[i]], axis=2)
        x = _conv_block(params, config, f"dec{i}.c", x, stride=1)
    x = conv2d(x, params["out.kernel"], params["out.bias"])
    return sigmoid(x)


@dataclass
class PRNetOutput:
    image: np.ndarray
    light: np.ndarray
    confidence: np.ndarray


def forward(params: PRNetParams, config: PRNetConfig, image: np.ndarray, target_light: np.ndarray) -> PRNetOutput:
    """Inference-mode forward pass on numpy arrays (no tape, no grads)."""
    img = Tensor(np.asarray(image, dtype=np.float32))
    lt = Tensor(np.asarray(target_light, dtype=np.float32))
    enc = encode(params, config, img)
    light, conf = predict_light(params, config, enc.bottleneck)
    out = decode(params, config, enc, embed_light(params, config, lt))
    return PRNetOutput(out.data, light.data, conf.data)


def self_reconstruct(params: PRNetParams, config: PRNetConfig, image: np.ndarray, theta_deg: float = 0.0) -> PRNetOutput:
    """Decode the input under its own predicted light, optionally rotated.

    This is the evaluation-time form of the training self-supervision
    branch; theta 0 reconstructs the input's illumination.
    """
    from .layers import rotate_longitude

    img = Tensor(np.asarray(image, dtype=np.float32))
    enc = encode(params, config, img)
    light, conf = predict_light(params, config, enc.bottleneck)
    rotated = rotate_longitude(light, theta_deg)
    out = decode(params, config, enc, embed_light(params, config, rotated))
    return PRNetOutput(out.data, light.data, conf.data)


# ---------------------------------------------------------------------------
# Checkpoints: manifest JSON + little-endian float32 blob
# ---------------------------------------------------------------------------


class CheckpointError(IOError):
    pass


def save_checkpoint(
    directory: str | os.PathLike,
    params: PRNetParams,
    config: PRNetConfig,
    meta: dict | None = None,
    optimizer: AdamState | None = None,
) -> None:
    """Write manifest.json plus params.bin.

    The blob is every tensor's float32 data, little-endian, concatenated
    in manifest order; optimizer moments ride along as extra tensors so a
    resumed run continues bit-identically.
    """
    os.makedirs(directory, exist_ok=True)
    entries = []
    chunks = []
    offset = 0

    def push(name, arr):
        nonlocal offset
        data = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes

    for name in params.names():
        push(name, params[name].data)
    opt_meta = None
    if optimizer is not None:
        optimizer.ensure(params.tensors())
        for name, m in zip(params.names(), optimizer.m):
            push(f"optim.m.{name}", m)
        for name, v in zip(params.names(), optimizer.v):
            push(f"optim.v.{name}", v)
        opt_meta = {
            "t": optimizer.t,
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
        }

    blob = b"".join(chunks)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "tensors": entries,
        "blob": "params.bin",
        "checksum": hashlib.sha256(blob).hexdigest(),
        "optimizer": opt_meta,
        "meta": meta or {},
    }
    with open(os.path.join(directory, "params.bin"), "wb") as f:
        f.write(blob)
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)


def load_checkpoint(directory: str | os.PathLike):
    """Read a checkpoint; returns (params, config, meta, optimizer | None).

    Rejects unknown format versions, checksum mismatches, and any tensor
    whose shape disagrees with the architecture in the manifest.
    """
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {manifest.get('format_version')!r}"
        )
    cfg_dict = dict(manifest["config"])
    config = PRNetConfig(**cfg_dict)
    with open(os.path.join(directory, manifest["blob"]), "rb") as f:
        blob = f.read()
    if hashlib.sha256(blob).hexdigest() != manifest["checksum"]:
        raise CheckpointError("checkpoint blob does not match its checksum")

    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(blob):
            raise CheckpointError(f"tensor {entry['name']} overruns the blob")
        arrays[entry["name"]] = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape).copy()

    expected = _param_spec(config)
    tensors: dict[str, Tensor] = {}
    for name, shape in expected:
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing tensor {name}")
        if arrays[name].shape != shape:
            raise CheckpointError(
                f"tensor {name} has shape {arrays[name].shape}, architecture wants {shape}"
            )
        tensors[name] = Tensor(arrays[name], requires_grad=True, name=name)
    params = PRNetParams(tensors)

    optimizer = None
    if manifest.get("optimizer"):
        o = manifest["optimizer"]
        optimizer = AdamState(
            lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], t=o["t"]
        )
        optimizer.m = [arrays[f"optim.m.{n}"] for n, _ in expected]
        optimizer.v = [arrays[f"optim.v.{n}"] for n, _ in expected]
    return params, config, manifest.get("meta", {}), optimizer
