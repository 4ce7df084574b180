"""Generator and discriminator architectures plus weight-file IO.

The generator is fully convolutional: an entry convolution, a stack of
residual modules, a channel concatenation of the entry output with every
module output, a fusing convolution back to the base width, a single
1-channel output convolution, and an end-to-end additive skip from the
network input. With the fusing/output convolutions zeroed the network is
exactly the identity, which pins down the initialization behaviour.

The discriminator is a PatchGAN: strided 4x4 Conv-InstanceNorm-LeakyReLU
blocks producing a patch score map, no normalization on the first block
and a bare 1-channel convolution at the end.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import DataError


@dataclass(frozen=True)
class GeneratorSpec:
    base_channels: int = 256
    n_modules: int = 5
    convs_per_module: int = 3
    kernel_size: int = 3

    def __post_init__(self):
        if min(self.base_channels, self.n_modules, self.convs_per_module) < 1:
            raise DataError("generator spec fields must be >= 1")
        if self.kernel_size % 2 != 1:
            raise DataError("generator kernel size must be odd (same padding)")

    @property
    def concat_width(self) -> int:
        return self.base_channels * (self.n_modules + 1)


@dataclass(frozen=True)
class DiscriminatorSpec:
    channels: tuple[int, ...] = (64, 128, 256, 512, 1)
    kernel_size: int = 4
    strides: tuple[int, ...] = (2, 2, 2, 1, 1)
    leaky_slope: float = 0.2
    min_input: int = 64

    def __post_init__(self):
        if len(self.channels) != len(self.strides):
            raise DataError("channel progression and strides must have equal length")
        if self.channels[-1] != 1:
            raise DataError("last discriminator layer must output one score channel")
        if any(c < 1 for c in self.channels) or any(s < 1 for s in self.strides):
            raise DataError("channels and strides must be >= 1")


def receptive_field(spec: DiscriminatorSpec) -> int:
    """Receptive field of one output score, composed back-to-front."""
    r = 1
    for stride in reversed(spec.strides):
        r = r * stride + (spec.kernel_size - stride)
    return r


def output_map_size(spec: DiscriminatorSpec, input_hw: tuple[int, int]) -> tuple[int, int]:
    """Patch-map shape from the standard conv arithmetic (padding 1)."""
    h, w = input_hw
    pad = 1
    for stride in spec.strides:
        h = (h + 2 * pad - spec.kernel_size) // stride + 1
        w = (w + 2 * pad - spec.kernel_size) // stride + 1
    return h, w


class ResidualModule(nn.Module):
    """convs_per_module x (conv-batchnorm-ReLU) plus a skip, ReLU after the add."""

    def __init__(self, channels: int, convs: int, kernel: int):
        super().__init__()
        pad = kernel // 2
        layers = []
        for _ in range(convs):
            # bias is redundant under the normalization's mean subtraction
            layers += [
                nn.Conv2d(channels, channels, kernel, padding=pad, bias=False),
                nn.BatchNorm2d(channels),
                nn.ReLU(),
            ]
        self.branch = nn.Sequential(*layers)

    def forward(self, x):
        return torch.relu(x + self.branch(x))


class TranslationGenerator(nn.Module):
    def __init__(self, spec: GeneratorSpec = GeneratorSpec(), seed: int = 0):
        super().__init__()
        self.spec = spec
        self.seed = seed
        c, k = spec.base_channels, spec.kernel_size
        pad = k // 2
        self.entry = nn.Sequential(nn.Conv2d(1, c, k, padding=pad), nn.ReLU())
        self.modules_ = nn.ModuleList(
            ResidualModule(c, spec.convs_per_module, k) for _ in range(spec.n_modules)
        )
        self.fuse = nn.Conv2d(spec.concat_width, c, k, padding=pad)
        self.out_conv = nn.Conv2d(c, 1, k, padding=pad)
        gaussian_init(self, seed)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != 1:
            raise DataError(f"generator input must be (N, 1, H, W), got {tuple(x.shape)}")
        if min(x.shape[2], x.shape[3]) < 8:
            raise DataError("generator input must be at least 8x8")
        t = self.entry(x)
        feats = [t]
        for module in self.modules_:
            t = module(t)
            feats.append(t)
        fused = self.fuse(torch.cat(feats, dim=1))
        return x + self.out_conv(fused)

    def zero_residual_(self):
        """Zero the fusing and output convolutions: the network becomes identity."""
        for m in self.modules_:
            for layer in m.branch:
                if isinstance(layer, nn.Conv2d):
                    nn.init.zeros_(layer.weight)
                    if layer.bias is not None:
                        nn.init.zeros_(layer.bias)
        for conv in (self.fuse, self.out_conv):
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)
        return self


class PatchDiscriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec = DiscriminatorSpec(), seed: int = 0):
        super().__init__()
        self.spec = spec
        k = spec.kernel_size
        layers: list[nn.Module] = []
        prev = 1
        last = len(spec.channels) - 1
        for i, (ch, stride) in enumerate(zip(spec.channels, spec.strides)):
            normed = 0 < i < last
            layers.append(nn.Conv2d(prev, ch, k, stride=stride, padding=1, bias=not normed))
            if i != last:
                if normed:
                    layers.append(nn.InstanceNorm2d(ch, affine=True))
                layers.append(nn.LeakyReLU(spec.leaky_slope))
            prev = ch
        self.seq = nn.Sequential(*layers)
        gaussian_init(self, seed)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != 1:
            raise DataError(f"discriminator input must be (N, 1, H, W), got {tuple(x.shape)}")
        if min(x.shape[2], x.shape[3]) < self.spec.min_input:
            raise DataError(
                f"discriminator input must be at least "
                f"{self.spec.min_input}x{self.spec.min_input}"
            )
        return self.seq(x)


def gaussian_init(net: nn.Module, seed: int, std: float = 0.02) -> None:
    """Seeded Gaussian init for conv kernels; zero biases, unit norm scales."""
    gen = torch.Generator().manual_seed(seed)
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            with torch.no_grad():
                m.weight.normal_(0.0, std, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, (nn.BatchNorm2d, nn.InstanceNorm2d)):
            if m.weight is not None:
                nn.init.ones_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


# ---------------------------------------------------------------------------
# Weight files (.wts): fixed magic + JSON header + float32 blobs in
# state-dict declaration order. Only generators are exported for deployment;
# discriminators use the same container inside resume checkpoints.
# ---------------------------------------------------------------------------

_MAGIC = b"USGW"
_FORMAT_VERSION = 1
_HEAD = struct.Struct("<4sHI")


def save_weights(net: nn.Module, path) -> None:
    if isinstance(net, TranslationGenerator):
        kind = "generator"
    elif isinstance(net, PatchDiscriminator):
        kind = "discriminator"
    else:
        raise DataError(f"cannot serialize weights of {type(net).__name__}")
    state = net.state_dict()
    header = {
        "format_version": _FORMAT_VERSION,
        "kind": kind,
        "spec": asdict(net.spec),
        "seed": getattr(net, "seed", 0),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(_MAGIC, _FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for v in state.values():
            fh.write(v.detach().to(torch.float32).numpy().astype("<f4").tobytes())


def _read_weight_file(path):
    with open(path, "rb") as fh:
        raw = fh.read(_HEAD.size)
        if len(raw) < _HEAD.size:
            raise DataError(f"{path}: truncated weight file")
        magic, version, header_len = _HEAD.unpack(raw)
        if magic != _MAGIC:
            raise DataError(f"{path}: not a weight file (bad magic)")
        if version != _FORMAT_VERSION:
            raise DataError(f"{path}: unsupported weight format version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        tensors = {}
        for p in header["params"]:
            count = int(np.prod(p["shape"])) if p["shape"] else 1
            buf = fh.read(count * 4)
            if len(buf) != count * 4:
                raise DataError(f"{path}: truncated parameter {p['name']}")
            arr = np.frombuffer(buf, dtype="<f4").reshape(p["shape"]).copy()
            tensors[p["name"]] = torch.from_numpy(arr)
    return header, tensors


def _load_into(net: nn.Module, header, tensors, path) -> None:
    state = net.state_dict()
    if list(state.keys()) != [p["name"] for p in header["params"]]:
        raise DataError(f"{path}: parameter names do not match the spec")
    for name, ref in state.items():
        if tuple(tensors[name].shape) != tuple(ref.shape):
            raise DataError(
                f"{path}: shape mismatch for {name}: "
                f"{tuple(tensors[name].shape)} vs {tuple(ref.shape)}"
            )
    converted = {k: v.to(state[k].dtype) for k, v in tensors.items()}
    net.load_state_dict(converted)


def load_generator(path) -> TranslationGenerator:
    header, tensors = _read_weight_file(path)
    if header["kind"] != "generator":
        raise DataError(f"{path}: expected a generator weight file")
    net = TranslationGenerator(GeneratorSpec(**header["spec"]), seed=header["seed"])
    _load_into(net, header, tensors, path)
    return net


def load_discriminator(path) -> PatchDiscriminator:
    header, tensors = _read_weight_file(path)
    if header["kind"] != "discriminator":
        raise DataError(f"{path}: expected a discriminator weight file")
    spec_dict = dict(header["spec"])
    spec_dict["channels"] = tuple(spec_dict["channels"])
    spec_dict["strides"] = tuple(spec_dict["strides"])
    net = PatchDiscriminator(DiscriminatorSpec(**spec_dict), seed=header["seed"])
    _load_into(net, header, tensors, path)
    return net
