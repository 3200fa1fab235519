"""The four network families: trace-injection generator, patch-based
discriminator, camera-model embedder, and a compact evaluation classifier,
plus the normalization layers they rely on.

All modules are plain PyTorch on CPU; forward passes are deterministic, and
the only mutable inference-time state (spectral power-iteration vectors,
running means) is updated exclusively when the owning training step asks
for it.
"""

from __future__ import annotations

import io
import json
import zipfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .imageops import THIRD_DERIV_KERNEL, ShapeError, gaussian_kernel_1d
from .seeding import derive_seed

GENERATOR_WIDTHS = (64, 64, 64, 128, 128, 128)
DISCRIMINATOR_WIDTH = 64
DISCRIMINATOR_SHRINK = 12          # six unpadded 3x3 convolutions
EMBEDDER_WIDTHS = (64, 128, 256, 512)
EMBEDDING_DIM = 512
CLASSIFIER_WIDTHS = (24, 48, 96, 96)
SPECTRAL_INIT_ITERATIONS = 50
BATCHNORM_MOMENTUM = 0.9


def to_tensor(img: np.ndarray) -> torch.Tensor:
    """(H, W, 3) signed-range numpy image -> (3, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.transpose(img, (2, 0, 1)))).float()


def to_image(t: torch.Tensor) -> np.ndarray:
    """(3, H, W) tensor -> (H, W, 3) float64 numpy image."""
    return t.detach().cpu().double().numpy().transpose(1, 2, 0)


def batch_tensor(images) -> torch.Tensor:
    return torch.stack([to_tensor(im) for im in images])


def spectral_normalize(weight: torch.Tensor, u: torch.Tensor, update: bool = True):
    """Divide `weight` by its estimated top singular value.

    One power-iteration step refreshes `u` when `update` is set; gradients
    flow through `weight` only. A zero weight is returned unchanged.
    """
    w = weight.reshape(weight.shape[0], -1)
    wd = w.detach()
    if not torch.any(wd != 0):
        return weight, u
    v = F.normalize(wd.t() @ u, dim=0, eps=1e-12)
    if update:
        u = F.normalize(wd @ v, dim=0, eps=1e-12)
    sigma = torch.dot(u, w @ v)
    return weight / sigma, u


class SpectralConv2d(nn.Conv2d):
    """Convolution whose weight is spectrally normalized at every forward.

    The power-iteration state advances only while `update_u` is True, so a
    training step updates it exactly once no matter how many extra forwards
    (e.g. the generator's adversarial pass) happen in between.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.update_u = False
        self.register_buffer("u", F.normalize(torch.randn(self.out_channels), dim=0))

    def forward(self, x):
        w_norm, u = spectral_normalize(self.weight, self.u, update=self.update_u)
        if self.update_u:
            with torch.no_grad():
                self.u.copy_(u)
        return self._conv_forward(x, w_norm, self.bias)


@contextmanager
def spectral_updates(module: nn.Module):
    """Enable power-iteration updates for the duration of one step."""
    convs = [m for m in module.modules() if isinstance(m, SpectralConv2d)]
    for m in convs:
        m.update_u = True
    try:
        yield module
    finally:
        for m in convs:
            m.update_u = False


class MeanOnlyBatchNorm2d(nn.Module):
    """Batch normalization that centers activations without rescaling them."""

    def __init__(self, channels: int, momentum: float = BATCHNORM_MOMENTUM):
        super().__init__()
        self.momentum = momentum
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))

    def forward(self, x):
        if self.training:
            mean = x.mean(dim=(0, 2, 3))
            with torch.no_grad():
                self.running_mean.mul_(self.momentum).add_((1 - self.momentum) * mean)
        else:
            mean = self.running_mean
        return x - mean.reshape(1, -1, 1, 1) + self.bias.reshape(1, -1, 1, 1)


class FixedResidualLayer(nn.Module):
    """Non-trainable first layer: RGB plus third-order derivatives, 9 channels."""

    def __init__(self):
        super().__init__()
        taps = torch.tensor(THIRD_DERIV_KERNEL, dtype=torch.float32)
        self.register_buffer("kernel_h", taps.reshape(1, 1, 1, 4).repeat(3, 1, 1, 1))
        self.register_buffer("kernel_v", taps.reshape(1, 1, 4, 1).repeat(3, 1, 1, 1))

    def forward(self, x):
        # taps act at offsets (-2, -1, 0, +1); replicate borders keep H x W
        xh = F.pad(x, (2, 1, 0, 0), mode="replicate")
        xv = F.pad(x, (0, 0, 2, 1), mode="replicate")
        h = F.conv2d(xh, self.kernel_h, groups=3)
        v = F.conv2d(xv, self.kernel_v, groups=3)
        return torch.cat([x, h, v], dim=1)


class GaussianPrefilter(nn.Module):
    """Fixed 3x3 Gaussian smoothing, replicate borders, per channel."""

    def __init__(self, sigma: float = 0.4):
        super().__init__()
        k = torch.tensor(gaussian_kernel_1d(sigma), dtype=torch.float32)
        self.register_buffer("kernel", torch.outer(k, k).reshape(1, 1, 3, 3).repeat(3, 1, 1, 1))

    def forward(self, x):
        return F.conv2d(F.pad(x, (1, 1, 1, 1), mode="replicate"), self.kernel, groups=3)


class Generator(nn.Module):
    """Seven-layer residual rewriter: y = tanh(conv_stack(prefilter(x)) + x)."""

    def __init__(self):
        super().__init__()
        self.prefilter = GaussianPrefilter(0.4)
        widths = (3,) + GENERATOR_WIDTHS + (3,)
        layers = []
        for i in range(7):
            conv_cls = SpectralConv2d if 1 <= i <= 5 else nn.Conv2d
            layers.append(conv_cls(widths[i], widths[i + 1], 3,
                                   padding=1, padding_mode="replicate"))
        self.convs = nn.ModuleList(layers)

    def forward(self, x):
        h = self.prefilter(x)
        for conv in self.convs[:-1]:
            h = F.relu(conv(h))
        return torch.tanh(self.convs[-1](h) + x)


class Discriminator(nn.Module):
    """Patch-based scorer over image residuals; emits a spatial logit map."""

    def __init__(self):
        super().__init__()
        w = DISCRIMINATOR_WIDTH
        self.residuals = FixedResidualLayer()
        self.entry = nn.Conv2d(9, w, 3)
        self.blocks = nn.ModuleList([SpectralConv2d(w, w, 3) for _ in range(4)])
        self.norms = nn.ModuleList([MeanOnlyBatchNorm2d(w) for _ in range(4)])
        self.final = nn.Conv2d(w, 1, 3)

    def forward(self, x):
        if x.shape[-1] <= DISCRIMINATOR_SHRINK or x.shape[-2] <= DISCRIMINATOR_SHRINK:
            raise ShapeError(
                f"patch {tuple(x.shape[-2:])} smaller than the receptive field "
                f"({DISCRIMINATOR_SHRINK + 1} minimum)")
        h = F.relu(self.entry(self.residuals(x)))
        for conv, norm in zip(self.blocks, self.norms):
            h = F.relu(norm(conv(h)))
        return self.final(h).squeeze(1)


class EmbedderBlock(nn.Module):
    """Two-branch residual block: 1x1 skip plus two 3x3 convolutions."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.skip = SpectralConv2d(cin, cout, 1)
        self.conv1 = SpectralConv2d(cin, cout, 3, padding=1, padding_mode="replicate")
        self.conv2 = SpectralConv2d(cout, cout, 3, padding=1, padding_mode="replicate")

    def forward(self, x):
        return self.skip(x) + self.conv2(F.relu(self.conv1(x)))


class Embedder(nn.Module):
    """Camera-model fingerprint network: 512-d embedding by global max pool,
    projected to the unit sphere so distance scales match the fixed margins."""

    def __init__(self):
        super().__init__()
        self.residuals = FixedResidualLayer()
        widths = (9,) + EMBEDDER_WIDTHS
        self.blocks = nn.ModuleList(
            [EmbedderBlock(widths[i], widths[i + 1]) for i in range(4)])

    def forward(self, x):
        if x.shape[-1] % 16 or x.shape[-2] % 16:
            raise ShapeError(f"input size {tuple(x.shape[-2:])} not divisible by 16")
        h = self.residuals(x)
        features = []
        for block in self.blocks:
            h = block(h)
            features.append(h)
            h = F.avg_pool2d(h, 2)
        return F.normalize(h.amax(dim=(2, 3)), dim=-1, eps=1e-12), features


class CameraClassifier(nn.Module):
    """Compact stand-in for a deployed camera-model identifier."""

    def __init__(self, num_classes: int):
        super().__init__()
        self.num_classes = num_classes
        self.residuals = FixedResidualLayer()
        widths = (9,) + CLASSIFIER_WIDTHS
        self.convs = nn.ModuleList(
            [nn.Conv2d(widths[i], widths[i + 1], 3, padding=1, padding_mode="replicate")
             for i in range(4)])
        self.head = nn.Linear(CLASSIFIER_WIDTHS[-1], num_classes)

    def forward(self, x):
        h = self.residuals(x)
        for conv in self.convs:
            h = F.avg_pool2d(F.relu(conv(h)), 2)
        return self.head(h.mean(dim=(2, 3)))


def init_weights(module: nn.Module, seed) -> nn.Module:
    """Deterministic initialization: orthogonal convolutions, zero biases,
    spectral states settled by 50 power iterations."""
    gen = torch.Generator().manual_seed(derive_seed("init", seed))
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            flat = torch.empty_like(m.weight.detach().reshape(m.weight.shape[0], -1))
            torch.nn.init.orthogonal_(flat, generator=gen)
            with torch.no_grad():
                m.weight.copy_(flat.reshape(m.weight.shape))
                if m.bias is not None:
                    m.bias.zero_()
        if isinstance(m, SpectralConv2d):
            with torch.no_grad():
                u = F.normalize(torch.randn(m.out_channels, generator=gen), dim=0)
                w = m.weight.reshape(m.out_channels, -1)
                for _ in range(SPECTRAL_INIT_ITERATIONS):
                    v = F.normalize(w.t() @ u, dim=0, eps=1e-12)
                    u = F.normalize(w @ v, dim=0, eps=1e-12)
                m.u.copy_(u)
    return module


def build_generator(seed=0) -> Generator:
    return init_weights(Generator(), ("generator", seed))


def build_discriminator(seed=0) -> Discriminator:
    return init_weights(Discriminator(), ("discriminator", seed))


def build_embedder(seed=0) -> Embedder:
    return init_weights(Embedder(), ("embedder", seed))


def build_classifier(num_classes: int, seed=0) -> CameraClassifier:
    return init_weights(CameraClassifier(num_classes), ("classifier", seed))


ARCHITECTURES = {
    "generator": (Generator, ()),
    "discriminator": (Discriminator, ()),
    "embedder": (Embedder, ()),
}


def save_checkpoint(path, module: nn.Module, header: dict) -> None:
    """Single-archive checkpoint: named float32 arrays plus a JSON header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as z:
        z.writestr("header.json", json.dumps(header, indent=2, sort_keys=True))
        for name, tensor in module.state_dict().items():
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(tensor.cpu().numpy(), dtype=np.float32))
            z.writestr(f"arrays/{name}.npy", buf.getvalue())


def load_checkpoint(path, module: nn.Module) -> dict:
    """Restore a checkpoint into `module`; returns the JSON header."""
    with zipfile.ZipFile(Path(path), "r") as z:
        header = json.loads(z.read("header.json"))
        state = {}
        for info in z.namelist():
            if info.startswith("arrays/") and info.endswith(".npy"):
                name = info[len("arrays/"):-len(".npy")]
                state[name] = torch.from_numpy(np.load(io.BytesIO(z.read(info))))
    module.load_state_dict(state)
    return header


def checkpoint_digest(module: nn.Module) -> str:
    """Order-stable content hash of all parameters and buffers."""
    import hashlib

    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensor.cpu().numpy(), dtype=np.float32).tobytes())
    return h.hexdigest()
