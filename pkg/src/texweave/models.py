"""Trainable components: local/global encoders, generator, two critics.

The encoders and critics follow a progressive-growing critic backbone
(pixel normalization, leaky ReLU 0.2, equalized learning rate, and a
minibatch-stddev channel in the critics only). The local encoder is
truncated so its output tensor is a factor m=4 smaller than the input;
the global encoder is truncated at 1x1 resolution. The generator
concatenates the local and (spatially broadcast) global latents,
pushes them through a chain of five residual blocks so the bottleneck
receptive field spans the training patch, then upsamples by m. All
components are fully convolutional where their contract allows it, so
synthesis extent is set by the latent extent alone.

Growth to the next resolution adds input-side blocks to the encoders
and critics and an output-side block to the generator; a two-path fade
blends the new path with the upsampled previous-stage path while the
blend-in factor ramps from 0 to 1.
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .latent import LatentField, LatentPair

LATENT_FACTOR = 4  # m: image pixels per latent cell
N_RESBLOCKS = 5
RESOLUTIONS = (32, 64, 128)


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    patch_size: int = 128
    start_resolution: int = 32
    c_local: int = 128
    c_global: int = 128
    nf: object = 128           # int, or dict resolution -> width
    ngf: int = 128
    use_global: bool = True
    mbstd_group: int = 4
    seed: int = 0
    m: int = LATENT_FACTOR
    n_resblocks: int = N_RESBLOCKS

    def __post_init__(self):
        if self.m != LATENT_FACTOR:
            raise ModelError("the architecture fixes m = 4")
        if self.n_resblocks != N_RESBLOCKS:
            raise ModelError("the architecture fixes five residual blocks")
        if self.patch_size not in RESOLUTIONS:
            raise ModelError(f"patch size must be one of {RESOLUTIONS}")
        if self.start_resolution not in RESOLUTIONS \
                or self.start_resolution > self.patch_size:
            raise ModelError("bad start resolution")
        if isinstance(self.nf, dict):
            self.nf = {int(k): int(v) for k, v in self.nf.items()}

    def width(self, res):
        if isinstance(self.nf, dict):
            return self.nf[res]
        return int(self.nf)

    @property
    def gen_in_channels(self):
        return self.c_local + (self.c_global if self.use_global else 0)

    def to_dict(self):
        return asdict(self)


def desk_config(seed=0):
    """Small single-stage preset that trains in minutes on a CPU."""
    return ModelConfig(patch_size=32, start_resolution=32, c_local=32,
                       c_global=32, nf=24, ngf=24, seed=seed)


def full_config(seed=0):
    """Preset mirroring the published training scale (needs a real GPU)."""
    return ModelConfig(patch_size=128, start_resolution=32, c_local=128,
                       c_global=128,
                       nf={4: 256, 8: 256, 16: 256, 32: 128, 64: 128,
                           128: 64},
                       ngf=128, seed=seed)


# ---------------------------------------------------------------------------
# Layers


class EqualizedConv2d(nn.Module):
    """Conv with unit-variance init and the He constant applied at runtime."""

    def __init__(self, in_ch, out_ch, kernel, padding=0):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.scale = math.sqrt(2.0 / (in_ch * kernel * kernel))
        self.padding = padding

    def forward(self, x):
        return F.conv2d(x, self.weight * self.scale, self.bias,
                        padding=self.padding)


class EqualizedLinear(nn.Module):
    def __init__(self, in_features, out_features):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features))
        self.scale = math.sqrt(2.0 / in_features)

    def forward(self, x):
        return F.linear(x, self.weight * self.scale, self.bias)


class PixelNorm(nn.Module):
    def forward(self, x):
        return x * torch.rsqrt(torch.mean(x * x, dim=1, keepdim=True) + 1e-8)


class MinibatchStddev(nn.Module):
    """Append one channel holding the mean per-group feature stddev."""

    def __init__(self, group_size=4):
        super().__init__()
        self.group_size = group_size

    def forward(self, x):
        n, c, h, w = x.shape
        g = min(self.group_size, n)
        while n % g:
            g -= 1
        y = x.reshape(g, n // g, c, h, w)
        y = y - y.mean(dim=0, keepdim=True)
        y = torch.sqrt((y * y).mean(dim=0) + 1e-8)
        y = y.mean(dim=[1, 2, 3], keepdim=True)
        y = y.repeat(g, 1, h, w)
        return torch.cat([x, y], dim=1)


def _act(x):
    return F.leaky_relu(x, 0.2)


class DownBlock(nn.Module):
    """Two 3x3 convs then 2x average pooling; nf(res) -> nf(res/2)."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv1 = EqualizedConv2d(in_ch, in_ch, 3, padding=1)
        self.conv2 = EqualizedConv2d(in_ch, out_ch, 3, padding=1)
        self.norm = PixelNorm()

    def forward(self, x):
        x = self.norm(_act(self.conv1(x)))
        x = self.norm(_act(self.conv2(x)))
        return F.avg_pool2d(x, 2)


class UpBlock(nn.Module):
    """Nearest-neighbor 2x upsample then two 3x3 convs."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv1 = EqualizedConv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = EqualizedConv2d(out_ch, out_ch, 3, padding=1)
        self.norm = PixelNorm()

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.norm(_act(self.conv1(x)))
        return self.norm(_act(self.conv2(x)))


class ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv1 = EqualizedConv2d(ch, ch, 3, padding=1)
        self.conv2 = EqualizedConv2d(ch, ch, 3, padding=1)
        self.norm = PixelNorm()

    def forward(self, x):
        h = self.norm(_act(self.conv1(x)))
        h = self.norm(_act(self.conv2(h)))
        return x + h


def _upsample2(x):
    return F.interpolate(x, scale_factor=2, mode="nearest")


# ---------------------------------------------------------------------------
# Components


class LocalEncoder(nn.Module):
    """Fully convolutional encoder producing an h/4 x w/4 local tensor."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.from_rgb = nn.ModuleDict()
        self.blocks = nn.ModuleDict()
        self.heads = nn.ModuleDict()
        self._add_stage(config.start_resolution, initial=True)

    def _add_stage(self, res, initial=False):
        cfg = self.config
        self.from_rgb[str(res)] = EqualizedConv2d(3, cfg.width(res), 1)
        self.blocks[str(res)] = DownBlock(cfg.width(res), cfg.width(res // 2))
        if initial:
            self.blocks[str(res // 2)] = DownBlock(cfg.width(res // 2),
                                                   cfg.width(res // 4))
        self.heads[str(res)] = EqualizedConv2d(cfg.width(res // 4),
                                               cfg.c_local, 1)

    def forward(self, x, res, fade=1.0):
        if x.shape[-1] % LATENT_FACTOR or x.shape[-2] % LATENT_FACTOR:
            raise ModelError(
                f"input extent {tuple(x.shape[-2:])} not divisible by "
                f"{LATENT_FACTOR}")
        h = self.from_rgb[str(res)](x)
        h = self.blocks[str(res)](h)
        h = self.blocks[str(res // 2)](h)
        out = self.heads[str(res)](h)
        if fade < 1.0:
            prev = self.forward(F.avg_pool2d(x, 2), res // 2, fade=1.0)
            out = fade * out + (1.0 - fade) * _upsample2(prev)
        return out


class GlobalEncoder(nn.Module):
    """Encoder truncated at 1x1 resolution; emits one vector per image."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.from_rgb = nn.ModuleDict()
        self.blocks = nn.ModuleDict()
        res = config.start_resolution
        self.from_rgb[str(res)] = EqualizedConv2d(3, config.width(res), 1)
        r = res
        while r > 4:
            self.blocks[str(r)] = DownBlock(config.width(r),
                                            config.width(r // 2))
            r //= 2
        nf4 = config.width(4)
        self.conv = EqualizedConv2d(nf4, nf4, 3, padding=1)
        self.final = EqualizedConv2d(nf4, config.c_global, 4)

    def _add_stage(self, res):
        cfg = self.config
        self.from_rgb[str(res)] = EqualizedConv2d(3, cfg.width(res), 1)
        self.blocks[str(res)] = DownBlock(cfg.width(res), cfg.width(res // 2))

    def forward(self, x, res, fade=1.0):
        if x.shape[-1] != res or x.shape[-2] != res:
            raise ModelError(f"global encoder expects {res}x{res} input, "
                             f"got {tuple(x.shape[-2:])}")
        h = self.from_rgb[str(res)](x)
        r = res
        while r > 4:
            h = self.blocks[str(r)](h)
            r //= 2
        h = _act(self.conv(h))
        out = self.final(h).reshape(x.shape[0], -1)
        if fade < 1.0:
            prev = self.forward(F.avg_pool2d(x, 2), res // 2, fade=1.0)
            out = fade * out + (1.0 - fade) * prev
        return out


class Critic(nn.Module):
    """Wasserstein critic: the global-encoder trunk plus minibatch stddev."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.from_rgb = nn.ModuleDict()
        self.blocks = nn.ModuleDict()
        res = config.start_resolution
        self.from_rgb[str(res)] = EqualizedConv2d(3, config.width(res), 1)
        r = res
        while r > 4:
            self.blocks[str(r)] = DownBlock(config.width(r),
                                            config.width(r // 2))
            r //= 2
        nf4 = config.width(4)
        self.mbstd = MinibatchStddev(config.mbstd_group)
        self.conv = EqualizedConv2d(nf4 + 1, nf4, 3, padding=1)
        self.final_conv = EqualizedConv2d(nf4, nf4, 4)
        self.score = EqualizedLinear(nf4, 1)

    def _add_stage(self, res):
        cfg = self.config
        self.from_rgb[str(res)] = EqualizedConv2d(3, cfg.width(res), 1)
        self.blocks[str(res)] = DownBlock(cfg.width(res), cfg.width(res // 2))

    def forward(self, x, res, fade=1.0):
        if x.shape[-1] != res or x.shape[-2] != res:
            raise ModelError(f"critic expects {res}x{res} input, got "
                             f"{tuple(x.shape[-2:])}")
        h = self.from_rgb[str(res)](x)
        r = res
        while r > 4:
            h = self.blocks[str(r)](h)
            r //= 2
        h = self.mbstd(h)
        h = _act(self.conv(h))
        h = _act(self.final_conv(h))
        out = self.score(h.reshape(x.shape[0], -1)).reshape(-1)
        if fade < 1.0:
            prev = self.forward(F.avg_pool2d(x, 2), res // 2, fade=1.0)
            out = fade * out + (1.0 - fade) * prev
        return out


class Generator(nn.Module):
    """Fully convolutional decoder: latent (h, w) -> image (4h, 4w)."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        ngf = config.ngf
        self.entry = EqualizedConv2d(config.gen_in_channels, ngf, 1)
        self.norm = PixelNorm()
        self.resblocks = nn.ModuleList(
            ResBlock(ngf) for _ in range(N_RESBLOCKS))
        self.up_blocks = nn.ModuleDict()
        self.to_rgb = nn.ModuleDict()
        res = config.start_resolution
        self.up_blocks[str(res // 2)] = UpBlock(ngf, ngf)
        self.up_blocks[str(res)] = UpBlock(ngf, ngf)
        self.to_rgb[str(res)] = EqualizedConv2d(ngf, 3, 1)

    def _add_stage(self, res):
        self.up_blocks[str(res)] = UpBlock(self.config.ngf, self.config.ngf)
        self.to_rgb[str(res)] = EqualizedConv2d(self.config.ngf, 3, 1)

    def bottleneck(self, z):
        h = self.norm(_act(self.entry(z)))
        for block in self.resblocks:
            h = block(h)
        return h

    def _rgb(self, z, res):
        h = self.bottleneck(z)
        h = self.up_blocks[str(res // 2)](h)
        h = self.up_blocks[str(res)](h)
        return self.to_rgb[str(res)](h)

    def forward(self, z, res, fade=1.0):
        if z.shape[1] != self.config.gen_in_channels:
            raise ModelError(
                f"latent has {z.shape[1]} channels, generator expects "
                f"{self.config.gen_in_channels}")
        rgb = self._rgb(z, res)
        if fade < 1.0:
            prev = self._rgb(F.avg_pool2d(z, 2), res // 2)
            rgb = fade * rgb + (1.0 - fade) * _upsample2(prev)
        return torch.tanh(rgb)


# ---------------------------------------------------------------------------
# Assembly


class TextureModel(nn.Module):
    """All five trainable components plus the growth stage state."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.local_enc = LocalEncoder(config)
        self.global_enc = GlobalEncoder(config) if config.use_global else None
        self.generator = Generator(config)
        self.critic_rec = Critic(config)
        self.critic_itp = Critic(config)
        self.resolution = config.start_resolution
        self.fade = 1.0
        init_parameters(self, config.seed)

    @property
    def latent_extent(self):
        return self.resolution // LATENT_FACTOR

    def generator_parameters(self):
        params = list(self.local_enc.parameters()) \
            + list(self.generator.parameters())
        if self.global_enc is not None:
            params += list(self.global_enc.parameters())
        return params

    def critic_parameters(self):
        return list(self.critic_rec.parameters()) \
            + list(self.critic_itp.parameters())

    def encode_local(self, x):
        return self.local_enc(x, self.resolution, self.fade)

    def encode_global(self, x):
        if self.global_enc is None:
            raise ModelError("model built without a global encoder")
        return self.global_enc(x, self.resolution, self.fade)

    def generate(self, z):
        return self.generator(z, self.resolution, self.fade)

    def discriminate(self, x, which):
        critic = {"rec": self.critic_rec, "itp": self.critic_itp}[which]
        score = critic(x, self.resolution, self.fade)
        if not torch.isfinite(score).all():
            raise ModelError("critic produced a non-finite score")
        return score

    def grow(self, next_resolution):
        if next_resolution != self.resolution * 2:
            raise ModelError(
                f"can only grow {self.resolution} -> {self.resolution * 2}, "
                f"asked for {next_resolution}")
        if next_resolution > self.config.patch_size:
            raise ModelError(
                f"{next_resolution} exceeds configured maximum "
                f"{self.config.patch_size}")
        before = set(n for n, _ in self.named_parameters())
        self.local_enc._add_stage(next_resolution)
        if self.global_enc is not None:
            self.global_enc._add_stage(next_resolution)
        self.critic_rec._add_stage(next_resolution)
        self.critic_itp._add_stage(next_resolution)
        self.generator._add_stage(next_resolution)
        fresh = [(n, p) for n, p in self.named_parameters()
                 if n not in before]
        _init_named(fresh, self.config.seed * 1000 + next_resolution)
        self.resolution = next_resolution
        self.fade = 0.0
        return self


def _init_named(named_params, seed):
    gen = torch.Generator().manual_seed(seed)
    for name, p in named_params:
        with torch.no_grad():
            if name.endswith("bias"):
                p.zero_()
            else:
                p.copy_(torch.randn(p.shape, generator=gen))


def init_parameters(module, seed):
    _init_named(sorted(module.named_parameters()), seed)


def build_model(config):
    return TextureModel(config)


# ---------------------------------------------------------------------------
# numpy bridge


def image_to_tensor(img, dtype=torch.float32):
    arr = np.ascontiguousarray(np.asarray(img, dtype=np.float32))
    t = torch.from_numpy(arr).to(dtype)
    if t.ndim == 3:
        t = t.permute(2, 0, 1).unsqueeze(0)
    elif t.ndim == 4:
        t = t.permute(0, 3, 1, 2)
    return t


def tensor_to_image(t):
    t = t.detach()
    if t.ndim == 4:
        t = t[0]
    return t.permute(1, 2, 0).cpu().numpy().astype(np.float32)


class ModelBundle:
    """Read-only inference wrapper working in numpy HWC space.

    Every decode routes through the same generator call the trainer
    uses, so application code and evaluation share one synthesis path.
    """

    def __init__(self, model, checkpoint_id="untrained"):
        self.model = model.eval()
        self.config = model.config
        self.checkpoint_id = checkpoint_id

    @property
    def patch_size(self):
        return self.model.resolution

    @property
    def latent_extent(self):
        return self.model.latent_extent

    def encode(self, patch):
        """TexturePatch -> LatentPair."""
        with torch.no_grad():
            x = image_to_tensor(patch)
            local = self.model.encode_local(x)
            if self.config.use_global:
                glob = self.model.encode_global(x)[0].numpy()
            else:
                glob = np.zeros(0, dtype=np.float32)
            return LatentPair(tensor_to_image(local), glob)

    def decode_field(self, field):
        """LatentField -> image of extent m * grid."""
        with torch.no_grad():
            local = image_to_tensor(field.local)
            if self.config.use_global:
                glob = image_to_tensor(field.global_)
                z = torch.cat([local, glob], dim=1)
            else:
                z = local
            return tensor_to_image(self.model.generate(z))

    def decode_pair(self, pair):
        """LatentPair -> image, broadcasting the global vector."""
        h, w = pair.local.shape[:2]
        from .latent import broadcast_global
        return self.decode_field(
            LatentField(pair.local, broadcast_global(pair.global_, h, w)))
