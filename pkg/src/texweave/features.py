"""Fixed convolutional feature stacks for Gram-matrix statistics.

The Gram losses and metrics consume five feature stacks at dyadic
scales. At full scale these would come from a pretrained VGG-19
(relu1_1 .. relu5_1); anything exposing the same interface can be
plugged in. The default desk-scale extractor is a five-stage conv
pyramid with fixed random weights: Gram statistics of fixed random
filters still separate textures, and nothing here is ever trained.
"""

import torch
import torch.nn.functional as F
from torch import nn

N_SCALES = 5
_DEFAULT_CHANNELS = (24, 32, 48, 64, 64)


class FeaturePyramid(nn.Module):
    """Five conv stages with ReLU, pooled 2x between stages, fixed weights."""

    def __init__(self, channels=_DEFAULT_CHANNELS, seed=1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        in_ch = 3
        for out_ch in channels:
            conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
            with torch.no_grad():
                std = (2.0 / (in_ch * 9)) ** 0.5
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen) * std)
                conv.bias.zero_()
            convs.append(conv)
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        feats = []
        h = x
        for i, conv in enumerate(self.convs):
            if i > 0 and min(h.shape[-2:]) >= 2:
                h = F.avg_pool2d(h, 2)
            h = F.relu(conv(h))
            feats.append(h)
        return feats


_cache = {}


def default_extractor(dtype=torch.float32, seed=1234):
    key = (dtype, seed)
    if key not in _cache:
        _cache[key] = FeaturePyramid(seed=seed).to(dtype).eval()
    return _cache[key]


class VGGFeatureExtractor(nn.Module):
    """Adapter for a torchvision VGG-19: emits relu1_1 .. relu5_1.

    Weights must be supplied by the caller (a state-dict path or an
    already-constructed torchvision model); nothing is downloaded here.
    """

    # indices of relu i_1 outputs in torchvision's vgg19().features
    _TAPS = (1, 6, 11, 20, 29)

    def __init__(self, vgg_features):
        super().__init__()
        self.features = vgg_features.eval()
        for p in self.features.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        # VGG expects [0,1]-ish inputs; map from [-1, 1]
        h = (x + 1.0) / 2.0
        feats = []
        for i, layer in enumerate(self.features):
            h = layer(h)
            if i in self._TAPS:
                feats.append(h)
                if len(feats) == N_SCALES:
                    break
        return feats
