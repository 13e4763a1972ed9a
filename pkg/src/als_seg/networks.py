"""Network definitions: image classifiers, segmentation nets, discriminator.

Defaults are deliberately small so the whole pipeline trains on CPU in
minutes; the deeper variants (residual_50/101, dilated residual decoder)
are selectable for full-scale runs.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

CLASSIFIER_ARCHITECTURES = ("small_cnn", "vgg_like", "residual_50", "residual_101")
SEGMENTER_ARCHITECTURES = ("compact", "dilated_residual")


class SmallCnnClassifier(nn.Module):
    """Two conv blocks + linear head, < 100k parameters."""

    def __init__(self, in_channels: int, num_classes: int):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(in_channels, 16, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
        )
        self.head = nn.Linear(32, num_classes)

    def forward(self, x):
        feats = self.features(x)
        pooled = F.adaptive_avg_pool2d(feats, 1).flatten(1)
        return self.head(pooled)


class VggLikeClassifier(nn.Module):
    """Stacked 3x3 conv pairs with pooling, VGG style."""

    def __init__(self, in_channels: int, num_classes: int):
        super().__init__()
        def block(cin, cout):
            return [
                nn.Conv2d(cin, cout, 3, padding=1),
                nn.ReLU(inplace=True),
                nn.Conv2d(cout, cout, 3, padding=1),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            ]

        self.features = nn.Sequential(*block(in_channels, 32), *block(32, 64))
        self.head = nn.Sequential(
            nn.Linear(64, 128),
            nn.ReLU(inplace=True),
            nn.Linear(128, num_classes),
        )

    def forward(self, x):
        feats = self.features(x)
        pooled = F.adaptive_avg_pool2d(feats, 1).flatten(1)
        return self.head(pooled)


def build_classifier(architecture: str, in_channels: int, num_classes: int) -> nn.Module:
    if architecture == "small_cnn":
        return SmallCnnClassifier(in_channels, num_classes)
    if architecture == "vgg_like":
        return VggLikeClassifier(in_channels, num_classes)
    if architecture in ("residual_50", "residual_101"):
        # Imported lazily: desk-scale runs never touch torchvision.
        from torchvision import models

        factory = models.resnet50 if architecture == "residual_50" else models.resnet101
        net = factory(weights=None, num_classes=num_classes)
        if in_channels != 3:
            net.conv1 = nn.Conv2d(in_channels, 64, 7, stride=2, padding=3, bias=False)
        return net
    raise ValueError(f"unknown classifier architecture {architecture!r}")


class CompactSegNet(nn.Module):
    """Small encoder-decoder emitting a per-pixel class probability map."""

    def __init__(self, in_channels: int, num_classes: int):
        super().__init__()
        self.enc1 = nn.Conv2d(in_channels, 16, 3, padding=1)
        self.enc2 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.enc3 = nn.Conv2d(32, 32, 3, padding=2, dilation=2)
        self.dec1 = nn.Conv2d(32, 16, 3, padding=1)
        self.head = nn.Conv2d(16, num_classes, 1)
        self.num_classes = num_classes

    def forward(self, x):
        h, w = x.shape[-2:]
        y = F.relu(self.enc1(x))
        y = F.relu(self.enc2(y))
        y = F.relu(self.enc3(y))
        y = F.interpolate(y, size=(h, w), mode="bilinear", align_corners=False)
        y = F.relu(self.dec1(y))
        logits = self.head(y)
        return torch.softmax(logits, dim=1)


class _DilatedResidualBlock(nn.Module):
    def __init__(self, channels: int, dilation: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=dilation, dilation=dilation)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=dilation, dilation=dilation)

    def forward(self, x):
        y = F.relu(self.conv1(x))
        y = self.conv2(y)
        return F.relu(x + y)


class DilatedResidualSegNet(nn.Module):
    """Dilated residual trunk at 1/4 resolution, for full-scale runs."""

    def __init__(self, in_channels: int, num_classes: int, width: int = 64):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )
        self.blocks = nn.Sequential(
            _DilatedResidualBlock(width, 1),
            _DilatedResidualBlock(width, 2),
            _DilatedResidualBlock(width, 4),
        )
        self.head = nn.Conv2d(width, num_classes, 1)
        self.num_classes = num_classes

    def forward(self, x):
        h, w = x.shape[-2:]
        y = self.stem(x)
        y = self.blocks(y)
        logits = self.head(y)
        logits = F.interpolate(logits, size=(h, w), mode="bilinear", align_corners=False)
        return torch.softmax(logits, dim=1)


def build_segmenter(architecture: str, in_channels: int, num_classes: int) -> nn.Module:
    if architecture == "compact":
        return CompactSegNet(in_channels, num_classes)
    if architecture == "dilated_residual":
        return DilatedResidualSegNet(in_channels, num_classes)
    raise ValueError(f"unknown segmenter architecture {architecture!r}")


class PairDiscriminator(nn.Module):
    """Image-wise discriminator over image (+) mask channel stacks.

    Four 4x4 stride-2 conv layers with doubling channel widths, LeakyReLU
    (slope 0.2) and dropout, then a global pooled feature vector feeding a
    single sigmoid confidence score per input. The pooled feature vector is
    exposed for feature-statistics matching.
    """

    def __init__(self, in_channels: int, base_channels: int = 8, dropout: float = 0.5):
        super().__init__()
        widths = [base_channels, base_channels * 2, base_channels * 4, base_channels * 8]
        layers: list[nn.Module] = []
        prev = in_channels
        for width in widths:
            layers.append(nn.Conv2d(prev, width, 4, stride=2, padding=1))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            layers.append(nn.Dropout(dropout))
            prev = width
        self.features = nn.Sequential(*layers)
        self.score = nn.Linear(widths[-1], 1)
        self.feature_dim = widths[-1]

    def forward(self, x) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (confidence in (0,1) per sample, pooled feature vector)."""
        maps = self.features(x)
        feats = maps.mean(dim=(2, 3))
        conf = torch.sigmoid(self.score(feats)).squeeze(1)
        return conf, feats
