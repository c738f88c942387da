"""ResNet-style convolutional encoder built from basic residual blocks."""
from __future__ import annotations

from typing import List

import torch.nn as nn

from .featuremap import FeatureMap


def conv3x3(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = conv3x3(cin, cout, stride)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = conv3x3(cout, cout)
        self.bn2 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU()
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm2d(cout),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class ResNetEncoder(nn.Module):
    """Stem (7x7/2 conv) giving R0, then four residual stages giving R1..R4 at strides 4..32."""

    def __init__(self, in_channels: int, widths, depths):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, widths[0], 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(widths[0]),
            nn.ReLU(),
        )
        self.pool = nn.MaxPool2d(3, stride=2, padding=1)
        self.stages = nn.ModuleList()
        cin = widths[0]
        for i, (cout, depth) in enumerate(zip(widths[1:], depths)):
            stride = 1 if i == 0 else 2
            blocks = [BasicBlock(cin, cout, stride)]
            blocks += [BasicBlock(cout, cout) for _ in range(depth - 1)]
            self.stages.append(nn.Sequential(*blocks))
            cin = cout

    def forward(self, x) -> List[FeatureMap]:
        r0 = self.stem(x)
        feats = [FeatureMap(r0, 2)]
        h = self.pool(r0)
        stride = 4
        for i, stage in enumerate(self.stages):
            h = stage(h)
            feats.append(FeatureMap(h, stride))
            stride *= 2
        return feats
