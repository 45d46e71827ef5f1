#!/usr/bin/env python3
"""Convert torchvision VGG19 weights into the archive read by glstyle.

The archive holds conv1_1 ... conv4_1 as `convK_J.weight` with shape
(3, 3, in, out) and `convK_J.bias`, all float32, in safetensors format.

torchvision's network expects RGB in [0, 1], normalised by a per-channel
mean and std. glstyle feeds RGB in [0, 255] minus a per-channel mean, so the
1 / (255 * std) factor is folded into conv1_1. The two mean vectors differ by
under 0.5 on the 0-255 scale; that offset is left as is so zero padding at
the border stays identical.

    python scripts/convert_vgg19.py vgg19.safetensors
    python scripts/convert_vgg19.py vgg19.safetensors --state-dict vgg19-dcbb9e9d.pth
"""

import argparse

import torch
from safetensors.torch import save_file

# Index of each convolution inside torchvision's `features` sequence.
FEATURE_INDEX = {
    "conv1_1": 0,
    "conv1_2": 2,
    "conv2_1": 5,
    "conv2_2": 7,
    "conv3_1": 10,
    "conv3_2": 12,
    "conv3_3": 14,
    "conv3_4": 16,
    "conv4_1": 19,
}

TORCHVISION_STD = (0.229, 0.224, 0.225)


def load_state_dict(path):
    if path:
        sd = torch.load(path, map_location="cpu", weights_only=True)
    else:
        from torchvision.models import VGG19_Weights, vgg19

        sd = vgg19(weights=VGG19_Weights.IMAGENET1K_V1).state_dict()
    return {k: v for k, v in sd.items() if k.startswith("features.")}


def convert(sd):
    out = {}
    for name, idx in FEATURE_INDEX.items():
        w = sd[f"features.{idx}.weight"].detach().double()
        b = sd[f"features.{idx}.bias"].detach().double()
        if name == "conv1_1":
            scale = torch.tensor(TORCHVISION_STD, dtype=torch.float64) * 255.0
            w = w / scale.view(1, 3, 1, 1)
        # (out, in, kh, kw) -> (kh, kw, in, out)
        out[f"{name}.weight"] = w.permute(2, 3, 1, 0).contiguous().float()
        out[f"{name}.bias"] = b.contiguous().float()
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("output", help="archive to write (.safetensors)")
    ap.add_argument("--state-dict", help="local torchvision VGG19 checkpoint; downloads when omitted")
    args = ap.parse_args()
    tensors = convert(load_state_dict(args.state_dict))
    save_file(tensors, args.output)
    for k, v in tensors.items():
        print(f"{k:16s} {tuple(v.shape)}")


if __name__ == "__main__":
    main()
