#!/usr/bin/env python3
"""Exports torchvision backbone weights into the gtrans weight-cache format.

Usage:
  python3 tools/export_backbone_weights.py --family resnet34 --out weights/
  python3 tools/export_backbone_weights.py --family wide_resnet50_2 --out weights/

Writes <out>/<family>.gtw, a little-endian container: 8-byte magic "GTNSCONT",
uint32 version, uint64 header length, JSON header listing {name, shape} per
tensor, then float64 blobs in header order.
"""

import argparse
import json
import struct
import sys

MAGIC = b"GTNSCONT"
VERSION = 1

STAGE_DEPTHS = {"resnet34": [3, 4, 6, 3], "wide_resnet50_2": [3, 4, 6, 3]}


def rename_map(family):
    """torchvision state_dict key -> gtrans parameter name"""
    bn_leaves = {
        "weight": "gamma",
        "bias": "beta",
        "running_mean": "running_mean",
        "running_var": "running_var",
    }
    out = {}
    for tv_leaf, gt_leaf in bn_leaves.items():
        out[f"bn1.{tv_leaf}"] = f"stem.bn.{gt_leaf}"
    out["conv1.weight"] = "stem.conv.weight"

    bottleneck = family == "wide_resnet50_2"
    for s, depth in enumerate(STAGE_DEPTHS[family], start=1):
        for b in range(depth):
            tv = f"layer{s}.{b}"
            gt = f"stage{s}.block{b}"
            convs = ["conv1", "conv2", "conv3"] if bottleneck else ["conv1", "conv2"]
            bns = ["bn1", "bn2", "bn3"] if bottleneck else ["bn1", "bn2"]
            for conv in convs:
                out[f"{tv}.{conv}.weight"] = f"{gt}.{conv}.weight"
            for bn in bns:
                for tv_leaf, gt_leaf in bn_leaves.items():
                    out[f"{tv}.{bn}.{tv_leaf}"] = f"{gt}.{bn}.{gt_leaf}"
            out[f"{tv}.downsample.0.weight"] = f"{gt}.downsample.conv.weight"
            for tv_leaf, gt_leaf in bn_leaves.items():
                out[f"{tv}.downsample.1.{tv_leaf}"] = f"{gt}.downsample.bn.{gt_leaf}"
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--family", choices=sorted(STAGE_DEPTHS), required=True)
    parser.add_argument("--out", default="weights", help="weight cache directory")
    args = parser.parse_args()

    import torch  # noqa: deferred so --help works without torch
    import torchvision.models as models

    ctor = {"resnet34": models.resnet34, "wide_resnet50_2": models.wide_resnet50_2}[args.family]
    try:
        net = ctor(weights="IMAGENET1K_V1")
    except TypeError:  # older torchvision
        net = ctor(pretrained=True)
    state = net.state_dict()

    mapping = rename_map(args.family)
    tensors = []
    for tv_name, gt_name in mapping.items():
        if tv_name not in state:
            # downsample entries only exist on shape-changing blocks
            if "downsample" in tv_name:
                continue
            print(f"missing expected key {tv_name}", file=sys.stderr)
            return 1
        t = state[tv_name].detach().double().contiguous()
        tensors.append((gt_name, list(t.shape), t.numpy().tobytes()))

    header = json.dumps(
        {
            "kind": "backbone_weights",
            "family": args.family,
            "tensors": [{"name": n, "shape": s} for n, s, _ in tensors],
        }
    ).encode()

    import os

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{args.family}.gtw")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for _, _, blob in tensors:
            f.write(blob)
    print(f"wrote {path} ({len(tensors)} tensors)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
