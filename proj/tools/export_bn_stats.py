#!/usr/bin/env python3
# Copyright 2026 The convbn Authors
# SPDX-License-Identifier: Apache-2.0
"""Export BatchNorm statistics of a torchvision model to a CBNT container.

Writes <layer>.gamma, <layer>.running_var and scalar <layer>.eps for every
BatchNorm2d, in the layout read by `convbn coeffs --params`.

    python3 tools/export_bn_stats.py resnet50 --weights DEFAULT -o resnet50_bn.cbnt
    convbn coeffs --params resnet50_bn.cbnt --bins 60
"""

import argparse
import struct

import torch
import torchvision


def encode(tensors):
    out = bytearray(b"CBNT")
    out += struct.pack("<II", 1, len(tensors))
    for name in sorted(tensors):
        values = tensors[name].detach().to(torch.float64).contiguous()
        raw = name.encode()
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<BI", 1, values.dim())
        out += struct.pack("<%dI" % values.dim(), *values.shape)
        out += values.numpy().astype("<f8").tobytes()
    return bytes(out)


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("model", help="torchvision.models constructor name, e.g. resnet50")
    p.add_argument("--weights", default=None, help="weights spec such as DEFAULT (omit for random init)")
    p.add_argument("-o", "--out", required=True)
    args = p.parse_args()

    model = getattr(torchvision.models, args.model)(weights=args.weights)
    tensors = {}
    for name, m in model.named_modules():
        if isinstance(m, torch.nn.BatchNorm2d):
            tensors[name + ".gamma"] = m.weight
            tensors[name + ".running_var"] = m.running_var
            tensors[name + ".eps"] = torch.tensor(m.eps, dtype=torch.float64)
    with open(args.out, "wb") as f:
        f.write(encode(tensors))
    print("wrote %d layers to %s" % (len(tensors) // 3, args.out))


if __name__ == "__main__":
    main()
