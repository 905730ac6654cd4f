#!/usr/bin/env python3
"""Convert pretrained backbone weights into archives the C++ loader reads.

    export_backbone.py resnet50  OUT.pt [--source state_dict.pt]
    export_backbone.py clip_rn50 OUT.pt --source clip_rn50_state_dict.pt
    export_backbone.py vgg19     OUT.pt [--source state_dict.pt]

Without --source, resnet50 and vgg19 come from torchvision (downloads ImageNet
weights). CLIP state dicts may keep their `visual.` prefix; it is stripped.
Put the outputs in $SED_SR_CACHE as resnet50.pt, clip_rn50.pt and vgg19.pt.
"""

import argparse
import sys

import torch


def torchvision_state(kind):
    import torchvision

    if kind == "resnet50":
        return torchvision.models.resnet50(weights="IMAGENET1K_V1").state_dict()
    return torchvision.models.vgg19(weights="IMAGENET1K_V1").state_dict()


def select(kind, state):
    out = {}
    for key, value in state.items():
        if kind == "clip_rn50":
            if key.startswith("visual."):
                key = key[len("visual."):]
            elif any(k.startswith("visual.") for k in state):
                continue
            if key.startswith("attnpool."):
                continue
        elif kind == "resnet50":
            if key.startswith("fc."):
                continue
        else:
            if not key.startswith("features."):
                continue
            key = key[len("features."):]
        out[key] = value.detach().float() if value.is_floating_point() else value.detach()
    # BatchNorm counters are absent from some CLIP exports; the loader needs every buffer.
    for key in list(out):
        if key.endswith("running_mean"):
            counter = key[: -len("running_mean")] + "num_batches_tracked"
            out.setdefault(counter, torch.tensor(0, dtype=torch.long))
    return out


class Node(torch.nn.Module):
    pass


def parameterless_modules(kind, flat):
    """Paths of modules without tensors that the C++ module tree still expects."""
    if kind == "vgg19":
        return [str(i) for i in range(37)]
    if kind == "clip_rn50":
        return sorted({k.rsplit(".downsample.", 1)[0] + ".downsample.-1" for k in flat if ".downsample." in k})
    return []


def walk(root, path):
    node = root
    for part in path:
        if not hasattr(node, part):
            node.add_module(part, Node())
        node = getattr(node, part)
    return node


def build_tree(flat, empty_paths):
    root = Node()
    for path in empty_paths:
        walk(root, path.split("."))
    for key, value in flat.items():
        *path, leaf = key.split(".")
        node = walk(root, path)
        if leaf in ("running_mean", "running_var", "num_batches_tracked"):
            node.register_buffer(leaf, value.clone())
        else:
            node.register_parameter(leaf, torch.nn.Parameter(value.clone(), requires_grad=False))
    return root


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("kind", choices=["resnet50", "clip_rn50", "vgg19"])
    ap.add_argument("out")
    ap.add_argument("--source", help="state dict saved with torch.save")
    args = ap.parse_args(argv)

    if args.source:
        state = torch.load(args.source, map_location="cpu", weights_only=False)
        if hasattr(state, "state_dict"):
            state = state.state_dict()
    elif args.kind == "clip_rn50":
        ap.error("clip_rn50 needs --source (the CLIP RN50 state dict)")
    else:
        state = torchvision_state(args.kind)

    flat = select(args.kind, state)
    if not flat:
        sys.exit("no matching tensors in the source state dict")
    torch.jit.save(torch.jit.script(build_tree(flat, parameterless_modules(args.kind, flat))), args.out)
    print(f"{len(flat)} tensors written to {args.out}")


if __name__ == "__main__":
    main()
