"""Export torchvision ResNet-50 ImageNet weights to the crate's tensor archive.

    python scripts/export_resnet50.py weights/resnet50.hpa

Needs torch and torchvision. The fc layer is not exported.
"""
import json
import struct
import sys

import torchvision


def main(out):
    model = torchvision.models.resnet50(weights="IMAGENET1K_V1")
    tensors, blobs, offset = [], [], 0
    for name, t in model.state_dict().items():
        if name.startswith("fc.") or name.endswith("num_batches_tracked"):
            continue
        data = t.detach().float().contiguous().numpy().astype("<f4")
        tensors.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.size
    header = json.dumps({"meta": {"source": "torchvision resnet50 IMAGENET1K_V1"}, "tensors": tensors}).encode()
    with open(out, "wb") as f:
        f.write(b"HPARCH01")
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


if __name__ == "__main__":
    main(sys.argv[1])
