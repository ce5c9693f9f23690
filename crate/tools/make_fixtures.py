#!/usr/bin/env python3
"""Build the MNIST fixture set shipped under crates/core/fixtures.

Input is a CSV (optionally gzipped) with 784 pixel columns followed by the
label, e.g. the 5000-sample MNIST extract distributed with mlxtend
(mlxtend/data/data/mnist_5k.csv.gz).

Outputs:
  train-images.idx3-ubyte / train-labels.idx1-ubyte   1000 samples, 100 per class
  test-images.idx3-ubyte  / test-labels.idx1-ubyte    100 samples, 10 per class
  cnn.weights / mlp.weights                           trained on every non-test row

Weight file layout (little-endian throughout):
  b"CLWT"  u32 version=1  u32 tensor_count
  per tensor: u32 rank, rank x u32 dims
  then every tensor's f32 payload, concatenated in header order.
"""
import argparse
import gzip
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

CNN_KERNELS = 8
CNN_HIDDEN = 32
MLP_HIDDEN = (64, 32)


def load_csv(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt") as fh:
        data = np.loadtxt(fh, delimiter=",")
    return data[:, :-1].astype(np.uint8), data[:, -1].astype(np.uint8)


def stratified_pick(labels, per_class, rng, exclude=None):
    picked = []
    for c in range(10):
        idx = np.flatnonzero(labels == c)
        if exclude is not None:
            idx = np.setdiff1d(idx, exclude)
        picked.extend(rng.choice(idx, per_class, replace=False).tolist())
    picked = np.array(sorted(picked))
    return picked[rng.permutation(len(picked))]


def write_idx_images(path, images):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        fh.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", 2049, len(labels)))
        fh.write(labels.astype(np.uint8).tobytes())


def write_weights(path, tensors):
    with open(path, "wb") as fh:
        fh.write(b"CLWT")
        fh.write(struct.pack("<II", 1, len(tensors)))
        for t in tensors:
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack("<%dI" % t.ndim, *t.shape))
        for t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def bounded_sigmoid(x):
    return torch.sigmoid(torch.clamp(x, -90.0, 10.0))


class Cnn(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(1, CNN_KERNELS, 5)
        self.fc = nn.Linear(CNN_KERNELS * 12 * 12, CNN_HIDDEN)
        self.out = nn.Linear(CNN_HIDDEN, 10)

    def forward(self, x):
        x = F.relu(F.max_pool2d(self.conv(x), 2))
        x = bounded_sigmoid(self.fc(x.flatten(1)))
        return torch.clamp(self.out(x), -90.0, 10.0)

    def tensors(self):
        return [p.detach().numpy() for p in
                (self.conv.weight[:, 0], self.conv.bias, self.fc.weight, self.fc.bias,
                 self.out.weight, self.out.bias)]


class Mlp(nn.Module):
    def __init__(self):
        super().__init__()
        self.i1 = nn.Linear(784, MLP_HIDDEN[0])
        self.i2 = nn.Linear(MLP_HIDDEN[0], MLP_HIDDEN[1])
        self.out = nn.Linear(MLP_HIDDEN[1], 10)

    def forward(self, x):
        x = bounded_sigmoid(self.i1(x.flatten(1)))
        x = bounded_sigmoid(self.i2(x))
        return torch.clamp(self.out(x), -90.0, 10.0)

    def tensors(self):
        return [p.detach().numpy() for p in
                (self.i1.weight, self.i1.bias, self.i2.weight, self.i2.bias,
                 self.out.weight, self.out.bias)]


def train(model, x, y, epochs, lr, seed):
    torch.manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr, weight_decay=1e-4)
    n = len(x)
    for epoch in range(epochs):
        perm = torch.randperm(n)
        for start in range(0, n, 64):
            b = perm[start:start + 64]
            opt.zero_grad()
            loss = F.cross_entropy(model(x[b]), y[b])
            loss.backward()
            opt.step()
    return model


def accuracy(model, x, y):
    with torch.no_grad():
        logits = model(x)
    saturated = int(((logits >= 10.0).sum(1) > 1).sum())
    return float((logits.argmax(1) == y).float().mean()), saturated


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--source", required=True)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "crates/core/fixtures"))
    ap.add_argument("--seed", type=int, default=2017)
    args = ap.parse_args()

    pixels, labels = load_csv(args.source)
    rng = np.random.default_rng(args.seed)
    test_idx = stratified_pick(labels, 10, rng)
    train_idx = stratified_pick(labels, 100, rng, exclude=test_idx)
    fit_idx = np.setdiff1d(np.arange(len(labels)), test_idx)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx_images(out / "train-images.idx3-ubyte", pixels[train_idx])
    write_idx_labels(out / "train-labels.idx1-ubyte", labels[train_idx])
    write_idx_images(out / "test-images.idx3-ubyte", pixels[test_idx])
    write_idx_labels(out / "test-labels.idx1-ubyte", labels[test_idx])

    def tensor(idx):
        x = torch.tensor(pixels[idx], dtype=torch.float32).reshape(-1, 1, 28, 28) / 255.0
        return x, torch.tensor(labels[idx], dtype=torch.long)

    x_fit, y_fit = tensor(fit_idx)
    x_test, y_test = tensor(test_idx)

    torch.manual_seed(args.seed)
    cnn = train(Cnn(), x_fit, y_fit, epochs=12, lr=2e-3, seed=args.seed)
    print("cnn test accuracy %.3f (saturated ties: %d)" % accuracy(cnn, x_test, y_test))
    write_weights(out / "cnn.weights", cnn.tensors())

    torch.manual_seed(args.seed + 1)
    mlp = train(Mlp(), x_fit, y_fit, epochs=30, lr=2e-3, seed=args.seed + 1)
    print("mlp test accuracy %.3f (saturated ties: %d)" % accuracy(mlp, x_test, y_test))
    write_weights(out / "mlp.weights", mlp.tensors())


if __name__ == "__main__":
    main()
