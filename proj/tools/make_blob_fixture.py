#!/usr/bin/env python3
"""Train the desk-scale fixture: a 2-16-3 ReLU MLP on three Gaussian blobs.

The network is trained on a small sample for long enough to become
overconfident, then a fresh draw from the same blobs is written as the
calibration split. Output files (model JSON, features CSV and its manifest)
are deterministic for a given seed.
"""
import argparse
import json
from pathlib import Path

import numpy as np

CENTERS = np.array([[0.0, 0.0], [2.0, 0.5], [1.0, 2.0]])
SPREAD = 0.7


def draw(rng, per_class):
    xs, ys = [], []
    for k, c in enumerate(CENTERS):
        xs.append(c + SPREAD * rng.standard_normal((per_class, 2)))
        ys.append(np.full(per_class, k))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(len(y))
    return x[order], y[order]


def train(x, y, hidden, epochs, lr, rng):
    w1 = rng.standard_normal((hidden, 2)) * np.sqrt(2.0 / 2)
    b1 = np.zeros(hidden)
    w2 = rng.standard_normal((3, hidden)) * np.sqrt(2.0 / hidden)
    b2 = np.zeros(3)
    params = [w1, b1, w2, b2]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    onehot = np.eye(3)[y]
    for t in range(1, epochs + 1):
        z1 = x @ w1.T + b1
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ w2.T + b2
        z2 -= z2.max(axis=1, keepdims=True)
        p = np.exp(z2)
        p /= p.sum(axis=1, keepdims=True)
        g2 = (p - onehot) / len(y)
        gw2 = g2.T @ a1
        gb2 = g2.sum(axis=0)
        g1 = (g2 @ w2) * (z1 > 0)
        gw1 = g1.T @ x
        gb1 = g1.sum(axis=0)
        for i, g in enumerate([gw1, gb1, gw2, gb2]):
            m[i] = 0.9 * m[i] + 0.1 * g
            v[i] = 0.999 * v[i] + 0.001 * g * g
            mh = m[i] / (1 - 0.9 ** t)
            vh = v[i] / (1 - 0.999 ** t)
            params[i] -= lr * mh / (np.sqrt(vh) + 1e-8)
    return params


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "tests" / "fixtures")
    ap.add_argument("--seed", type=int, default=20231)
    ap.add_argument("--train-per-class", type=int, default=40)
    ap.add_argument("--calib-per-class", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=1500)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    x_train, y_train = draw(rng, args.train_per_class)
    w1, b1, w2, b2 = train(x_train, y_train, 16, args.epochs, 0.01, rng)
    x_cal, y_cal = draw(rng, args.calib_per_class)

    model = {
        "input_dim": 2,
        "output_dim": 3,
        "layers": [
            {"weights": w1.tolist(), "bias": b1.tolist(), "activation": "relu"},
            {"weights": w2.tolist(), "bias": b2.tolist(), "activation": "identity"},
        ],
    }
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "blobs_model.json").write_text(json.dumps(model) + "\n")
    with open(args.out / "blobs_inputs.csv", "w") as f:
        f.write("x_0,x_1,label\n")
        for (a, b), label in zip(x_cal, y_cal):
            f.write(f"{float(a)!r},{float(b)!r},{int(label)}\n")
    (args.out / "blobs_inputs.json").write_text(json.dumps({"name": "blobs-calibration", "num_classes": 3}) + "\n")


if __name__ == "__main__":
    main()
