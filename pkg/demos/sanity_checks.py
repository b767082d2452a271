"""Randomization sanity checks: maps must track the model, so destroying the
model (random weights, or retraining on shuffled labels) must destroy the
maps' correlation with the originals.

Run: python demos/sanity_checks.py
"""

import numpy as np

import infoattr as ia


def blob_dataset(rng, count, side=12):
    images, labels = [], []
    half = side // 2
    for i in range(count):
        arr = rng.integers(0, 80, size=(side, side, 1)).astype(np.uint8)
        label = i % 2
        quad = (slice(None, half), slice(None, half)) if label == 0 \
            else (slice(half, None), slice(half, None))
        arr[quad] = rng.integers(170, 256, size=(half, half, 1))
        images.append(ia.Image(arr))
        labels.append(label)
    return images, labels


rng = np.random.default_rng(42)
train_imgs, train_lbls = blob_dataset(rng, 80)
eval_imgs, _ = blob_dataset(rng, 10)

model = ia.train_logistic(train_imgs, train_lbls, epochs=200, learning_rate=2.0, seed=0)
sampler = ia.build_empirical_sampler(train_imgs, k=4,
                                     descriptor=ia.DescriptorConfig(cells=4, levels=4))
cfg = ia.EngineConfig(k=4, n_samples=8, seed=0)

print("parameter randomization (fraction of output rows replaced by noise):")
report = ia.sanity_param_randomization(
    lambda f: ia.randomize_parameters(model, f, 7),
    sampler, eval_imgs, fractions=[0.0, 0.5, 1.0], config=cfg)
print(report.to_csv())

print("label randomization (retrained on shuffled labels):")
label_report = ia.sanity_label_randomization(
    train_imgs, train_lbls, eval_imgs, sampler, cfg,
    epochs=200, learning_rate=2.0, seed=1)
print(label_report.to_csv())
print("fraction-0 rows are exactly 1; destroyed models fall toward 0.")
