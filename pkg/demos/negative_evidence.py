"""Negative evidence: pixels with negative PMI actively suppress the class.
Removing ONLY those pixels (ascending order, gray fill) should make the
classifier more confident, not less.

Run: python demos/negative_evidence.py
"""

from pathlib import Path

import numpy as np

import infoattr as ia

OUT = Path(__file__).parent / "output" / "negative_evidence"
OUT.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(5)
train = [ia.Image(rng.integers(0, 256, (24, 24, 1), dtype=np.uint8)) for _ in range(6)]
sampler = ia.build_empirical_sampler(train, k=8,
                                     descriptor=ia.DescriptorConfig(cells=4, levels=4))

# the inhibitory region is brighter than the sampler would predict, so it
# carries genuine negative evidence for class 1
arr = np.full((24, 24, 1), 128, dtype=np.uint8)
arr[8:16, 8:16] = 255
arr[0:8, 0:8] = 230
image = ia.Image(arr)
classifier = ia.QuadrantClassifier(input_shape=(24, 24, 1), region=(8, 8, 8, 8),
                                   temperature=12.0, inhibit_region=(0, 0, 8, 8))

result = ia.explain(classifier, sampler, image, ia.EngineConfig(k=8, n_samples=8, seed=2))
c = result.classes[0]
amap = result.pmi_maps[c]
negative_pixels = int((amap.values < 0).sum())
print(f"class {c}: p = {result.original_prediction.probs[c]:.4f}, "
      f"{negative_pixels} pixels carry negative PMI")

curve = ia.perturbation_curve(classifier, image, amap, c, order="ascending",
                              only_negative=True, fill=128, steps=20)
print("fraction of negative evidence removed -> p(class)")
for f, p in zip(curve.fractions, curve.probabilities):
    print(f"  {f:5.2f} -> {p:.4f}")
print(f"confidence moved {curve.probabilities[0]:.4f} -> {curve.probabilities[-1]:.4f} "
      f"({'up' if curve.probabilities[-1] >= curve.probabilities[0] else 'DOWN?!'})")

ia.save_map(amap, OUT / "pmi.json")
ia.save_image(ia.render_heatmap(amap), OUT / "pmi.png")
(OUT / "removal_curve.csv").write_text(curve.to_csv())
print(f"wrote outputs to {OUT}")
