"""End-to-end walkthrough on a synthetic scene with known ground truth.

A QuadrantClassifier scores class 1 by the brightness of one 8x8 region minus
the brightness of an inhibitory region. We fit an empirical patch sampler on
noise images, explain one scene, and render the PMI and IG maps. The PMI map
should fire red exactly on the excitatory region and stay quiet elsewhere.

Run: python demos/quadrant_walkthrough.py   (writes demos/output/walkthrough/)
"""

from pathlib import Path

import numpy as np

import infoattr as ia

OUT = Path(__file__).parent / "output" / "walkthrough"
OUT.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(0)

# 1. training data for the sampler: plain uniform noise
train = [ia.Image(rng.integers(0, 256, (24, 24, 1), dtype=np.uint8)) for _ in range(6)]
sampler = ia.build_empirical_sampler(train, k=8, descriptor=ia.DescriptorConfig(cells=4, levels=4))
print(f"fitted sampler {sampler.ident} with {sampler.num_patches} stored patches")

# 2. the scene: bright excitatory patch, mid-gray inhibitory patch, dark bg
arr = np.zeros((24, 24, 1), dtype=np.uint8)
arr[8:16, 8:16] = 255
arr[0:8, 0:8] = 128
image = ia.Image(arr)
classifier = ia.QuadrantClassifier(input_shape=(24, 24, 1), region=(8, 8, 8, 8),
                                   temperature=12.0, inhibit_region=(0, 0, 8, 8))

# 3. explain: PMI map for the top class + class-independent IG map
result = ia.explain(classifier, sampler, image,
                    ia.EngineConfig(k=8, n_samples=8, seed=1))
c = result.classes[0]
print(f"original prediction: {result.original_prediction.probs.round(4)} -> class {c}")
print("per-patch PMI (bits):")
for rec in result.patch_table:
    print(f"  patch {rec.index} at {rec.origin}: pmi={rec.pmi[c]:+.4f}  ig={rec.ig:.4f}")

# 4. persist maps and visualizations
ia.save_image(image, OUT / "scene.png")
pmi_map = result.pmi_maps[c]
ia.save_map(pmi_map, OUT / "pmi.json")
ia.save_map(result.ig_map, OUT / "ig.json")
heat = ia.render_heatmap(pmi_map)
ia.save_image(heat, OUT / "pmi.png")
ia.save_image(ia.overlay(image, heat, 0.5), OUT / "pmi_overlay.png")
ia.save_image(ia.render_heatmap(result.ig_map), OUT / "ig.png")
print(f"wrote scene, maps and heatmaps to {OUT}")
