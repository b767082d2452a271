"""Wire-protocol demo: explain a classifier living in another process.

The engine only ever sees newline-delimited JSON over the peer's stdio, so
any runtime that can read stdin and write stdout can serve a model. Here the
peer is a tiny Python script materialized below; the bundled `adapter/`
package speaks the same protocol for real models.

Run: python demos/external_classifier.py
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

import infoattr as ia

PEER = '''
import base64, json, sys
import numpy as np

def main():
    w = np.load(sys.argv[1])
    for line in sys.stdin:
        req = json.loads(line)
        if req["op"] == "info":
            resp = {"id": req["id"], "num_classes": 2, "height": 12, "width": 12,
                    "channels": 1, "labels": ["calm", "spiky"]}
        else:
            b, h, wd, c = req["shape"]
            x = np.frombuffer(base64.b64decode(req["data"]), dtype=np.uint8)
            x = x.reshape(b, -1) / 255.0
            z = x @ w.T
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z); p /= p.sum(axis=1, keepdims=True)
            resp = {"id": req["id"], "probs": p.tolist()}
        sys.stdout.write(json.dumps(resp) + "\\n")
        sys.stdout.flush()

main()
'''

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    rng = np.random.default_rng(1)
    weights = rng.normal(0, 1.2, (2, 144))
    np.save(tmp / "weights.npy", weights)
    peer_path = tmp / "peer.py"
    peer_path.write_text(PEER)

    classifier = ia.connect_external([sys.executable, str(peer_path), str(tmp / "weights.npy")])
    print(f"connected: {classifier.num_classes} classes, shape {classifier.input_shape}, "
          f"labels {classifier.labels}")

    train = [ia.Image(rng.integers(0, 256, (12, 12, 1), dtype=np.uint8)) for _ in range(6)]
    sampler = ia.build_empirical_sampler(train, k=4,
                                         descriptor=ia.DescriptorConfig(cells=4, levels=4))
    image = ia.Image(rng.integers(0, 256, (12, 12, 1), dtype=np.uint8))
    result = ia.explain(classifier, sampler, image, ia.EngineConfig(k=4, n_samples=8, seed=0))
    c = result.classes[0]
    print(f"explained over the wire: class {c}, "
          f"p = {result.original_prediction.probs[c]:.4f}, "
          f"PMI range [{result.pmi_maps[c].values.min():+.3f}, "
          f"{result.pmi_maps[c].values.max():+.3f}] bits")
    classifier.close()
print("the same engine call works for exec:<cmd> and tcp:<host:port> specs")
