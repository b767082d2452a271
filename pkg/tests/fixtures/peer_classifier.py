"""Test peer: serves a linear-model file over the classifier wire protocol on
stdio. Usage: python peer_classifier.py <model.json>"""

import base64
import json
import sys

import numpy as np

from infoattr import Image, load_linear_model


def main():
    model = load_linear_model(sys.argv[1])
    h, w, c = model.input_shape
    for line in sys.stdin:
        req = json.loads(line)
        if req["op"] == "info":
            resp = {"id": req["id"], "num_classes": model.num_classes,
                    "height": h, "width": w, "channels": c}
        elif req["op"] == "predict":
            b, rh, rw, rc = req["shape"]
            raw = base64.b64decode(req["data"])
            batch = np.frombuffer(raw, dtype=np.uint8).reshape(b, rh, rw, rc)
            preds = model.predict_batch([Image(batch[i].copy()) for i in range(b)])
            resp = {"id": req["id"], "probs": [p.probs.tolist() for p in preds]}
        else:
            resp = {"id": req["id"], "error": f"unknown op {req['op']}"}
        sys.stdout.write(json.dumps(resp) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
