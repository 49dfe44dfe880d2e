"""Synthetic trainer speaking the JSON-lines trial protocol.

Reads a configuration object from stdin and prints one record per epoch
followed by a final record. Accuracy peaks near lr=3e-3, adam, dropout=0.2.
"""

import json
import math
import sys

cfg = json.loads(sys.stdin.readline())
lr, dropout = float(cfg["lr"]), float(cfg["dropout"])
epochs = int(cfg.get("epochs", 5))
peak = 0.93 - 0.04 * (math.log10(lr) - math.log10(3e-3)) ** 2 - 0.3 * (dropout - 0.2) ** 2
if cfg.get("optimizer") == "sgd":
    peak -= 0.02
acc = 0.0
for k in range(1, epochs + 1):
    acc = max(0.1, peak * (1 - math.exp(-k / 1.5)))
    loss = -math.log(max(acc, 1e-6))
    print(json.dumps({"epoch": k, "metrics": {"accuracy": round(acc, 6), "loss": round(loss, 6)}}), flush=True)
    print(f"epoch {k} done", file=sys.stderr)
print(json.dumps({"final": True, "metrics": {"accuracy": round(acc, 6)}}))
