"""Reference-coder driver for differential tests.

Reads JSON cases on stdin: {"cases": [{"tables": [[...]], "indices":
[...], "symbols": [...]}]}; writes {"results": [{"bytes_hex": ...,
"decoded": [...]}]} where `decoded` replays each case's bytes through the
reference decoder.
"""

import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "..", "src"))

import numpy as np

from roicodec.codec import ReferenceBackend


def main():
    payload = json.load(sys.stdin)
    backend = ReferenceBackend()
    results = []
    for case in payload["cases"]:
        tables = [np.asarray(t, dtype=np.uint32) for t in case["tables"]]
        data = backend.encode(case["symbols"], tables, case["indices"])
        decoded = backend.decode(data, tables, case["indices"])
        results.append({"bytes_hex": data.hex(), "decoded": decoded})
    json.dump({"results": results}, sys.stdout)


if __name__ == "__main__":
    main()
