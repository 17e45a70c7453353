"""Tests for the out-of-process embedder bridge.

Each test spawns a tiny Python child speaking the newline-delimited JSON
protocol, exercising one behavior: happy path, out-of-order replies, and the
failure modes (wrong dimension, bad handshake, crashes, timeouts).
"""
import sys
import textwrap
import time

import numpy as np
import pytest

from probebench import ExternalEmbedder
from probebench.embedding.external import ExternalEmbedderError, external_embed

MEAN_AND_RATE = """
import base64, json, struct, sys
print(json.dumps({"dim": 2}), flush=True)
for line in sys.stdin:
    req = json.loads(line)
    raw = base64.b64decode(req["samples_b64"])
    vals = struct.unpack("<%df" % (len(raw) // 4), raw)
    out = [sum(vals) / len(vals), float(req["rate"])]
    print(json.dumps({"id": req["id"], "embedding": out}), flush=True)
"""

REPLIES_REVERSED = """
import json, sys
print(json.dumps({"dim": 1}), flush=True)
lines = [sys.stdin.readline() for _ in range(4)]
for line in reversed(lines):
    req = json.loads(line)
    index = float(req["id"].split("-")[1])
    print(json.dumps({"id": req["id"], "embedding": [index]}), flush=True)
"""

WRONG_REPLY_DIM = """
import json, sys
print(json.dumps({"dim": 3}), flush=True)
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": req["id"], "embedding": [1.0, 2.0]}), flush=True)
"""

DUPLICATE_REPLIES = """
import json, sys
print(json.dumps({"dim": 1}), flush=True)
req = json.loads(sys.stdin.readline())
sys.stdin.readline()
for _ in range(2):
    print(json.dumps({"id": req["id"], "embedding": [0.0]}), flush=True)
"""

BAD_HANDSHAKE = 'import json; print(json.dumps({"model": "x"}), flush=True)\n'

NON_JSON_HANDSHAKE = 'print("hello there", flush=True)\n'

DIES_BEFORE_HANDSHAKE = """
import sys
print("cannot load weights", file=sys.stderr, flush=True)
sys.exit(3)
"""

HANGS_AFTER_HANDSHAKE = """
import json, sys, time
print(json.dumps({"dim": 1}), flush=True)
time.sleep(30)
"""

EXITS_AFTER_HANDSHAKE = """
import json
print(json.dumps({"dim": 1}), flush=True)
"""


def child(tmp_path, source, name="stub.py"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(source))
    return [sys.executable, str(path)]


class TestHappyPath:
    def test_wire_encoding_round_trip(self, tmp_path):
        frames = [np.full(8, 0.5, dtype=np.float64), np.linspace(0, 1, 8)]
        with ExternalEmbedder(child(tmp_path, MEAN_AND_RATE), timeout_s=10) as embedder:
            assert embedder.dim == 2
            vectors = embedder.embed_frames(frames, 16000)
        assert vectors[0][0] == pytest.approx(0.5)
        assert vectors[0][1] == 16000.0
        assert vectors[1][0] == pytest.approx(np.linspace(0, 1, 8, dtype=np.float32).mean())

    def test_multiple_calls_one_child(self, tmp_path):
        with ExternalEmbedder(child(tmp_path, MEAN_AND_RATE), timeout_s=10) as embedder:
            first = embedder.embed_frames([np.zeros(4)], 8000)
            second = embedder.embed_frames([np.ones(4)], 8000)
        assert first[0][0] == 0.0
        assert second[0][0] == 1.0

    def test_out_of_order_replies_reassembled(self, tmp_path):
        frames = [np.zeros(2) for _ in range(4)]
        with ExternalEmbedder(child(tmp_path, REPLIES_REVERSED), timeout_s=10) as embedder:
            vectors = embedder.embed_frames(frames, 16000)
        assert [float(v[0]) for v in vectors] == [0.0, 1.0, 2.0, 3.0]

    def test_one_shot_helper(self, tmp_path):
        vectors = external_embed(
            child(tmp_path, MEAN_AND_RATE), [np.full(4, 0.25)], 32000, timeout_s=10
        )
        assert vectors[0][1] == 32000.0

    def test_close_is_idempotent(self, tmp_path):
        embedder = ExternalEmbedder(child(tmp_path, MEAN_AND_RATE), timeout_s=10)
        embedder.close()
        embedder.close()


class TestProtocolViolations:
    def test_reply_dimension_mismatch(self, tmp_path):
        with pytest.raises(ExternalEmbedderError, match="handshake declared 3"):
            external_embed(child(tmp_path, WRONG_REPLY_DIM), [np.zeros(4)], 16000, timeout_s=10)

    def test_duplicate_reply_id(self, tmp_path):
        with ExternalEmbedder(child(tmp_path, DUPLICATE_REPLIES), timeout_s=10) as embedder:
            with pytest.raises(ExternalEmbedderError, match="unknown or duplicate"):
                embedder.embed_frames([np.zeros(2), np.zeros(2)], 16000)

    def test_handshake_without_dim(self, tmp_path):
        with pytest.raises(ExternalEmbedderError, match="handshake"):
            ExternalEmbedder(child(tmp_path, BAD_HANDSHAKE), timeout_s=10)

    def test_non_json_handshake(self, tmp_path):
        with pytest.raises(ExternalEmbedderError, match="non-JSON"):
            ExternalEmbedder(child(tmp_path, NON_JSON_HANDSHAKE), timeout_s=10)

    def test_crash_before_handshake_surfaces_stderr(self, tmp_path):
        with pytest.raises(ExternalEmbedderError) as excinfo:
            ExternalEmbedder(child(tmp_path, DIES_BEFORE_HANDSHAKE), timeout_s=10)
        message = str(excinfo.value)
        assert "handshake" in message
        assert "cannot load weights" in message

    def test_missing_command(self):
        with pytest.raises(ExternalEmbedderError, match="could not start"):
            ExternalEmbedder(["/nonexistent/embedder-binary"], timeout_s=5)

    def test_reply_timeout_honors_budget(self, tmp_path):
        start = time.monotonic()
        with ExternalEmbedder(child(tmp_path, HANGS_AFTER_HANDSHAKE), timeout_s=0.5) as embedder:
            with pytest.raises(ExternalEmbedderError, match="timeout"):
                embedder.embed_frames([np.zeros(4)], 16000)
        assert time.monotonic() - start < 5.0

    def test_embed_after_child_exit(self, tmp_path):
        embedder = ExternalEmbedder(child(tmp_path, EXITS_AFTER_HANDSHAKE), timeout_s=10)
        try:
            time.sleep(0.3)  # give the child time to finish exiting
            with pytest.raises(ExternalEmbedderError, match="exited"):
                embedder.embed_frames([np.zeros(4)], 16000)
        finally:
            embedder.close()
