"""Bridge to out-of-process embedders over a newline-delimited JSON protocol.

The child declares {"dim": N} on its first stdout line, then answers each
request {"id", "rate", "samples_b64"} with {"id", "embedding"}. Replies may
arrive in any order; the bridge reassembles them by id.
"""
from __future__ import annotations

import base64
import json
import queue
import subprocess
import threading
import time
from typing import Sequence

import numpy as np

DEFAULT_TIMEOUT_SECONDS = 60.0
_STDERR_TAIL_LINES = 20


class ExternalEmbedderError(RuntimeError):
    """Child process broke the wire protocol, died, or timed out."""


class ExternalEmbedder:
    """Holds one child process open across embed_frames calls."""

    def __init__(self, command: Sequence[str], timeout_s: float = DEFAULT_TIMEOUT_SECONDS):
        self.command = list(command)
        self.timeout_s = timeout_s
        try:
            self._process = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ExternalEmbedderError(f"could not start {self.command}: {exc}") from exc
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._stderr_tail: list[str] = []
        self._reader = threading.Thread(target=self._drain_stdout, daemon=True)
        self._reader.start()
        self._stderr_reader = threading.Thread(target=self._drain_stderr, daemon=True)
        self._stderr_reader.start()
        handshake = self._read_message(self.timeout_s, context="handshake")
        if "dim" not in handshake or not isinstance(handshake["dim"], int) or handshake["dim"] < 1:
            self.close()
            raise ExternalEmbedderError(f"bad handshake: {handshake!r}")
        self.dim = handshake["dim"]

    def _drain_stdout(self) -> None:
        assert self._process.stdout is not None
        for line in self._process.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF marker

    def _drain_stderr(self) -> None:
        assert self._process.stderr is not None
        for line in self._process.stderr:
            self._stderr_tail.append(line.rstrip("\n"))
            del self._stderr_tail[:-_STDERR_TAIL_LINES]

    def _diagnostics(self) -> str:
        code = self._process.poll()
        status = f"exit code {code}" if code is not None else "still running"
        tail = "\n".join(self._stderr_tail) or "(no stderr output)"
        return f"command {self.command}, {status}; stderr tail:\n{tail}"

    def _read_message(self, deadline_s: float, context: str) -> dict:
        try:
            line = self._lines.get(timeout=deadline_s)
        except queue.Empty:
            self.close()
            raise ExternalEmbedderError(
                f"timeout after {deadline_s:.1f}s waiting for {context}; {self._diagnostics()}"
            ) from None
        if line is None:
            raise ExternalEmbedderError(
                f"child exited during {context}; {self._diagnostics()}"
            )
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            self.close()
            raise ExternalEmbedderError(
                f"non-JSON line during {context}: {line!r}; {self._diagnostics()}"
            ) from exc
        if not isinstance(message, dict):
            self.close()
            raise ExternalEmbedderError(f"expected a JSON object, got {message!r}")
        return message

    def embed_frames(self, frames: Sequence[np.ndarray], rate: int) -> list[np.ndarray]:
        """Send every frame, collect replies by id, return in request order."""
        if self._process.poll() is not None:
            raise ExternalEmbedderError(f"child already exited; {self._diagnostics()}")
        ids = [f"frame-{i}" for i in range(len(frames))]
        assert self._process.stdin is not None
        try:
            for request_id, samples in zip(ids, frames):
                encoded = base64.b64encode(
                    np.asarray(samples, dtype="<f4").tobytes()
                ).decode("ascii")
                request = {"id": request_id, "rate": int(rate), "samples_b64": encoded}
                self._process.stdin.write(json.dumps(request) + "\n")
            self._process.stdin.flush()
        except (BrokenPipeError, OSError):
            raise ExternalEmbedderError(
                f"child closed stdin mid-request; {self._diagnostics()}"
            ) from None
        wanted = set(ids)
        results: dict[str, np.ndarray] = {}
        deadline = time.monotonic() + self.timeout_s
        while wanted:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self.close()
                raise ExternalEmbedderError(
                    f"timeout waiting for {len(wanted)} of {len(ids)} replies; "
                    f"{self._diagnostics()}"
                )
            message = self._read_message(remaining, context="embedding reply")
            reply_id = message.get("id")
            if reply_id not in wanted:
                self.close()
                raise ExternalEmbedderError(
                    f"reply for unknown or duplicate id {reply_id!r}; {self._diagnostics()}"
                )
            embedding = np.asarray(message.get("embedding"), dtype=np.float32)
            if embedding.ndim != 1 or len(embedding) != self.dim:
                self.close()
                raise ExternalEmbedderError(
                    f"reply {reply_id!r} has dimension {embedding.size}, "
                    f"handshake declared {self.dim}"
                )
            results[reply_id] = embedding
            wanted.discard(reply_id)
        return [results[i] for i in ids]

    def close(self) -> None:
        process = self._process
        if process.stdin is not None:
            try:
                process.stdin.close()
            except OSError:
                pass
        try:
            process.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            process.kill()
            process.wait()

    def __enter__(self) -> "ExternalEmbedder":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def external_embed(
    command: Sequence[str],
    frames: Sequence[np.ndarray],
    rate: int,
    timeout_s: float = DEFAULT_TIMEOUT_SECONDS,
) -> list[np.ndarray]:
    """One-shot convenience: spawn, embed one batch, shut down."""
    with ExternalEmbedder(command, timeout_s) as bridge:
        return bridge.embed_frames(frames, rate)
