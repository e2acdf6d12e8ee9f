"""Run a policy as a child process speaking one JSON object per line.

The child reads ``{"op": "reset", ...}`` and ``{"op": "decide", "input": ...}``
requests on stdin and answers each with one line on stdout: ``{"ok": true}``
for a reset, a serialized :class:`PolicyDecision` for a decision.
"""

from __future__ import annotations

import json
import subprocess
import threading
from typing import Any, Sequence

from .policies import PolicyDecision, PolicyInput


class AdapterError(RuntimeError):
    pass


class ExternalPolicy:
    def __init__(self, argv: Sequence[str], timeout: float = 30.0):
        if not argv:
            raise AdapterError("external policy needs a command line")
        self.argv = list(argv)
        self.timeout = timeout
        self.name = f"external:{self.argv[0]}"
        self._proc: subprocess.Popen | None = None

    def _start(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def _call(self, request: dict[str, Any]) -> dict[str, Any]:
        proc = self._start()
        assert proc.stdin is not None and proc.stdout is not None
        proc.stdin.write(json.dumps(request, sort_keys=True) + "\n")
        proc.stdin.flush()
        reply: list[str] = []
        reader = threading.Thread(target=lambda: reply.append(proc.stdout.readline()), daemon=True)
        reader.start()
        reader.join(self.timeout)
        if not reply:
            self.close()
            raise AdapterError(f"{self.name}: no reply within {self.timeout}s")
        if not reply[0]:
            raise AdapterError(f"{self.name}: process exited")
        try:
            return json.loads(reply[0])
        except json.JSONDecodeError as exc:
            raise AdapterError(f"{self.name}: reply is not JSON ({exc.msg})") from None

    def reset(self, agent_id: int, seed: int) -> None:
        self._call({"op": "reset", "agent_id": agent_id, "seed": seed})

    def decide(self, inp: PolicyInput) -> PolicyDecision:
        reply = self._call({"op": "decide", "input": inp.to_dict()})
        try:
            return PolicyDecision.from_dict(reply)
        except (KeyError, ValueError, TypeError) as exc:
            raise AdapterError(f"{self.name}: malformed decision ({exc})") from None

    def state(self) -> dict[str, Any]:
        return {"policy": self.name}

    def close(self) -> None:
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass
