"""Line protocol for black-box models running in a child process.

Per batch the parent writes ``B <M> <d>`` followed by ``M`` lines of ``d``
comma-separated floats and flushes. The child answers with exactly ``M``
lines, one float each, in row order. Closing the child's stdin ends the
session.

A child can be written in any language. In Python, :func:`serve` does the
reading and writing::

    from pddshap.protocol import serve
    serve(lambda X: X[:, 0] + 2 * X[:, 1])
"""
from __future__ import annotations

import logging
import queue
import shlex
import subprocess
import sys
import threading
from typing import Callable, Sequence, TextIO, Union

import numpy as np

from .core import ModelError

logger = logging.getLogger(__name__)

_EOF = object()


def format_float(v: float) -> str:
    # repr() is the shortest string that round-trips a float64
    return repr(float(v))


def encode_batch(X: np.ndarray) -> str:
    X = np.asarray(X, dtype=np.float64)
    m, d = X.shape
    lines = [f"B {m} {d}"]
    lines.extend(",".join(map(format_float, row)) for row in X.tolist())
    return "\n".join(lines) + "\n"


class SubprocessModel:
    """A :class:`~pddshap.core.BlackBoxModel` backed by a child process.

    The channel is serial: concurrent ``evaluate`` calls are funnelled
    through a lock. ``timeout`` bounds the wait for each reply line, so a
    child that answers too few lines raises instead of hanging.
    """

    serial = True

    def __init__(self, command: Union[str, Sequence[str]], timeout: float = 60.0):
        self.command = command
        self.timeout = timeout
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not argv:
            raise ModelError("empty model command")
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ModelError(f"cannot start model command {command!r}: {exc}", command) from exc
        self._lines: "queue.Queue[object]" = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._lock = threading.Lock()

    def _pump(self) -> None:
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(_EOF)

    def _read_line(self, got: list[str], expected: int) -> str:
        try:
            item = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise ModelError(
                f"model sent {len(got)} of {expected} replies before timing out", got
            ) from None
        if item is _EOF:
            self._lines.put(_EOF)
            code = self._proc.poll()
            raise ModelError(
                f"model process exited (code {code}) after {len(got)} of {expected} replies", got
            )
        return item

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ModelError(f"batch must be 2-D, got shape {X.shape}", None)
        with self._lock:
            if not self._lines.empty():
                stray = []
                while not self._lines.empty():
                    item = self._lines.get_nowait()
                    if item is _EOF:
                        self._lines.put(_EOF)
                        break
                    stray.append(item)
                if stray:
                    raise ModelError(f"model sent {len(stray)} unsolicited reply lines", stray)
            if self._proc.poll() is not None:
                raise ModelError(f"model process has exited with code {self._proc.returncode}", None)
            try:
                self._proc.stdin.write(encode_batch(X))
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise ModelError(f"cannot write to model process: {exc}", None) from exc
            m = X.shape[0]
            got: list[str] = []
            out = np.empty(m, dtype=np.float64)
            for i in range(m):
                line = self._read_line(got, m)
                got.append(line)
                try:
                    out[i] = float(line.strip())
                except ValueError:
                    raise ModelError(f"malformed reply line {i + 1}: {line.strip()!r}", line) from None
            return out

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None or proc.poll() is not None:
            return
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self) -> "SubprocessModel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __del__(self):
        self.close()

    def __repr__(self) -> str:
        return f"SubprocessModel({self.command!r})"


def subprocess_model(command: Union[str, Sequence[str]], timeout: float = 60.0) -> SubprocessModel:
    return SubprocessModel(command, timeout=timeout)


def serve(
    predict: Callable[[np.ndarray], np.ndarray],
    stdin: TextIO = None,
    stdout: TextIO = None,
) -> None:
    """Child side of the protocol: answer batches until stdin closes."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    while True:
        header = stdin.readline()
        if not header:
            return
        header = header.strip()
        if not header:
            continue
        tag, m, d = header.split()
        if tag != "B":
            raise ValueError(f"bad batch header {header!r}")
        m, d = int(m), int(d)
        X = np.empty((m, d), dtype=np.float64)
        for i in range(m):
            X[i] = [float(v) for v in stdin.readline().split(",")]
        y = np.asarray(predict(X), dtype=np.float64).reshape(-1)
        stdout.write("".join(format_float(v) + "\n" for v in y))
        stdout.flush()
