"""Pluggable feature encoders: Z = Encoder(X), shape-preserving d x T.

Three variants stand in for a frozen pretrained encoder: identity, a frozen
random channel-mixing map, and an external subprocess speaking a versioned
line protocol. All of them are applied to raw numpy windows outside the
autodiff tape; none contributes trainable parameters.
"""

from __future__ import annotations

import os
import shlex
import subprocess
import threading

import numpy as np

from .errors import ConfigError, EncoderError

__all__ = [
    "PROTOCOL_VERSION",
    "ENV_COMMAND",
    "IdentityEncoder",
    "RandomFrozenEncoder",
    "ExternalEncoder",
    "make_encoder",
]

PROTOCOL_VERSION = "ENC1"
ENV_COMMAND = "TSINR_ENCODER_CMD"


def _check_window(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise EncoderError(f"encoder input must be (d, T), got shape {values.shape}")
    if not np.isfinite(values).all():
        raise EncoderError("encoder input contains non-finite values")
    return values


class IdentityEncoder:
    """Passes windows through untouched; the univariate default."""

    kind = "identity"

    def encode(self, values: np.ndarray) -> np.ndarray:
        return _check_window(values).copy()

    def close(self) -> None:
        pass


class RandomFrozenEncoder:
    """Frozen random channel mixing: Z = tanh(A @ X / sqrt(d) + b).

    A and b are drawn once per channel count from a constant seed, so the
    map never varies across calls, instances, or runs. The run seed plays
    no part here; frozen means frozen.
    """

    kind = "random_frozen"

    _SEED = 0x75B7

    def __init__(self):
        self._maps: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _map_for(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        if d not in self._maps:
            rng = np.random.default_rng((self._SEED, d))
            mix = rng.normal(size=(d, d))
            bias = rng.normal(scale=0.1, size=(d, 1))
            self._maps[d] = (mix, bias)
        return self._maps[d]

    def encode(self, values: np.ndarray) -> np.ndarray:
        values = _check_window(values)
        mix, bias = self._map_for(values.shape[0])
        return np.tanh(mix @ values / np.sqrt(values.shape[0]) + bias)

    def close(self) -> None:
        pass


class ExternalEncoder:
    """Adapter for an out-of-process encoder speaking the ENC1 protocol.

    One request per window: the parent writes `ENC1 d T` plus d lines of T
    space-separated decimals, the child replies with identical framing.
    Floats travel as repr() strings, which round-trip float64 bit-exactly.
    The subprocess persists across calls; a lock keeps one request in
    flight at a time.
    """

    kind = "external"

    def __init__(self, command: str | None = None):
        self._proc: subprocess.Popen | None = None
        command = command or os.environ.get(ENV_COMMAND)
        if not command:
            raise EncoderError(
                f"external encoder needs a command: set {ENV_COMMAND} or pass one explicitly"
            )
        self._argv = shlex.split(command)
        if not self._argv:
            raise EncoderError("external encoder command is empty")
        self._lock = threading.Lock()

    def _ensure_process(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self._argv,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                )
            except OSError as exc:
                raise EncoderError(f"cannot start encoder {self._argv}: {exc}") from exc
        return self._proc

    def _fail(self, message: str):
        code = self._proc.poll() if self._proc else None
        self.close()
        raise EncoderError(f"{message} (encoder command {self._argv}, exit status {code})")

    def encode(self, values: np.ndarray) -> np.ndarray:
        values = _check_window(values)
        d, t_len = values.shape
        with self._lock:
            proc = self._ensure_process()
            frame = [f"{PROTOCOL_VERSION} {d} {t_len}"]
            # repr of a python float is the shortest string that round-trips
            frame.extend(" ".join(repr(float(v)) for v in row) for row in values)
            try:
                proc.stdin.write("\n".join(frame) + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError):
                self._fail("encoder process closed its input")

            header = proc.stdout.readline()
            if not header:
                self._fail("encoder process produced no reply")
            tokens = header.split()
            if tokens != [PROTOCOL_VERSION, str(d), str(t_len)]:
                self._fail(
                    f"protocol mismatch: expected header '{PROTOCOL_VERSION} {d} {t_len}', "
                    f"got {header.strip()!r}"
                )
            out = np.empty((d, t_len))
            for c in range(d):
                line = proc.stdout.readline()
                if not line:
                    self._fail(f"reply truncated at channel {c}")
                cells = line.split()
                if len(cells) != t_len:
                    self._fail(f"channel {c} returned {len(cells)} values, expected {t_len}")
                try:
                    out[c] = [float(cell) for cell in cells]
                except ValueError:
                    self._fail(f"channel {c} contains a non-numeric value")
            if not np.isfinite(out).all():
                self._fail("encoder reply contains non-finite values")
            return out

    def close(self) -> None:
        if self._proc is not None:
            proc, self._proc = self._proc, None
            try:
                if proc.stdin:
                    proc.stdin.close()
                proc.terminate()
                proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                proc.kill()

    def __del__(self):
        self.close()


_KINDS = {
    "identity": IdentityEncoder,
    "random": RandomFrozenEncoder,
    "random_frozen": RandomFrozenEncoder,
}


def make_encoder(kind: str, command: str | None = None):
    """Build an encoder from its CLI name; `random` aliases `random_frozen`."""
    if kind == "external":
        return ExternalEncoder(command)
    if kind in _KINDS:
        return _KINDS[kind]()
    raise ConfigError(
        f"unknown encoder kind {kind!r}; expected identity, random, or external"
    )
