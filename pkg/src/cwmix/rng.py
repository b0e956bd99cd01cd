from __future__ import annotations

import numpy as np

ROW_WIDTH = 4
CHUNK_ROWS = 1 << 14


class RngStream:
    """Counter-based stream of uniform rows, one row per Monte Carlo step.

    Replica ``r`` of an experiment uses ``stream_id = r``; the Philox key is
    derived from ``(seed, stream_id)`` through a SeedSequence spawn key, so
    streams are independent and reproducible bit for bit. Rows come out in a
    fixed order regardless of how callers batch their requests.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.Philox(ss))
        self._buf = np.empty((0, ROW_WIDTH))
        self._pos = 0
        self.rows_used = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, rows_used={self.rows_used})"

    def peek(self, m: int) -> np.ndarray:
        """Up to ``m`` upcoming rows (at least one) without consuming them."""
        if self._pos >= self._buf.shape[0]:
            self._buf = self.generator.random((CHUNK_ROWS, ROW_WIDTH))
            self._pos = 0
        return self._buf[self._pos: self._pos + m]

    def consume(self, m: int) -> None:
        self._pos += m
        self.rows_used += m

    def rows(self, m: int) -> np.ndarray:
        """Exactly ``m`` rows, consumed."""
        out = np.empty((m, ROW_WIDTH))
        filled = 0
        while filled < m:
            chunk = self.peek(m - filled)
            out[filled: filled + chunk.shape[0]] = chunk
            self.consume(chunk.shape[0])
            filled += chunk.shape[0]
        return out

    def generator_for_setup(self) -> np.random.Generator:
        """Separate generator for drawing random starting states, keyed off the same pair."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, 1))
        return np.random.default_rng(ss)
