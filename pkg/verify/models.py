import time
from contextlib import contextmanager
from dataclasses import dataclass

BYTES_PER_VALUE = 8


def linear_macs(n_q: int, n_k: int, channels: int) -> int:
    """Three C x C maps: queries from n_q rows, keys and values from n_k rows."""
    return channels * channels * (n_q + 2 * n_k)


def attention_macs(n_q: int, n_k: int, channels: int) -> int:
    """Scores and weighted sum (2 n_q n_k C) plus one operation per softmax entry."""
    return 2 * n_q * n_k * channels + n_q * n_k


@dataclass
class CostCounter:
    """Running operation counts for a measured region; every field only grows."""

    linear_macs: int = 0
    attention_macs: int = 0
    bytes_touched: int = 0
    wall_ns: int = 0

    @property
    def mac_count(self) -> int:
        return self.linear_macs + self.attention_macs

    def add_attention_block(self, n_q: int, n_k: int, channels: int) -> None:
        self.linear_macs += linear_macs(n_q, n_k, channels)
        self.attention_macs += attention_macs(n_q, n_k, channels)
        # Q, K, V in; three weight matrices; score matrix; output.
        values = (n_q + 2 * n_k) * channels + 3 * channels * channels + n_q * n_k + n_q * channels
        self.bytes_touched += BYTES_PER_VALUE * values

    def merge(self, other: 'CostCounter') -> None:
        self.linear_macs += other.linear_macs
        self.attention_macs += other.attention_macs
        self.bytes_touched += other.bytes_touched
        self.wall_ns += other.wall_ns

    @contextmanager
    def timed(self):
        start = time.perf_counter_ns()
        try:
            yield self
        finally:
            self.wall_ns += time.perf_counter_ns() - start
