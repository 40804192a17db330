"""Operation counts and wall-clock timings of factored against full-rank co-attention."""
import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np

from attention.blocks import prototype_co_attention
from attention.models import AttentionBlockParams, TokenMatrix
from episodes.exceptions import TensorIOError
from prototypes.models import PrototypeSet

from .costs import cost_model
from .exceptions import GuardExceededError
from .models import CostCounter
from .oracles import full_attention_oracle

logger = logging.getLogger(__name__)

BENCH_HEADER = ('config', 'K', 'T', 'Np', 'C', 'HW', 'mac_factored', 'mac_full', 'ns_factored', 'ns_full')
SUPPORT_QUERY_GRID = ((5, 5), (5, 10), (10, 10), (10, 20), (20, 20), (20, 40), (40, 40))
PROTOTYPE_GRID = (1, 5, 10, 15, 20)
GRIDS = ('support-query', 'prototypes', 'all')
REPETITIONS = 10
SKIPPED = 'skipped'


@dataclass(frozen=True)
class BenchConfig:
    name: str
    k_shots: int
    t_frames: int
    n_prototypes: int
    channels: int = 256
    height: int = 16
    width: int = 28

    @property
    def pixels(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class BenchRow:
    config: BenchConfig
    mac_factored: int
    mac_full: int
    ns_factored: int
    ns_full: Optional[int]

    @property
    def skipped(self) -> bool:
        return self.ns_full is None

    @property
    def fps(self) -> float:
        return self.config.t_frames * 1e9 / self.ns_factored

    def as_row(self):
        cfg = self.config
        return (cfg.name, cfg.k_shots, cfg.t_frames, cfg.n_prototypes, cfg.channels, cfg.pixels,
                self.mac_factored, self.mac_full, self.ns_factored, SKIPPED if self.skipped else self.ns_full)


def bench_grid(grid: str = 'all', channels: int = 256, height: int = 16, width: int = 28) -> List[BenchConfig]:
    if grid not in GRIDS:
        raise ValueError(f"grid must be one of {GRIDS}")
    configs = []
    if grid in ('support-query', 'all'):
        configs += [BenchConfig(f'K{k}_T{t}_Np5', k, t, 5, channels, height, width) for k, t in SUPPORT_QUERY_GRID]
    if grid in ('prototypes', 'all'):
        configs += [BenchConfig(f'K5_T5_Np{n}', 5, 5, n, channels, height, width) for n in PROTOTYPE_GRID]
    return configs


def median_ns(fn, repetitions: int = REPETITIONS, warmup: int = 1) -> int:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(max(1, repetitions)):
        start = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - start)
    samples = np.asarray(samples, dtype=np.float64)
    logger.debug("Timing over %d runs: median %.0f ns, std %.0f ns", len(samples), np.median(samples), samples.std())
    return int(np.median(samples))


def bench_config(cfg: BenchConfig, repetitions: int = REPETITIONS, warmup: int = 1, seed: int = 0,
                 max_macs: Optional[int] = None) -> BenchRow:
    rng = np.random.default_rng(seed)
    c, hw = cfg.channels, cfg.pixels
    t_q = TokenMatrix(rng.standard_normal((cfg.t_frames * hw, c)), 'query', (cfg.t_frames, cfg.height, cfg.width))
    t_s = TokenMatrix(rng.standard_normal((cfg.k_shots * hw, c)), 'support', (cfg.k_shots, cfg.height, cfg.width))
    p_h = PrototypeSet(rng.standard_normal((cfg.n_prototypes * cfg.k_shots, c)), 'holistic', cfg.n_prototypes)
    blocks = (AttentionBlockParams.initialize(c, rng), AttentionBlockParams.initialize(c, rng))

    counter = CostCounter()
    prototype_co_attention(t_q, t_s, p_h, blocks, counter)
    ns_factored = median_ns(lambda: prototype_co_attention(t_q, t_s, p_h, blocks), repetitions, warmup)

    try:
        _, full_counter = full_attention_oracle(t_q, t_s, blocks[0], max_macs)
    except GuardExceededError:
        mac_full = cost_model(cfg.k_shots, cfg.t_frames, cfg.height, cfg.width, cfg.n_prototypes, c).full
        ns_full = None
    else:
        mac_full = full_counter.mac_count
        ns_full = median_ns(lambda: full_attention_oracle(t_q, t_s, blocks[0], max_macs), repetitions, warmup)

    row = BenchRow(cfg, counter.mac_count, mac_full, ns_factored, ns_full)
    logger.info("%s: %.3g vs %.3g MACs, %.2f ms factored (%.1f FPS), full %s", cfg.name, row.mac_factored,
                row.mac_full, ns_factored / 1e6, row.fps, SKIPPED if row.skipped else f"{ns_full / 1e6:.2f} ms")
    return row


def run_benchmark(configs: Iterable[BenchConfig], repetitions: int = REPETITIONS, warmup: int = 1, seed: int = 0,
                  max_macs: Optional[int] = None, jobs: int = 1) -> List[BenchRow]:
    """One row per config, in input order.

    With ``jobs > 1`` configs are timed on a thread pool and the timings
    share the machine; the MAC counts are unaffected.
    """
    if jobs <= 1:
        return [bench_config(cfg, repetitions, warmup, seed, max_macs) for cfg in configs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda cfg: bench_config(cfg, repetitions, warmup, seed, max_macs), configs))


def write_bench_csv(path, rows: Iterable[BenchRow]) -> None:
    try:
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(BENCH_HEADER)
            writer.writerows(row.as_row() for row in rows)
    except OSError as exc:
        raise TensorIOError(path, f"write failed: {exc.strerror or exc}") from exc
