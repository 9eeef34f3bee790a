"""Measurements behind the lookup-vs-quadrature and MLS-vs-SF claims.

``bench_shading`` times brute-force shading against baked lookups over a range
of environment resolutions; ``bench_continuity`` measures adjacent-sample jumps
of the MLS and nearest-triangle displacement fields along a segment.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import median
from typing import Callable, Sequence

import numpy as np

from .baker import DEFAULT_SHININESS, bake_all, oracle_shade, sample_lightmap
from .fixtures import bend_fixture, cluster_segment, smooth_env
from .mls import DEFAULT_ALPHA, ControlSet, displacement

DEFAULT_ENV_HEIGHTS = (16, 32, 64, 128)
MIN_QUERIES = 10_000


@dataclass
class BenchReport:
    env_texel_counts: list = field(default_factory=list)
    oracle_ns_per_query: list = field(default_factory=list)
    lookup_ns_per_query: list = field(default_factory=list)
    speedup: list = field(default_factory=list)
    reliable: bool = True
    queries: int = 0
    repeats: int = 0
    lookup_repeats: int = 0
    grid_sizes: list = field(default_factory=list)
    mls_max_jump: list = field(default_factory=list)
    sf_max_jump: list = field(default_factory=list)

    @property
    def lookup_variation(self) -> float:
        """max/min lookup time across resolutions."""
        return max(self.lookup_ns_per_query) / min(self.lookup_ns_per_query)

    @property
    def oracle_growth(self) -> float:
        return self.oracle_ns_per_query[-1] / self.oracle_ns_per_query[0]

    @property
    def texel_growth(self) -> float:
        return self.env_texel_counts[-1] / self.env_texel_counts[0]

    @property
    def jump_ratio(self) -> float:
        return self.sf_max_jump[0] / self.mls_max_jump[0] if self.mls_max_jump[0] > 0 else float("inf")

    def summary(self) -> dict:
        out = asdict(self)
        if self.env_texel_counts:
            out.update(lookup_variation=self.lookup_variation, oracle_growth=self.oracle_growth,
                       texel_growth=self.texel_growth)
        if self.mls_max_jump:
            out["jump_ratio"] = self.jump_ratio
        return out

    def write(self, path: str | Path) -> tuple[Path, Path]:
        """JSON report at ``path`` plus a tab-separated table next to it."""
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2))
        table = path.with_suffix(".tsv")
        rows = []
        if self.env_texel_counts:
            rows.append("env_texels\toracle_ns\tlookup_ns\tspeedup")
            rows += [f"{n}\t{o:.1f}\t{lk:.1f}\t{s:.2f}" for n, o, lk, s in zip(
                self.env_texel_counts, self.oracle_ns_per_query, self.lookup_ns_per_query, self.speedup)]
        if self.grid_sizes:
            rows.append("grid\tmls_max_jump\tsf_max_jump")
            rows += [f"{g}\t{m:.6g}\t{s:.6g}" for g, m, s in zip(self.grid_sizes, self.mls_max_jump, self.sf_max_jump)]
        table.write_text("\n".join(rows) + "\n")
        return path, table


def _time_ns(fn: Callable[[], object], repeats: int) -> float:
    return _time_interleaved_ns([fn], repeats)[0]


def _time_interleaved_ns(fns: Sequence[Callable[[], object]], repeats: int) -> list[float]:
    """Median time per callable, cycling through all of them on every repeat.

    Round-robin order spreads slow drift of the machine evenly over the callables
    instead of letting it masquerade as a difference between them.
    """
    for fn in fns:
        fn()  # warmup, discarded
    samples = [[] for _ in fns]
    for _ in range(repeats):
        for fn, acc in zip(fns, samples):
            t0 = time.perf_counter_ns()
            fn()
            acc.append(time.perf_counter_ns() - t0)
    return [median(acc) for acc in samples]


def random_directions(count: int, rng: np.random.Generator) -> np.ndarray:
    d = rng.normal(size=(count, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def bench_shading(env_heights: Sequence[int] = DEFAULT_ENV_HEIGHTS, queries: int = MIN_QUERIES,
                  shininess: Sequence[int] = DEFAULT_SHININESS, lightmap_resolution=(128, 64),
                  repeats: int = 5, seed: int = 0, env_factory=smooth_env, workers: int = 1,
                  lookup_repeats: int = 25) -> BenchReport:
    """Per-query cost of brute-force shading vs baked lookup at each env resolution.

    Both paths evaluate the diffuse lobe at the normals and every specular lobe at
    the reflected directions of the same query set. Env sizes are ``2h x h``.
    Lookups take a few milliseconds per batch, so they get more repeats than the
    oracle and are timed round-robin across resolutions.
    """
    if queries < MIN_QUERIES:
        raise ValueError(f"need at least {MIN_QUERIES} queries for stable timings, got {queries}")
    if list(env_heights) != sorted(env_heights) or not env_heights:
        raise ValueError("env resolutions must be given in ascending order")
    if min(repeats, lookup_repeats) < 5:
        raise ValueError("timing needs at least 5 repetitions")
    rng = np.random.default_rng(seed)
    normals = random_directions(queries, rng)
    reflected = random_directions(queries, rng)
    tick = time.get_clock_info("perf_counter").resolution * 1e9
    report = BenchReport(queries=queries, repeats=repeats, lookup_repeats=lookup_repeats)

    envs, lookups = [], []
    for h in env_heights:
        env = env_factory(h)
        lights = bake_all(env, shininess, lightmap_resolution, workers)

        def lookup(lights=lights):
            sample_lightmap(lights, "diffuse", normals)
            for k in shininess:
                sample_lightmap(lights, k, reflected)

        envs.append(env)
        lookups.append(lookup)

    oracle_ts = [_time_ns(lambda env=env: oracle_shade(env, normals, reflected, shininess), repeats) for env in envs]
    lookup_ts = _time_interleaved_ns(lookups, lookup_repeats)
    for env, oracle_t, lookup_t in zip(envs, oracle_ts, lookup_ts):
        if min(oracle_t, lookup_t) < 10 * tick:
            report.reliable = False
        report.env_texel_counts.append(env.texel_count)
        report.oracle_ns_per_query.append(oracle_t / queries)
        report.lookup_ns_per_query.append(lookup_t / queries)
        report.speedup.append(oracle_t / lookup_t)
    return report


def max_jump(values: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(values, axis=0), axis=1).max()) if len(values) > 1 else 0.0


def bench_continuity(controls: ControlSet | None = None, grid: int = 100, octaves: int = 3,
                     segment: tuple | None = None, alpha: float = DEFAULT_ALPHA) -> BenchReport:
    """Max adjacent-sample displacement jumps of MLS and SF along a segment.

    Sampling starts with ``grid`` points; each further octave halves the spacing
    exactly (nested grids), giving ``octaves + 1`` rows in total.
    """
    controls = bend_fixture() if controls is None else controls
    if controls.triangles is None:
        raise ValueError("continuity benchmark needs a control set with triangles for the SF baseline")
    if grid < 2:
        raise ValueError("grid needs at least 2 samples")
    start, end = cluster_segment(controls) if segment is None else (np.asarray(s, float) for s in segment)
    report = BenchReport()
    for octave in range(octaves + 1):
        n = (grid - 1) * 2**octave + 1
        t = np.linspace(0.0, 1.0, n)[:, None]
        points = start + t * (end - start)
        report.grid_sizes.append(n)
        report.mls_max_jump.append(max_jump(displacement(controls, points, "mls", alpha)))
        report.sf_max_jump.append(max_jump(displacement(controls, points, "sf")))
    return report
