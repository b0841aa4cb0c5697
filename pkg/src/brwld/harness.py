"""Reproducible execution plumbing: random streams, replica blocks, aggregation, output."""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any, Callable, Optional, Sequence

import numpy as np

TOOL_VERSION = "0.1.0"
DEFAULT_BLOCK = 2048


def derive_stream(master_seed: int, index: int | Sequence[int]) -> np.random.Generator:
    """Independent, reproducible Philox stream for ``(master_seed, index)``.

    The key is hashed through ``SeedSequence`` so distinct indices get distinct
    Philox keys, hence non-overlapping counter streams.
    """
    key = (int(index),) if np.isscalar(index) else tuple(int(i) for i in index)
    ss = np.random.SeedSequence(entropy=int(master_seed) & ((1 << 64) - 1), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Partial:
    """Sufficient statistics of one replica block."""

    index: int
    mean: float
    m2: float
    count: int
    bias: float = 0.0  # summed per-replica bias bounds
    invalid: int = 0

    @classmethod
    def from_values(cls, index: int, values, bias=None, invalid: int = 0) -> "Partial":
        values = np.asarray(values, dtype=np.float64)
        n = int(values.size)
        if n == 0:
            return cls(index, 0.0, 0.0, 0, 0.0, invalid)
        mean = math.fsum(values.tolist()) / n
        m2 = math.fsum(((values - mean) ** 2).tolist())
        b = 0.0 if bias is None else math.fsum(np.asarray(bias, dtype=np.float64).tolist())
        return cls(index, mean, m2, n, b, invalid)


@dataclass(frozen=True)
class EstimateRecord:
    mean: float
    stderr: float
    replicas: int
    invalid_replicas: int = 0
    bias_bound: float = 0.0
    config_digest: str = ""
    seed: int = 0
    log_mean: float = math.nan
    diagnostics: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not d["diagnostics"]:
            d.pop("diagnostics")
        return d

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.stderr


def _merge(a: Partial, b: Partial) -> Partial:
    n = a.count + b.count
    if a.count == 0:
        return Partial(a.index, b.mean, b.m2, b.count, a.bias + b.bias, a.invalid + b.invalid)
    if b.count == 0:
        return Partial(a.index, a.mean, a.m2, a.count, a.bias + b.bias, a.invalid + b.invalid)
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.count / n)
    m2 = a.m2 + b.m2 + delta * delta * (a.count * b.count / n)
    return Partial(a.index, mean, m2, n, a.bias + b.bias, a.invalid + b.invalid)


def merge_partials(partials: Sequence[Partial]) -> Partial:
    """Pairwise tree merge in block-index order; independent of arrival order."""
    if not partials:
        raise ValueError("no partials to aggregate")
    level = sorted(partials, key=lambda p: p.index)
    while len(level) > 1:
        nxt = [_merge(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def aggregate(partials: Sequence[Partial], *, seed: int = 0, config_digest: str = "",
              log_scale: float = 0.0, diagnostics: Optional[dict] = None) -> EstimateRecord:
    """Combine block partials into an EstimateRecord.

    Values inside partials may be scaled by ``exp(-log_scale)``; the record is
    returned on the natural scale, with ``log_mean`` kept for underflow.
    """
    total = merge_partials(partials)
    if total.count == 0:
        raise ValueError("zero total count")
    var = total.m2 / (total.count - 1) if total.count > 1 else 0.0
    se = math.sqrt(max(var, 0.0) / total.count)
    scale = math.exp(log_scale)
    log_mean = (math.log(total.mean) + log_scale) if total.mean > 0 else -math.inf
    return EstimateRecord(mean=total.mean * scale, stderr=se * scale, replicas=total.count,
                          invalid_replicas=total.invalid, bias_bound=total.bias / total.count * scale,
                          config_digest=config_digest, seed=int(seed), log_mean=log_mean,
                          diagnostics=dict(diagnostics or {}))


def block_sizes(replicas: int, block: int = DEFAULT_BLOCK) -> list[int]:
    if replicas <= 0:
        raise ValueError("replicas must be positive")
    full, rest = divmod(replicas, block)
    return [block] * full + ([rest] if rest else [])


def lanes() -> int:
    try:
        return max(1, int(os.environ.get("BRWLD_THREADS", "1")))
    except ValueError:
        return 1


def run_blocks(fn: Callable[[int, int, np.random.Generator], Any], replicas: int, seed: int,
               block: int = DEFAULT_BLOCK, stream_tag: int = 0) -> list:
    """Evaluate ``fn(index, size, stream)`` on every replica block, results in index order.

    Each block draws from ``derive_stream(seed, (stream_tag, index))``; the
    number of lanes changes wall-clock time only.
    """
    sizes = block_sizes(replicas, block)
    jobs = [(i, s) for i, s in enumerate(sizes)]

    def one(job):
        i, s = job
        return fn(i, s, derive_stream(seed, (stream_tag, i)))

    n = lanes()
    if n == 1 or len(jobs) == 1:
        return [one(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(one, jobs))


# ---------------------------------------------------------------------------
# configs and serialisation


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


@dataclass
class RunConfig:
    command: str
    law: str = ""
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: Optional[str] = None
    format: str = "json"

    def canonical(self) -> dict:
        return _canonical({"command": self.command, "law": self.law, "params": self.params,
                           "seed": int(self.seed)})

    def digest(self) -> str:
        return config_digest(self.canonical())


def config_digest(config: dict) -> str:
    text = dumps(_canonical(config))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    text = format(x, ".17g")
    if all(c not in text for c in ".eE"):
        text += ".0"
    return text


def dumps(obj, indent: int = 0, level: int = 0) -> str:
    """JSON text with floats written to 17 significant digits."""
    pad = " " * (indent * (level + 1)) if indent else ""
    end = " " * (indent * level) if indent else ""
    nl = "\n" if indent else ""
    sep = ", " if not indent else ","
    obj = _canonical(obj) if isinstance(obj, (Fraction, np.integer, np.floating, np.bool_)) else obj
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, level + 1)}" for k, v in obj.items()]
        return "{" + nl + (sep + nl).join(items) + nl + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{dumps(v, indent, level + 1)}" for v in obj]
        return "[" + nl + (sep + nl).join(items) + nl + end + "]"
    if hasattr(obj, "to_dict"):
        return dumps(obj.to_dict(), indent, level)
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, level)
    raise TypeError(f"cannot serialise {type(obj).__name__}")
