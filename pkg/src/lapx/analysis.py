"""Efficiency reporting: exact parameter counts, traced MAC counts,
activation-liveness memory estimates, and a wall-clock latency harness.

MAC numbers follow the lightweight-pose convention (one multiply-accumulate
per unit); reports carry both the MAC total and its doubled FLOP reading.
Element-wise work (BN, activations, pooling) is tallied separately and kept
out of the headline number.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import platform
import threading
import time

import numpy as np

from .engine import Tensor, no_grad, record_tape
from .model import HourglassNet

__all__ = [
    "LayerRow", "EfficiencyReport", "BenchReport",
    "count_params", "count_flops", "efficiency_report",
    "activation_footprint", "bench_latency",
    "report_to_json", "report_to_text", "bench_to_json", "bench_to_text",
]


@dataclasses.dataclass
class LayerRow:
    name: str
    param_count: int = 0
    macs: int = 0
    element_ops: int = 0
    output_dims: tuple | None = None
    activation_bytes: int = 0


@dataclasses.dataclass
class EfficiencyReport:
    rows: list
    input_dims: tuple | None
    config_hash: str
    total_params: int = 0
    total_macs: int = 0
    total_element_ops: int = 0
    total_activation_bytes: int = 0
    peak_activation_bytes: int = 0
    param_bytes: int = 0

    def finalize(self):
        self.total_params = sum(r.param_count for r in self.rows)
        self.total_macs = sum(r.macs for r in self.rows)
        self.total_element_ops = sum(r.element_ops for r in self.rows)
        self.total_activation_bytes = sum(r.activation_bytes for r in self.rows)
        return self

    @property
    def total_flops_2x(self) -> int:
        return 2 * self.total_macs


@dataclasses.dataclass
class BenchReport:
    warmup_iters: int
    timed_iters: int
    times_ms: list
    mean_ms: float
    p50_ms: float
    p95_ms: float
    fps: float
    fps_tta: float
    peak_activation_bytes: int
    threads: int
    host: str


def _config_hash(model: HourglassNet) -> str:
    doc = json.dumps(model.cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _param_layer(name: str) -> str:
    # registry name "stage1.enc0_b0.dw.conv.w" -> layer "stage1/enc0_b0/dw/conv"
    parts = name.split(".")
    return "/".join(parts[:-1]) if len(parts) > 1 else name


def _scope_layer(tag: str) -> str:
    # trace scopes are dotted paths carrying the net's own label first;
    # normalize to the slashed layer names the parameter rows use
    parts = [p for p in tag.split(".") if p]
    if parts and parts[0] == "net":
        parts = parts[1:]
    return "/".join(parts) if parts else "(input)"


def count_params(model: HourglassNet) -> EfficiencyReport:
    """Per-layer parameter counts; the total is the exhaustive enumeration
    of the parameter registry.  BN running statistics are buffers, not
    parameters, and are excluded."""
    rows: dict[str, LayerRow] = {}
    for name, p in model.named_params():
        layer = _param_layer(name)
        row = rows.setdefault(layer, LayerRow(layer))
        row.param_count += p.data.size
    report = EfficiencyReport(list(rows.values()), None, _config_hash(model))
    report.param_bytes = 4 * sum(
        p.data.size for _, p in model.named_params()) + 4 * sum(
        b.size for _, b in model.named_buffers())
    return report.finalize()


def _traced_forward(model: HourglassNet, input_dims):
    n, c, h, w = input_dims
    was_training = model.training
    model.eval()
    try:
        with record_tape() as tape, no_grad():
            x = Tensor(np.zeros(input_dims, np.float32))
            model(x)
    finally:
        model.train(was_training)
    return tape.nodes


def count_flops(model: HourglassNet, input_dims) -> EfficiencyReport:
    """Traced per-layer MACs and element-ops for one forward pass at
    input_dims = (N, 3, H, W)."""
    nodes = _traced_forward(model, input_dims)
    rows: dict[str, LayerRow] = {}
    for node in nodes:
        layer = _scope_layer(node.tag)
        row = rows.setdefault(layer, LayerRow(layer))
        row.macs += node.macs
        row.element_ops += node.eops
        row.output_dims = tuple(node.data.shape)
        row.activation_bytes += 4 * node.data.size
    report = EfficiencyReport(list(rows.values()), tuple(input_dims),
                              _config_hash(model))
    return report.finalize()


def efficiency_report(model: HourglassNet, input_dims) -> EfficiencyReport:
    """Combined per-layer report: parameters, MACs, element ops, output
    dims, and activation bytes, plus the peak-liveness estimate."""
    flops = count_flops(model, input_dims)
    rows = {r.name: r for r in flops.rows}
    for name, p in model.named_params():
        layer = _param_layer(name)
        row = rows.setdefault(layer, LayerRow(layer))
        row.param_count += p.data.size
    report = EfficiencyReport(list(rows.values()), tuple(input_dims),
                              _config_hash(model))
    report.param_bytes = count_params(model).param_bytes
    report.peak_activation_bytes = activation_footprint(model, input_dims)
    return report.finalize()


def activation_footprint(model: HourglassNet, input_dims) -> int:
    """Peak live activation bytes under a free-after-last-use schedule,
    plus parameter and buffer bytes."""
    nodes = _traced_forward(model, input_dims)
    index = {id(n): i for i, n in enumerate(nodes)}
    last_use = list(range(len(nodes)))
    for i, node in enumerate(nodes):
        for p in node.parents:
            j = index.get(id(p))
            if j is not None:
                last_use[j] = max(last_use[j], i)
    free_at: dict[int, list[int]] = {}
    for j, last in enumerate(last_use):
        free_at.setdefault(last, []).append(j)
    live = 0
    peak = 0
    for i, node in enumerate(nodes):
        live += 4 * node.data.size
        peak = max(peak, live)
        for j in free_at.get(i, ()):
            live -= 4 * nodes[j].data.size
    param_bytes = 4 * sum(p.data.size for _, p in model.named_params())
    param_bytes += 4 * sum(b.size for _, b in model.named_buffers())
    return peak + param_bytes


_bench_lock = threading.Lock()


def bench_latency(model: HourglassNet, input_dims, warmup: int = 3,
                  iters: int = 10, threads: int = 1, seed: int = 0) -> BenchReport:
    """Times eval-mode forwards on one fixed random input.

    ``threads`` is recorded for the report; limiting the math-library
    thread pool has to happen before numpy is first imported (the CLI does
    that when asked).
    """
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    if warmup < 0:
        raise ValueError(f"warmup must be >= 0, got {warmup}")
    if not _bench_lock.acquire(blocking=False):
        raise RuntimeError("another benchmark is already running in this process")
    try:
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.0, 1.0, size=input_dims).astype(np.float32)
        was_training = model.training
        model.eval()
        try:
            for _ in range(warmup):
                with no_grad():
                    model(Tensor(x))
            times = []
            for _ in range(iters):
                t0 = time.perf_counter()
                with no_grad():
                    model(Tensor(x))
                times.append((time.perf_counter() - t0) * 1000.0)
        finally:
            model.train(was_training)
        mean = float(np.mean(times))
        fps = 1000.0 / mean
        return BenchReport(
            warmup_iters=warmup,
            timed_iters=iters,
            times_ms=[float(t) for t in times],
            mean_ms=mean,
            p50_ms=float(np.percentile(times, 50)),
            p95_ms=float(np.percentile(times, 95)),
            fps=fps,
            fps_tta=fps / 2.0,
            peak_activation_bytes=activation_footprint(model, input_dims),
            threads=threads,
            host=f"{platform.platform()} / {platform.machine()}",
        )
    finally:
        _bench_lock.release()


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def report_to_json(report: EfficiencyReport) -> str:
    doc = {
        "input_dims": list(report.input_dims) if report.input_dims else None,
        "config_hash": report.config_hash,
        "totals": {
            "params": report.total_params,
            "macs": report.total_macs,
            "flops_2x": report.total_flops_2x,
            "element_ops": report.total_element_ops,
            "activation_bytes": report.total_activation_bytes,
            "peak_activation_bytes": report.peak_activation_bytes,
            "param_bytes": report.param_bytes,
        },
        "layers": [
            {
                "name": r.name,
                "params": r.param_count,
                "macs": r.macs,
                "element_ops": r.element_ops,
                "output_dims": list(r.output_dims) if r.output_dims else None,
                "activation_bytes": r.activation_bytes,
            }
            for r in report.rows
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def report_to_text(report: EfficiencyReport) -> str:
    headers = ("layer", "params", "MACs", "elem ops", "output", "act bytes")
    table = []
    for r in report.rows:
        dims = "x".join(str(d) for d in r.output_dims) if r.output_dims else "-"
        table.append((r.name, str(r.param_count), str(r.macs),
                      str(r.element_ops), dims, str(r.activation_bytes)))
    widths = [max(len(h), *(len(row[i]) for row in table)) if table else len(h)
              for i, h in enumerate(headers)]
    lines = []
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)))
    lines.append("  ".join("-" * widths[i] for i in range(len(headers))))
    for row in table:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(row))))
    lines.append("")
    lines.append(f"total params:      {report.total_params:,}")
    lines.append(f"total MACs:        {report.total_macs:,}"
                 f"  (2x = {report.total_flops_2x:,} FLOPs)")
    lines.append(f"total element ops: {report.total_element_ops:,}")
    if report.peak_activation_bytes:
        lines.append(f"peak activations:  {report.peak_activation_bytes:,} bytes"
                     f" (params {report.param_bytes:,} bytes included)")
    if report.input_dims:
        lines.append(f"input dims:        {'x'.join(str(d) for d in report.input_dims)}")
    lines.append(f"config hash:       {report.config_hash}")
    return "\n".join(lines) + "\n"


def bench_to_json(report: BenchReport) -> str:
    return json.dumps(dataclasses.asdict(report), indent=2) + "\n"


def bench_to_text(report: BenchReport) -> str:
    lines = [
        f"warmup iters:     {report.warmup_iters}",
        f"timed iters:      {report.timed_iters}",
        f"mean latency:     {report.mean_ms:.3f} ms",
        f"p50 latency:      {report.p50_ms:.3f} ms",
        f"p95 latency:      {report.p95_ms:.3f} ms",
        f"fps:              {report.fps:.2f}",
        f"fps with TTA:     {report.fps_tta:.2f}",
        f"peak activations: {report.peak_activation_bytes:,} bytes",
        f"threads:          {report.threads}",
        f"host:             {report.host}",
    ]
    return "\n".join(lines) + "\n"
