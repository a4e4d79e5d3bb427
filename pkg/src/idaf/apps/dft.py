"""Star-topology signal processing: the root splits a signal into blocks, leaves
transform them and send them back, the root reassembles by sequence number.

The transform follows the classic O(N^2) loop with a positive exponent and
1/N scaling on the forward pass (the inverse is unscaled).  That is the
complex conjugate of numpy's forward FFT convention, i.e. ``forward`` equals
``numpy.fft.ifft``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..builtin import star
from ..runtime import Nodelet, Nodeletset, Phase
from ..swarm import Swarm
from ..transport import SimParams

log = logging.getLogger(__name__)

__all__ = [
    "SampleBlock",
    "dft",
    "mean_std",
    "split_signal",
    "assemble",
    "three_sines",
    "DftWorkload",
    "DftResult",
    "RootNodelet",
    "LeafNodelet",
    "dft_nodeletset",
    "run_dft_demo",
    "read_signal",
    "write_signal",
]


@dataclass
class SampleBlock:
    seq: int
    real: np.ndarray
    imag: np.ndarray
    length: Optional[int] = None  # samples before zero padding
    kind: str = "samples"
    stats: Optional[tuple] = None

    def __post_init__(self) -> None:
        self.real = np.asarray(self.real, dtype=np.float64)
        self.imag = np.asarray(self.imag, dtype=np.float64)
        if self.real.shape != self.imag.shape or self.real.ndim != 1:
            raise ValueError("real and imag must be 1-D vectors of equal length")
        if self.seq < 0:
            raise ValueError("seq must be non-negative")
        if self.length is None:
            self.length = len(self.real)

    def encode(self) -> bytes:
        head = {"seq": self.seq, "n": len(self.real), "length": self.length, "kind": self.kind}
        if self.stats is not None:
            head["stats"] = list(self.stats)
        body = self.real.astype("<f8").tobytes() + self.imag.astype("<f8").tobytes()
        return json.dumps(head, sort_keys=True).encode() + b"\n" + body

    @classmethod
    def decode(cls, b: bytes) -> "SampleBlock":
        head_b, sep, body = b.partition(b"\n")
        if not sep:
            raise ValueError("missing block header")
        head = json.loads(head_b)
        n = int(head["n"])
        if len(body) != 16 * n:
            raise ValueError(f"block body has {len(body)} bytes, expected {16 * n}")
        arr = np.frombuffer(body, dtype="<f8")
        stats = tuple(head["stats"]) if "stats" in head else None
        return cls(int(head["seq"]), arr[:n].copy(), arr[n:].copy(), int(head["length"]),
                   head.get("kind", "samples"), stats)


def dft(block: SampleBlock, forward: bool = True) -> SampleBlock:
    n = len(block.real)
    if n < 1:
        raise ValueError("empty block")
    direction = 1 if forward else -1
    idx = np.arange(n, dtype=np.float64)
    # angle k * arg with arg = direction * 2*pi*i/N, one row per output bin i
    arg = direction * 2.0 * math.pi * idx / n
    ang = np.outer(arg, idx)
    c, s = np.cos(ang), np.sin(ang)
    re = c @ block.real - s @ block.imag
    im = s @ block.real + c @ block.imag
    if forward:
        re, im = re / n, im / n
    return SampleBlock(block.seq, re, im, block.length, "spectrum" if forward else "samples")


def mean_std(samples: Sequence[float]) -> tuple:
    """Mean and population standard deviation (divisor N)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("mean_std of an empty vector")
    m = float(x.sum() / x.size)
    return m, math.sqrt(float(((x - m) ** 2).sum() / x.size))


def split_signal(real: Sequence[float], imag: Optional[Sequence[float]], blocks: int) -> list:
    """Cut a signal into ``blocks`` equal blocks, zero padding the last one."""
    real = np.asarray(real, dtype=np.float64)
    imag = np.zeros_like(real) if imag is None else np.asarray(imag, dtype=np.float64)
    if blocks < 1:
        raise ValueError("need at least one block")
    if len(real) == 0:
        raise ValueError("empty signal")
    size = -(-len(real) // blocks)
    out = []
    for b in range(blocks):
        r = real[b * size:(b + 1) * size]
        i = imag[b * size:(b + 1) * size]
        n = len(r)
        pr, pi = np.zeros(size), np.zeros(size)
        pr[:n], pi[:n] = r, i
        out.append(SampleBlock(b, pr, pi, n))
    return out


def assemble(results: dict) -> tuple:
    seqs = sorted(results)
    if seqs != list(range(len(seqs))):
        raise ValueError(f"missing blocks: have {seqs}")
    real = np.concatenate([results[s].real for s in seqs])
    imag = np.concatenate([results[s].imag for s in seqs])
    return real, imag


def three_sines(samples: int, blocks: int, bins: Optional[Sequence[int]] = None) -> np.ndarray:
    """Sum of unit sines that are whole-cycle periodic in every block."""
    if bins is None:
        bins = (5, 17, 40) if samples > 80 else (1, 2, 3)
    if any(b <= 0 or 2 * b >= samples for b in bins) or len(set(bins)) != len(bins):
        raise ValueError("bins must be distinct and strictly between 0 and samples/2")
    n = np.arange(samples * blocks)
    return sum(np.sin(2 * np.pi * b * (n % samples) / samples) for b in bins)


# -- nodelets --------------------------------------------------------------------

@dataclass
class DftWorkload:
    real: np.ndarray
    imag: np.ndarray
    blocks: int
    expected_leaves: int
    stats: bool = False
    resend_after_ms: float = 5000.0
    start_at: float = 0.0


class RootNodelet(Nodelet):
    """Splits, distributes round robin, reassembles in sequence order."""

    def __init__(self, work: DftWorkload):
        super().__init__()
        self.work = work
        self.blocks = split_signal(work.real, work.imag, work.blocks)
        self.results: dict = {}
        self.arrival_order: list = []
        self.assignment: dict = {}
        self.sent_at: dict = {}
        self.returned_at: dict = {}
        self.resends = 0
        self.started_at: Optional[float] = None
        self.done_at: Optional[float] = None
        self.refused: Optional[str] = None

    def leaves(self) -> list:
        return [p for p in self.sorted_ports("R_to_L") if p.alive()]

    def distribute(self, now: float) -> bool:
        leaves = self.leaves()
        if not leaves:
            self.refused = "no leaves connected; nothing distributed"
            log.warning(self.refused)
            return False
        self.started_at = now
        for b in self.blocks:
            port = leaves[b.seq % len(leaves)]
            self._send(port, b, now)
        return True

    def _send(self, port, block: SampleBlock, now: float) -> None:
        self.assignment[block.seq] = port.remote
        self.sent_at[block.seq] = now
        self.emit(port, block.encode())

    def on_message(self, port, payload) -> None:
        block = SampleBlock.decode(payload)
        if block.kind == "error":
            log.warning("leaf %s could not process block %d", port.remote, block.seq)
            return
        if block.seq not in self.results:
            self.results[block.seq] = block
            self.arrival_order.append(block.seq)
            self.returned_at[block.seq] = self.context.transport.now

    def on_tick(self, now: float) -> None:
        if self.started_at is None and self.refused is None:
            if now >= self.work.start_at and len(self.leaves()) >= self.work.expected_leaves:
                self.distribute(now)
            return
        if self.done_at is None and len(self.results) == len(self.blocks):
            self.done_at = now
        if self.done_at is not None or self.started_at is None:
            return
        leaves = self.leaves()
        if not leaves:
            return
        names = [p.remote for p in leaves]
        for b in self.blocks:
            if b.seq in self.results or now - self.sent_at[b.seq] <= self.work.resend_after_ms:
                continue
            prev = self.assignment.get(b.seq)
            nxt = (names.index(prev) + 1) % len(leaves) if prev in names else b.seq % len(leaves)
            self.resends += 1
            self._send(leaves[nxt], b, now)

    def output(self) -> tuple:
        return assemble(self.results)


class LeafNodelet(Nodelet):
    """Transforms each incoming block after a simulated compute delay."""

    def __init__(self, compute_cost_ms: float = 0.0):
        super().__init__()
        self.cost = compute_cost_ms
        self.queue: list = []
        self.busy_until = 0.0
        self.processed = 0
        self.failed_seqs: list = []

    def on_message(self, port, payload) -> None:
        now = self.context.transport.now
        start = max(now, self.busy_until)
        self.busy_until = start + self.cost
        self.queue.append((self.busy_until, port, payload))

    def on_tick(self, now: float) -> None:
        while self.queue and self.queue[0][0] <= now:
            _, port, payload = self.queue.pop(0)
            self.emit(port, self.process(payload))

    def process(self, payload: bytes) -> bytes:
        try:
            block = SampleBlock.decode(payload)
        except (ValueError, KeyError, json.JSONDecodeError) as e:
            seq = -1
            try:
                seq = int(json.loads(payload.partition(b"\n")[0])["seq"])
            except Exception:
                pass
            log.warning("dropping undecodable block (seq %s): %s", seq, e)
            self.failed_seqs.append(seq)
            return SampleBlock(max(seq, 0), [], [], 0, "error").encode()
        self.processed += 1
        if self.context is not None and self.context.attributes.get("mode") == "stats":
            m, s = mean_std(block.real[:block.length])
            return SampleBlock(block.seq, [m], [s], block.length, "stats", (m, s)).encode()
        return dft(block, forward=True).encode()


def dft_nodeletset(work: DftWorkload, compute_cost_ms: float = 0.0) -> Nodeletset:
    return Nodeletset({"root": lambda: RootNodelet(work),
                       "leaf": lambda: LeafNodelet(compute_cost_ms)})


@dataclass
class DftResult:
    real: np.ndarray
    imag: np.ndarray
    ref_real: np.ndarray
    ref_imag: np.ndarray
    max_error: float
    assembly_order: list
    completion_ms: Optional[float]
    assignment: dict
    per_block: list = field(default_factory=list)
    stats: list = field(default_factory=list)
    swarm: Optional[Swarm] = None
    refused: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.refused is None and self.max_error <= 1e-9


def serial_reference(real, imag, blocks: int, stats: bool = False) -> tuple:
    parts = split_signal(real, imag, blocks)
    if stats:
        ms = [mean_std(b.real[:b.length]) for b in parts]
        return np.array([m for m, _ in ms]), np.array([s for _, s in ms])
    outs = [dft(b) for b in parts]
    return np.concatenate([o.real for o in outs]), np.concatenate([o.imag for o in outs])


def run_dft_demo(leaves: int = 3, blocks: int = 8, samples: int = 256, stats: bool = False,
                 seed: int = 0, real=None, imag=None, compute_cost_ms: float = 0.0,
                 params: Optional[SimParams] = None, horizon_ms: float = 600_000.0,
                 resend_after_ms: float = 5000.0, swarm: Optional[Swarm] = None) -> DftResult:
    """One root plus ``leaves`` leaves on the simulated transport."""
    if leaves < 0:
        raise ValueError("leaves must be >= 0")
    if real is None:
        real = three_sines(samples, blocks)
    real = np.asarray(real, dtype=np.float64)
    imag = np.zeros_like(real) if imag is None else np.asarray(imag, dtype=np.float64)
    params = params or SimParams(seed=seed)
    sw = swarm or Swarm(params)
    work = DftWorkload(real, imag, blocks, max(leaves, 0), stats, resend_after_ms)
    sw.add_ida("dft", star(), dft_nodeletset(work, compute_cost_ms),
               attributes={"mode": "stats" if stats else "dft"})
    sw.at(0, lambda: sw.join("n0", "dft"))
    for i in range(1, leaves + 1):
        sw.at(i, lambda i=i: sw.join(f"n{i}", "dft"))

    def root() -> Optional[RootNodelet]:
        c = sw.containers.get("n0")
        ctx = c.contexts.get("dft") if c else None
        return ctx.nodelet if ctx and ctx.phase is Phase.RUNNING else None

    while sw.clock < horizon_ms:
        sw.run_for(sw.tick_ms)
        r = root()
        if r is not None and (r.done_at is not None or r.refused is not None):
            break
    r = root()
    ref_r, ref_i = serial_reference(real, imag, blocks, stats)
    if r is None or r.done_at is None:
        refused = r.refused if r is not None else "root never started"
        return DftResult(np.array([]), np.array([]), ref_r, ref_i, float("inf"), [], None,
                         {}, swarm=sw, refused=refused or "incomplete")
    per_block = [{"seq": s, "leaf": r.assignment[s], "sent_ms": r.sent_at[s],
                  "returned_ms": r.returned_at[s]} for s in sorted(r.results)]
    if stats:
        st = [r.results[s].stats for s in sorted(r.results)]
        out_r = np.array([m for m, _ in st])
        out_i = np.array([s for _, s in st])
    else:
        st = []
        out_r, out_i = r.output()
    err = float(max(np.max(np.abs(out_r - ref_r)), np.max(np.abs(out_i - ref_i))))
    return DftResult(out_r, out_i, ref_r, ref_i, err, list(r.arrival_order),
                     r.done_at - r.started_at, dict(r.assignment), per_block, st, sw)


def read_signal(path) -> tuple:
    """Headerless text, one ``real imag`` pair per line."""
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] == 1:
        return data[:, 0], np.zeros(len(data))
    return data[:, 0], data[:, 1]


def write_signal(path, real, imag) -> None:
    np.savetxt(path, np.column_stack([real, imag]), fmt="%.17g")
