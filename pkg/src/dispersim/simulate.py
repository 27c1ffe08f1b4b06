"""Euler-scheme simulation of a whole graph and trajectory I/O.

Each step integrates every arrow's rate with the state frozen at the left
end, draws each group's increments from its step law, and applies all of them
at once.  Replicates are simulated in fixed blocks, each block with its own
stream, so results do not depend on the thread count.

Binary trajectory layout (little-endian)::

    8 bytes   magic b"DSPTRAJ\\0"
    1 byte    format version (1)
    4 x u32   replicates R, times T, vertices V, arrows A
    u32 + n   UTF-8 JSON {"vertices": [...], "arrows": [...]}
    f64[T]    times
    i64[R,T,V] counts
    i64[R,T,A] cumulative arrow flows
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .graph import GraphError, SystemState
from .kernels import DrawStats
from .model import Model, ModelError, n_steps
from .rng import blocks, parallel_map, stream

MAGIC = b"DSPTRAJ\0"
VERSION = 1


@dataclass
class SimulationPlan:
    """Time window, Euler step, recording grid, seed and replicate count."""

    t0: float
    t1: float
    dt: float
    record_times: list | None = None
    seed: int = 0
    replicates: int = 1

    def __post_init__(self):
        self.t0, self.t1, self.dt = float(self.t0), float(self.t1), float(self.dt)
        if not self.dt > 0:
            raise ModelError("dt must be positive")
        if not self.t0 < self.t1:
            raise ModelError("t0 must be before t1")
        if int(self.replicates) < 1:
            raise ModelError("need at least one replicate")
        self.replicates = int(self.replicates)
        self.seed = int(self.seed)
        grid = self.grid()
        if self.record_times is None:
            self._rec = np.arange(grid.size)
        else:
            rt = np.asarray(self.record_times, dtype=float)
            idx = np.searchsorted(grid, rt)
            idx = np.clip(idx, 0, grid.size - 1)
            left = np.clip(idx - 1, 0, grid.size - 1)
            near = np.where(np.abs(grid[left] - rt) < np.abs(grid[idx] - rt), left, idx)
            if np.any(np.abs(grid[near] - rt) > 1e-9 * max(1.0, abs(self.t1))):
                raise ModelError("record_times must lie on the Euler grid t0 + k dt")
            if np.any(np.diff(near) <= 0):
                raise ModelError("record_times must be strictly increasing")
            self._rec = near

    def grid(self) -> np.ndarray:
        n = n_steps(self.t0, self.t1, self.dt)
        g = self.t0 + np.arange(n + 1) * self.dt
        g[-1] = self.t1
        return g

    @property
    def record_index(self) -> np.ndarray:
        return self._rec

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimulationPlan":
        return cls(d["t0"], d["t1"], d["dt"], d.get("record_times"), d.get("seed", 0), d.get("replicates", 1))

    def to_dict(self) -> dict:
        return {"t0": self.t0, "t1": self.t1, "dt": self.dt,
                "record_times": None if self.record_times is None else [float(t) for t in self.record_times],
                "seed": self.seed, "replicates": self.replicates}


@dataclass
class Trajectory:
    """Recorded counts and cumulative flows, ``(replicate, time, ...)``."""

    times: np.ndarray
    counts: np.ndarray
    flows: np.ndarray
    vertices: tuple
    arrows: tuple
    clamped: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def increments(self) -> np.ndarray:
        """Arrow counts over each recording interval, ``(R, T - 1, A)``."""
        return np.diff(self.flows, axis=1)

    def vertex(self, v):
        return self.counts[..., self.vertices.index(v)]

    def flow(self, a):
        return self.flows[..., self.arrows.index(a)]

    def balance_ok(self, incidence: np.ndarray) -> bool:
        c0 = self.counts[:, :1, :]
        return bool(np.array_equal(self.counts, c0 + self.flows @ incidence))

    # -- CSV --------------------------------------------------------------
    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "time", *self.vertices, *self.arrows])
            for r in range(self.counts.shape[0]):
                for i, t in enumerate(self.times):
                    w.writerow([r, repr(float(t)), *self.counts[r, i].tolist(), *self.flows[r, i].tolist()])

    @classmethod
    def from_csv(cls, path, n_vertices: int) -> "Trajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], np.array(rows[1:], dtype=object)
        V = n_vertices
        vertices, arrows = tuple(head[2:2 + V]), tuple(head[2 + V:])
        reps = body[:, 0].astype(int)
        R = reps.max() + 1
        T = body.shape[0] // R
        times = body[:T, 1].astype(float)
        vals = body[:, 2:].astype(np.int64).reshape(R, T, -1)
        return cls(times, vals[..., :V], vals[..., V:], vertices, arrows)

    # -- binary -----------------------------------------------------------
    def to_bytes(self) -> bytes:
        R, T, V = self.counts.shape
        A = self.flows.shape[2]
        names = json.dumps({"vertices": list(self.vertices), "arrows": list(self.arrows)}).encode()
        parts = [MAGIC, bytes([VERSION]), struct.pack("<IIII", R, T, V, A),
                 struct.pack("<I", len(names)), names,
                 np.asarray(self.times, dtype="<f8").tobytes(),
                 np.asarray(self.counts, dtype="<i8").tobytes(),
                 np.asarray(self.flows, dtype="<i8").tobytes()]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Trajectory":
        if buf[:8] != MAGIC:
            raise ValueError("not a trajectory file (bad magic)")
        if buf[8] != VERSION:
            raise ValueError(f"unsupported trajectory format version {buf[8]}")
        R, T, V, A = struct.unpack_from("<IIII", buf, 9)
        (n,) = struct.unpack_from("<I", buf, 25)
        off = 29
        names = json.loads(buf[off:off + n].decode())
        off += n
        times = np.frombuffer(buf, "<f8", T, off).astype(float)
        off += 8 * T
        counts = np.frombuffer(buf, "<i8", R * T * V, off).reshape(R, T, V).astype(np.int64)
        off += 8 * R * T * V
        flows = np.frombuffer(buf, "<i8", R * T * A, off).reshape(R, T, A).astype(np.int64)
        return cls(times, counts, flows, tuple(names["vertices"]), tuple(names["arrows"]))

    def save(self, path) -> None:
        path = str(path)
        if path.endswith(".csv"):
            self.to_csv(path)
        else:
            with open(path, "wb") as fh:
                fh.write(self.to_bytes())


def initial_counts(model: Model, init, replicates: int) -> np.ndarray:
    g = model.graph
    if isinstance(init, SystemState):
        x = np.asarray(init.counts, dtype=np.int64)
    elif isinstance(init, Mapping):
        x = SystemState.initial(g, init).counts
    else:
        x = np.asarray(init, dtype=np.int64)
    if x.shape[-1] != g.n_vertices:
        raise GraphError(f"initial state has {x.shape[-1]} counts for {g.n_vertices} vertices")
    if np.any(x < 0):
        raise GraphError("initial counts must be nonnegative")
    return np.broadcast_to(x, (replicates, g.n_vertices)).copy()


def simulate(model: Model, init, plan: SimulationPlan, params: Mapping | None = None,
             threads: int | None = None) -> Trajectory:
    """Simulate ``plan.replicates`` independent trajectories.

    Parameters
    ----------
    model : Model
    init : SystemState, mapping vertex -> count, or array ``(V,)``/``(R, V)``
    plan : SimulationPlan
    params : mapping, optional
        Overrides for the model's parameter values.
    threads : int, optional
        Worker threads; the output does not depend on it.
    """
    x0 = initial_counts(model, init, plan.replicates)
    pars = model.merged_params(params)
    grid = plan.grid()
    rec = plan.record_index
    is_rec = np.zeros(grid.size, dtype=bool)
    is_rec[rec] = True
    A = model.graph.n_arrows

    def run(block):
        b, lo, hi = block
        rng = stream(plan.seed, b)
        stats = DrawStats()
        counts = x0[lo:hi].copy()
        flows = np.zeros((hi - lo, A), dtype=np.int64)
        out_c = np.empty((hi - lo, rec.size, counts.shape[1]), dtype=np.int64)
        out_f = np.empty((hi - lo, rec.size, A), dtype=np.int64)
        j = 0
        if is_rec[0]:
            out_c[:, 0], out_f[:, 0] = counts, flows
            j = 1
        for i in range(grid.size - 1):
            counts, d = model.step(grid[i], grid[i + 1] - grid[i], counts, pars, rng, stats)
            flows += d
            if is_rec[i + 1]:
                out_c[:, j], out_f[:, j] = counts, flows
                j += 1
        return out_c, out_f, stats.clamped

    parts = parallel_map(run, blocks(plan.replicates), threads)
    counts = np.concatenate([p[0] for p in parts])
    flows = np.concatenate([p[1] for p in parts])
    return Trajectory(grid[rec], counts, flows, model.graph.vertices, model.graph.arrow_ids,
                      clamped=sum(p[2] for p in parts), meta={"seed": plan.seed})
