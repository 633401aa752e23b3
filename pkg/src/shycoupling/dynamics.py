"""Projected Euler scheme for coupled reflected Brownian motions.

Each step draws independent standard Gaussian vectors for the two drivers,
moves ``X`` by ``sqrt(h) xi_B`` and ``Y`` by ``J^T sqrt(h) xi_B + K^T sqrt(h) xi_C``
(drive matrices evaluated at the left endpoint), projects both raw positions
back onto the closed domain and adds the projection displacement to the
local-time accumulators.

Replica ``k`` of a run with master seed ``s`` draws from its own stream
``SeedSequence(s, spawn_key=(k,))`` in fixed-size blocks, so a replica's path
does not depend on which other replicas are simulated alongside it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import ConvexDomain
from .strategies import Strategy, _rowdot

EPS_COUPLED = "eps-coupled"
HORIZON = "horizon"

NOISE_BLOCK = 1024


@dataclass(frozen=True)
class ParticleState:
    position: np.ndarray
    local_time: float = 0.0
    time: float = 0.0


def step_reflected(domain: ConvexDomain, state: ParticleState, drive_increment, h: float) -> ParticleState:
    """One projected Euler step for a single reflected particle."""
    raw = np.asarray(state.position, dtype=float) + np.asarray(drive_increment, dtype=float)
    new = domain.project(raw)
    return ParticleState(
        position=new,
        local_time=state.local_time + float(np.linalg.norm(raw - new)),
        time=state.time + h,
    )


@dataclass(frozen=True)
class SimConfig:
    x0: tuple
    y0: tuple
    h: float
    horizon: float
    epsilon: float
    seed: int = 0
    record_stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        object.__setattr__(self, "y0", tuple(float(v) for v in self.y0))
        if len(self.x0) != len(self.y0):
            raise ValueError("x0 and y0 must have the same dimension")
        if not (self.h > 0 and self.horizon >= 0 and self.epsilon > 0):
            raise ValueError("need h > 0, horizon >= 0, epsilon > 0")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.horizon / self.h + 1e-9))

    @property
    def eps_tol(self) -> float:
        """Relative overshoot allowance for discrete-time epsilon detection."""
        return 10 * math.sqrt(self.h) / self.epsilon


@dataclass
class CoupledTrajectory:
    """Recorded path of one coupled replica.

    Series are sampled every ``record_stride`` steps; the stopping state is
    always the last row. ``coupling_time`` is the first grid time with
    ``dist <= epsilon``, or None when the run was censored at the horizon.
    """

    t: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    LX: np.ndarray
    LY: np.ndarray
    dist: np.ndarray
    h: float
    seed: int
    replica: int
    strategy: str
    epsilon: float
    stop_reason: str
    coupling_time: float | None
    record_stride: int = 1
    phi: np.ndarray | None = None
    psi: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> np.ndarray:
        return np.rint(self.t / self.h).astype(np.int64)

    def pre_stop(self) -> "CoupledTrajectory":
        """The trajectory truncated before its stopping row when it coupled."""
        if self.stop_reason != EPS_COUPLED or len(self.t) < 2:
            return self
        sl = slice(0, len(self.t) - 1)
        return replace(
            self,
            t=self.t[sl], X=self.X[sl], Y=self.Y[sl], LX=self.LX[sl], LY=self.LY[sl], dist=self.dist[sl],
            phi=None if self.phi is None else self.phi[sl],
            psi=None if self.psi is None else self.psi[sl],
        )


def replica_rng(master_seed: int, replica: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=(int(replica),)))


def _row_norm(a):
    return np.sqrt(_rowdot(a, a))


def simulate_batch(domain: ConvexDomain, strategy: Strategy, config: SimConfig, replicas) -> list[CoupledTrajectory]:
    """Simulate several replicas in lockstep; the result for each replica is
    identical to simulating it alone."""
    replicas = [int(r) for r in replicas]
    m = len(replicas)
    if m == 0:
        return []
    n = len(config.x0)
    if domain.dim != n:
        raise ValueError(f"domain dimension {domain.dim} != state dimension {n}")
    sqrt_h = math.sqrt(config.h)
    n_steps = config.n_steps
    stride = config.record_stride

    X = np.tile(np.asarray(config.x0), (m, 1))
    Y = np.tile(np.asarray(config.y0), (m, 1))
    LX = np.zeros(m)
    LY = np.zeros(m)
    dist = _row_norm(X - Y)
    active = np.arange(m)  # indices into `replicas`
    rngs = [replica_rng(config.seed, r) for r in replicas]

    records = []  # (step, active_idx, X, Y, LX, LY, dist)
    finals = {}

    def finish(mask, step, reason):
        idx = active[mask]
        for j, k in enumerate(idx):
            finals[int(k)] = (step, reason, X[mask][j].copy(), Y[mask][j].copy(), LX[mask][j], LY[mask][j], dist[mask][j])

    coupled = dist <= config.epsilon
    if np.any(coupled):
        finish(coupled, 0, EPS_COUPLED)
    records.append((0, active.copy(), X.copy(), Y.copy(), LX.copy(), LY.copy(), dist.copy()))
    keep = ~coupled
    active, X, Y, LX, LY, dist = active[keep], X[keep], Y[keep], LX[keep], LY[keep], dist[keep]

    buf = None
    for k in range(n_steps):
        if len(active) == 0:
            break
        pos = k % NOISE_BLOCK
        if pos == 0:
            buf = np.empty((m, NOISE_BLOCK, 2, n))
            for i in active:
                buf[i] = rngs[i].standard_normal((NOISE_BLOCK, 2, n))
        xi = buf[active, pos]
        dB = sqrt_h * xi[:, 0, :]
        dC = sqrt_h * xi[:, 1, :]
        t = k * config.h
        dY = strategy.increment(t, X, Y, dB, dC)

        rawX = X + dB
        rawY = Y + dY
        X = domain.project(rawX)
        Y = domain.project(rawY)
        LX = LX + _row_norm(rawX - X)
        LY = LY + _row_norm(rawY - Y)
        dist = _row_norm(X - Y)

        step = k + 1
        coupled = dist <= config.epsilon
        if (step % stride == 0) or np.any(coupled):
            rec = (step, active.copy(), X.copy(), Y.copy(), LX.copy(), LY.copy(), dist.copy())
            if step % stride != 0:
                # only the coupling rows are forced into the record
                rec = tuple([rec[0]] + [a[coupled] for a in rec[1:]])
            records.append(rec)
        if np.any(coupled):
            finish(coupled, step, EPS_COUPLED)
            keep = ~coupled
            active, X, Y, LX, LY, dist = active[keep], X[keep], Y[keep], LX[keep], LY[keep], dist[keep]

    if len(active):
        everything = np.ones(len(active), dtype=bool)
        finish(everything, n_steps, HORIZON)
        if n_steps % stride != 0:
            records.append((n_steps, active.copy(), X.copy(), Y.copy(), LX.copy(), LY.copy(), dist.copy()))

    return _assemble(records, finals, replicas, strategy, config, n)


def _assemble(records, finals, replicas, strategy, config, n):
    steps = np.concatenate([np.full(len(r[1]), r[0], dtype=np.int64) for r in records])
    idx = np.concatenate([r[1] for r in records])
    X = np.concatenate([r[2] for r in records]).reshape(-1, n)
    Y = np.concatenate([r[3] for r in records]).reshape(-1, n)
    LX = np.concatenate([r[4] for r in records])
    LY = np.concatenate([r[5] for r in records])
    dist = np.concatenate([r[6] for r in records])
    order = np.lexsort((steps, idx))
    bounds = np.searchsorted(idx[order], np.arange(len(replicas) + 1))
    out = []
    for i, r in enumerate(replicas):
        sl = order[bounds[i] : bounds[i + 1]]
        final_step, reason = finals[i][0], finals[i][1]
        out.append(
            CoupledTrajectory(
                t=steps[sl] * config.h,
                X=X[sl],
                Y=Y[sl],
                LX=LX[sl],
                LY=LY[sl],
                dist=dist[sl],
                h=config.h,
                seed=config.seed,
                replica=r,
                strategy=strategy.name,
                epsilon=config.epsilon,
                stop_reason=reason,
                coupling_time=final_step * config.h if reason == EPS_COUPLED else None,
                record_stride=config.record_stride,
            )
        )
    return out


def simulate_pair(domain: ConvexDomain, strategy: Strategy, config: SimConfig, replica: int = 0) -> CoupledTrajectory:
    """Simulate one coupled replica (stream ``replica`` of ``config.seed``)."""
    return simulate_batch(domain, strategy, config, [replica])[0]


def simulate_ensemble(domain, strategy, config, replicas: int, first_replica: int = 0, batch_size: int = 1000, threads: int = 1):
    """Replicas ``first_replica .. first_replica + replicas - 1``, in replica order.

    Work is split into batches; with ``threads > 1`` batches run in a process
    pool. Results do not depend on batching or thread count.
    """
    ids = list(range(first_replica, first_replica + replicas))
    chunks = [ids[i : i + batch_size] for i in range(0, len(ids), batch_size)]
    if threads <= 1 or len(chunks) <= 1:
        out = []
        for c in chunks:
            out.extend(simulate_batch(domain, strategy, config, c))
        return out
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(simulate_batch, [domain] * len(chunks), [strategy] * len(chunks), [config] * len(chunks), chunks))
    return [tr for part in parts for tr in part]


# ----------------------------------------------------------------------------- CSV


def _fmt(v):
    return repr(float(v))


def write_trajectory_csv(traj: CoupledTrajectory, path) -> None:
    n = traj.X.shape[1]
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(n)] + ["LX", "LY", "dist"]
    extra = []
    if traj.phi is not None:
        header.append("phi")
        extra.append(traj.phi)
    if traj.psi is not None:
        header.append("psi")
        extra.append(traj.psi)
    ct = "none" if traj.coupling_time is None else _fmt(traj.coupling_time)
    lines = [
        f"# seed={traj.seed}",
        f"# replica={traj.replica}",
        f"# h={_fmt(traj.h)}",
        f"# epsilon={_fmt(traj.epsilon)}",
        f"# strategy={traj.strategy}",
        f"# stop_reason={traj.stop_reason}",
        f"# coupling_time={ct}",
        f"# record_stride={traj.record_stride}",
        ",".join(header),
    ]
    for k in range(len(traj.t)):
        row = [traj.t[k], *traj.X[k], *traj.Y[k], traj.LX[k], traj.LY[k], traj.dist[k]] + [col[k] for col in extra]
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trajectory_csv(path) -> CoupledTrajectory:
    meta = {}
    with open(path) as fh:
        text = fh.read().splitlines()
    body_start = 0
    for body_start, line in enumerate(text):
        if not line.startswith("#"):
            break
        key, _, val = line[1:].strip().partition("=")
        meta[key] = val
    header = text[body_start].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in text[body_start + 1 :] if line], dtype=float)
    data = data.reshape(-1, len(header))
    col = {name: i for i, name in enumerate(header)}
    n = sum(1 for name in header if name.startswith("x"))
    ct = meta.get("coupling_time", "none")
    return CoupledTrajectory(
        t=data[:, col["t"]],
        X=data[:, [col[f"x{i + 1}"] for i in range(n)]],
        Y=data[:, [col[f"y{i + 1}"] for i in range(n)]],
        LX=data[:, col["LX"]],
        LY=data[:, col["LY"]],
        dist=data[:, col["dist"]],
        h=float(meta["h"]),
        seed=int(meta["seed"]),
        replica=int(meta.get("replica", 0)),
        strategy=meta.get("strategy", "unknown"),
        epsilon=float(meta.get("epsilon", "nan")),
        stop_reason=meta.get("stop_reason", HORIZON),
        coupling_time=None if ct == "none" else float(ct),
        record_stride=int(meta.get("record_stride", 1)),
        phi=data[:, col["phi"]] if "phi" in col else None,
        psi=data[:, col["psi"]] if "psi" in col else None,
    )
