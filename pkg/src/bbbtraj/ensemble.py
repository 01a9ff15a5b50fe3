"""Shared machinery for stochastic jump ensembles on a labelled graph."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _backend, rng

log = logging.getLogger(__name__)

MAX_STEP_PROB = 0.1


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """One realization: the starting label and every jump, as (t, label) samples."""

    seed: int
    traj_id: int
    times: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        labels = np.asarray(self.labels)
        if times.shape != labels.shape:
            raise ValueError("times and labels must align")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "labels", labels)

    @property
    def samples(self) -> list:
        return list(zip(self.times.tolist(), self.labels.tolist()))

    def label_at(self, t: float):
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        if i < 0:
            raise ValueError(f"time {t} precedes the trajectory start")
        return self.labels[i]


class JumpTable:
    """Outgoing jump slots per label, ordered by target label.

    Link l joins la[l] < lb[l]. Slot kind 0 moves lb -> la (rate T_{la,lb});
    kind 1 moves la -> lb (rate T_{lb,la}).
    """

    def __init__(self, dim: int, la, lb):
        la = np.asarray(la, dtype=np.int64)
        lb = np.asarray(lb, dtype=np.int64)
        nl = la.size
        src = np.concatenate([lb, la])
        tgt = np.concatenate([la, lb])
        link = np.concatenate([np.arange(nl), np.arange(nl)])
        kind = np.concatenate([np.zeros(nl, np.int64), np.ones(nl, np.int64)])
        order = np.lexsort((tgt, src))
        src, tgt, link, kind = src[order], tgt[order], link[order], kind[order]
        self.dim = int(dim)
        self.deg = np.bincount(src, minlength=dim).astype(np.int64)
        width = max(int(self.deg.max(initial=0)), 1)
        start = np.concatenate([[0], np.cumsum(self.deg)[:-1]])
        col = np.arange(src.size) - start[src]
        self.targets = np.tile(np.arange(dim, dtype=np.int64)[:, None], (1, width))
        self.targets[src, col] = tgt
        self._slot = -np.ones((dim, width), dtype=np.int64)
        self._slot[src, col] = link + nl * kind
        self._pad = self._slot < 0
        self.n_links = nl

    def cumulative(self, p_ab, p_ba) -> np.ndarray:
        probs = np.concatenate([p_ab, p_ba, [0.0]])
        cum = np.cumsum(probs[self._slot], axis=1)
        cum[self._pad] = np.inf
        return np.ascontiguousarray(cum)

    def exit_probability(self, p_ab, p_ba) -> np.ndarray:
        probs = np.concatenate([p_ab, p_ba, [0.0]])
        return probs[self._slot].sum(axis=1)


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Occupancy time series and compact jump log of a trajectory ensemble."""

    seed: int
    M: int
    dt: float
    t0: float
    times: np.ndarray
    occupancy: np.ndarray
    expected: np.ndarray
    initial_labels: np.ndarray
    final_labels: np.ndarray
    event_step: np.ndarray
    event_traj: np.ndarray
    event_label: np.ndarray
    cap_events: int = 0
    floor_events: int = 0
    backend: str = ""

    def trajectory(self, i: int) -> TrajectoryRecord:
        sel = self.event_traj == i
        steps = self.event_step[sel]
        times = np.concatenate([[self.t0], self.t0 + steps * self.dt])
        labels = np.concatenate([[self.initial_labels[i]], self.event_label[sel]])
        return TrajectoryRecord(self.seed, int(i), times, labels)

    def sup_error(self) -> float:
        return float(np.abs(self.occupancy - self.expected).max())

    def sigma(self) -> np.ndarray:
        """Multinomial standard deviation per entry, floored at one count."""
        p = self.expected
        return np.sqrt(np.maximum(p * (1.0 - p), 1.0 / self.M) / self.M)

    def zscores(self) -> np.ndarray:
        return (self.occupancy - self.expected) / self.sigma()


def cap_exit(table: JumpTable, la, lb, p_ab, p_ba, limit: float = MAX_STEP_PROB):
    """Scale down the jump probabilities of labels whose total exit probability exceeds ``limit``.

    Returns (p_ab, p_ba, number of capped labels).
    """
    exit_p = table.exit_probability(p_ab, p_ba)
    over = exit_p > limit
    if not np.any(over):
        return p_ab, p_ba, 0
    f = np.ones(exit_p.size)
    f[over] = limit / exit_p[over]
    return p_ab * f[lb], p_ba * f[la], int(over.sum())


def sample_initial(P0, M: int, seed: int) -> np.ndarray:
    """Labels drawn from P0 with one uniform per trajectory (inverse CDF)."""
    P0 = np.asarray(P0, dtype=float)
    cdf = np.cumsum(P0)
    cdf /= cdf[-1]
    u = rng.uniforms(seed, 0, M, purpose=rng.INITIAL)
    return np.minimum(np.searchsorted(cdf, u, side="right"), P0.size - 1).astype(np.int64)


def sample_steps(steps: int, n_samples: int) -> np.ndarray:
    n_samples = max(1, min(int(n_samples), steps))
    return np.unique(np.round(np.linspace(0, steps, n_samples + 1)[1:]).astype(np.int64))


StepFn = Callable[[int], tuple]


def run_jumps(table: JumpTable, n0, steps: int, dt: float, t0: float, seed: int,
              stepper: StepFn, n_samples: int = 20, kernels=None) -> dict:
    """Drive M trajectories through ``steps`` jump draws.

    ``stepper(s)`` returns (p_ab, p_ba, P_after): jump probabilities per link for
    step s and the co-evolved probabilities at the end of the step.
    """
    kern = kernels or _backend.kernels
    x = np.array(n0, dtype=np.int64, copy=True)
    M = x.size
    changed = np.empty(M, dtype=np.int64)
    rec = set(sample_steps(steps, n_samples).tolist())
    times, occ, expected = [], [], []
    ev_s, ev_i, ev_l = [], [], []
    for s in range(steps):
        p_ab, p_ba, P_after = stepper(s)
        cum = table.cumulative(p_ab, p_ba)
        u = rng.uniforms(seed, s, M, purpose=rng.JUMP)
        k = kern.sample_jumps(x, u, table.targets, cum, table.deg, changed)
        if k:
            idx = changed[:k].copy()
            ev_s.append(np.full(k, s + 1, dtype=np.int64))
            ev_i.append(idx)
            ev_l.append(x[idx].copy())
        if s + 1 in rec:
            times.append(t0 + (s + 1) * dt)
            occ.append(np.bincount(x, minlength=table.dim) / M)
            expected.append(np.array(P_after, dtype=float))
    cat = (lambda parts: np.concatenate(parts) if parts else np.empty(0, dtype=np.int64))
    return dict(
        times=np.array(times), occupancy=np.array(occ), expected=np.array(expected),
        final_labels=x, event_step=cat(ev_s), event_traj=cat(ev_i), event_label=cat(ev_l),
        backend=_backend.name_of(kern),
    )
