"""Agent/server state machine with determinant-triggered synchronization.

States are frozen dataclasses; every update returns fresh objects, so an
agent's synced covariance can safely alias the server's (both are
immutable-after-construction).  Uploads move the agent's local buffers into
the server aggregate; downloads hand the post-update aggregate straight back
to the uploading agent.  One sync therefore costs exactly two communications.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .core import (
    DecisionSet,
    DimensionMismatchError,
    HyperParams,
    SpdMatrix,
    solve_estimate,
    ucb_select,
)

Vector = np.ndarray


@dataclass(frozen=True, eq=False)
class AgentState:
    """One agent: synced statistics (sigma, b, theta_hat) plus unsynced buffers."""

    id: int
    sigma: SpdMatrix
    b: Vector
    sigma_loc: np.ndarray
    b_loc: Vector
    theta_hat: Vector
    last_sync_round: int = 0


@dataclass(frozen=True, eq=False)
class ServerState:
    """Central aggregate: ridge prior plus every uploaded buffer so far."""

    sigma_ser: SpdMatrix
    b_ser: Vector
    upload_count: int = 0


@dataclass(frozen=True, eq=False)
class CommEvent:
    """One upload/download pair. det_before/det_after are the trigger operands."""

    round: int
    agent: int
    det_before: float
    det_after: float
    payload_checksum: str
    payload: tuple[np.ndarray, Vector] | None = None


@dataclass(frozen=True, eq=False)
class RoundRecord:
    """Everything the trace keeps about one round."""

    t: int
    agent: int
    arm_index: int
    arm: Vector
    reward: float
    inst_regret: float
    comm: int  # 0 or 2 communications this round
    det_server: float


def init_agent(agent_id: int, d: int, lam: float) -> AgentState:
    prior = SpdMatrix.from_dense(lam * np.eye(d), min_eig=lam)
    return AgentState(
        id=agent_id,
        sigma=prior,
        b=np.zeros(d),
        sigma_loc=np.zeros((d, d)),
        b_loc=np.zeros(d),
        theta_hat=np.zeros(d),
    )


def init_server(d: int, lam: float) -> ServerState:
    return ServerState(
        sigma_ser=SpdMatrix.from_dense(lam * np.eye(d), min_eig=lam),
        b_ser=np.zeros(d),
    )


def payload_checksum(sigma_loc: np.ndarray, b_loc: Vector) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(sigma_loc, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(b_loc, dtype=np.float64).tobytes())
    return h.hexdigest()


def local_update(a: AgentState, x: np.ndarray, r: float) -> AgentState:
    """Accumulate one observation into the local (unsynced) buffers."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (a.sigma.dim,):
        raise DimensionMismatchError(f"arm shape {x.shape} vs dim {a.sigma.dim}")
    return replace(a, sigma_loc=a.sigma_loc + np.outer(x, x), b_loc=a.b_loc + r * x)


def should_sync(a: AgentState, alpha: float) -> bool:
    """Determinant trigger: det(sigma + sigma_loc) > (1 + alpha) * det(sigma), strict."""
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    candidate = SpdMatrix.from_dense(a.sigma.mat + a.sigma_loc)
    return candidate.det > (1.0 + alpha) * a.sigma.det


def sync(
    a: AgentState, s: ServerState, round_: int, debug: bool = False
) -> tuple[AgentState, ServerState, CommEvent]:
    """Upload the agent's buffers, then download the post-update aggregate.

    Works for an all-zero payload as well (server values unchanged, agent
    re-downloads an identical state); the run loop never produces that case
    because the strict trigger cannot fire on empty buffers.
    """
    det_before = a.sigma.det
    det_after = SpdMatrix.from_dense(a.sigma.mat + a.sigma_loc).det
    new_sigma = SpdMatrix.from_dense(
        s.sigma_ser.mat + a.sigma_loc, min_eig=s.sigma_ser.min_eig
    )
    new_b = s.b_ser + a.b_loc
    event = CommEvent(
        round=round_,
        agent=a.id,
        det_before=det_before,
        det_after=det_after,
        payload_checksum=payload_checksum(a.sigma_loc, a.b_loc),
        payload=(a.sigma_loc.copy(), a.b_loc.copy()) if debug else None,
    )
    server = ServerState(sigma_ser=new_sigma, b_ser=new_b, upload_count=s.upload_count + 1)
    d = a.sigma.dim
    agent = replace(
        a,
        sigma=new_sigma,
        b=new_b,
        sigma_loc=np.zeros((d, d)),
        b_loc=np.zeros(d),
        theta_hat=solve_estimate(new_sigma, new_b),
        last_sync_round=round_,
    )
    return agent, server, event


def step_agent(
    a: AgentState,
    s: ServerState,
    d_set: DecisionSet,
    reward_fn: Callable[[int, np.ndarray], float],
    regret_fn: Callable[[DecisionSet, int], float],
    hp: HyperParams,
    beta: float,
    round_: int,
    debug: bool = False,
) -> tuple[AgentState, ServerState, RoundRecord, CommEvent | None]:
    """One activation: select, observe, buffer, and sync when triggered.

    Lazy mode scores arms with the stored (theta_hat, sigma); eager mode
    recombines (sigma + sigma_loc, b + b_loc) fresh for selection and leaves
    the stored state untouched.  Inactive agents are never touched at all.
    """
    if hp.estimate_mode == "eager":
        stats = SpdMatrix.from_dense(a.sigma.mat + a.sigma_loc)
        theta = solve_estimate(stats, a.b + a.b_loc)
        idx = ucb_select(theta, stats, beta, d_set)
    else:
        idx = ucb_select(a.theta_hat, a.sigma, beta, d_set)
    x = d_set.arms[idx]
    r = reward_fn(round_, x)
    a = local_update(a, x, r)
    event = None
    if should_sync(a, hp.alpha):
        # The strict trigger cannot fire without local data.
        assert np.any(a.sigma_loc != 0.0), "sync triggered on empty buffers"
        a, s, event = sync(a, s, round_, debug=debug)
    record = RoundRecord(
        t=round_,
        agent=a.id,
        arm_index=idx,
        arm=x.copy(),
        reward=r,
        inst_regret=regret_fn(d_set, idx),
        comm=2 if event is not None else 0,
        det_server=s.sigma_ser.det,
    )
    return a, s, record, event
