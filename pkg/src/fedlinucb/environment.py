"""Synthetic problem instances, per-round decision sets, rewards, schedules.

Every random draw is keyed by ``(master_seed, stream_tag, round)`` through a
counter-based generator, so decision sets and noise are pure functions of the
seed and the global round index.  Re-running with a different activation
schedule (but the same round indices) reproduces identical draws, which is
what makes the sequential and episodic runners comparable trace-for-trace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DecisionSet, ProblemInstance

# Stream tags; fixed forever, part of the reproducibility contract.
_STREAMS = {"theta": 0, "arms": 1, "noise": 2, "schedule": 3}

_BIAS_ARM_A = np.array([3.0, 0.0])
_BIAS_ARM_B = np.array([0.0, 1.0 / np.sqrt(10.0)])


def _rng(seed: int, stream: str, t: int = 0) -> np.random.Generator:
    """Fresh generator for one (seed, stream, round) cell."""
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, _STREAMS[stream], t)))


@dataclass(frozen=True, eq=False)
class ArmSpec:
    """Decision-set generator descriptor.

    variant:
        "random-sphere"     K arms i.i.d. uniform in the radius-L ball, fresh
                            per round.
        "hypercube-corners" K arms drawn from the corners {+-L/sqrt(d)}^d,
                            fresh per round.
        "fixed-list"        the same explicit arm list every round.
        "bias-demo-pair"    the fixed two-arm set used by the bias demo.
    """

    variant: str
    K: int
    arms: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.variant not in ("random-sphere", "hypercube-corners", "fixed-list", "bias-demo-pair"):
            raise ValueError(f"unknown arm variant {self.variant!r}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.variant == "fixed-list":
            if self.arms is None:
                raise ValueError("fixed-list requires an explicit arm array")
            object.__setattr__(self, "arms", np.asarray(self.arms, dtype=np.float64))


@dataclass(frozen=True)
class Schedule:
    """Activation sequence: agents[t-1] is the active agent of round t (1-based ids)."""

    M: int
    T: int
    agents: np.ndarray
    descriptor: str

    def __post_init__(self) -> None:
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.T < 0:
            raise ValueError("T must be >= 0")
        agents = np.asarray(self.agents, dtype=np.int64)
        object.__setattr__(self, "agents", agents)
        if agents.shape != (self.T,):
            raise ValueError(f"schedule length {agents.shape} does not match T={self.T}")
        if self.T > 0 and (agents.min() < 1 or agents.max() > self.M):
            raise ValueError("schedule references an agent id outside 1..M")


def gen_instance(
    kind: str,
    d: int | None = None,
    K: int | None = None,
    S: float = 1.0,
    L: float = 1.0,
    R: float = 1.0,
    seed: int = 0,
    arms: np.ndarray | None = None,
    noise: str = "gaussian",
) -> ProblemInstance:
    """Build a problem instance of one of the supported kinds.

    kinds: "random-sphere", "hypercube-corners" (theta_star uniform on the
    radius-S sphere, arms per ArmSpec), "fixed-list" (explicit arms, theta_star
    on the sphere), "bias-demo" (d=2, theta_star = 0, the fixed two-arm set,
    scaled-coin noise).
    """
    if kind == "bias-demo":
        spec = ArmSpec("bias-demo-pair", K=2)
        return ProblemInstance(
            dim=2,
            theta_star=np.zeros(2),
            S=S,
            L=max(L, 3.0),
            R=R,
            arm_spec=spec,
            noise_spec="rademacher-scaled",
            master_seed=seed,
        )
    if kind == "fixed-list":
        if arms is None:
            raise ValueError("fixed-list instance requires an arm array")
        arms = np.asarray(arms, dtype=np.float64)
        if arms.ndim != 2 or arms.shape[0] < 1:
            raise ValueError("fixed-list arms must be a nonempty (K, d) array")
        d = arms.shape[1]
        worst = float(np.linalg.norm(arms, axis=1).max())
        if worst > L * (1.0 + 1e-9):
            raise ValueError(f"fixed arm norm {worst} exceeds L={L}")
        spec = ArmSpec("fixed-list", K=arms.shape[0], arms=arms)
    elif kind in ("random-sphere", "hypercube-corners"):
        if d is None or K is None:
            raise ValueError(f"{kind} requires d and K")
        spec = ArmSpec(kind, K=K)
    else:
        raise ValueError(f"unknown instance kind {kind!r}")

    direction = _rng(seed, "theta").standard_normal(d)
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:  # astronomically unlikely; keep the draw total anyway
        direction = np.ones(d)
        norm = float(np.linalg.norm(direction))
    theta_star = S * direction / norm
    return ProblemInstance(
        dim=d,
        theta_star=theta_star,
        S=S,
        L=L,
        R=R,
        arm_spec=spec,
        noise_spec=noise,
        master_seed=seed,
    )


def sample_decision_set(inst: ProblemInstance, t: int) -> DecisionSet:
    """Decision set of round t; depends only on (master_seed, t)."""
    if t < 1:
        raise ValueError("rounds are 1-based")
    spec: ArmSpec = inst.arm_spec
    if spec.variant == "bias-demo-pair":
        return DecisionSet(np.stack([_BIAS_ARM_A, _BIAS_ARM_B]), norm_bound=inst.L)
    if spec.variant == "fixed-list":
        return DecisionSet(spec.arms, norm_bound=inst.L)
    rng = _rng(inst.master_seed, "arms", t)
    d = inst.dim
    if spec.variant == "random-sphere":
        g = rng.standard_normal((spec.K, d))
        norms = np.linalg.norm(g, axis=1)
        norms[norms == 0.0] = 1.0
        radii = inst.L * rng.random(spec.K) ** (1.0 / d)
        arms = g * (radii / norms)[:, None]
    else:  # hypercube-corners
        signs = rng.integers(0, 2, size=(spec.K, d)) * 2 - 1
        arms = signs * (inst.L / np.sqrt(d))
    return DecisionSet(arms, norm_bound=inst.L)


def sample_reward(inst: ProblemInstance, t: int, x: np.ndarray) -> float:
    """Reward for playing arm x in round t: <x, theta_star> + noise(seed, t).

    The noise draw depends only on (master_seed, t), never on x or on which
    agent plays, so replaying a round reproduces the same disturbance.
    """
    if t < 1:
        raise ValueError("rounds are 1-based")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (inst.dim,):
        raise ValueError(f"arm shape {x.shape} does not match dim {inst.dim}")
    if float(np.linalg.norm(x)) > inst.L * (1.0 + 1e-9):
        raise ValueError("arm norm exceeds L")
    rng = _rng(inst.master_seed, "noise", t)
    if inst.noise_spec == "gaussian":
        eta = inst.R * rng.standard_normal()
    else:  # rademacher-scaled: uniform +-R
        eta = inst.R if rng.random() < 0.5 else -inst.R
    return float(x @ inst.theta_star) + float(eta)


def gen_schedule(
    kind: str,
    M: int,
    T: int,
    seed: int = 0,
    agents: np.ndarray | list[int] | None = None,
) -> Schedule:
    """Activation schedule of one of the supported kinds.

    "round-robin"   1, 2, ..., M, 1, 2, ...
    "iid-uniform"   independent uniform draws over 1..M (own seed stream)
    "block"         agent m owns rounds ((m-1)*T/M, m*T/M]; requires M | T
    "explicit-list" the given sequence, validated
    """
    if kind == "round-robin":
        seq = (np.arange(T, dtype=np.int64) % M) + 1
        desc = f"round-robin(M={M},T={T})"
    elif kind == "iid-uniform":
        rng = _rng(seed, "schedule")
        seq = rng.integers(1, M + 1, size=T, dtype=np.int64)
        desc = f"iid-uniform(M={M},T={T},seed={seed})"
    elif kind == "block":
        if M > 0 and T % M != 0:
            raise ValueError(f"block schedule needs M | T, got M={M}, T={T}")
        seq = np.repeat(np.arange(1, M + 1, dtype=np.int64), T // M if M else 0)
        desc = f"block(M={M},T={T})"
    elif kind == "explicit-list":
        if agents is None:
            raise ValueError("explicit-list schedule requires an agent sequence")
        seq = np.asarray(agents, dtype=np.int64)
        T = len(seq)
        desc = f"explicit-list(M={M},T={T})"
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return Schedule(M=M, T=T, agents=seq, descriptor=desc)


def _read_data_lines(path: str) -> list[list[str]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            rows.append(line.split())
    return rows


def load_schedule_file(path: str, M: int) -> Schedule:
    """Explicit schedule from a plain-text file: one agent id per line.

    Line t (after dropping blanks and ``#`` comments) holds the 1-based id of
    the agent active in round t.
    """
    agents = []
    for lineno, tokens in enumerate(_read_data_lines(path), 1):
        if len(tokens) != 1:
            raise ValueError(f"{path}: schedule line {lineno} must hold a single agent id")
        agents.append(int(tokens[0]))
    return gen_schedule("explicit-list", M=M, T=len(agents), agents=agents)


def load_arms_file(path: str) -> np.ndarray:
    """Fixed arm set from a plain-text file: one arm per line.

    Each line holds d whitespace-separated floats; the same set is served
    every round.  Blank lines and ``#`` comments are ignored.
    """
    rows = _read_data_lines(path)
    if not rows:
        raise ValueError(f"{path}: no arms found")
    width = len(rows[0])
    arms = np.empty((len(rows), width), dtype=np.float64)
    for i, tokens in enumerate(rows):
        if len(tokens) != width:
            raise ValueError(f"{path}: line {i + 1} has {len(tokens)} values, expected {width}")
        arms[i] = [float(tok) for tok in tokens]
    return arms
