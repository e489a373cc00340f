"""The Resource model: skills compete for a shared pool of learning resources.

State is the unskill vector u (u_i = 1 - s_i) for the squared-error
variants and the skill vector s for the cross-entropy variant::

    independent_mse:  du_i/dt = -eta * p_i u_i / (sum_j p_j u_j + N0)
    correlated_mse:   du_i/dt = -eta * sum_k C_ik p_k u_k / (sum_j p_j u_j + N0)
    correlated_xent:  ds_i/dt =  eta * sum_k C_ik p_k g(s_k) / (sum_j p_j g(s_j) + N0)

with g(s) = e^-s / (1 + e^-s). Dependency gates multiply the task's own term
in the numerator by B_i (soft AND: prod (1 - u_parent)^gamma; soft OR: max).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .taskdist import TaskDistribution, make_explicit
from .trajectory import Trajectory

Variant = Literal["independent_mse", "correlated_mse", "correlated_xent"]
VARIANTS = ("independent_mse", "correlated_mse", "correlated_xent")

RTOL = 1e-7
ATOL = 1e-9


class DegenerateSystemError(ArithmeticError):
    pass


class StiffnessError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t = {t:.6g})")
        self.t = t


class DegenerateOptimumWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class Gate:
    """Dependency gate on ``task`` (0-based) driven by ``parents`` (0-based)."""

    task: int
    kind: Literal["and", "or"]
    parents: tuple
    gamma: float = 0.01

    def __post_init__(self):
        if self.kind not in ("and", "or"):
            raise ValueError(f"gate kind must be 'and' or 'or', got {self.kind!r}")
        if not self.parents:
            raise ValueError("a gate needs at least one parent")
        if not self.gamma > 0:
            raise ValueError("gate gamma must be > 0")
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))


class GateSet:
    def __init__(self, gates: Sequence[Gate], n_task: int):
        self.n_task = n_task
        self.gates = list(gates)
        seen = set()
        for g in self.gates:
            for idx in (g.task, *g.parents):
                if not 0 <= idx < n_task:
                    raise ValueError(f"gate index {idx} out of range for {n_task} tasks")
            if g.task in seen:
                raise ValueError(f"task {g.task} has more than one gate")
            if g.task in g.parents:
                raise ValueError(f"task {g.task} gates itself")
            seen.add(g.task)
        self._check_acyclic()

    def _check_acyclic(self):
        parents = {g.task: g.parents for g in self.gates}
        state = {}

        def visit(i):
            if state.get(i) == 1:
                raise ValueError(f"dependency graph has a cycle through task {i}")
            if state.get(i) == 2:
                return
            state[i] = 1
            for p in parents.get(i, ()):
                visit(p)
            state[i] = 2

        for i in range(self.n_task):
            visit(i)

    def factors(self, skill: np.ndarray) -> np.ndarray:
        """B_i for every task; ``skill`` is 1 - u, clamped to [0, 1] here."""
        done = np.clip(skill, 0.0, 1.0)
        b = np.ones(self.n_task)
        for g in self.gates:
            vals = done[list(g.parents)] ** g.gamma
            b[g.task] = min(1.0, float(np.prod(vals))) if g.kind == "and" else float(np.max(vals))
        return b

    def to_config(self) -> list:
        return [{"task": g.task + 1, "kind": g.kind, "parents": [p + 1 for p in g.parents],
                 "gamma": g.gamma} for g in self.gates]

    @classmethod
    def from_config(cls, items: list, n_task: int) -> "GateSet":
        """Build from config entries, which use 1-based task numbers."""
        return cls([Gate(int(d["task"]) - 1, d["kind"], tuple(int(p) - 1 for p in d["parents"]),
                         float(d.get("gamma", 0.01))) for d in items], n_task)


@dataclass
class ResourceSystem:
    dist: TaskDistribution
    eta_eff: float = 1.0
    N0: float = 0.0
    variant: Variant = "independent_mse"
    corr: Optional[np.ndarray] = None
    gates: Optional[GateSet] = None
    # piecewise-constant frequency schedule: [(t_start, p), ...], t_start > 0, ascending
    schedule: list = field(default_factory=list)
    initial: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.dist.n_task
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not self.eta_eff > 0:
            raise ValueError("eta_eff must be > 0")
        if self.N0 < 0:
            raise ValueError("N0 must be >= 0")
        if self.corr is not None:
            c = np.asarray(self.corr, dtype=float)
            if c.shape != (n, n):
                raise ValueError(f"correlation matrix must be {n}x{n}")
            if not np.allclose(c, c.T, atol=1e-12) or not np.allclose(np.diag(c), 1.0, atol=1e-9):
                raise ValueError("correlation matrix must be symmetric with unit diagonal")
            self.corr = c
        if self.gates is not None and self.gates.n_task != n:
            raise ValueError("gate set sized for a different number of tasks")
        sched = []
        for t_start, p in self.schedule:
            p = np.asarray(p, dtype=float)
            if p.shape != (n,) or np.any(p <= 0):
                raise ValueError("scheduled frequencies must be positive and match n_task")
            sched.append((float(t_start), p))
        if any(b[0] <= a[0] for a, b in zip(sched, sched[1:])) or (sched and sched[0][0] <= 0):
            raise ValueError("schedule start times must be positive and increasing")
        self.schedule = sched

    @classmethod
    def from_geometry(cls, dist: TaskDistribution, n_dim: int, eta_geo: float, **kw) -> "ResourceSystem":
        """Synchronize with a Geometry run: eta_eff = 2 sqrt(n_dim) eta_geo."""
        return cls(dist, 2.0 * math.sqrt(n_dim) * eta_geo, **kw)

    @property
    def n_task(self) -> int:
        return self.dist.n_task

    @property
    def is_mse(self) -> bool:
        return self.variant != "correlated_xent"

    def initial_state(self) -> np.ndarray:
        if self.initial is not None:
            return np.array(self.initial, dtype=float)
        return np.ones(self.n_task) if self.is_mse else np.zeros(self.n_task)

    def p_at(self, t: float) -> np.ndarray:
        p = self.dist.p
        for t_start, q in self.schedule:
            if t >= t_start:
                p = q
        return p

    def with_N0(self, N0: float) -> "ResourceSystem":
        return ResourceSystem(self.dist, self.eta_eff, N0, self.variant, self.corr, self.gates,
                              list(self.schedule), self.initial)


def sigmoid_bar(s: np.ndarray) -> np.ndarray:
    """e^-s / (1 + e^-s)."""
    return 0.5 * (1.0 - np.tanh(0.5 * s))


def _rhs(sys: ResourceSystem, state: np.ndarray, p: np.ndarray, strict: bool = True) -> np.ndarray:
    if sys.is_mse:
        u = state if strict else np.maximum(state, 0.0)
        drive = p * u
        skill = 1.0 - u
    else:
        drive = p * sigmoid_bar(state)
        skill = state
    denom = drive.sum() + sys.N0
    if not denom > 0:
        if not strict:
            # trial stage past the last completion; the event handler takes over
            return np.zeros_like(state)
        raise DegenerateSystemError("resource denominator is not positive (all tasks done and N0 = 0)")
    own = drive if sys.gates is None else drive * sys.gates.factors(skill)
    if sys.corr is None or sys.variant == "independent_mse":
        num = own
    else:
        num = sys.corr @ drive - drive + own
    sign = -1.0 if sys.is_mse else 1.0
    return sign * sys.eta_eff * num / denom


def rhs(sys: ResourceSystem, state: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Time derivative of the state (du/dt, or ds/dt for the xent variant)."""
    state = np.asarray(state, dtype=float)
    if state.shape != (sys.n_task,):
        raise ValueError(f"state must have length {sys.n_task}")
    return _rhs(sys, state, sys.p_at(t))


def task_losses(sys: ResourceSystem, state: np.ndarray) -> np.ndarray:
    if sys.is_mse:
        return state ** 2
    return np.logaddexp(0.0, -state)


class _Segment:
    """One stretch of integration with a fixed frozen set and fixed p."""

    def __init__(self, sol, frozen):
        self.sol = sol
        self.frozen = frozen


def _solve(sys: ResourceSystem, t_end: float, dt_max: Optional[float], stop_event=None):
    """Integrate to ``t_end``; returns list of (t_lo, t_hi, dense_fn)."""
    if not t_end > 0:
        raise ValueError("t_end must be > 0")
    breaks = [t for t, _ in sys.schedule if t < t_end]
    y = sys.initial_state()
    t = 0.0
    pieces = []
    n = sys.n_task
    max_step = np.inf if dt_max is None else float(dt_max)
    stop_time = None
    frozen = np.zeros(n, dtype=bool)
    if sys.is_mse:
        frozen = y <= 0

    guard = 0
    while t < t_end:
        guard += 1
        if guard > 10 * n + 10 * len(breaks) + 100:
            raise StiffnessError("too many event restarts", t)
        p = sys.p_at(t)
        nxt = min([b for b in breaks if b > t] + [t_end])
        if sys.is_mse:
            y = np.where(frozen, 0.0, y)
            active_drive = (p * y).sum() + sys.N0
            if active_drive <= 0:
                # everything learned with N0 = 0: the state stays put
                pieces.append((t, t_end, _constant(y)))
                break
        frz = frozen.copy()

        def f(_t, yy, frz=frz, p=p):
            d = _rhs(sys, np.where(frz, 0.0, yy), p, strict=False)
            d[frz] = 0.0
            return d

        events = []
        if sys.is_mse:
            for i in np.flatnonzero(~frz):
                ev = (lambda _t, yy, i=i: yy[i])
                ev.terminal = True
                ev.direction = -1
                events.append(ev)
            if sys.variant == "correlated_mse":
                for i in np.flatnonzero(frz):
                    ev = (lambda _t, yy, i=i, frz=frz, p=p: _rhs(sys, np.where(frz, 0.0, yy), p, strict=False)[i])
                    ev.terminal = True
                    ev.direction = 1
                    events.append(ev)
        if stop_event is not None:
            ev = (lambda _t, yy: stop_event(yy))
            ev.terminal = True
            ev.direction = 0
            events.append(ev)

        # a gate (1 - u)^gamma with gamma < 1 is not Lipschitz where the parent starts,
        # and scipy's automatic first step overshoots it; start small instead
        first = min(1e-6 / sys.eta_eff, nxt - t) if sys.gates is not None else None
        sol = solve_ivp(f, (t, nxt), y, method="RK45", rtol=RTOL, atol=ATOL, max_step=max_step,
                        dense_output=True, events=events or None, first_step=first)
        if sol.status == -1:
            raise StiffnessError(f"integration failed: {sol.message}", float(sol.t[-1]))
        t_hit = float(sol.t[-1])
        pieces.append((t, t_hit, sol.sol))
        y = sol.y[:, -1].copy()
        if sol.status == 1:
            k = 0
            hit_stop = False
            if sys.is_mse:
                for i in np.flatnonzero(~frz):
                    if sol.t_events[k].size:
                        frozen[i] = True
                        y[i] = 0.0
                    k += 1
                if sys.variant == "correlated_mse":
                    for i in np.flatnonzero(frz):
                        if sol.t_events[k].size:
                            frozen[i] = False
                        k += 1
            if stop_event is not None and sol.t_events[k].size:
                hit_stop = True
            if hit_stop:
                stop_time = t_hit
                break
            if t_hit <= t:
                # event fired at the segment start; nudge to avoid a zero-length loop
                if sys.variant == "correlated_mse":
                    frozen &= ~_released(sys, y, frozen, p)
        t = t_hit
    return pieces, stop_time


def _released(sys, y, frozen, p):
    d = _rhs(sys, np.where(frozen, 0.0, y), p, strict=False)
    return frozen & (d > 0)


def _constant(y):
    y = y.copy()

    def fn(t):
        t = np.atleast_1d(t)
        return np.repeat(y[:, None], t.size, axis=1)

    return fn


def _evaluate(pieces, grid: np.ndarray, n: int, clamp: bool) -> np.ndarray:
    out = np.empty((grid.size, n))
    todo = np.ones(grid.size, dtype=bool)
    for k, (lo, hi, fn) in enumerate(pieces):
        sel = todo & (grid <= hi) if k < len(pieces) - 1 else todo
        if sel.any():
            out[sel] = np.asarray(fn(np.clip(grid[sel], lo, hi))).reshape(n, -1).T
            todo &= ~sel
    if clamp:
        np.maximum(out, 0.0, out=out)
    return out


def integrate(sys: ResourceSystem, t_end: float, dt_max: Optional[float] = None, n_out: int = 1001,
              t_eval: Optional[np.ndarray] = None, meta: Optional[dict] = None) -> Trajectory:
    """Solve the Resource ODE on [0, t_end] and sample it on a uniform grid.

    Adaptive Dormand-Prince 4(5) (scipy ``RK45``) with rtol 1e-7, atol 1e-9.
    For the squared-error variants a component that reaches u = 0 is held
    there (event detection), so learned skills stay learned.
    """
    pieces, _ = _solve(sys, t_end, dt_max)
    grid = np.linspace(0.0, t_end, n_out) if t_eval is None else np.asarray(t_eval, dtype=float)
    states = _evaluate(pieces, grid, sys.n_task, clamp=sys.is_mse)
    return _to_trajectory(sys, grid, states, meta)


def _to_trajectory(sys, grid, states, meta=None) -> Trajectory:
    losses = task_losses(sys, states)
    skills = 1.0 - states if sys.is_mse else states
    info = {"model": "resource", "variant": sys.variant, "eta_eff": sys.eta_eff, "N0": sys.N0,
            "p": sys.dist.p.tolist()}
    if sys.gates is not None:
        info["gates"] = sys.gates.to_config()
    if meta:
        info.update(meta)
    return Trajectory(grid, skills, losses, losses @ sys.dist.p, None, info)


def time_to_conserved(sys: ResourceSystem, C_target: float, t_max: float) -> Optional[float]:
    """Integration time at which u_1^(1/p_1) first reaches ``C_target``."""
    p1 = sys.dist.p[0]
    target = C_target ** p1
    _, t_stop = _solve(sys, t_max, None, stop_event=lambda y: y[0] - target)
    return t_stop


def conserved_spread(traj: Trajectory, p: np.ndarray, p_min: float = 0.0) -> np.ndarray:
    """max_{i,j} |u_i^(1/p_i) - u_j^(1/p_j)| at each recorded time, over tasks with p >= p_min."""
    keep = p >= p_min
    u = np.clip(1.0 - traj.skills[:, keep], 0.0, None)
    c = u ** (1.0 / p[keep])
    return c.max(axis=1) - c.min(axis=1)


def learning_time(dist: TaskDistribution, eta_eff: float, N0: float, C_target: float):
    """Closed-form time for the conserved quantity to fall from 1 to ``C_target``.

    Returns ``(t_total, t_task, t_waste)``.
    """
    if not 0.0 < C_target < 1.0:
        raise ValueError(f"C_target must lie in (0, 1), got {C_target}")
    p = dist.p
    t_task = (p.size - float(np.sum(C_target ** p))) / eta_eff
    t_waste = -N0 * math.log(C_target) / eta_eff
    return t_task + t_waste, t_task, t_waste


def optimal_lr(dist: TaskDistribution, u: np.ndarray, kappa: float) -> float:
    """Learning rate maximizing eta * S / (S + kappa eta^2), S = sum_j p_j u_j."""
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    S = float(dist.p @ np.asarray(u, dtype=float))
    if S <= 0:
        warnings.warn("all tasks learned: optimal learning rate is zero", DegenerateOptimumWarning)
        return 0.0
    return math.sqrt(S / kappa)


def golden_section(f, lo: float, hi: float, tol: float = 1e-6, max_iter: int = 200):
    """Minimize a unimodal ``f`` on [lo, hi]. Returns (x_min, f(x_min))."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


class CalibrationDataError(ValueError):
    pass


def calibrate_N0(geometry_traj: Trajectory, sys_template: ResourceSystem,
                 fit_window: Optional[tuple] = None, N0_range=(1e-6, 1e3), tol: float = 1e-5):
    """Fit N0 so the Resource total loss tracks ``geometry_traj``'s in log space.

    Golden-section search over log N0. Geometry step k is matched to Resource
    time t = k, so ``sys_template.eta_eff`` must be per-step. Returns
    ``(N0, residual)`` with residual the mean squared log-loss difference.
    """
    steps = np.asarray(geometry_traj.steps, dtype=float)
    lo, hi = fit_window if fit_window is not None else (steps[1] if steps.size > 1 else steps[0], steps[-1])
    mask = (steps >= lo) & (steps <= hi) & (steps > 0)
    if mask.sum() < 2:
        raise CalibrationDataError("fit window holds fewer than two recorded points")
    target = geometry_traj.total_loss[mask]
    if not np.all(np.isfinite(target)) or np.any(target <= 0):
        raise CalibrationDataError("geometry losses in the fit window must be finite and positive")
    t_eval = steps[mask]
    log_target = np.log(target)

    def objective(log_n0):
        traj = integrate(sys_template.with_N0(math.exp(log_n0)), float(t_eval[-1]), t_eval=t_eval)
        model = np.log(np.maximum(traj.total_loss, 1e-300))
        return float(np.mean((model - log_target) ** 2))

    x, resid = golden_section(objective, math.log(N0_range[0]), math.log(N0_range[1]), tol=tol)
    return math.exp(x), resid


@dataclass
class N0Base:
    """Geometry configuration whose fitted N0 is tracked along one axis."""

    n_task: int = 10
    alpha: float = 2.0
    n_dim: int = 1000
    lr: float = 3e-4
    batch_size: int = 128
    noise_sigma: float = 0.0
    n_steps: int = 2000
    record_every: int = 5
    loss_kind: str = "mse"
    dist_kind: str = "powerlaw"
    # the fit stops at the first recorded step whose loss is below this, so the
    # post-learning jitter floor of SignGD does not dominate the objective
    fit_loss_floor: float = 1e-3
    seed: int = 0


def fit_N0_for(base: N0Base, return_trajectories: bool = False):
    """Run Geometry + SignGD for ``base`` and calibrate N0 against it."""
    from .geometry import GeometrySystem, run
    from .optimizers import OptimizerSpec
    from .taskdist import make_exponential, make_powerlaw, make_task_vectors

    if base.dist_kind == "exponential":
        dist = make_exponential(base.n_task, base.alpha)
    else:
        dist = make_powerlaw(base.n_task, base.alpha)
    tv = make_task_vectors(base.n_task, base.n_dim, "orthogonalized", base.seed)
    gsys = GeometrySystem(tv, dist, base.loss_kind, base.noise_sigma, base.batch_size)
    gtraj = run(gsys, OptimizerSpec("signgd", lr=base.lr), base.n_steps, base.record_every,
                seed=base.seed + 1)
    template = ResourceSystem.from_geometry(dist, base.n_dim, base.lr)
    below = np.flatnonzero(gtraj.total_loss < base.fit_loss_floor)
    hi = gtraj.steps[below[0]] if below.size else gtraj.steps[-1]
    hi = max(hi, gtraj.steps[min(3, len(gtraj) - 1)])
    N0, resid = calibrate_N0(gtraj, template, (gtraj.steps[1], hi))
    if return_trajectories:
        rtraj = integrate(template.with_N0(N0), float(gtraj.steps[-1]), t_eval=gtraj.steps.astype(float))
        return N0, resid, gtraj, rtraj
    return N0, resid


def N0_response_curves(axis: str, grid: Sequence, base: Optional[N0Base] = None, workers: int = 1):
    """Fitted N0 along one Geometry hyperparameter.

    ``axis`` is ``lr``, ``noise`` or ``batch`` (``batch`` value 0 = full batch).
    Along ``lr`` the step budget is rescaled by base.lr / lr so every run covers
    the same nominal parameter movement.
    """
    base = base or N0Base()
    if not len(grid):
        raise ValueError("grid must be non-empty")
    cells = []
    for v in grid:
        kw = dict(base.__dict__)
        if axis == "lr":
            kw["lr"] = float(v)
            kw["n_steps"] = int(round(base.n_steps * base.lr / float(v)))
            kw["record_every"] = max(1, int(round(base.record_every * base.lr / float(v))))
        elif axis == "noise":
            kw["noise_sigma"] = float(v)
        elif axis == "batch":
            kw["batch_size"] = int(v)
        else:
            raise ValueError(f"axis must be lr, noise or batch, got {axis!r}")
        cells.append(N0Base(**kw))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            fits = list(ex.map(fit_N0_for, cells))
    else:
        fits = [fit_N0_for(c) for c in cells]
    return [(v, n0, res) for v, (n0, res) in zip(grid, fits)]


# gate exponent for the ordering presets; at 0.01 a gate is already ~0.99 open
# once its parent has moved at all, so it delays onsets but not completions
PRESET_GATE_GAMMA = 20.0


def chain_system(p=(0.2, 0.3, 0.5), gamma: float = PRESET_GATE_GAMMA, N0: float = 0.1,
                 eta_eff: float = 1.0) -> ResourceSystem:
    """AND chain 1 -> 2 -> ... -> n: task k+1 waits for task k."""
    n = len(p)
    gates = GateSet([Gate(k + 1, "and", (k,), gamma) for k in range(n - 1)], n)
    return ResourceSystem(make_explicit(p, ordered=False), eta_eff, N0, gates=gates)


def hierarchy_system(kind: str = "and", gamma: float = PRESET_GATE_GAMMA, N0: float = 0.1,
                     p=(0.2, 0.15, 0.15, 0.02, 0.15, 0.15, 0.18), eta_eff: float = 1.0) -> ResourceSystem:
    """Seven-task tree: leaves 1-4, 5 = AND(1, 2), 6 = g(3, 4), 7 = g(5, 6).

    ``kind`` picks g. With ``or`` the rare leaf 4 no longer holds back 6 and 7.
    """
    if kind not in ("and", "or"):
        raise ValueError(f"kind must be 'and' or 'or', got {kind!r}")
    gates = GateSet([Gate(4, "and", (0, 1), gamma), Gate(5, kind, (2, 3), gamma),
                     Gate(6, kind, (4, 5), gamma)], 7)
    return ResourceSystem(make_explicit(p, normalize=True, ordered=False), eta_eff, N0, gates=gates)


def completion_times(traj: Trajectory, threshold: float = 0.99) -> list:
    """First recorded time each skill exceeds ``threshold`` (None if never)."""
    return [traj.first_crossing(i, skill_above=threshold) for i in range(traj.n_task)]
