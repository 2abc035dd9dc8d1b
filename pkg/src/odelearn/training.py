"""Loss assembly, Adam, learning-rate schedules, and the adaptive trainer.

The training loss, for N episodes of M supervised steps at spacing dt,
integrated with s scheme compositions per data step (h = dt/s):

    Loss = (1/(D N M)) sum_n sum_m || rollout_m(x_n) - x_{n,m} ||_2^2 / (m dt)^2

The adaptive trainer monitors the gap between L and L+1 unrolled
iterations (same normalization) and raises L whenever the loss drops
below c times that gap, so the unrolling error stays under the learning
error. One run is sequential; independent runs can execute in parallel
with no shared state.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .errors import ConfigError, DivergenceError
from .fields import CountingField
from .steppers import (
    Exact,
    FixedPoint,
    NewtonRaphson,
    StepOperator,
    mode_from_config,
)
from .tableaux import get_tableau
from .tape import Tape, gradient


@dataclass(frozen=True)
class LossConfig:
    dt: float
    tableau: object
    mode: object
    m_steps: int = 1
    substeps: int = 1

    def __post_init__(self):
        object.__setattr__(self, "tableau", get_tableau(self.tableau))
        if not isinstance(self.mode, (FixedPoint, NewtonRaphson, Exact)):
            raise ConfigError("mode must be a step mode; see mode_from_config")
        if self.dt <= 0:
            raise ConfigError("data step must be positive")
        if self.m_steps < 1 or self.substeps < 1:
            raise ConfigError("m_steps and substeps must be >= 1")

    @property
    def h(self):
        return self.dt / self.substeps

    def step(self, iterations=None):
        mode = self.mode
        if iterations is not None:
            mode = replace(mode, iterations=iterations)
        return StepOperator(self.tableau, mode, self.h)

    def with_iterations(self, iterations):
        return replace(self, mode=replace(self.mode, iterations=iterations))


@dataclass(frozen=True)
class AdaptiveConfig:
    """Adaptive iteration-count policy: raise L by one whenever
    Loss < c * delta, checked every ``check_every`` epochs."""

    c: float = 1.0
    check_every: int = 10
    l_max: int = 20

    def __post_init__(self):
        if self.c < 0:
            raise ConfigError("gap multiplier c must be >= 0")
        if self.check_every < 1:
            raise ConfigError("check cadence must be >= 1")


def _rollout_sq_sum(field, dataset, config, step):
    """Accumulated sum_n sum_m ||pred - target||^2 / (m dt)^2."""
    episodes = dataset.episodes
    m_steps = config.m_steps
    if dataset.n_steps < m_steps:
        raise ConfigError(
            f"dataset episodes have {dataset.n_steps} steps, config needs "
            f"{m_steps}"
        )
    state = episodes[:, 0, :]
    total = None
    for m in range(1, m_steps + 1):
        for _ in range(config.substeps):
            try:
                state = step(field, state)
            except DivergenceError as exc:
                raise DivergenceError(
                    iteration=exc.iteration,
                    stage=exc.stage,
                    context=f"while advancing horizon step m={m}",
                ) from None
        diff = state - episodes[:, m, :]
        sq = (diff * diff).sum() / (m * config.dt) ** 2
        total = sq if total is None else total + sq
    return total


def unrolled_loss(field, dataset, config, normalize=True):
    """Training loss of a field on an episode dataset.

    Works on any field, including a taped model binding, in which case the
    returned scalar is a tape variable.
    """
    total = _rollout_sq_sum(field, dataset, config, config.step())
    if not normalize:
        return total
    scale = 1.0 / (dataset.dim * dataset.n_episodes * config.m_steps)
    return total * scale


def delta_gap(field, dataset, config, normalize=True):
    """Normalized squared gap between L+1- and L-iteration rollouts."""
    if isinstance(config.mode, Exact):
        raise ConfigError("the iteration gap is undefined for exact mode")
    episodes = dataset.episodes
    step_lo = config.step()
    step_hi = config.step(iterations=config.mode.iterations + 1)
    state_lo = episodes[:, 0, :]
    state_hi = state_lo
    total = 0.0
    for m in range(1, config.m_steps + 1):
        for _ in range(config.substeps):
            state_lo = step_lo(field, state_lo)
            state_hi = step_hi(field, state_hi)
        diff = state_hi - state_lo
        total = total + (diff * diff).sum() / (m * config.dt) ** 2
    if not normalize:
        return float(total)
    return float(total) / (dataset.dim * dataset.n_episodes * config.m_steps)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))


def adam_step(state, params, grads, lr):
    """One bias-corrected Adam update; returns the new parameter vector."""
    if not np.all(np.isfinite(grads)):
        raise DivergenceError(context="non-finite gradient in optimizer step")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def lr_schedule(kind, epoch, total_epochs, lr=0.01, lr_end=1e-4):
    """Learning rate at a given epoch.

    ``constant`` returns ``lr``; ``exp_decay`` interpolates the exponent
    linearly from lr down to lr_end, lr^(1-t) * lr_end^t with
    t = epoch/total_epochs (the defaults give 10^(-2 - 2 epoch/total)).
    """
    if kind == "constant":
        return lr
    if kind == "exp_decay":
        if total_epochs <= 0:
            return lr_end
        t = epoch / total_epochs
        return lr ** (1.0 - t) * lr_end**t
    if kind == "staged":
        # piecewise-constant decade ladder; the trainer restarts the
        # optimizer moments at each stage boundary
        stage = _staged_stage(epoch, total_epochs)
        return lr * (lr_end / lr) ** (stage / (_N_STAGES - 1))
    raise ConfigError(f"unknown learning-rate schedule '{kind}'")


_N_STAGES = 5


def _staged_stage(epoch, total_epochs):
    if total_epochs <= 0:
        return _N_STAGES - 1
    return min(_N_STAGES - 1, (_N_STAGES * epoch) // total_epochs)


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainReport:
    losses: list = dc_field(default_factory=list)
    deltas: dict = dc_field(default_factory=dict)       # epoch -> delta
    l_schedule: list = dc_field(default_factory=list)   # (epoch, L) changes
    l_per_epoch: list = dc_field(default_factory=list)
    eval_counts: list = dc_field(default_factory=list)  # cumulative per epoch
    jacobian_eval_counts: list = dc_field(default_factory=list)
    seconds_per_epoch: list = dc_field(default_factory=list)  # cumulative
    seconds: float = 0.0
    final_loss: float = float("nan")

    @property
    def total_evals(self):
        return self.eval_counts[-1] if self.eval_counts else 0

    def to_dict(self):
        return {
            "losses": self.losses,
            "deltas": {str(k): v for k, v in self.deltas.items()},
            "l_schedule": self.l_schedule,
            "eval_counts": self.eval_counts,
            "jacobian_eval_counts": self.jacobian_eval_counts,
            "seconds": self.seconds,
            "final_loss": self.final_loss,
        }

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,loss,delta,L,eval_count,seconds\n")
            for e, loss in enumerate(self.losses):
                delta = self.deltas.get(e)
                dtxt = repr(delta) if delta is not None else ""
                l = self.l_per_epoch[e]
                ltxt = "" if l is None else str(l)
                sec = self.seconds_per_epoch[e] if self.seconds_per_epoch else ""
                fh.write(
                    f"{e},{loss!r},{dtxt},{ltxt},{self.eval_counts[e]},{sec}\n"
                )


def _locate_divergence(model, dataset, config):
    """Replay episode by episode to name the first diverging episode."""
    step = config.step()
    for n in range(dataset.n_episodes):
        state = dataset.episodes[n : n + 1, 0, :]
        try:
            for m in range(1, config.m_steps + 1):
                for _ in range(config.substeps):
                    state = step(model, state)
        except DivergenceError as exc:
            return n, m, exc
    return None


def train(
    model,
    dataset,
    config,
    epochs,
    schedule=("constant", 0.01),
    adaptive=None,
    epoch_callback=None,
):
    """Full-batch Adam training of a parametric model, optionally with the
    adaptive iteration-count policy. Deterministic for a fixed model state
    and dataset; the model is updated in place and also returned.
    """
    if isinstance(config.mode, Exact) and adaptive is not None:
        raise ConfigError("adaptive iteration control needs an unrolled mode")
    if isinstance(schedule, str):
        schedule = (schedule, 0.01)
    kind, base_lr = schedule[0], schedule[1]
    lr_end = schedule[2] if len(schedule) > 2 else 1e-4
    flat = model.params_flat()
    opt = AdamState.zeros(flat.size)
    report = TrainReport()
    iterations = None if isinstance(config.mode, Exact) else config.mode.iterations
    if adaptive is not None:
        report.l_schedule.append((0, iterations))
    evals = 0
    jac_evals = 0
    start = time.perf_counter()
    for epoch in range(epochs):
        live = config if iterations is None else config.with_iterations(iterations)
        tape = Tape()
        leaves = {k: tape.leaf(v) for k, v in model.unflatten(flat).items()}
        counted = CountingField(model.bind(leaves))
        try:
            loss_var = unrolled_loss(counted, dataset, live)
        except DivergenceError:
            found = _locate_divergence(model, dataset, live)
            if found is not None:
                n, m, exc = found
                raise DivergenceError(
                    iteration=exc.iteration,
                    stage=exc.stage,
                    context=f"episode {n}, horizon m={m} (epoch {epoch})",
                ) from None
            raise
        loss = float(loss_var.value)
        grads = np.concatenate(
            [g.ravel() for g in gradient(loss_var, list(leaves.values()))]
        )
        if (
            kind == "staged"
            and epoch
            and _staged_stage(epoch, epochs) != _staged_stage(epoch - 1, epochs)
        ):
            opt = AdamState.zeros(flat.size)
        lr = lr_schedule(kind, epoch, epochs, lr=base_lr, lr_end=lr_end)
        flat = adam_step(opt, flat, grads, lr)
        model.load_flat(flat)
        evals += counted.evals
        jac_evals += counted.jacobian_evals
        report.losses.append(loss)
        if adaptive is not None and (epoch + 1) % adaptive.check_every == 0:
            probe = CountingField(model)
            delta = delta_gap(probe, dataset, live)
            evals += probe.evals
            jac_evals += probe.jacobian_evals
            report.deltas[epoch] = delta
            if loss < adaptive.c * delta and iterations < adaptive.l_max:
                iterations += 1
                report.l_schedule.append((epoch + 1, iterations))
        report.l_per_epoch.append(iterations)
        report.eval_counts.append(evals)
        report.jacobian_eval_counts.append(jac_evals)
        report.seconds_per_epoch.append(time.perf_counter() - start)
        if epoch_callback is not None:
            epoch_callback(epoch, report)
    report.seconds = time.perf_counter() - start
    report.final_loss = report.losses[-1] if report.losses else float("nan")
    return model, report
