"""Outer training loop: sample states, roll out groups, expand the buffer, update the policy.

One iteration ``t``:

* the coordinator snapshots the buffer and builds the sampling distribution;
* it draws ``rollout_tasks_per_step`` distinct starting states and hands
  them to rollout workers, each slot with its own random stream derived
  from ``(seed, t, slot)``;
* each worker samples ``G`` actions from its policy snapshot, executes them,
  computes shaped rewards and spawns one child state per execution;
* at the join barrier children are appended in slot order, parents get a
  visit at ``t`` and a fresh potential, and the learner takes one GRPO step
  on the ``G x tasks`` samples.

With ``async_learner`` the learner step for iteration ``t`` runs while the
workers of ``t + 1`` already roll out with the previous policy version, so
rollouts are at most one version stale. Both modes are deterministic for a
fixed seed. ``deterministic=False`` lets workers append children directly
from their threads, so insertion order (and therefore rank tie-breaks)
depends on thread timing.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .buffer import ContextState, ErrorClass, ExecFeedback, EvolvingBuffer, HistoryEntry, Kind, new_buffer, transition
from .config import RunConfig, to_ini
from .env import SyntheticTask, dump_suite, execute, expected_reward, make_task_suite, mean_performance, tick_cost
from .grpo import (
    Batch,
    OptimizerState,
    PolicySnapshot,
    ToyPolicy,
    UpdateMetrics,
    advantages,
    context_features,
    log_softmax,
    softmax,
    update,
)
from .metrics import KIND_KEYS, StepMetrics, emit_metrics, smooth
from .potential import update_potential
from .rewards import humanrank, prior_score, shaped_reward
from .sampler import NoEligibleState, build_distribution, sample_batch, uniform_distribution

log = logging.getLogger(__name__)

_SAMPLER_STREAM = 0
_WORKER_STREAM = 1


@dataclass
class SlotResult:
    slot: int
    state_id: str
    kind: Kind
    actions: np.ndarray
    old_logprobs: np.ndarray
    ref_logprobs: np.ndarray
    features: np.ndarray
    rewards: list[float]
    succeeded: list[bool]
    ticks: list[int]
    children: list[ContextState]
    version: int


@dataclass
class RunResult:
    config: RunConfig
    metrics: list[StepMetrics]
    buffer: EvolvingBuffer
    policy: ToyPolicy
    tasks: list[SyntheticTask]
    executions: int = 0
    ticks_total: int = 0
    update_log: list[UpdateMetrics] = field(default_factory=list)

    def eval_curve(self) -> np.ndarray:
        return np.array([m.eval_reward for m in self.metrics])

    def smoothed_eval(self) -> np.ndarray:
        return smooth(self.eval_curve(), self.config.smoothing_window)

    def final_reward(self) -> float:
        """Mean probe reward over the last smoothing window (the run's headline number)."""
        curve = self.eval_curve()
        if curve.size == 0:
            return float("nan")
        return float(curve[-self.config.smoothing_window:].mean())

    def write(self, out_dir: str | os.PathLike) -> dict[str, str]:
        out_dir = os.fspath(out_dir)
        os.makedirs(out_dir, exist_ok=True)
        jpath, cpath = emit_metrics(self.metrics, out_dir)
        paths = {"metrics": jpath, "summary_csv": cpath}
        paths["buffer"] = os.path.join(out_dir, "buffer.jsonl")
        with open(paths["buffer"], "w", encoding="utf-8", newline="\n") as fh:
            self.buffer.dump_jsonl(fh)
        paths["suite"] = os.path.join(out_dir, "suite.jsonl")
        with open(paths["suite"], "w", encoding="utf-8", newline="\n") as fh:
            dump_suite(self.tasks, self.config.effective_suite_seed, fh)
        paths["config"] = os.path.join(out_dir, "config.ini")
        with open(paths["config"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write(to_ini(self.config))
        return paths


# --------------------------------------------------------------------------
# evaluation probe


def probe_states(tasks: list[SyntheticTask], env) -> list[tuple[SyntheticTask, ContextState]]:
    """One Draft, one Debug and one Improve context per task, built deterministically.

    The Improve probe carries the score a mid-quality draft would get without noise.
    """
    out = []
    mid = env.quality_levels[len(env.quality_levels) // 2]
    for task in tasks:
        draft = ContextState(state_id=f"probe:{task.id}:draft", instance=task.instance)
        fail = ExecFeedback(False, ErrorClass.RUNTIME_ERROR, 1)
        debug = ContextState(
            state_id=f"probe:{task.id}:debug",
            instance=task.instance,
            code="probe-fail",
            history=(HistoryEntry("probe-fail", fail, -1.0),),
            kind=Kind.DEBUG,
        )
        perf = min(max(mean_performance(task, draft, mid, env), 0.0), task.ceiling)
        s = min(humanrank(perf, task.leaderboard), 0.99)
        improve = ContextState(
            state_id=f"probe:{task.id}:improve",
            instance=task.instance,
            code="probe-ok",
            history=(HistoryEntry("probe-ok", ExecFeedback.success(), s),),
            kind=Kind.IMPROVE,
        )
        out.extend([(task, draft), (task, debug), (task, improve)])
    return out


class Probe:
    """Expected shaped reward of the current policy over a fixed set of contexts."""

    def __init__(self, tasks, config: RunConfig):
        pairs = probe_states(tasks, config.env)
        k = config.env.n_actions
        self.features = np.array([context_features(x) for _, x in pairs])
        self.table = np.array(
            [[expected_reward(t, x, a, config.env, config.reward) for a in range(k)] for t, x in pairs]
        )
        self.temperature = config.grpo.rollout_temperature

    def __call__(self, params: np.ndarray) -> float:
        p = softmax((self.features @ params.T) / self.temperature)
        return float((p * self.table).sum(axis=1).mean())


# --------------------------------------------------------------------------
# the loop


class Trainer:
    def __init__(self, config: RunConfig, tasks: list[SyntheticTask] | None = None):
        self.config = config.validate()
        self.tasks = tasks if tasks is not None else make_task_suite(config.num_tasks, config.effective_suite_seed)
        self.task_by_id = {t.id: t for t in self.tasks}
        self.buffer = new_buffer([t.instance for t in self.tasks], p_init=config.potential.p_init)
        self.policy = ToyPolicy(config.env.n_actions)
        oc = config.optimizer
        self.opt = OptimizerState.for_policy(
            self.policy,
            learning_rate=oc.learning_rate,
            beta1=oc.beta1,
            beta2=oc.beta2,
            weight_decay=oc.weight_decay,
            grad_clip_norm=oc.grad_clip_norm,
            eps=oc.eps,
        )
        self.probe = Probe(self.tasks, config)
        self.metrics: list[StepMetrics] = []
        self.update_log: list[UpdateMetrics] = []
        self.ticks_total = 0
        self.executions = 0

    # -- rollouts -------------------------------------------------------
    def _stream(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.config.seed, spawn_key=key))

    def rollout(self, t: int, slot: int, state_id: str, snap: PolicySnapshot) -> SlotResult:
        cfg = self.config
        gp = cfg.grpo
        rng = self._stream(_WORKER_STREAM, t, slot)
        x = self.buffer.get(state_id)
        task = self.task_by_id[x.instance.id]
        f = context_features(x)
        z = snap.logits(f)
        probs = softmax(z / gp.rollout_temperature)
        actions = rng.choice(probs.size, size=cfg.group_size, p=probs)
        old_lp = log_softmax(z / gp.logprob_temperature)[actions]
        ref_lp = log_softmax((f @ self.policy.reference_params.T) / gp.logprob_temperature)[actions]
        s_p = prior_score(x)
        rewards, ok, ticks, children = [], [], [], []
        for i, a in enumerate(actions):
            out = execute(task, x, int(a), cfg.env, rng)
            rewards.append(shaped_reward(out.raw_score, s_p, cfg.reward))
            ok.append(out.feedback.succeeded)
            ticks.append(tick_cost(out))
            child_id = f"{t}.{slot}.{i}"
            children.append(
                transition(x, f"y{child_id}:a{int(a)}", out.feedback, out.raw_score, state_id=child_id, p_init=cfg.potential.p_init)
            )
        res = SlotResult(
            slot, state_id, x.kind, actions, old_lp, ref_lp,
            np.repeat(f[None, :], cfg.group_size, axis=0), rewards, ok, ticks, children, snap.version,
        )
        if not cfg.deterministic and cfg.buffer_mode == "evolving":
            self.buffer.extend(children)
        return res

    def _distribution(self, t: int):
        cfg = self.config
        snap = self.buffer.snapshot()
        if cfg.sampler_mode == "uniform":
            return uniform_distribution(snap, t, cfg.schedule)
        return build_distribution(snap, t, cfg.schedule, cfg.cooling, cfg.type_weights)

    def _truncate(self, results: list[SlotResult]) -> tuple[list[SlotResult], int]:
        """Charge ticks in slot order and drop executions past the budget."""
        budget = self.config.execution_budget_ticks
        spent = 0
        kept = []
        for r in results:
            n = 0
            for c in r.ticks:
                if budget is not None and self.ticks_total + spent >= budget:
                    break
                spent += c
                n += 1
            if n == 0:
                break
            if n < len(r.ticks):
                r = SlotResult(
                    r.slot, r.state_id, r.kind, r.actions[:n], r.old_logprobs[:n], r.ref_logprobs[:n],
                    r.features[:n], r.rewards[:n], r.succeeded[:n], r.ticks[:n], r.children[:n], r.version,
                )
            kept.append(r)
        return kept, spent

    def budget_left(self) -> bool:
        b = self.config.execution_budget_ticks
        return b is None or self.ticks_total < b

    # -- main -----------------------------------------------------------
    def run(self) -> RunResult:
        cfg = self.config
        pool = ThreadPoolExecutor(max_workers=cfg.num_workers) if cfg.num_workers > 1 else None
        learner = ThreadPoolExecutor(max_workers=1) if cfg.async_learner else None
        pending: Future | None = None
        pending_step: StepMetrics | None = None
        # async mode: rollouts use the snapshot published at the previous barrier
        next_snap = self.policy.snapshot()
        try:
            for t in range(cfg.total_steps):
                if not self.budget_left():
                    break
                self.buffer.advance(t)
                snap = next_snap if learner is not None else self.policy.snapshot()
                m = StepMetrics(step=t, stage="", buffer_size=len(self.buffer))
                try:
                    dist = self._distribution(t)
                except NoEligibleState as exc:
                    log.info("step %d: %s", t, exc)
                    m.no_eligible = True
                    pending, pending_step = self._finish_pending(pending, pending_step)
                    next_snap = self.policy.snapshot()
                    self._close_step(m, None)
                    continue
                m.stage = dist.stage
                m.support_size = dist.diagnostics["support_size"]
                m.entropy = dist.diagnostics["entropy"]
                m.frontier_mass = dist.diagnostics["frontier_mass"]
                k = min(cfg.rollout_tasks_per_step, int(np.count_nonzero(dist.probs > 0)))
                chosen = sample_batch(dist, k, self._stream(_SAMPLER_STREAM, t))
                jobs = [(t, slot, sid, snap) for slot, sid in enumerate(chosen)]
                if pool is not None:
                    results = list(pool.map(lambda a: self.rollout(*a), jobs))
                else:
                    results = [self.rollout(*a) for a in jobs]
                results, spent = self._truncate(results)
                batch = self._integrate(t, results, m, spent)
                # the previous learner step lands before this batch is consumed
                pending, pending_step = self._finish_pending(pending, pending_step)
                next_snap = self.policy.snapshot()
                if batch is None:
                    self._close_step(m, None)
                    continue
                m.max_staleness = int(self.policy.version - batch.versions.min())
                if learner is not None:
                    pending = learner.submit(update, self.policy, self.opt, batch, cfg.grpo)
                    pending_step = m
                    self.metrics.append(m)
                else:
                    self._close_step(m, update(self.policy, self.opt, batch, cfg.grpo))
            pending, pending_step = self._finish_pending(pending, pending_step)
        finally:
            if pool is not None:
                pool.shutdown()
            if learner is not None:
                learner.shutdown()
        return RunResult(cfg, self.metrics, self.buffer, self.policy, self.tasks, self.executions, self.ticks_total, self.update_log)

    def _finish_pending(self, pending, pending_step):
        if pending is not None:
            um = pending.result()
            self._fill_update(pending_step, um)
        return None, None

    def _fill_update(self, m: StepMetrics, um: UpdateMetrics | None) -> None:
        if um is not None:
            self.update_log.append(um)
            m.loss, m.surrogate, m.kl = um.loss, um.surrogate, um.kl
            m.policy_entropy, m.grad_norm, m.clip_fraction = um.entropy, um.grad_norm, um.clip_fraction
            m.update_aborted = um.aborted
            if um.aborted:
                log.warning("step %d: non-finite gradient, update skipped", m.step)
        m.policy_version = self.policy.version
        m.eval_reward = self.probe(self.policy.params)

    def _close_step(self, m: StepMetrics, um: UpdateMetrics | None) -> None:
        self._fill_update(m, um)
        self.metrics.append(m)

    def _integrate(self, t: int, results: list[SlotResult], m: StepMetrics, spent: int) -> Batch | None:
        cfg = self.config
        groups = []
        by_kind: dict[Kind, list[tuple[bool, float]]] = {k: [] for k in Kind}
        for r in results:
            if cfg.deterministic and cfg.buffer_mode == "evolving":
                self.buffer.extend(r.children)
            self.buffer.record_visit(r.state_id, t)
            by_kind[r.kind].extend(zip(r.succeeded, r.rewards))
            n = len(r.rewards)
            self.executions += n
            if n < 2:
                continue
            update_potential(self.buffer, r.state_id, r.rewards, cfg.potential)
            adv = advantages(r.rewards, cfg.grpo.eps_adv)
            m.degenerate_groups += int(adv.degenerate)
            groups.append(
                Batch(r.features, r.actions, r.old_logprobs, r.ref_logprobs, np.array(adv.advantages), np.full(n, r.version))
            )
        self.ticks_total += spent
        m.ticks, m.ticks_total, m.executions = spent, self.ticks_total, sum(len(r.rewards) for r in results)
        m.buffer_size = len(self.buffer)
        all_rewards = []
        for kind, key in zip(Kind, KIND_KEYS):
            rows = by_kind[kind]
            if rows:
                m.valid_rate[key] = sum(ok for ok, _ in rows) / len(rows)
                m.mean_reward_by_kind[key] = float(np.mean([r for _, r in rows]))
                all_rewards.extend(r for _, r in rows)
        m.mean_reward = float(np.mean(all_rewards)) if all_rewards else None
        return Batch.concat(groups) if groups else None


def run_training(config: RunConfig, tasks: list[SyntheticTask] | None = None) -> RunResult:
    return Trainer(config, tasks).run()
