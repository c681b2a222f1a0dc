"""Losses, n-step returns, the shared parameter store, and the worker loop.

Four training variants share one code path: the base actor-critic loss runs
on every worker each segment; the terminal-progress term is submitted once
per episode over the whole state sequence; the planner-imitation term only
exists on the demonstrator worker, whose actions come from tree search while
its policy head is still evaluated on every observation.
"""

from __future__ import annotations

import logging
import random
import threading
from dataclasses import dataclass

import numpy as np

from . import env as envmod
from . import mcts, nn, opponents
from .errors import ConfigError

log = logging.getLogger(__name__)

VARIANTS = ("A3C", "A3C-TP", "PI-A3C", "PI-A3C-TP")
PROB_FLOOR = 1e-8   # probability clamp before any log
ENTROPY_FLOOR = 1e-12

OUTCOME_TAGS = ("win", "win_opponent_suicide", "loss_suicide", "loss_killed",
                "draw")


def variant_uses_tp(variant):
    return variant in ("A3C-TP", "PI-A3C-TP")


def variant_uses_pi(variant):
    return variant in ("PI-A3C", "PI-A3C-TP")


@dataclass
class LossWeights:
    w_policy: float = 1.0
    w_value: float = 0.5
    w_entropy: float = 0.01
    lambda_tp: float = 1.0
    lambda_pi: float = 0.0   # set to 1.0 on the demonstrator worker
    gamma: float = 0.999
    t_max: int = 20


@dataclass
class StepRecord:
    features: np.ndarray      # (28, S, S) float32
    action: int
    reward: float             # 0 until the terminal step
    value: float
    policy: np.ndarray        # (6,) probabilities at play time
    terminal_pred: float
    demo_action: int | None = None   # planner action, demonstrator worker only


@dataclass
class TransitionSegment:
    records: list
    bootstrap_value: float    # V of the state after the last record; 0 at terminal
    terminal: bool

    def __post_init__(self):
        if not self.records:
            raise ConfigError("segment must hold at least one step")
        if self.terminal and self.bootstrap_value != 0.0:
            raise ConfigError("terminal segment must bootstrap from 0")


@dataclass
class EpisodeRecord:
    """Per-episode summary emitted by workers (one CSV row after tagging)."""
    wall_ms: int
    worker_id: int
    episode_index: int
    variant: str
    reward: int
    length: int
    events: tuple
    timed_out: bool
    demonstrator: bool
    tp_loss_mean: float
    pi_loss_mean: float


class Diagnostics:
    """Thread-safe counters for soft anomalies (clamped probs, short episodes)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = {}

    def bump(self, key, n=1):
        if n:
            with self._lock:
                self._counts[key] = self._counts.get(key, 0) + n

    def snapshot(self):
        with self._lock:
            return dict(self._counts)


DIAGNOSTICS = Diagnostics()


def n_step_advantages(segment, gamma):
    """Discounted n-step returns and advantages for one segment.

    R_t sums gamma^k r_{t+k} over the remaining segment plus the discounted
    bootstrap value; A_t = R_t - V(s_t).
    """
    records = segment.records
    n = len(records)
    returns = np.empty(n, dtype=np.float64)
    acc = float(segment.bootstrap_value)
    for t in range(n - 1, -1, -1):
        acc = records[t].reward + gamma * acc
        returns[t] = acc
    values = np.array([r.value for r in records], dtype=np.float64)
    return returns, returns - values


def a3c_loss(segment, outputs, weights):
    """Policy-gradient + value + entropy loss over one segment.

    outputs holds the batched network heads for the segment's states (policy
    (T,6), value (T,), terminal_pred (T,)). The advantage is a constant
    coefficient in the policy term. Returns (loss, (gp, gv, gt), info) where
    the head gradients feed nn.backward and gt is all zero here.
    """
    records = segment.records
    n = len(records)
    probs = np.asarray(outputs.policy, dtype=np.float64).reshape(n, 6)
    values = np.asarray(outputs.value, dtype=np.float64).reshape(n)
    actions = np.array([r.action for r in records], dtype=np.intp)
    returns, _ = n_step_advantages(segment, weights.gamma)
    adv = returns - values

    taken = probs[np.arange(n), actions]
    clamped = int((taken < PROB_FLOOR).sum())
    safe_taken = np.maximum(taken, PROB_FLOOR)
    loss_pi = -float(np.log(safe_taken) @ adv)
    loss_v = float(((returns - values) ** 2).sum())
    logp = np.log(np.maximum(probs, ENTROPY_FLOOR))
    entropy = -(probs * logp).sum(axis=1)
    loss = (weights.w_policy * loss_pi + weights.w_value * loss_v
            - weights.w_entropy * float(entropy.sum()))

    gp = np.zeros((n, 6), dtype=np.float64)
    live = taken >= PROB_FLOOR
    gp[np.arange(n)[live], actions[live]] = \
        -weights.w_policy * adv[live] / taken[live]
    # d(-w_e * H)/dpi = w_e * (log pi + 1)
    gp += weights.w_entropy * (logp + np.where(probs >= ENTROPY_FLOOR, 1.0, 0.0))
    gv = weights.w_value * 2.0 * (values - returns)
    gt = np.zeros(n, dtype=np.float64)
    if clamped:
        DIAGNOSTICS.bump("policy_prob_clamped", clamped)
    return loss, (gp, gv, gt), {"clamped": clamped,
                                "entropy_mean": float(entropy.mean())}


def tp_targets(n_states):
    """Linear 0..1 progress targets over the episode's recorded states."""
    if n_states < 2:
        DIAGNOSTICS.bump("single_state_episode")
        return np.array([1.0])
    return np.arange(n_states, dtype=np.float64) / (n_states - 1)


def tp_loss(predictions, targets):
    """Mean squared error of the terminal-progress head over an episode."""
    preds = np.asarray(predictions, dtype=np.float64).reshape(-1)
    targs = np.asarray(targets, dtype=np.float64).reshape(-1)
    if preds.shape != targs.shape:
        raise ConfigError(f"tp_loss length mismatch: {preds.shape} vs {targs.shape}")
    n = preds.size
    diff = preds - targs
    loss = float((diff ** 2).mean())
    return loss, 2.0 * diff / n


def pi_loss(demo_actions, policy_probs):
    """Mean cross-entropy between planner one-hot actions and the policy head."""
    probs = np.asarray(policy_probs, dtype=np.float64).reshape(-1, 6)
    acts = np.asarray(demo_actions, dtype=np.intp).reshape(-1)
    if probs.shape[0] != acts.shape[0]:
        raise ConfigError("pi_loss length mismatch")
    n = acts.size
    taken = probs[np.arange(n), acts]
    clamped = int((taken < PROB_FLOOR).sum())
    if clamped:
        DIAGNOSTICS.bump("pi_prob_clamped", clamped)
    safe = np.maximum(taken, PROB_FLOOR)
    loss = -float(np.log(safe).sum()) / n
    gp = np.zeros((n, 6), dtype=np.float64)
    live = taken >= PROB_FLOOR
    gp[np.arange(n)[live], acts[live]] = -1.0 / (n * taken[live])
    return loss, gp


def combined_loss(segment, outputs, weights, demo_actions=None):
    """Segment loss for any variant: base actor-critic plus the planner
    imitation term when demonstrator data is present.

    The terminal-progress term is deliberately absent here; it needs full
    episode targets and is submitted separately at episode end (see
    tp_episode_grads). Passing demo_actions with lambda_pi == 0 is a
    configuration error: plain workers never produce planner data.
    """
    loss, (gp, gv, gt), info = a3c_loss(segment, outputs, weights)
    if demo_actions is not None:
        if weights.lambda_pi <= 0:
            raise ConfigError("planner-imitation data on a non-demonstrator worker")
        pl, pgp = pi_loss(demo_actions, outputs.policy)
        loss += weights.lambda_pi * pl
        gp = gp + weights.lambda_pi * pgp
        info["pi_loss"] = pl
    return loss, (gp, gv, gt), info


def tp_episode_grads(outputs, targets, weights):
    """Head gradients for the episode-end terminal-progress submission."""
    preds = np.asarray(outputs.terminal_pred, dtype=np.float64).reshape(-1)
    loss, gt = tp_loss(preds, targets)
    n = preds.size
    gp = np.zeros((n, 6), dtype=np.float64)
    gv = np.zeros(n, dtype=np.float64)
    return loss, (gp, gv, weights.lambda_tp * gt)


class ParamStore:
    """Lock-serialized global parameters: snapshot() and submit(grads).

    Both operations are linearizable; each accepted submission applies one
    Adam step and bumps the version by exactly 1.
    """

    def __init__(self, params, adam, clip_norm=40.0):
        self._lock = threading.Lock()
        self._params = params
        self._adam = adam
        self.clip_norm = clip_norm
        self.submitted = 0
        self.rejected = 0
        self.clipped = 0

    @property
    def version(self):
        with self._lock:
            return self._params.version

    def snapshot(self):
        with self._lock:
            return self._params.copy(), self._params.version

    def state(self):
        """Consistent copies of params and optimizer state (for checkpoints)."""
        with self._lock:
            return self._params.copy(), self._adam.copy_for(self._params)

    def submit(self, grads):
        with self._lock:
            if self.clip_norm:
                sq = 0.0
                for g in grads.values():
                    sq += float((g * g).sum())
                norm = np.sqrt(sq)
                if np.isfinite(norm) and norm > self.clip_norm:
                    scale = self.clip_norm / norm
                    grads = {k: g * scale for k, g in grads.items()}
                    self.clipped += 1
            applied = nn.adam_apply(self._params, self._adam, grads)
            if applied:
                self.submitted += 1
            else:
                self.rejected += 1
                DIAGNOSTICS.bump("nonfinite_update_rejected")
            return applied


class EpisodeCounter:
    """Hands out global episode indices until the budget runs dry."""

    def __init__(self, budget):
        self.budget = budget
        self._lock = threading.Lock()
        self._next = 0

    def claim(self):
        with self._lock:
            if self._next >= self.budget:
                return None
            idx = self._next
            self._next += 1
            return idx


def _sample_action(policy, rng):
    p = np.asarray(policy, dtype=np.float64)
    p = np.maximum(p, 0.0)
    p /= p.sum()
    return int(np.searchsorted(np.cumsum(p), rng.random(), side="right").clip(0, 5))


def episode_seed(run_seed, worker_id, episode_index):
    ss = np.random.SeedSequence([run_seed, worker_id, episode_index])
    return int(ss.generate_state(1)[0])


def worker_loop(worker_id, variant, store, cfg, stop_signal, sink,
                counter, demonstrator=False, clock=None):
    """One training worker: play, accumulate segments, push gradients.

    Repeats until the stop signal or episode budget: snapshot global params,
    act for up to t_max steps (sampling the policy head, or searching on the
    demonstrator), compute the combined loss gradients, submit them, then
    resynchronize. Terminal-progress gradients go out once per episode over
    the buffered feature stacks, evaluated against the freshly synchronized
    snapshot. Each finished episode emits an EpisodeRecord through sink.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    weights = LossWeights(w_policy=cfg.w_policy, w_value=cfg.w_value,
                          w_entropy=cfg.w_entropy, lambda_tp=cfg.lambda_tp,
                          lambda_pi=1.0 if demonstrator else 0.0,
                          gamma=cfg.gamma, t_max=cfg.t_max)
    use_tp = variant_uses_tp(variant)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, worker_id]))
    search_rng = random.Random((cfg.seed << 20) ^ (worker_id * 0x9E3779B1))
    opponent = opponents.make_opponent(cfg.opponent, seed=cfg.seed * 131 + worker_id,
                                       board_size=cfg.board_size)
    search_cfg = mcts.SearchConfig(rollouts_per_move=cfg.rollouts,
                                   rollout_depth=cfg.rollout_depth,
                                   exploration_c=cfg.ucb_c)
    local, _ = store.snapshot()
    if clock is None:
        clock = lambda: 0

    while not stop_signal.is_set():
        ep_idx = counter.claim()
        if ep_idx is None:
            break
        seed = episode_seed(cfg.seed, worker_id, ep_idx)
        try:
            state = envmod.generate_board(seed, cfg.board_size, cfg.max_steps)
        except Exception:
            DIAGNOSTICS.bump("board_generation_fault")
            continue
        opponent.reset(seed)
        records = []
        segment = []
        events = []
        feats_all = []
        pi_losses = []
        terminal = False
        rewards = None
        fault = False
        while not terminal:
            try:
                obs = envmod.encode_observation(state, 0)
                out, _ = nn.forward(local, obs)
                if demonstrator:
                    action = mcts.search(state, 0, search_cfg, rng=search_rng)
                    demo_action = action
                else:
                    action = _sample_action(out.policy, rng)
                    demo_action = None
                opp_action = (opponent.act(state, 1)
                              if state.agents[1].alive else int(envmod.Action.STOP))
                nxt, terminal, rewards = envmod.step(state, (action, opp_action))
            except Exception:
                log.exception("worker %d: episode %d aborted by environment fault",
                              worker_id, ep_idx)
                DIAGNOSTICS.bump("episode_fault")
                fault = True
                break
            rec = StepRecord(features=obs, action=action,
                             reward=float(rewards[0]) if terminal else 0.0,
                             value=float(out.value), policy=out.policy,
                             terminal_pred=float(out.terminal_pred),
                             demo_action=demo_action)
            records.append(rec)
            segment.append(rec)
            feats_all.append(obs)
            events.extend(nxt.events)
            state = nxt
            if len(segment) == weights.t_max or terminal:
                if terminal:
                    boot = 0.0
                else:
                    boot_out, _ = nn.forward(
                        local, envmod.encode_observation(state, 0))
                    boot = float(boot_out.value)
                seg = TransitionSegment(records=segment,
                                        bootstrap_value=boot, terminal=terminal)
                feats = np.stack([r.features for r in segment])
                outs, cache = nn.forward(local, feats)
                demo = ([r.demo_action for r in segment]
                        if demonstrator else None)
                _, head_grads, info = combined_loss(seg, outs, weights,
                                                    demo_actions=demo)
                if "pi_loss" in info:
                    pi_losses.append(info["pi_loss"])
                grads = nn.backward(local, cache, head_grads)
                store.submit(grads)
                local, _ = store.snapshot()
                segment = []
                if stop_signal.is_set() and not terminal:
                    fault = True  # treated as an abandoned episode
                    break
        if fault or rewards is None:
            continue
        tp_mean = float("nan")
        if use_tp:
            feats_all.append(envmod.encode_observation(state, 0))
            targets = tp_targets(len(feats_all))
            # chunked forward keeps the activation cache bounded on long
            # episodes; per-state grads are additive, so the sum over chunks
            # equals the whole-episode submission
            n_states = len(feats_all)
            grads = None
            losses = 0.0
            for lo in range(0, n_states, 128):
                feats = np.stack(feats_all[lo:lo + 128])
                outs, cache = nn.forward(local, feats)
                preds = np.asarray(outs.terminal_pred, dtype=np.float64)
                diff = preds - targets[lo:lo + 128]
                losses += float((diff ** 2).sum())
                gt = weights.lambda_tp * 2.0 * diff / n_states
                gp = np.zeros((len(diff), 6))
                chunk = nn.backward(local, cache, (gp, np.zeros(len(diff)), gt))
                if grads is None:
                    grads = chunk
                else:
                    for k in chunk:
                        grads[k] += chunk[k]
            tp_mean = losses / n_states
            store.submit(grads)
            local, _ = store.snapshot()
        pi_mean = float(np.mean(pi_losses)) if pi_losses else float("nan")
        sink(EpisodeRecord(
            wall_ms=int(clock()), worker_id=worker_id, episode_index=ep_idx,
            variant=variant, reward=int(rewards[0]), length=len(records),
            events=tuple(events), timed_out=state.timestep >= state.max_steps
            and state.agents[0].alive and state.agents[1].alive,
            demonstrator=demonstrator, tp_loss_mean=tp_mean,
            pi_loss_mean=pi_mean))
