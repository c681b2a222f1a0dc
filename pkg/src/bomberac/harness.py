"""Training orchestration, evaluation, outcome classification, and replay."""

from __future__ import annotations

import json
import os
import queue
import threading
import time

import numpy as np

from . import env as envmod
from . import nn, opponents, plotting, rl
from .errors import ConfigError, ContractError


def classify_outcome(record):
    """Episode tag from the terminal reward and the death-attribution events.

    A +1 earned because the opponent walked into its own blast is a false
    positive (win_opponent_suicide); a -1 caused by our own bomb is a false
    negative (loss_suicide). Timeouts with both agents alive are draws.
    """
    if record.timed_out:
        return "draw"
    deaths = {e.agent_id: e for e in record.events
              if isinstance(e, envmod.AgentDied)}
    if record.reward == 1:
        if 1 not in deaths:
            raise ContractError("non-terminal trace: +1 without opponent death")
        return ("win_opponent_suicide" if 1 in deaths[1].killer_owners
                else "win")
    if record.reward == -1:
        if 0 not in deaths:
            raise ContractError("non-terminal trace: -1 without our death "
                                "or a timeout")
        return "loss_suicide" if 0 in deaths[0].killer_owners else "loss_killed"
    raise ContractError(f"unclassifiable reward {record.reward}")


def _checkpoint_path(run_dir, label):
    return os.path.join(run_dir, "checkpoints", f"{label}.ck")


def train(cfg):
    """Run asynchronous training per the config; returns the run directory.

    Writes episodes.csv as episodes finish, periodic checkpoints, a final
    summary.json, and a learning-curve figure (demonstrator episodes are
    excluded from the curve and final-mean accounting on planner-imitation
    runs).
    """
    cfg = cfg.resolved()
    run_dir = cfg.run_dir
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
    params = nn.init_params(cfg.seed, board_size=cfg.board_size)
    adam = nn.AdamState(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                        eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    store = rl.ParamStore(params, adam, clip_norm=cfg.grad_clip or None)
    nn.checkpoint_save(*store.state(), _checkpoint_path(run_dir, "initial"))

    stop = threading.Event()
    sink: queue.Queue = queue.Queue()
    counter = rl.EpisodeCounter(cfg.episodes)
    t0 = time.monotonic()
    clock = ((lambda: 0) if cfg.deterministic
             else (lambda: int((time.monotonic() - t0) * 1000)))
    demo_ids = set(range(cfg.demonstrators))
    threads = []
    for wid in range(cfg.workers):
        th = threading.Thread(
            target=rl.worker_loop, name=f"worker-{wid}",
            args=(wid, cfg.variant, store, cfg, stop, sink.put, counter),
            kwargs={"demonstrator": wid in demo_ids, "clock": clock},
            daemon=True)
        threads.append(th)
        th.start()

    csv_path = os.path.join(run_dir, "episodes.csv")
    completed = 0
    tags = {t: 0 for t in rl.OUTCOME_TAGS}
    curve_rewards = []
    with open(csv_path, "w") as fh:
        fh.write(plotting.CSV_HEADER + "\n")
        while completed < cfg.episodes:
            if cfg.max_seconds and time.monotonic() - t0 > cfg.max_seconds:
                stop.set()  # wall-clock budget: drain and wind down
                if sink.empty():
                    break
            try:
                rec = sink.get(timeout=0.5)
            except queue.Empty:
                if stop.is_set() or not any(th.is_alive() for th in threads):
                    break
                continue
            tag = classify_outcome(rec)
            tags[tag] += 1
            fh.write(plotting.format_row(rec, tag) + "\n")
            completed += 1
            if not rec.demonstrator:
                curve_rewards.append(rec.reward)
            if cfg.checkpoint_interval and completed % cfg.checkpoint_interval == 0:
                nn.checkpoint_save(*store.state(),
                                   _checkpoint_path(run_dir, f"ep{completed:08d}"))
    stop.set()
    for th in threads:
        th.join(timeout=60)

    if completed:
        nn.checkpoint_save(*store.state(), _checkpoint_path(run_dir, "final"))
        window = max(1, min(len(curve_rewards), max(1, cfg.episodes // 10)))
        plotting.plot_learning_curves(
            [csv_path], window,
            os.path.join(run_dir, "learning_curve.svg"),
            exclude_workers=demo_ids, title=f"{cfg.variant} vs {cfg.opponent}")
    last_k = min(1000, len(curve_rewards)) or 1
    summary = {
        "variant": cfg.variant,
        "opponent": cfg.opponent,
        "episodes": completed,
        "outcome_tags": tags,
        "mean_reward_last_k": (float(np.mean(curve_rewards[-last_k:]))
                               if curve_rewards else None),
        "last_k": min(1000, len(curve_rewards)),
        "updates": store.submitted,
        "rejected_updates": store.rejected,
        "clipped_updates": store.clipped,
        "final_version": store.version,
        "wall_seconds": round(time.monotonic() - t0, 3),
        "diagnostics": rl.DIAGNOSTICS.snapshot(),
    }
    with open(os.path.join(run_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return run_dir


def _agent_policy(agent, board_size):
    """An agent spec is either an opponent-style token or a checkpoint path."""
    if (agent in ("static", "rulebased") or agent.startswith("mcts:")
            or agent.startswith("net:")):
        return opponents.make_opponent(agent, seed=0, board_size=board_size)
    params, _ = nn.checkpoint_load(agent, board_size=board_size)
    return opponents.NetworkPolicy(params)


def evaluate(agent, opponent, episodes, seed, board_size=8):
    """Greedy evaluation games on fresh seeded boards; no learning.

    agent: checkpoint path or agent token (net:<path>, mcts:<rollouts>,
    rulebased, static). Returns win/loss/draw rates, the mean reward, and
    the outcome-tag histogram.
    """
    me = _agent_policy(agent, board_size)
    opp = opponents.make_opponent(opponent, seed=seed + 1,
                                  board_size=board_size)
    tags = {t: 0 for t in rl.OUTCOME_TAGS}
    rewards = []
    lengths = []
    for i in range(episodes):
        ep_seed = rl.episode_seed(seed, 0, i)
        state = envmod.generate_board(ep_seed, board_size)
        me.reset(ep_seed)
        opp.reset(ep_seed + 1)
        events = []
        terminal = False
        final = None
        while not terminal:
            a0 = me.act(state, 0) if state.agents[0].alive else 4
            a1 = opp.act(state, 1) if state.agents[1].alive else 4
            state, terminal, final = envmod.step(state, (a0, a1))
            events.extend(state.events)
        rec = rl.EpisodeRecord(
            wall_ms=0, worker_id=0, episode_index=i, variant="eval",
            reward=final[0], length=state.timestep, events=tuple(events),
            timed_out=state.timestep >= state.max_steps
            and state.agents[0].alive and state.agents[1].alive,
            demonstrator=False, tp_loss_mean=float("nan"),
            pi_loss_mean=float("nan"))
        tags[classify_outcome(rec)] += 1
        rewards.append(final[0])
        lengths.append(state.timestep)
    wins = tags["win"] + tags["win_opponent_suicide"]
    losses = tags["loss_suicide"] + tags["loss_killed"]
    return {
        "agent": agent,
        "opponent": opponent,
        "episodes": episodes,
        "win_rate": wins / episodes if episodes else 0.0,
        "loss_rate": losses / episodes if episodes else 0.0,
        "draw_rate": tags["draw"] / episodes if episodes else 0.0,
        "mean_reward": float(np.mean(rewards)) if rewards else 0.0,
        "mean_length": float(np.mean(lengths)) if lengths else 0.0,
        "outcome_tags": tags,
    }


def replay(snapshot_path, actions_path, out=print):
    """Step a snapshot through a scripted action file, printing each board.

    Action lines hold two whitespace-separated entries (codes 0..5 or names
    like `up`/`bomb`), one line per timestep. Illegal actions report the
    offending timestep index.
    """
    with open(snapshot_path) as fh:
        state = envmod.parse_board(fh.read())
    with open(actions_path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()
                 and not ln.lstrip().startswith("#")]
    out(f"t={state.timestep}")
    out(envmod.render_board(state))
    terminal, rewards = state.is_terminal(), None

    def parse_action(tok, step_idx):
        tok = tok.lower()
        if tok in envmod.ACTIONS_BY_NAME:
            return int(envmod.ACTIONS_BY_NAME[tok])
        try:
            code = int(tok)
        except ValueError:
            raise ConfigError(f"unreadable action {tok!r} at timestep {step_idx}")
        if not 0 <= code <= 5:
            raise ConfigError(f"action code {code} out of range at "
                              f"timestep {step_idx}")
        return code

    for step_idx, line in enumerate(lines):
        if terminal:
            break
        toks = line.split()
        if len(toks) != 2:
            raise ConfigError(f"expected two actions at timestep {step_idx}, "
                              f"got {line!r}")
        acts = [parse_action(t, step_idx) for t in toks]
        for aid in (0, 1):
            if state.agents[aid].alive and \
                    acts[aid] not in envmod.legal_actions(state, aid):
                raise ConfigError(
                    f"illegal action {toks[aid]!r} for agent {aid} at "
                    f"timestep {step_idx}")
        state, terminal, rewards = envmod.step(state, acts)
        out(f"t={state.timestep}")
        out(envmod.render_board(state))
    if terminal and rewards is not None:
        out(f"terminal rewards: {rewards[0]} {rewards[1]}")
    else:
        out("not terminal")
    return state, rewards


def selftest(out=print):
    """Fast oracle/invariant battery; returns True when everything passes."""
    import random as pyrandom

    checks = []

    def check(name, fn):
        try:
            fn()
            checks.append((name, True, ""))
            out(f"ok   {name}")
        except Exception as exc:
            checks.append((name, False, str(exc)))
            out(f"FAIL {name}: {exc}")

    def board_determinism():
        for seed in (0, 7, 123):
            assert envmod.generate_board(seed, 8) == envmod.generate_board(seed, 8)

    def snapshot_round_trip():
        g = envmod.generate_board(5, 6)
        text = envmod.serialize_board(g)
        assert envmod.serialize_board(envmod.parse_board(text)) == text

    def bomb_and_flame_timing():
        g = envmod.generate_board(11, 6)
        state, _, _ = envmod.step(g, (5, 4))
        placed = state.timestep - 1
        seen = None
        while state.bombs and not state.is_terminal():
            state, _, _ = envmod.step(state, (4, 4))
            for e in state.events:
                if isinstance(e, envmod.BombExploded):
                    seen = e
        assert seen is not None and seen.t - seen.placed_t == envmod.BOMB_FUSE
        assert placed == seen.placed_t

    def tp_target_law():
        for s in (2, 3, 17, 801):
            y = rl.tp_targets(s)
            assert y[0] == 0.0 and y[-1] == 1.0
            assert np.allclose(np.diff(y), 1.0 / (s - 1))

    def adam_first_step():
        params = nn.init_params(0, board_size=6)
        adam = nn.AdamState(params, weight_decay=0.0)
        for v in params.tensors.values():
            v[:] = 0.0
        ones = {k: np.ones_like(v) for k, v in params.tensors.items()}
        nn.adam_apply(params, adam, ones)
        expect = -adam.lr / (1.0 + adam.eps)
        assert np.allclose(params.tensors["dense.w"], expect)

    def loss_degeneracy():
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 12))
            records = [rl.StepRecord(None, int(rng.integers(0, 6)),
                                     float(rng.normal()), float(rng.normal()),
                                     None, 0.5) for _ in range(n)]
            seg = rl.TransitionSegment(records, 0.0, True)
            probs = rng.dirichlet(np.ones(6), size=n)
            outs = nn.NetworkOutput(probs, rng.normal(size=n),
                                    rng.uniform(0, 1, size=n))
            w = rl.LossWeights(lambda_tp=0.0, lambda_pi=0.0)
            la, ga, _ = rl.a3c_loss(seg, outs, w)
            lc, gc, _ = rl.combined_loss(seg, outs, w)
            assert la == lc and all(np.array_equal(a, b)
                                    for a, b in zip(ga, gc))

    def checkpoint_round_trip():
        import tempfile
        params = nn.init_params(3, board_size=6)
        adam = nn.AdamState(params)
        with tempfile.TemporaryDirectory() as td:
            path = os.path.join(td, "t.ck")
            nn.checkpoint_save(params, adam, path)
            loaded, _ = nn.checkpoint_load(path)
            assert all(np.array_equal(loaded.tensors[k], params.tensors[k])
                       for k in nn.TENSOR_NAMES)

    def encode_bounds():
        rng = pyrandom.Random(0)
        state = envmod.generate_board(2, 6)
        for _ in range(30):
            if state.is_terminal():
                break
            obs = envmod.encode_observation(state, 0)
            assert obs.shape[0] == envmod.NUM_CHANNELS
            assert obs.min() >= 0.0 and obs.max() <= 1.0
            acts = [envmod.legal_actions(state, i) for i in (0, 1)]
            state, _, _ = envmod.step(
                state, tuple(a[rng.randrange(len(a))] for a in acts))

    def danger_map_timing():
        import math
        agents = (envmod.AgentState(0, True, 1, 1, 2, False),
                  envmod.AgentState(35, True, 1, 1, 2, False))
        clear = envmod.GameState(6, bytes(36), {}, (), (), agents, 0, 800, 0)
        assert all(math.isinf(v) for v in opponents.danger_map(clear))
        bomb = envmod.Bomb(pos=14, owner=0, life=3, radius=2, direction=None,
                           placed_t=0)
        armed = envmod.GameState(6, bytes(36), {}, (bomb,), (), agents,
                                 0, 800, 0)
        danger = opponents.danger_map(armed)
        assert danger[14] == 3 and danger[14 + 1] == 3
        assert math.isinf(danger[0])

    def search_determinism():
        from . import mcts
        g = envmod.generate_board(6, 6)
        cfg = mcts.SearchConfig(rollouts_per_move=60, rollout_depth=8, seed=3)
        assert len({mcts.search(g, 0, cfg) for _ in range(3)}) == 1

    check("board generation determinism", board_determinism)
    check("snapshot round trip", snapshot_round_trip)
    check("bomb fuse and flame timing", bomb_and_flame_timing)
    check("terminal-progress target law", tp_target_law)
    check("adam first-step magnitude", adam_first_step)
    check("loss degeneracy (lambdas zero)", loss_degeneracy)
    check("checkpoint round trip", checkpoint_round_trip)
    check("observation encoding bounds", encode_bounds)
    check("danger map timing", danger_map_timing)
    check("search determinism under fixed seed", search_determinism)
    return all(ok for _, ok, _ in checks)
