"""Scripted opponents and the shared acting interface.

The rule-based agent reconstructs the usual scripted baseline: it flees
cells that are about to be covered by flames (using an exact simulation of
the pending explosions), bombs when the opponent is in blast range and a
safe retreat exists, collects revealed power-ups, and otherwise advances on
the opponent through destructible wood with Dijkstra, bombing wood that
blocks the path. Path tie-breaks are randomized per seeded instance, so its
behaviour varies across episodes.
"""

from __future__ import annotations

import heapq
import math
import random
from collections import deque

from . import env as envmod
from . import mcts as mctsmod
from . import nn as nnmod
from .errors import ConfigError, ContractError

STOP = int(envmod.Action.STOP)
BOMB = int(envmod.Action.BOMB)

DANGER_HORIZON = 12       # covers a full fuse plus the flame lifetime
WOOD_PATH_COST = 4        # dijkstra cost of walking "through" a wood cell
ESCAPE_CAP = 4 * DANGER_HORIZON  # node budget multiplier for escape searches


def danger_map(state, horizon=DANGER_HORIZON):
    """Earliest step (0..horizon) at which each cell is covered by flames.

    0 marks cells burning right now; math.inf marks cells that stay clear for
    the whole horizon assuming every standing bomb runs its fuse (chains
    included) and nobody acts.
    """
    n = state.size * state.size
    out = [math.inf] * n
    for f in state.flames:
        out[f.pos] = 0
    for k, cells in enumerate(envmod.flame_schedule(state, horizon), start=1):
        for pos in cells:
            if out[pos] > k:
                out[pos] = k
    return out


def static_act(state, agent_id):
    """The stay-put baseline."""
    if not state.agents[agent_id].alive:
        raise ContractError(f"agent {agent_id} is dead")
    return STOP


class AgentPolicy:
    """Minimal acting contract shared by scripted, search and network agents."""

    def act(self, state, agent_id):
        raise NotImplementedError

    def reset(self, seed):
        pass


class StaticPolicy(AgentPolicy):
    def act(self, state, agent_id):
        return static_act(state, agent_id)


def _passable(state, pos):
    if state.terrain[pos] != envmod.PASSAGE:
        return False
    for b in state.bombs:
        if b.pos == pos:
            return False
    return True


def _escape_move(state, agent_id, schedule):
    """First move of a time-aware path to a cell that stays flame-free.

    Searches (cell, time) pairs: a cell may be entered at step t only if it
    is not aflame at t, and counts as safe once no future step sets it on
    fire. Returns (move, found); move is None when standing still is already
    part of the found plan's first step or when no safe cell is reachable.
    """
    me = state.agents[agent_id]
    other = state.agents[1 - agent_id]
    nbr = envmod._neighbors(state.size)
    horizon = len(schedule)
    last_lethal = {}
    for k, cells in enumerate(schedule, start=1):
        for pos in cells:
            last_lethal[pos] = k

    def safe_forever(pos, t):
        return last_lethal.get(pos, 0) <= t

    start = me.pos
    if safe_forever(start, 0):
        return STOP, True
    seen = {(start, 0)}
    queue = deque([(start, 0, None)])   # (cell, time, first action)
    while queue:
        pos, t, first = queue.popleft()
        if t >= horizon:
            continue
        nt = t + 1
        flames_nt = schedule[t]
        # staying put is also a move in time
        candidates = [(pos, STOP if first is None else first)]
        for a in range(4):
            nxt = nbr[pos][a]
            if nxt < 0 or not _passable(state, nxt):
                continue
            if other.alive and other.pos == nxt:
                continue
            candidates.append((nxt, a if first is None else first))
        for cell, act in candidates:
            if cell in flames_nt or (cell, nt) in seen:
                continue
            if safe_forever(cell, nt):
                return act, True
            seen.add((cell, nt))
            queue.append((cell, nt, act))
    return None, False


def _has_retreat(state, agent_id):
    """Would the agent survive its own bomb placed right here?"""
    me = state.agents[agent_id]
    bomb = envmod.Bomb(pos=me.pos, owner=agent_id, life=envmod.BOMB_FUSE,
                       radius=me.blast_radius, direction=None,
                       placed_t=state.timestep)
    hyp = envmod.GameState(
        size=state.size, terrain=state.terrain, powerups=state.powerups,
        bombs=state.bombs + (bomb,), flames=state.flames, agents=state.agents,
        timestep=state.timestep, max_steps=state.max_steps, seed=state.seed)
    schedule = envmod.flame_schedule(hyp, DANGER_HORIZON)
    move, found = _escape_move(hyp, agent_id, schedule)
    return found


def _bfs_move_toward(state, agent_id, goals, danger, rng):
    """First move of a shortest path to any goal, avoiding doomed cells."""
    if not goals:
        return None
    me = state.agents[agent_id]
    other = state.agents[1 - agent_id]
    nbr = envmod._neighbors(state.size)
    goal_set = set(goals)
    seen = {me.pos}
    queue = deque([(me.pos, None)])
    dirs = [0, 1, 2, 3]
    while queue:
        pos, first = queue.popleft()
        if pos in goal_set and first is not None:
            return first
        rng.shuffle(dirs)
        for a in dirs:
            nxt = nbr[pos][a]
            if (nxt < 0 or nxt in seen or not _passable(state, nxt)
                    or math.isfinite(danger[nxt])
                    or (other.alive and other.pos == nxt)):
                continue
            seen.add(nxt)
            queue.append((nxt, a if first is None else first))
    return None


def _dijkstra_toward_opponent(state, agent_id, danger, rng):
    """First step toward the opponent, treating wood as expensive to cross.

    Returns (action, through_wood): through_wood is True when the cheapest
    path starts by entering a wood cell, i.e. the agent is blocked and should
    consider bombing it open.
    """
    me = state.agents[agent_id]
    opp = state.agents[1 - agent_id]
    if not opp.alive:
        return None, False
    size = state.size
    nbr = envmod._neighbors(size)
    bombs = {b.pos for b in state.bombs}
    dist = {me.pos: 0.0}
    heap = [(0.0, rng.random(), me.pos, None)]
    while heap:
        d, _, pos, first = heapq.heappop(heap)
        if d > dist.get(pos, math.inf):
            continue
        if pos == opp.pos:
            if first is None:
                return None, False
            tgt = nbr[me.pos][first]
            return first, state.terrain[tgt] == envmod.WOOD
        for a in range(4):
            nxt = nbr[pos][a]
            if nxt < 0 or nxt in bombs:
                continue
            terr = state.terrain[nxt]
            if terr == envmod.RIGID:
                continue
            if math.isfinite(danger[nxt]) and nxt != opp.pos:
                continue
            cost = WOOD_PATH_COST if terr == envmod.WOOD else 1.0
            nd = d + cost
            if nd < dist.get(nxt, math.inf):
                dist[nxt] = nd
                heapq.heappush(heap, (nd, rng.random(), nxt,
                                      a if first is None else first))
    return None, False


def rulebased_act(state, agent_id, rng=None):
    """Priority cascade: flee danger, bomb a nearby opponent, grab power-ups,
    close in through wood, else stop. The returned action is always legal."""
    me = state.agents[agent_id]
    if not me.alive:
        raise ContractError(f"agent {agent_id} is dead")
    if rng is None:
        rng = random.Random(0)
    legal = envmod.legal_actions(state, agent_id)
    schedule = envmod.flame_schedule(state, DANGER_HORIZON)
    danger = [math.inf] * (state.size * state.size)
    for f in state.flames:
        danger[f.pos] = 0
    for k, cells in enumerate(schedule, start=1):
        for pos in cells:
            if danger[pos] > k:
                danger[pos] = k

    # 1. escape when the current cell is doomed
    if math.isfinite(danger[me.pos]):
        move, found = _escape_move(state, agent_id, schedule)
        if found and move in legal:
            return move
        # cornered: take the legal move that buys the most time
        nbr = envmod._neighbors(state.size)[me.pos]
        best, best_d = STOP, danger[me.pos]
        for a in legal:
            if a < 4:
                d = danger[nbr[a]]
                if d > best_d:
                    best, best_d = a, d
        return best

    opp = state.agents[1 - agent_id]

    def manhattan(p, q):
        size = state.size
        return abs(p // size - q // size) + abs(p % size - q % size)

    # 2. bomb a nearby opponent if a retreat exists
    if (opp.alive and me.ammo > 0 and BOMB in legal
            and manhattan(me.pos, opp.pos) <= me.blast_radius
            and _has_retreat(state, agent_id)):
        return BOMB

    # 3. collect revealed power-ups
    revealed = [pos for pos in state.powerups
                if state.terrain[pos] == envmod.PASSAGE]
    move = _bfs_move_toward(state, agent_id, revealed, danger, rng)
    if move is not None and move in legal:
        return move

    # 4. close in on the opponent, bombing through wood
    move, through_wood = _dijkstra_toward_opponent(state, agent_id, danger, rng)
    if move is not None:
        if through_wood:
            if me.ammo > 0 and BOMB in legal and _has_retreat(state, agent_id):
                return BOMB
        elif move in legal:
            return move

    return STOP


class RuleBasedPolicy(AgentPolicy):
    def __init__(self, seed=0):
        self.base_seed = seed
        self.rng = random.Random(seed)

    def reset(self, seed):
        self.rng = random.Random((self.base_seed << 16) ^ (seed & 0xFFFFFFFF))

    def act(self, state, agent_id):
        return rulebased_act(state, agent_id, self.rng)


class MCTSPolicy(AgentPolicy):
    def __init__(self, rollouts, seed=0, rollout_depth=24, exploration_c=1.25):
        self.config = mctsmod.SearchConfig(rollouts_per_move=rollouts,
                                           rollout_depth=rollout_depth,
                                           exploration_c=exploration_c)
        self.base_seed = seed
        self.rng = random.Random(seed)

    def reset(self, seed):
        self.rng = random.Random((self.base_seed << 16) ^ (seed & 0xFFFFFFFF))

    def act(self, state, agent_id):
        return mctsmod.search(state, agent_id, self.config, rng=self.rng)


class NetworkPolicy(AgentPolicy):
    """Greedy argmax play from a trained checkpoint."""

    def __init__(self, params):
        self.params = params

    def act(self, state, agent_id):
        out, _ = nnmod.forward(self.params,
                               envmod.encode_observation(state, agent_id))
        order = sorted(range(6), key=lambda a: (-out.policy[a], a))
        legal = set(envmod.legal_actions(state, agent_id))
        for a in order:
            if a in legal:
                return a
        return STOP


def make_opponent(token, seed=0, board_size=8):
    """Build a policy from its CLI token:
    static | rulebased | mcts:<rollouts> | net:<checkpoint-path>."""
    if token == "static":
        return StaticPolicy()
    if token == "rulebased":
        return RuleBasedPolicy(seed)
    if token.startswith("mcts:"):
        try:
            rollouts = int(token.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad mcts opponent token {token!r}")
        return MCTSPolicy(rollouts, seed)
    if token.startswith("net:"):
        path = token.split(":", 1)[1]
        params, _ = nnmod.checkpoint_load(path, board_size=board_size)
        return NetworkPolicy(params)
    raise ConfigError(f"unknown opponent token {token!r}")
