import random

import pytest

from bomberac import env


def make_board(rows, agents, bombs=(), flames=(), powerups=(), t=0,
               max_steps=env.DEFAULT_MAX_STEPS, seed=0):
    """Hand-build a GameState from terrain row strings and entity specs.

    rows: strings over '.#W'. agents: two (r, c, kwargs) or (r, c) tuples.
    bombs: (r, c, owner, life, radius) or with a trailing direction.
    flames: (r, c, life) or (r, c, life, owners). powerups: (r, c, kind).
    """
    size = len(rows)
    assert all(len(r) == size for r in rows)
    terrain = bytes(".#W".index(ch) for row in rows for ch in row)
    agent_states = []
    for spec in agents:
        r, c = spec[0], spec[1]
        kw = dict(ammo=1, max_ammo=1, blast_radius=2, can_kick=False, alive=True)
        if len(spec) > 2:
            kw.update(spec[2])
        pos = r * size + c if r >= 0 else -1
        agent_states.append(env.AgentState(
            pos=pos, alive=kw["alive"], ammo=kw["ammo"], max_ammo=kw["max_ammo"],
            blast_radius=kw["blast_radius"], can_kick=kw["can_kick"]))
    bomb_list = []
    for spec in bombs:
        r, c, owner, life, radius = spec[:5]
        direction = spec[5] if len(spec) > 5 else None
        bomb_list.append(env.Bomb(pos=r * size + c, owner=owner, life=life,
                                  radius=radius, direction=direction,
                                  placed_t=t - (env.BOMB_FUSE - life)))
    flame_list = []
    for spec in flames:
        r, c, life = spec[:3]
        owners = frozenset(spec[3]) if len(spec) > 3 else frozenset()
        flame_list.append(env.Flame(pos=r * size + c, life=life, owners=owners))
    pu = {r * size + c: int(kind) for r, c, kind in powerups}
    return env.GameState(size=size, terrain=terrain, powerups=pu,
                         bombs=tuple(bomb_list), flames=tuple(flame_list),
                         agents=tuple(agent_states), timestep=t,
                         max_steps=max_steps, seed=seed)


def play_random_episode(seed, size=6, max_steps=200, action_seed=None):
    """Roll a fresh board forward with uniformly random legal actions.

    Returns the list of visited states (initial included) and the terminal
    rewards (None if the step cap of this helper was hit first).
    """
    state = env.generate_board(seed, size)
    rng = random.Random(seed if action_seed is None else action_seed)
    states = [state]
    rewards = None
    for _ in range(max_steps):
        acts = []
        for i in (0, 1):
            if state.agents[i].alive:
                la = env.legal_actions(state, i)
                acts.append(la[rng.randrange(len(la))])
            else:
                acts.append(int(env.Action.STOP))
        state, terminal, rewards = env.step(state, acts)
        states.append(state)
        if terminal:
            break
    return states, rewards


@pytest.fixture
def empty6():
    """6x6 all-passage board, agents in opposite corners."""
    rows = ["......"] * 6
    return make_board(rows, [(0, 0), (5, 5)])


def expectimax_root_values(state, agent_id, depth):
    """Exhaustive game-tree oracle for small positions.

    For each legal root action: the expected value when our agent plays
    optimally afterwards and the opponent picks uniformly among its legal
    actions, enumerated `depth` env steps deep with memoization. Terminal
    values are the true rewards; running out of depth scores 0.
    """
    opp = 1 - agent_id
    memo = {}

    def key(s):
        return (s.terrain, s.agents, s.bombs, s.flames,
                frozenset(s.powerups.items()))

    def expected_after(s, a, d):
        if s.agents[opp].alive:
            opp_acts = env.legal_actions(s, opp)
        else:
            opp_acts = [int(env.Action.STOP)]
        acc = 0.0
        for o in opp_acts:
            pair = (a, o) if agent_id == 0 else (o, a)
            nxt, terminal, rewards = env.step(s, pair)
            acc += rewards[agent_id] if terminal else best_value(nxt, d - 1)
        return acc / len(opp_acts)

    def best_value(s, d):
        if d == 0:
            return 0.0
        k = (key(s), d)
        got = memo.get(k)
        if got is not None:
            return got
        best = max(expected_after(s, a, d)
                   for a in env.legal_actions(s, agent_id))
        memo[k] = best
        return best

    return {a: expected_after(state, a, depth)
            for a in env.legal_actions(state, agent_id)}
