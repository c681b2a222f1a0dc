"""Upper-confidence tree search over the simulator.

The tree branches only on the searching agent's actions; the opponent's moves
are sampled from an opponent model (uniform random unless told otherwise)
during expansion and rollouts, matching a single-perspective vanilla UCT.
Rollouts are depth-limited and score +1/-1 at terminals, 0 at the cutoff.
The search never touches the neural network: the demonstrator pairs a search
action with the policy head's distribution, but the two are computed
independently.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from . import env as envmod
from .errors import ContractError

STOP = int(envmod.Action.STOP)


@dataclass
class SearchConfig:
    rollouts_per_move: int = 100
    rollout_depth: int = 24
    exploration_c: float = 1.25
    seed: int = 0

    def __post_init__(self):
        if self.rollouts_per_move < 1 or self.rollout_depth < 1:
            raise ContractError("rollouts_per_move and rollout_depth must be >= 1")


class SearchNode:
    __slots__ = ("state", "depth", "n", "w", "children", "untried",
                 "terminal_value")

    def __init__(self, state, depth, terminal_value=None, untried=None):
        self.state = state
        self.depth = depth
        self.n = 0
        self.w = 0.0
        self.children = {}
        self.untried = untried if untried is not None else []
        self.terminal_value = terminal_value


def uniform_random_opponent(state, agent_id, rng):
    """Default opponent model inside the search: any legal action, uniformly."""
    acts = envmod.legal_actions(state, agent_id)
    return acts[int(rng.random() * len(acts))]


def ucb_select(node, exploration_c):
    """Child action maximizing mean value plus the exploration bonus.

    Ties break toward the lowest action code. The node must be fully
    expanded.
    """
    if node.untried:
        raise ContractError("ucb_select on a node with untried actions")
    log_n = math.log(node.n)
    best_a = -1
    best_score = -math.inf
    for a in sorted(node.children):
        child = node.children[a]
        score = child.w / child.n + exploration_c * math.sqrt(log_n / child.n)
        if score > best_score:
            best_score = score
            best_a = a
    return best_a


def backpropagate(path, value):
    """Add one visit and the rollout value to every node on the path."""
    for node in path:
        node.n += 1
        node.w += value


def _rollout(state, agent_id, depth, opponent_model, rng):
    opp_id = 1 - agent_id
    legal = envmod.legal_actions
    env_step = envmod.step
    random01 = rng.random
    uniform_opp = opponent_model is uniform_random_opponent
    for _ in range(depth):
        acts = legal(state, agent_id)
        mine = acts[int(random01() * len(acts))]
        if state.agents[opp_id].alive:
            if uniform_opp:
                oacts = legal(state, opp_id)
                theirs = oacts[int(random01() * len(oacts))]
            else:
                theirs = opponent_model(state, opp_id, rng)
        else:
            theirs = STOP
        pair = (mine, theirs) if agent_id == 0 else (theirs, mine)
        state, terminal, rewards = env_step(state, pair)
        if terminal:
            return float(rewards[agent_id])
    return 0.0


def search(root_state, agent_id, config, opponent_model=None, rng=None,
           return_root=False):
    """Pick an action by repeated select/expand/rollout/backpropagate.

    Runs config.rollouts_per_move iterations and returns the root action
    with the most visits (ties toward the lowest action code). Each
    expansion adds exactly one child, trying untried actions in ascending
    code order; the opponent's reply is sampled from the opponent model.
    """
    if root_state.is_terminal():
        raise ContractError("search called on a terminal state")
    if not root_state.agents[agent_id].alive:
        raise ContractError(f"search called for dead agent {agent_id}")
    if rng is None:
        rng = random.Random(config.seed)
    if opponent_model is None:
        opponent_model = uniform_random_opponent
    opp_id = 1 - agent_id
    c = config.exploration_c
    depth = config.rollout_depth
    root = SearchNode(root_state, 0,
                      untried=list(envmod.legal_actions(root_state, agent_id)))

    for _ in range(config.rollouts_per_move):
        node = root
        path = [root]
        while node.terminal_value is None and not node.untried:
            node = node.children[ucb_select(node, c)]
            path.append(node)
        if node.terminal_value is not None:
            value = node.terminal_value
        else:
            a = node.untried.pop(0)
            st = node.state
            if st.agents[opp_id].alive:
                theirs = opponent_model(st, opp_id, rng)
            else:
                theirs = STOP
            pair = (a, theirs) if agent_id == 0 else (theirs, a)
            nxt, terminal, rewards = envmod.step(st, pair)
            if terminal:
                child = SearchNode(nxt, node.depth + 1,
                                   terminal_value=float(rewards[agent_id]))
            else:
                child = SearchNode(nxt, node.depth + 1,
                                   untried=list(envmod.legal_actions(nxt, agent_id)))
            node.children[a] = child
            path.append(child)
            if terminal:
                value = child.terminal_value
            else:
                value = _rollout(nxt, agent_id, depth, opponent_model, rng)
        backpropagate(path, value)

    best_a = -1
    best_n = -1
    for a in sorted(root.children):
        child = root.children[a]
        if child.n > best_n:
            best_n = child.n
            best_a = a
    if return_root:
        return best_a, root
    return best_a


def demonstrator_act(state, agent_id, config, params, rng=None):
    """Search action plus the policy head's distribution for the same state.

    The distribution feeds the imitation loss; the search itself never reads
    the network, so a crashed or absent network cannot change the action.
    """
    from . import nn
    out, _ = nn.forward(params, envmod.encode_observation(state, agent_id))
    action = search(state, agent_id, config, rng=rng)
    return action, out.policy


def render_tree(root, exploration_c, max_depth=2):
    """Debug dump of the top plies: visits, mean value, UCB per child."""
    lines = []

    def walk(node, prefix, depth):
        if depth > max_depth or not node.children:
            return
        log_n = math.log(node.n) if node.n > 0 else 0.0
        for a in sorted(node.children):
            child = node.children[a]
            ucb = (child.w / child.n
                   + exploration_c * math.sqrt(log_n / child.n))
            lines.append(f"{prefix}{envmod.ACTION_NAMES[envmod.Action(a)]}: "
                         f"n={child.n} q={child.w / child.n:+.3f} ucb={ucb:+.3f}")
            walk(child, prefix + "  ", depth + 1)

    walk(root, "", 1)
    return "\n".join(lines)
