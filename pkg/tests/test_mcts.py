"""Tree search: UCB selection, backpropagation, and whole-search behaviour."""

import math
import random

import numpy as np
import pytest

from bomberac import env, mcts, nn
from bomberac.errors import ContractError

from conftest import expectimax_root_values, make_board


def node_with_children(stats, parent_n=None):
    node = mcts.SearchNode(None, 0)
    for a, (w, n) in stats.items():
        child = mcts.SearchNode(None, 1)
        child.w, child.n = w, n
        node.children[a] = child
    node.n = parent_n if parent_n is not None else sum(
        n for _, n in stats.values())
    return node


class TestUcbSelect:
    def test_exploitation_breaks_symmetric_exploration(self):
        node = node_with_children({0: (1.0, 1), 1: (0.0, 1)}, parent_n=2)
        assert mcts.ucb_select(node, 1.25) == 0

    def test_exploration_term_dominates(self):
        node = node_with_children({0: (50.0, 100), 1: (0.5, 1)}, parent_n=101)
        assert mcts.ucb_select(node, 1.25) == 1
        assert mcts.ucb_select(node, 0.01) == 1  # any positive c

    def test_tie_breaks_to_lowest_code(self):
        node = node_with_children({3: (1.0, 2), 1: (1.0, 2)}, parent_n=4)
        assert mcts.ucb_select(node, 1.25) == 1

    def test_untried_actions_rejected(self):
        node = node_with_children({0: (1.0, 1)}, parent_n=1)
        node.untried = [4]
        with pytest.raises(ContractError):
            mcts.ucb_select(node, 1.25)

    def test_matches_formula_oracle_on_random_trees(self):
        rng = random.Random(0)
        for _ in range(200):
            stats = {}
            for a in rng.sample(range(6), rng.randint(2, 6)):
                stats[a] = (rng.uniform(-5, 5), rng.randint(1, 50))
            node = node_with_children(stats)
            c = rng.uniform(0.1, 3.0)
            scores = {a: stats[a][0] / stats[a][1]
                      + c * math.sqrt(math.log(node.n) / stats[a][1])
                      for a in stats}
            best = min(a for a in stats
                       if scores[a] == max(scores.values()))
            assert mcts.ucb_select(node, c) == best


class TestBackpropagate:
    def test_single_node(self):
        node = mcts.SearchNode(None, 0)
        mcts.backpropagate([node], 1.0)
        assert (node.n, node.w) == (1, 1.0)

    def test_path_of_three_negative(self):
        nodes = [mcts.SearchNode(None, d) for d in range(3)]
        mcts.backpropagate(nodes, -1.0)
        assert all(n.n == 1 and n.w == -1.0 for n in nodes)

    def test_root_mean_is_arithmetic_mean(self):
        rng = random.Random(3)
        node = mcts.SearchNode(None, 0)
        values = [rng.uniform(-1, 1) for _ in range(100)]
        for v in values:
            mcts.backpropagate([node], v)
        assert node.n == 100
        assert math.isclose(node.w / node.n, sum(values) / len(values))


def escape_right_trap():
    """Fuse-1 bomb sweeping the corridor; only moving right survives."""
    return make_board(["#####",
                       "#####",
                       ".....",
                       "#####",
                       "##.##"],
                      [(2, 3, {"ammo": 0}), (4, 2, {"ammo": 0})],
                      bombs=[(2, 1, 1, 1, 3)])


def stop_only_trap():
    """Every neighbouring cell is about to burn; standing still survives.

    The opponent is sealed in a corner pocket with a single legal action, so
    dominance does not depend on which opponent reply an expansion samples.
    """
    return make_board([".#.##",
                       "##.##",
                       ".....",
                       "##.##",
                       "##.##"],
                      [(2, 2, {"ammo": 0}),
                       (0, 0, {"ammo": 0, "max_ammo": 4})],
                      bombs=[(0, 2, 1, 1, 2), (4, 2, 1, 1, 2),
                             (2, 0, 1, 1, 2), (2, 4, 1, 1, 2)])


class TestSearch:
    def test_single_legal_action_returned(self):
        g = make_board(["#####",
                        "#.###",
                        "#####",
                        "##.##",
                        "#####"], [(1, 1, {"ammo": 0}), (3, 2, {"ammo": 0})])
        cfg = mcts.SearchConfig(rollouts_per_move=30, rollout_depth=5)
        assert mcts.search(g, 0, cfg) == env.Action.STOP

    def test_deterministic_under_fixed_seed(self):
        g = escape_right_trap()
        cfg = mcts.SearchConfig(rollouts_per_move=150, rollout_depth=8, seed=9)
        actions = {mcts.search(g, 0, cfg) for _ in range(3)}
        assert len(actions) == 1

    def test_visit_conservation(self):
        g = escape_right_trap()
        cfg = mcts.SearchConfig(rollouts_per_move=321, rollout_depth=6)
        _, root = mcts.search(g, 0, cfg, rng=random.Random(4), return_root=True)
        assert root.n == 321
        assert sum(c.n for c in root.children.values()) == 321
        for child in root.children.values():
            assert -1.0 <= child.w / child.n <= 1.0

    def test_terminal_root_rejected(self):
        g = make_board(["......"] * 6, [(-1, -1, {"alive": False}), (3, 3)])
        with pytest.raises(ContractError):
            mcts.search(g, 1, mcts.SearchConfig(rollouts_per_move=5))

    def test_oracle_confirms_trap_dominance(self):
        for g, dominant in ((escape_right_trap(), int(env.Action.RIGHT)),
                            (stop_only_trap(), int(env.Action.STOP))):
            values = expectimax_root_values(g, 0, depth=12)
            rest = max(v for a, v in values.items() if a != dominant)
            assert values[dominant] >= rest + 0.5, values

    def test_trap_escape_found(self):
        g = escape_right_trap()
        cfg = mcts.SearchConfig(rollouts_per_move=2000, rollout_depth=12)
        hits = sum(mcts.search(g, 0, cfg, rng=random.Random(s)) ==
                   env.Action.RIGHT for s in range(10))
        assert hits >= 9

    def test_stop_trap_found(self):
        g = stop_only_trap()
        cfg = mcts.SearchConfig(rollouts_per_move=2000, rollout_depth=12)
        hits = sum(mcts.search(g, 0, cfg, rng=random.Random(s)) ==
                   env.Action.STOP for s in range(10))
        assert hits >= 9


class TestDemonstrator:
    def test_distribution_decoupled_from_search(self):
        g = escape_right_trap()
        params = nn.init_params(0, board_size=5, dtype=np.float32)
        for name in nn.TENSOR_NAMES:
            params.tensors[name][:] = 0.0  # uniform policy
        cfg = mcts.SearchConfig(rollouts_per_move=200, rollout_depth=8, seed=1)
        action, dist = mcts.demonstrator_act(g, 0, cfg, params)
        assert np.allclose(dist, 1 / 6)
        assert action == env.Action.RIGHT

    def test_repeatable_pair(self):
        g = escape_right_trap()
        params = nn.init_params(1, board_size=5, dtype=np.float32)
        cfg = mcts.SearchConfig(rollouts_per_move=100, rollout_depth=8, seed=2)
        a1, d1 = mcts.demonstrator_act(g, 0, cfg, params)
        a2, d2 = mcts.demonstrator_act(g, 0, cfg, params)
        assert a1 == a2 and np.array_equal(d1, d2)

    def test_search_ignores_network_entirely(self):
        g = escape_right_trap()
        cfg = mcts.SearchConfig(rollouts_per_move=150, rollout_depth=8)
        with_net = mcts.demonstrator_act(
            g, 0, cfg, nn.init_params(7, board_size=5),
            rng=random.Random(11))[0]
        without = mcts.search(g, 0, cfg, rng=random.Random(11))
        assert with_net == without

    def test_pi_loss_over_demonstrator_steps_is_finite(self):
        from bomberac import rl
        g = escape_right_trap()
        params = nn.init_params(3, board_size=5, dtype=np.float32)
        cfg = mcts.SearchConfig(rollouts_per_move=50, rollout_depth=6, seed=5)
        actions, dists = [], []
        for k in range(20):
            a, d = mcts.demonstrator_act(g, 0, cfg, params,
                                         rng=random.Random(k))
            actions.append(a)
            dists.append(d)
        loss, _ = rl.pi_loss(actions, np.array(dists))
        assert math.isfinite(loss) and loss >= 0.0


class TestRenderTree:
    def test_dump_contains_children_stats(self):
        g = escape_right_trap()
        cfg = mcts.SearchConfig(rollouts_per_move=100, rollout_depth=6)
        _, root = mcts.search(g, 0, cfg, rng=random.Random(0), return_root=True)
        dump = mcts.render_tree(root, cfg.exploration_c, max_depth=2)
        assert "right" in dump and "n=" in dump and "ucb=" in dump
