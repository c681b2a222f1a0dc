"""Two-player mini bomber-arena simulator.

Deterministic, seedable grid world: agents move simultaneously, drop bombs
with a 10-step fuse, and die to flames that persist for 2 steps. The state is
immutable from the caller's perspective; ``step`` returns a fresh state and
never mutates its input, so independent games can run on separate threads.

Cells are addressed by flat index ``r * size + c`` internally (the hot paths
run millions of times per search); the text snapshot format and the renderer
use ``(row, col)`` pairs.
"""

from __future__ import annotations

from enum import IntEnum
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, ContractError


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    STOP = 4
    BOMB = 5

MOVE_ACTIONS = (Action.UP, Action.DOWN, Action.LEFT, Action.RIGHT)
ACTION_NAMES = {a: a.name.lower() for a in Action}
ACTIONS_BY_NAME = {a.name.lower(): a for a in Action}

# terrain codes (kept as raw ints in a bytes grid)
PASSAGE = 0
RIGID = 1
WOOD = 2
TERRAIN_CHARS = ".#W"


class PowerUp(IntEnum):
    EXTRA_BOMB = 0
    BLAST_RADIUS = 1
    KICK = 2

POWERUP_NAMES = {p: p.name.replace("_", "").lower() for p in PowerUp}
POWERUPS_BY_NAME = {n: p for p, n in POWERUP_NAMES.items()}

BOMB_FUSE = 10
FLAME_LIFE = 2
DEFAULT_MAX_STEPS = 800
NUM_CHANNELS = 28
AMMO_NORM_CAP = 5  # ability planes normalize max_ammo against this

# board generation (probabilities per non-corner cell)
RIGID_PROB = 0.15
WOOD_PROB = 0.25
POWERUP_PROB = 0.5  # chance a wood cell hides a power-up
CORNER_ARM = 2      # corners cleared in an L of this many cells per edge


class Bomb(NamedTuple):
    pos: int
    owner: int
    life: int
    radius: int
    direction: int | None  # set while sliding after a kick
    placed_t: int


class Flame(NamedTuple):
    pos: int
    life: int
    owners: frozenset  # agent ids whose bombs produced this flame


class AgentState(NamedTuple):
    pos: int  # the death cell once dead; every live check gates on alive
    alive: bool
    ammo: int
    max_ammo: int
    blast_radius: int
    can_kick: bool


# step events (timestamps are the post-step timestep; bombs additionally
# carry placed_t, the timestep at which the placing action was taken)
class BombPlaced(NamedTuple):
    t: int
    pos: int
    owner: int


class BombExploded(NamedTuple):
    t: int
    pos: int
    owner: int
    placed_t: int
    chained: bool


class WoodDestroyed(NamedTuple):
    t: int
    pos: int


class PowerupCollected(NamedTuple):
    t: int
    agent_id: int
    kind: int


class AgentDied(NamedTuple):
    t: int
    agent_id: int
    killer_owners: frozenset  # contains the victim itself on a suicide


class GameState:
    """Full game state. Treat as immutable; ``step`` returns a new one."""

    __slots__ = ("size", "terrain", "powerups", "bombs", "flames", "agents",
                 "timestep", "max_steps", "seed", "events")

    def __init__(self, size, terrain, powerups, bombs, flames, agents,
                 timestep, max_steps, seed, events=()):
        self.size = size
        self.terrain = terrain          # bytes, len size*size
        self.powerups = powerups        # dict pos -> PowerUp code (hidden while under wood)
        self.bombs = bombs              # tuple[Bomb]
        self.flames = flames            # tuple[Flame]
        self.agents = agents            # tuple[AgentState, AgentState]
        self.timestep = timestep
        self.max_steps = max_steps
        self.seed = seed
        self.events = events            # events of the step that produced this state

    def is_terminal(self):
        return (self.timestep >= self.max_steps
                or not (self.agents[0].alive and self.agents[1].alive))

    def __eq__(self, other):
        if not isinstance(other, GameState):
            return NotImplemented
        return (self.size == other.size and self.terrain == other.terrain
                and self.powerups == other.powerups and self.bombs == other.bombs
                and self.flames == other.flames and self.agents == other.agents
                and self.timestep == other.timestep and self.max_steps == other.max_steps
                and self.seed == other.seed)

    def __repr__(self):
        return (f"GameState(size={self.size}, t={self.timestep}, "
                f"bombs={len(self.bombs)}, flames={len(self.flames)}, "
                f"agents={[(a.pos, a.alive) for a in self.agents]})")


# per-board-size neighbor tables: _neighbors(size)[pos][action] -> pos or -1
_NEIGHBOR_CACHE: dict[int, list] = {}


def _neighbors(size):
    tab = _NEIGHBOR_CACHE.get(size)
    if tab is None:
        tab = []
        for r in range(size):
            for c in range(size):
                tab.append((
                    (r - 1) * size + c if r > 0 else -1,
                    (r + 1) * size + c if r < size - 1 else -1,
                    r * size + c - 1 if c > 0 else -1,
                    r * size + c + 1 if c < size - 1 else -1,
                ))
        _NEIGHBOR_CACHE[size] = tab
    return tab


def _corner_cells(size):
    return (0, size - 1, (size - 1) * size, size * size - 1)


def _corner_clear_zone(size):
    """Cells kept as passage around every corner (an L of CORNER_ARM per edge)."""
    cells = set()
    for r0, c0, dr, dc in ((0, 0, 1, 1), (0, size - 1, 1, -1),
                           (size - 1, 0, -1, 1), (size - 1, size - 1, -1, -1)):
        cells.add(r0 * size + c0)
        for k in range(1, CORNER_ARM + 1):
            cells.add((r0 + dr * k) * size + c0)
            cells.add(r0 * size + (c0 + dc * k))
    return cells


def _connected(terrain, size, start, goal):
    """Flood fill over non-rigid cells (wood counts as traversable)."""
    if terrain[start] == RIGID or terrain[goal] == RIGID:
        return False
    nbr = _neighbors(size)
    seen = bytearray(size * size)
    seen[start] = 1
    stack = [start]
    while stack:
        pos = stack.pop()
        if pos == goal:
            return True
        for nxt in nbr[pos]:
            if nxt >= 0 and not seen[nxt] and terrain[nxt] != RIGID:
                seen[nxt] = 1
                stack.append(nxt)
    return False


def generate_board(seed, size=8, max_steps=DEFAULT_MAX_STEPS):
    """Build a random starting board.

    Both agents start on distinct random corners, corners are kept clear, and
    boards are redrawn until a path (through destructible wood, never through
    rigid walls) connects the two agents. Identical seeds give bit-identical
    boards.
    """
    if size < 6:
        raise ConfigError(f"board size must be >= 6, got {size}")
    rng = np.random.default_rng(seed)
    corners = _corner_cells(size)
    clear = _corner_clear_zone(size)
    n = size * size
    while True:
        idx = rng.choice(4, size=2, replace=False)
        spawn = (corners[idx[0]], corners[idx[1]])
        draws = rng.random(n)
        grid = bytearray(n)
        for pos in range(n):
            if pos in clear:
                continue
            d = draws[pos]
            if d < RIGID_PROB:
                grid[pos] = RIGID
            elif d < RIGID_PROB + WOOD_PROB:
                grid[pos] = WOOD
        terrain = bytes(grid)
        if not _connected(terrain, size, spawn[0], spawn[1]):
            continue
        powerups = {}
        wood_cells = [pos for pos in range(n) if terrain[pos] == WOOD]
        if wood_cells:
            keep = rng.random(len(wood_cells)) < POWERUP_PROB
            kinds = rng.integers(0, 3, size=len(wood_cells))
            for i, pos in enumerate(wood_cells):
                if keep[i]:
                    powerups[pos] = int(kinds[i])
        agents = tuple(
            AgentState(pos=p, alive=True, ammo=1, max_ammo=1, blast_radius=2,
                       can_kick=False)
            for p in spawn
        )
        return GameState(size=size, terrain=terrain, powerups=powerups,
                         bombs=(), flames=(), agents=agents, timestep=0,
                         max_steps=max_steps, seed=seed)


def legal_actions(state, agent_id):
    """Sorted action codes available to an agent.

    Stop is always legal. A move needs an in-bounds passage cell; a cell
    holding a bomb only qualifies if the agent can kick and the cell beyond
    the bomb is free. Placing a bomb needs ammo and a bomb-free cell.
    """
    me = state.agents[agent_id]
    if not me.alive:
        raise ContractError(f"agent {agent_id} is dead")
    terrain = state.terrain
    nbr_all = _neighbors(state.size)
    nbr = nbr_all[me.pos]
    acts = []
    if state.bombs:
        bomb_cells = {b.pos for b in state.bombs}
        other = state.agents[1 - agent_id]
        for a in range(4):
            tgt = nbr[a]
            if tgt < 0 or terrain[tgt] != PASSAGE:
                continue
            if tgt in bomb_cells:
                if not me.can_kick:
                    continue
                beyond = nbr_all[tgt][a]
                if (beyond < 0 or terrain[beyond] != PASSAGE
                        or beyond in bomb_cells
                        or (other.alive and other.pos == beyond)):
                    continue
            acts.append(a)
        acts.append(4)
        if me.ammo > 0 and me.pos not in bomb_cells:
            acts.append(5)
    else:
        for a in range(4):
            tgt = nbr[a]
            if tgt >= 0 and terrain[tgt] == PASSAGE:
                acts.append(a)
        acts.append(4)
        if me.ammo > 0:
            acts.append(5)
    return acts


def _blast_cells(pos, radius, terrain, nbr):
    """Cross-shaped blast: center plus up to radius-1 cells per direction.

    Rigid walls block (and are not covered); wood is covered but stops the
    blast behind it. Terrain is the pre-explosion grid for the whole chain.
    """
    cells = [pos]
    for d in range(4):
        cur = pos
        for _ in range(radius - 1):
            cur = nbr[cur][d]
            if cur < 0 or terrain[cur] == RIGID:
                break
            cells.append(cur)
            if terrain[cur] == WOOD:
                break
    return cells


def step(state, actions: Sequence[int]):
    """Advance one timestep with both agents' actions.

    Phase order: movement (with bounce-back collisions and bomb kicks), bomb
    placement, bomb ticking and kicked-bomb sliding, explosions with full
    chain closure, flame decay then spawn, deaths, power-up pickup.

    Returns ``(next_state, terminal, rewards)`` where rewards is None until
    the game ends, then ``(r0, r1)`` with +1 for a surviving winner and -1
    for a dead agent or for both on a timeout draw.
    """
    agents = state.agents
    if (state.timestep >= state.max_steps
            or not (agents[0].alive and agents[1].alive)):
        raise ContractError("cannot step a terminal state")
    size = state.size
    nbr = _neighbors(size)
    terrain = state.terrain
    t = state.timestep
    t_next = t + 1
    agents = list(agents)
    bombs = list(state.bombs)
    # hot path: namedtuples are rebuilt with positional constructors and
    # membership checks use short lists, both measurably cheaper than the
    # generic alternatives at rollout volumes
    bomb_cells = [b.pos for b in bombs] if bombs else None
    events = []

    # --- movement -----------------------------------------------------
    desired = [agents[0].pos, agents[1].pos]
    kick = [None, None]
    for i in (0, 1):
        act = actions[i]
        if act >= 4:  # stop or bomb
            continue
        a = agents[i]
        if not a.alive:
            continue
        tgt = nbr[a.pos][act]
        if tgt < 0 or terrain[tgt] != PASSAGE:
            continue
        if bomb_cells and tgt in bomb_cells:
            if not a.can_kick:
                continue
            beyond = nbr[tgt][act]
            other = agents[1 - i]
            if (beyond < 0 or terrain[beyond] != PASSAGE
                    or beyond in bomb_cells
                    or (other.alive and other.pos == beyond)):
                continue
            kick[i] = act
        desired[i] = tgt
    if agents[0].alive and agents[1].alive:
        moved0 = desired[0] != agents[0].pos
        moved1 = desired[1] != agents[1].pos
        if moved0 and moved1 and (desired[0] == desired[1]
                                  or (desired[0] == agents[1].pos
                                      and desired[1] == agents[0].pos)):
            desired = [agents[0].pos, agents[1].pos]  # same target or swap: bounce
            kick = [None, None]
        elif moved0 and not moved1 and desired[0] == agents[1].pos:
            desired[0] = agents[0].pos
            kick[0] = None
        elif moved1 and not moved0 and desired[1] == agents[0].pos:
            desired[1] = agents[1].pos
            kick[1] = None
    for i in (0, 1):
        a = agents[i]
        if desired[i] != a.pos:
            if kick[i] is not None:
                for bi, b in enumerate(bombs):
                    if b.pos == desired[i]:
                        bombs[bi] = Bomb(b.pos, b.owner, b.life, b.radius,
                                         kick[i], b.placed_t)
                        break
            agents[i] = AgentState(desired[i], True, a.ammo, a.max_ammo,
                                   a.blast_radius, a.can_kick)

    # --- bomb placement -----------------------------------------------
    for i in (0, 1):
        if actions[i] == 5:
            a = agents[i]
            if a.alive and a.ammo > 0 and not (bomb_cells and a.pos in bomb_cells):
                bombs.append(Bomb(a.pos, i, BOMB_FUSE, a.blast_radius, None, t))
                agents[i] = AgentState(a.pos, True, a.ammo - 1, a.max_ammo,
                                       a.blast_radius, a.can_kick)
                events.append(BombPlaced(t_next, a.pos, i))

    # --- tick and kicked-bomb motion ------------------------------------
    covered = None
    if bombs:
        occupied = [b.pos for b in bombs]
        for a in agents:
            if a.alive:
                occupied.append(a.pos)
        for bi, b in enumerate(bombs):
            if b.direction is not None:
                nxt = nbr[b.pos][b.direction]
                if (nxt >= 0 and terrain[nxt] == PASSAGE
                        and nxt not in occupied):
                    occupied[bi] = nxt
                    bombs[bi] = Bomb(nxt, b.owner, b.life - 1, b.radius,
                                     b.direction, b.placed_t)
                else:
                    bombs[bi] = Bomb(b.pos, b.owner, b.life - 1, b.radius,
                                     None, b.placed_t)
            else:
                bombs[bi] = Bomb(b.pos, b.owner, b.life - 1, b.radius,
                                 None, b.placed_t)

        # --- explosions with chain closure ------------------------------
        # a bomb standing in live flames (slid into them, or placed by an
        # agent mid-blast) detonates as a chain
        old_flames = state.flames
        if old_flames:
            flame_cells_now = {f.pos for f in old_flames}
            trigger = [bi for bi, b in enumerate(bombs)
                       if b.life <= 0 or b.pos in flame_cells_now]
        else:
            trigger = [bi for bi, b in enumerate(bombs) if b.life <= 0]
        if trigger:
            covered = {}  # pos -> set of owner ids
            exploded = set()
            frontier = trigger
            while frontier:
                nxt_frontier = []
                for bi in frontier:
                    if bi in exploded:
                        continue
                    exploded.add(bi)
                    b = bombs[bi]
                    events.append(BombExploded(t_next, b.pos, b.owner,
                                               b.placed_t, chained=b.life > 0))
                    for cell in _blast_cells(b.pos, b.radius, terrain, nbr):
                        owners = covered.get(cell)
                        if owners is None:
                            covered[cell] = {b.owner}
                        else:
                            owners.add(b.owner)
                for bi, b in enumerate(bombs):
                    if bi not in exploded and b.pos in covered:
                        nxt_frontier.append(bi)
                frontier = nxt_frontier
            for bi in exploded:
                owner = bombs[bi].owner
                a = agents[owner]
                agents[owner] = AgentState(a.pos, a.alive, a.ammo + 1,
                                           a.max_ammo, a.blast_radius, a.can_kick)
            bombs = [b for bi, b in enumerate(bombs) if bi not in exploded]
            wood_hit = [cell for cell in covered if terrain[cell] == WOOD]
            if wood_hit:
                grid = bytearray(terrain)
                for cell in wood_hit:
                    grid[cell] = PASSAGE
                    events.append(WoodDestroyed(t_next, cell))
                terrain = bytes(grid)

    # --- flame decay then spawn ------------------------------------------
    if state.flames or covered:
        if covered:
            flames = [Flame(f.pos, f.life - 1, f.owners) for f in state.flames
                      if f.life > 1 and f.pos not in covered]
            for cell in sorted(covered):
                flames.append(Flame(cell, FLAME_LIFE, frozenset(covered[cell])))
        else:
            flames = [Flame(f.pos, f.life - 1, f.owners) for f in state.flames
                      if f.life > 1]
        # --- deaths -------------------------------------------------------
        if flames:
            flame_at = {f.pos: f for f in flames}
            for i in (0, 1):
                a = agents[i]
                if a.alive and a.pos in flame_at:
                    events.append(AgentDied(t_next, i, flame_at[a.pos].owners))
                    agents[i] = AgentState(a.pos, False, a.ammo, a.max_ammo,
                                           a.blast_radius, a.can_kick)
        flames = tuple(flames)
    else:
        flames = ()

    # --- power-up pickup ---------------------------------------------------
    powerups = state.powerups
    if powerups:
        for i in (0, 1):
            a = agents[i]
            if a.alive and a.pos in powerups and terrain[a.pos] == PASSAGE:
                kind = powerups[a.pos]
                if powerups is state.powerups:
                    powerups = dict(powerups)
                del powerups[a.pos]
                if kind == PowerUp.EXTRA_BOMB:
                    agents[i] = AgentState(a.pos, True, a.ammo + 1, a.max_ammo + 1,
                                           a.blast_radius, a.can_kick)
                elif kind == PowerUp.BLAST_RADIUS:
                    agents[i] = AgentState(a.pos, True, a.ammo, a.max_ammo,
                                           a.blast_radius + 1, a.can_kick)
                else:
                    agents[i] = AgentState(a.pos, True, a.ammo, a.max_ammo,
                                           a.blast_radius, True)
                events.append(PowerupCollected(t_next, i, kind))

    new_state = GameState(size, terrain, powerups, tuple(bombs), flames,
                          (agents[0], agents[1]), t_next, state.max_steps,
                          state.seed, tuple(events))
    alive0 = agents[0].alive
    alive1 = agents[1].alive
    if alive0 and alive1 and t_next < state.max_steps:
        return new_state, False, None
    r0 = 1 if alive0 and not alive1 else -1
    r1 = 1 if alive1 and not alive0 else -1
    return new_state, True, (r0, r1)


def flame_schedule(state, horizon=12):
    """Flame coverage for the next `horizon` steps if nobody acts.

    Simulates only the bomb/flame machinery (agents hold position and block
    sliding bombs; deaths and the step cap are ignored) so planners can ask
    "when does each cell become lethal" even past an in-simulation death.
    Returns a list of `horizon` frozensets: entry k-1 holds the cells aflame
    after k steps, including chain detonations.
    """
    size = state.size
    nbr = _neighbors(size)
    terrain = state.terrain
    bombs = list(state.bombs)
    flames = list(state.flames)
    agent_cells = {a.pos for a in state.agents if a.alive}
    out = []
    for _ in range(horizon):
        occupied = {b.pos for b in bombs}
        for bi, b in enumerate(bombs):
            life = b.life - 1
            if b.direction is not None:
                nxt = nbr[b.pos][b.direction]
                if (nxt >= 0 and terrain[nxt] == PASSAGE and nxt not in occupied
                        and nxt not in agent_cells):
                    occupied.discard(b.pos)
                    occupied.add(nxt)
                    bombs[bi] = b._replace(pos=nxt, life=life)
                else:
                    bombs[bi] = b._replace(direction=None, life=life)
            else:
                bombs[bi] = b._replace(life=life)
        flame_cells_now = {f.pos for f in flames}
        trigger = [bi for bi, b in enumerate(bombs)
                   if b.life <= 0 or b.pos in flame_cells_now]
        covered = {}
        if trigger:
            exploded = set()
            frontier = trigger
            while frontier:
                nxt_frontier = []
                for bi in frontier:
                    if bi in exploded:
                        continue
                    exploded.add(bi)
                    b = bombs[bi]
                    for cell in _blast_cells(b.pos, b.radius, terrain, nbr):
                        covered.setdefault(cell, set()).add(b.owner)
                for bi, b in enumerate(bombs):
                    if bi not in exploded and b.pos in covered:
                        nxt_frontier.append(bi)
                frontier = nxt_frontier
            bombs = [b for bi, b in enumerate(bombs) if bi not in exploded]
            wood_hit = [cell for cell in covered if terrain[cell] == WOOD]
            if wood_hit:
                grid = bytearray(terrain)
                for cell in wood_hit:
                    grid[cell] = PASSAGE
                terrain = bytes(grid)
        flames = [f._replace(life=f.life - 1) for f in flames
                  if f.life > 1 and f.pos not in covered]
        for cell in sorted(covered):
            flames.append(Flame(cell, FLAME_LIFE, frozenset(covered[cell])))
        out.append(frozenset(f.pos for f in flames))
    return out


def encode_observation(state, agent_id):
    """28-channel float32 feature stack for one agent's view, values in [0,1].

    Layout: 0 rigid, 1 wood, 2 passage, 3-5 revealed power-ups (extra bomb,
    blast radius, kick), 6-9 agent positions (observer first, then opponent,
    two reserved all-zero slots), 10 bomb cells, 11 bomb life / 10, 12 bomb
    radius / size, 13 flame cells, 14 flame life / 2, 15 timestep / max_steps,
    16-27 per-slot ability planes (max ammo / 5, radius / size, can kick) in
    the same slot order.
    """
    if agent_id not in (0, 1):
        raise ContractError(f"agent_id must be 0 or 1, got {agent_id}")
    size = state.size
    out = np.zeros((NUM_CHANNELS, size, size), dtype=np.float32)
    flat = out.reshape(NUM_CHANNELS, size * size)
    terrain = np.frombuffer(state.terrain, dtype=np.uint8)
    flat[0] = terrain == RIGID
    flat[1] = terrain == WOOD
    flat[2] = terrain == PASSAGE
    for pos, kind in state.powerups.items():
        if state.terrain[pos] == PASSAGE:  # hidden ones stay invisible
            flat[3 + kind, pos] = 1.0
    slots = (agent_id, 1 - agent_id)
    for si, aid in enumerate(slots):
        a = state.agents[aid]
        if a.alive:
            flat[6 + si, a.pos] = 1.0
    for b in state.bombs:
        flat[10, b.pos] = 1.0
        flat[11, b.pos] = b.life / BOMB_FUSE
        flat[12, b.pos] = min(b.radius / size, 1.0)
    for f in state.flames:
        flat[13, f.pos] = 1.0
        flat[14, f.pos] = f.life / FLAME_LIFE
    out[15] = state.timestep / state.max_steps
    for si, aid in enumerate(slots):
        a = state.agents[aid]
        if a.alive:
            base = 16 + 3 * si
            out[base] = min(a.max_ammo, AMMO_NORM_CAP) / AMMO_NORM_CAP
            out[base + 1] = min(a.blast_radius / size, 1.0)
            out[base + 2] = 1.0 if a.can_kick else 0.0
    return out


# ---------------------------------------------------------------------------
# text snapshot format (PBOARD v1) and ASCII rendering
# ---------------------------------------------------------------------------

def serialize_board(state):
    """Canonical one-entity-per-line text snapshot (PBOARD v1).

    Entity lines use (row, col) written as ``x y``. Flame ownership and step
    events are live-trajectory metadata and are not part of the format.
    """
    size = state.size
    lines = ["PBOARD v1", f"size {size}", f"maxsteps {state.max_steps}",
             f"seed {state.seed}", "terrain"]
    for r in range(size):
        lines.append("".join(TERRAIN_CHARS[state.terrain[r * size + c]]
                             for c in range(size)))
    for i, a in enumerate(state.agents):
        r, c = (a.pos // size, a.pos % size) if a.pos >= 0 else (-1, -1)
        lines.append(f"agent {i} {r} {c} {a.ammo} {a.max_ammo} "
                     f"{a.blast_radius} {int(a.can_kick)} {int(a.alive)}")
    for b in state.bombs:
        parts = f"bomb {b.pos // size} {b.pos % size} {b.owner} {b.life} {b.radius}"
        if b.direction is not None:
            parts += f" {b.direction}"
        lines.append(parts)
    for f in state.flames:
        lines.append(f"flame {f.pos // size} {f.pos % size} {f.life}")
    for pos in sorted(state.powerups):
        lines.append(f"powerup {pos // size} {pos % size} "
                     f"{POWERUP_NAMES[PowerUp(state.powerups[pos])]}")
    lines.append(f"t {state.timestep}")
    return "\n".join(lines) + "\n"


def parse_board(text):
    """Parse a PBOARD v1 snapshot back into a GameState."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "PBOARD v1":
        raise ConfigError("snapshot must start with 'PBOARD v1'")
    size = None
    max_steps = DEFAULT_MAX_STEPS
    seed = 0
    terrain = None
    agents = [None, None]
    bombs = []
    flames = []
    powerups = {}
    timestep = 0
    i = 1
    while i < len(lines):
        tok = lines[i].split()
        key = tok[0]
        if key == "size":
            size = int(tok[1])
        elif key == "maxsteps":
            max_steps = int(tok[1])
        elif key == "seed":
            seed = int(tok[1])
        elif key == "terrain":
            if size is None:
                raise ConfigError("snapshot: size must precede terrain")
            grid = bytearray(size * size)
            for r in range(size):
                i += 1
                row = lines[i]
                if len(row) != size:
                    raise ConfigError(f"snapshot: terrain row {r} has length "
                                      f"{len(row)}, expected {size}")
                for c, ch in enumerate(row):
                    if ch not in TERRAIN_CHARS:
                        raise ConfigError(f"snapshot: bad terrain char {ch!r}")
                    grid[r * size + c] = TERRAIN_CHARS.index(ch)
            terrain = bytes(grid)
        elif key == "agent":
            aid, r, c, ammo, max_ammo, radius, kick, alive = (int(v) for v in tok[1:9])
            pos = r * size + c if r >= 0 else -1
            agents[aid] = AgentState(pos=pos, alive=bool(alive), ammo=ammo,
                                     max_ammo=max_ammo, blast_radius=radius,
                                     can_kick=bool(kick))
        elif key == "bomb":
            r, c, owner, life, radius = (int(v) for v in tok[1:6])
            direction = int(tok[6]) if len(tok) > 6 else None
            bombs.append(Bomb(pos=r * size + c, owner=owner, life=life,
                              radius=radius, direction=direction, placed_t=0))
        elif key == "flame":
            r, c, life = (int(v) for v in tok[1:4])
            flames.append(Flame(pos=r * size + c, life=life, owners=frozenset()))
        elif key == "powerup":
            r, c = int(tok[1]), int(tok[2])
            kind = POWERUPS_BY_NAME.get(tok[3])
            if kind is None:
                raise ConfigError(f"snapshot: unknown power-up kind {tok[3]!r}")
            powerups[r * size + c] = int(kind)
        elif key == "t":
            timestep = int(tok[1])
        else:
            raise ConfigError(f"snapshot: unknown line {lines[i]!r}")
        i += 1
    if size is None or terrain is None or agents[0] is None or agents[1] is None:
        raise ConfigError("snapshot: missing size, terrain or agent lines")
    bombs = [b._replace(placed_t=timestep - (BOMB_FUSE - b.life)) for b in bombs]
    return GameState(size=size, terrain=terrain, powerups=powerups,
                     bombs=tuple(bombs), flames=tuple(flames),
                     agents=(agents[0], agents[1]), timestep=timestep,
                     max_steps=max_steps, seed=seed)


POWERUP_CHARS = "abk"  # extra bomb / blast radius / kick


def render_board(state):
    """ASCII grid with overlay priority flame > agent > bomb > power-up > terrain."""
    size = state.size
    grid = [TERRAIN_CHARS[state.terrain[pos]] for pos in range(size * size)]
    for pos, kind in state.powerups.items():
        if state.terrain[pos] == PASSAGE:
            grid[pos] = POWERUP_CHARS[kind]
    for b in state.bombs:
        grid[b.pos] = "o"
    for i, a in enumerate(state.agents):
        if a.alive:
            grid[a.pos] = str(i)
    for f in state.flames:
        grid[f.pos] = "*"
    rows = ["".join(grid[r * size:(r + 1) * size]) for r in range(size)]
    return "\n".join(rows)
