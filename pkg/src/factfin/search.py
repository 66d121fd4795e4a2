"""Monte Carlo tree search over strategies, coupled with leakage scoring.

Each tree node holds one strategy. An iteration selects a path by UCB
(unvisited children first, in insertion order), expands the selected leaf
once by generating up to ``width`` new strategies, simulates one of them with
a backtest, and backs the reward up the path. The very first iteration
simulates the root itself.

``evolve`` runs the tree for a fixed budget, then takes the top ``frontier``
nodes by mean reward, keeps those whose mean reward beats the root's, scores
each on the counterfactual scenario set and returns the one with the lowest
leakage objective. If nothing beats the root, the root is returned.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from factfin.backtest import CostModel, run
from factfin.counterfactual import ScenarioSet
from factfin.errors import GenerationError, ValidationError
from factfin.leakage import LeakageReport, leakage_report, paired_evaluate, stratified_points
from factfin.market_data.dataset import Dataset
from factfin.rng import derive_seed, make_rng
from factfin.strategy.ast import StrategyAst
from factfin.strategy.mutate import MUTATION_KINDS, MutationSpec, mutate
from factfin.strategy.render import render

log = logging.getLogger(__name__)

REWARDS = ("sharpe",)
RESULT_SCHEMA = "factfin.evolution/1"


def logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def ucb(w: float, n: int, parent_n: int, c: float) -> float:
    """Mean reward plus exploration bonus; ``inf`` for an unvisited node."""
    if n == 0:
        return math.inf
    return w / n + c * math.sqrt(math.log(max(parent_n, 1)) / n)


@dataclass(eq=False)
class SearchNode:
    ast: StrategyAst
    parent: SearchNode | None = None
    depth: int = 0
    serial: int = 0
    children: list[SearchNode] = field(default_factory=list)
    w: float = 0.0
    n: int = 0
    own_w: float = 0.0
    own_n: int = 0
    expanded: bool = False
    terminal: bool = False

    @property
    def id(self) -> str:
        return self.ast.id

    @property
    def mean(self) -> float:
        return self.w / self.n if self.n else 0.0

    def path(self) -> list[SearchNode]:
        out, node = [], self
        while node is not None:
            out.append(node)
            node = node.parent
        return out[::-1]

    def walk(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


@dataclass(frozen=True)
class SearchConfig:
    c: float = 0.5
    max_depth: int = 10
    budget: int = 200
    width: int = 3
    attempts: int = 4  # generator calls per wanted child
    reward: str = "sharpe"
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    eval_points: int = 30
    warmup: int = 30
    frontier: int = 8
    magnitude: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.c < 0:
            raise ValidationError("c must be >= 0")
        if self.max_depth < 1:
            raise ValidationError("max_depth must be >= 1")
        if self.budget < 0:
            raise ValidationError("budget must be >= 0")
        if self.width < 1 or self.attempts < 1 or self.frontier < 1:
            raise ValidationError("width, attempts and frontier must be >= 1")
        if self.reward not in REWARDS:
            raise ValidationError(f"unknown reward {self.reward!r}; choose from {', '.join(REWARDS)}")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValidationError("leakage weights must be >= 0")


class Expander(Protocol):
    def __call__(self, ast: StrategyAst, seed: int) -> StrategyAst | None: ...


@dataclass(frozen=True)
class MutationExpander:
    """Draw a mutation kind per call and apply it with the call's seed."""

    kinds: Sequence[str] = MUTATION_KINDS
    magnitude: float = 0.2

    def __call__(self, ast: StrategyAst, seed: int) -> StrategyAst | None:
        rng = make_rng(seed)
        kind = self.kinds[int(rng.integers(len(self.kinds)))]
        result = mutate(ast, MutationSpec(kind, self.magnitude, derive_seed(seed, 1)))
        return result.ast if result.applied else None


def simulate(ast: StrategyAst, dataset: Dataset, reward: str = "sharpe", cost: CostModel = CostModel()) -> float:
    """Backtest reward: logistic of the Sharpe ratio (0.5 when volatility is degenerate)."""
    if reward not in REWARDS:
        raise ValidationError(f"unknown reward {reward!r}")
    sr = run(ast, dataset, cost).sharpe
    return logistic(0.0 if sr is None else sr)


def backpropagate(leaf: SearchNode, reward: float) -> None:
    leaf.own_w += reward
    leaf.own_n += 1
    node = leaf
    while node is not None:
        node.w += reward
        node.n += 1
        node = node.parent


def expand(node: SearchNode, expander: Expander, width: int, seed: int, seen: set[str],
           max_depth: int, attempts: int = 4, next_serial: int = 1) -> list[SearchNode]:
    """Add up to ``width`` children with unseen content hashes; mark terminal if none appear."""
    node.expanded = True
    if node.depth >= max_depth:
        node.terminal = True
        return []
    made: list[SearchNode] = []
    for k in range(width * attempts):
        if len(made) == width:
            break
        try:
            cand = expander(node.ast, derive_seed(seed, node.serial, k))
        except GenerationError as exc:
            log.debug("expansion attempt %d on %s failed: %s", k, node.id, exc)
            continue
        if cand is None or cand.id in seen:
            continue
        seen.add(cand.id)
        child = SearchNode(cand, node, node.depth + 1, next_serial + len(made))
        made.append(child)
    node.children.extend(made)
    if not made:
        node.terminal = True
    return made


class MCTS:
    """Search tree with injectable reward and expansion; deterministic for a fixed seed."""

    def __init__(self, root: StrategyAst, reward_fn: Callable[[StrategyAst], float], config: SearchConfig,
                 expander: Expander | None = None):
        self.config = config
        self.root = SearchNode(root)
        self.reward_fn = reward_fn
        self.expander = expander or MutationExpander(magnitude=config.magnitude)
        self.seen = {root.id}
        self.rewards: dict[str, float] = {}
        self.serials = 1
        self.trace: list[dict] = []

    def reward(self, ast: StrategyAst) -> float:
        if ast.id not in self.rewards:
            self.rewards[ast.id] = float(self.reward_fn(ast))
        return self.rewards[ast.id]

    def select(self) -> SearchNode:
        node = self.root
        while node.children:
            node = max(node.children, key=lambda ch: ucb(ch.w, ch.n, node.n, self.config.c))
        return node

    def step(self) -> SearchNode:
        if self.root.n == 0:
            leaf = self.root
        else:
            leaf = self.select()
            if leaf.n > 0 and not leaf.expanded:
                kids = expand(leaf, self.expander, self.config.width, self.config.seed, self.seen,
                              self.config.max_depth, self.config.attempts, self.serials)
                self.serials += len(kids)
                if kids:
                    leaf = kids[0]
        r = self.reward(leaf.ast)
        backpropagate(leaf, r)
        self.trace.append({"iteration": len(self.trace), "node": leaf.id, "depth": leaf.depth, "reward": r})
        return leaf

    def run(self, iterations: int) -> None:
        for _ in range(iterations):
            self.step()

    def nodes(self) -> list[SearchNode]:
        return sorted(self.root.walk(), key=lambda nd: nd.serial)


def check_bookkeeping(root: SearchNode) -> bool:
    """Every node's n and w equal the totals of simulations run in its subtree."""
    def visit(node: SearchNode) -> tuple[int, float]:
        n, w = node.own_n, node.own_w
        for ch in node.children:
            cn, cw = visit(ch)
            n, w = n + cn, w + cw
        if node.n != n or not math.isclose(node.w, w, rel_tol=0, abs_tol=1e-9):
            raise AssertionError(f"node {node.id}: n={node.n} w={node.w} but subtree has n={n} w={w}")
        return n, w
    visit(root)
    return True


@dataclass
class EvolutionResult:
    best: StrategyAst
    best_reward: float
    report: LeakageReport | None
    root_reward: float
    trace: list[dict]
    simulations: int
    frontier: list[dict]
    config: SearchConfig

    def to_json(self) -> dict:
        return {
            "schema": RESULT_SCHEMA,
            "best": {"id": self.best.id, "source": render(self.best), "reward": self.best_reward},
            "root_reward": self.root_reward,
            "leakage": self.report.to_json() if self.report else None,
            "frontier": self.frontier,
            "simulations": self.simulations,
            "trace": self.trace,
            "config": asdict(self.config),
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def write_strategy(self, path: str | Path) -> None:
        Path(path).write_text(render(self.best) + "\n", encoding="utf-8")


def _leakage(ast: StrategyAst, scenarios: ScenarioSet | None, config: SearchConfig, label: str) -> LeakageReport | None:
    if scenarios is None or len(scenarios) == 0:
        return None
    pairs = paired_evaluate(ast, scenarios, warmup=config.warmup, k=config.eval_points)
    return leakage_report(pairs, config.alpha, config.beta, config.gamma, strategy_id=ast.id, scenario_set=label)


def evolve(initial: StrategyAst, dataset: Dataset, scenarios: ScenarioSet | None, config: SearchConfig = SearchConfig(),
           expander: Expander | None = None, cost: CostModel = CostModel(), scenario_label: str = "") -> EvolutionResult:
    tree = MCTS(initial, lambda a: simulate(a, dataset, config.reward, cost), config, expander)
    tree.run(config.budget)
    root_reward = tree.reward(initial)
    visited = [nd for nd in tree.nodes() if nd.n > 0]
    ranked = sorted(visited, key=lambda nd: (-nd.mean, nd.serial))[:config.frontier]
    improvers = [nd for nd in ranked if tree.reward(nd.ast) > root_reward]
    frontier = []
    best, best_obj = tree.root, None
    for nd in improvers:
        rep = _leakage(nd.ast, scenarios, config, scenario_label)
        obj = rep.objective if rep else 0.0
        frontier.append({"id": nd.id, "mean_reward": nd.mean, "visits": nd.n, "objective": rep.objective if rep else None})
        if best_obj is None or (obj, nd.id) < best_obj:
            best, best_obj = nd, (obj, nd.id)
    report = _leakage(best.ast, scenarios, config, scenario_label)
    return EvolutionResult(best.ast, tree.reward(best.ast), report, root_reward, tree.trace,
                           sum(nd.own_n for nd in tree.nodes()), frontier, config)
