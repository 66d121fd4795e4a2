from factfin.strategy.ast import (
    ACTIONS, R_MAX, Action, And, Compare, Factor, Not, Num, Or, Rule, StrategyAst,
)
from factfin.strategy.evaluate import ActionDistribution, Evaluation, evaluate
from factfin.strategy.mutate import MUTATION_KINDS, MutationResult, MutationSpec, mutate
from factfin.strategy.parser import parse
from factfin.strategy.render import render

__all__ = [
    "ACTIONS", "R_MAX", "Action", "And", "Compare", "Factor", "Not", "Num", "Or", "Rule",
    "StrategyAst", "ActionDistribution", "Evaluation", "evaluate", "MUTATION_KINDS",
    "MutationResult", "MutationSpec", "mutate", "parse", "render",
]
