"""Adapter that lets the search tree grow children through a generation backend."""

from __future__ import annotations

from dataclasses import dataclass

from factfin.errors import GenerationError
from factfin.generator.backends import Backend, generate
from factfin.generator.templates import template_for
from factfin.market_data.retrieval import StructuredState
from factfin.strategy.ast import StrategyAst


@dataclass
class GeneratorExpander:
    """Modify-mode generation conditioned on a fixed structured state."""

    backend: Backend
    sstate: StructuredState
    regime: str = "mid"

    def __call__(self, ast: StrategyAst, seed: int) -> StrategyAst | None:
        try:
            return generate(template_for("modify", self.regime), self.sstate, self.backend, current=ast,
                            regime=self.regime, seed=seed).ast
        except GenerationError:
            return None
