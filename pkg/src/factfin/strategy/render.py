"""Canonical text form of a strategy."""

from __future__ import annotations

from factfin.strategy.ast import And, Compare, Expr, Factor, Not, Num, Or, StrategyAst


def format_number(value: float) -> str:
    if float(value).is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(float(value))


def render_operand(op) -> str:
    if isinstance(op, Num):
        return format_number(op.value)
    if isinstance(op, Factor):
        return op.key
    raise TypeError(f"not an operand: {op!r}")


def render_expr(expr: Expr) -> str:
    if isinstance(expr, Compare):
        return f"{render_operand(expr.left)} {expr.op} {render_operand(expr.right)}"
    if isinstance(expr, Or):
        return " or ".join(render_expr(i) for i in expr.items)
    if isinstance(expr, And):
        return " and ".join(f"({render_expr(i)})" if isinstance(i, Or) else render_expr(i)
                            for i in expr.items)
    if isinstance(expr, Not):
        inner = render_expr(expr.item)
        return f"not ({inner})" if isinstance(expr.item, (And, Or)) else f"not {inner}"
    raise TypeError(f"not an expression: {expr!r}")


def render(ast: StrategyAst) -> str:
    lines = [f"use {feature}" for feature in sorted(ast.features)]
    lines += [f"when {render_expr(r.condition)} then {r.action.value}" for r in ast.rules]
    lines.append(f"else {ast.default.value}")
    return "\n".join(lines)
