"""Strategy generation from market state: templates, backends and the model gateway."""

from factfin.generator.backends import (
    Backend, GenerationResult, GeneratorRequest, GeneratorResponse, TemplateBackend, extract_block, generate,
)
from factfin.generator.gateway import (
    GatewayBackend, GatewayConfig, GatewayContractError, GatewayError, GatewayStatusError, GatewayTimeout,
    GatewayUnreachable, ReplayBackend,
)
from factfin.generator.templates import (
    PLACEHOLDERS, REGISTRY, PromptTemplate, render_prompt, template_for, volatility_regime,
)
from factfin.generator.expander import GeneratorExpander

__all__ = [
    "Backend", "GenerationResult", "GeneratorRequest", "GeneratorResponse", "TemplateBackend", "extract_block",
    "generate", "GatewayBackend", "GatewayConfig", "GatewayContractError", "GatewayError", "GatewayStatusError",
    "GatewayTimeout", "GatewayUnreachable", "ReplayBackend", "PLACEHOLDERS", "REGISTRY", "PromptTemplate",
    "render_prompt", "template_for", "volatility_regime", "GeneratorExpander",
]
