"""Handler for the show-config command."""

from rich.panel import Panel
from rich.syntax import Syntax

from ..config import Config
from ..logger import Logger

logger = Logger(console_output=True)

SECTIONS = (
    ("Training Defaults", "training"),
    ("Data Defaults", "data"),
    ("Compare Settings", "compare"),
    ("Rate Settings", "rate"),
)


def show_config(config: Config) -> None:
    """Show the merged configuration, then the raw pfbound.yaml if there is one."""
    content_parts = []

    for title, key in SECTIONS:
        section = config.get(key, {})
        if section:
            content_parts.append(f"[bold cyan]{title}:[/bold cyan]")
            for name, value in section.items():
                content_parts.append(f"  {name}: {value}")
            content_parts.append("")

    grid = config.get_eta0_grid()
    if grid:
        content_parts.append(f"[bold cyan]η₀ grid:[/bold cyan] {', '.join(f'{v:g}' for v in grid)}")
        content_parts.append("")

    recipes = config.get_recipe_names()
    if recipes:
        content_parts.append(f"[bold cyan]Recipes:[/bold cyan] {len(recipes)}")
        for name in recipes:
            recipe = config.get_recipe(name) or {}
            content_parts.append(f"  • {name} ({recipe.get('data', '?')}, λ={recipe.get('lambda', '?')})")

    content = "\n".join(content_parts) if content_parts else "[yellow]No configuration found.[/yellow]"

    config_path = config.config_path
    logger.info(Panel.fit(content, title=f"Configuration ({config_path})"))

    if config_path.exists():
        try:
            yaml_content = config_path.read_text(encoding="utf-8")
            logger.info("\n[bold]Raw YAML:[/bold]")
            logger.info(Syntax(yaml_content, "yaml", theme="monokai", line_numbers=True))
        except OSError as e:
            logger.info(f"[yellow]Could not display raw YAML: {e}[/yellow]")
    else:
        logger.info(f"[dim]{config_path.name} not found; showing built-in defaults[/dim]")
