"""Main MCP server entry point for bonelift."""

from dotenv import load_dotenv
from fastmcp import FastMCP

from .cli import configure_logging
from .session import LifterSession
from .tools.datasets import register_dataset_tools
from .tools.inference import register_inference_tools
from .tools.metrics import register_metric_tools

# Environment may come from a .env file next to the working directory
load_dotenv()

# Create FastMCP server
mcp = FastMCP("bonelift")

# Checkpoints load lazily on the first tool call
session = LifterSession()

register_inference_tools(mcp, session)
register_metric_tools(mcp, session)
register_dataset_tools(mcp, session)


def main() -> None:
    """Run the MCP server (stdio by default)."""
    configure_logging(session.settings.log_level)
    mcp.run()


if __name__ == "__main__":
    main()
