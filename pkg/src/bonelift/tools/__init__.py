"""Tool modules for the bonelift MCP server."""
