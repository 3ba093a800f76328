"""gforge: an LLM annotation workbench that iteratively revises
annotation guidelines through moderation."""

__version__ = "0.1.0"
