"""Two LLM-driven gilt market makers negotiating bilaterally, and the statistics of what they do."""

__version__ = "0.1.0"
