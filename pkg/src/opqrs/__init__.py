"""OPQRS entity extraction from History-of-Present-Illness notes.

Library + CLI for building extraction prompts, driving a chat-completion
backend, parsing delimiter-marked answers, and scoring predictions with
exact and semantic soft-match metrics.
"""

__version__ = "0.1.0"
