"""Repository-aware translation of single functions between Java and C#.

Three agents cooperate: retrieval of already translated examples, tool-driven
gathering of repository context, and an execute-reflect-correct loop that
checks every candidate against the target repository's own tests.
"""

__version__ = "0.1.0"
