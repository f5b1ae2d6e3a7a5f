"""Liouvillian exceptional points of a qubit coupled to a decaying pseudomode.

Modules: ``model`` (operators, closed-form spectrum), ``eigen`` (dense
eigensolver and EP diagnostics), ``dynamics`` (evolution, amplitudes, fits),
``topology`` (loops, tracking, windings, resultants), ``cli``.
"""

__version__ = "0.1.0"
