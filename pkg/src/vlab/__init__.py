"""Deadline- and budget-constrained parameter-sweep docking on a grid.

Subpackages: ``plan_lang`` (plan files), ``run_gen`` (job expansion),
``cdb`` (molecule databases), ``broker`` (scheduling), ``fabric``
(simulated and local execution) and ``cli``.
"""

__version__ = "0.1.0"
