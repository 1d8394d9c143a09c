"""Workbench for misaligned-feature generalization.

Exact computation of the per-sample discrepancy machinery (active sets,
function differences, dependence terms) on enumerable feature spaces,
the derived generalization-bound quantities and their exhaustive
verifiers, and the family of robust training methods the bound induces
(worst-case augmentation, weighted risk minimization, representation
regularization, and their combination).
"""

__version__ = "0.1.0"
