"""
Reading-Order Restoration - Core modules package.
This package contains the geometry, mask, layout, grouping, re-score,
evaluation, synthesis and pipeline modules.
"""

__version__ = "1.0.0"
