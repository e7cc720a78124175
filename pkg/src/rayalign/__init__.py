"""Multi-camera pointmap alignment on synthetic scenes.

Modules: ``geometry`` (SO(3)/SE(3), similarity alignment), ``cameras`` (ray
fields, spherical-harmonic encoding), ``pointmap``, ``losses`` (two-view
objectives as oracles), ``scenegraph`` (pruning), ``align`` (global
optimization), ``simkit`` (ray-cast simulator), ``metrics``, ``io`` and
``cli``.
"""

__version__ = "0.1.0"
