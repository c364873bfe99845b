"""Collection of modules composed by :class:`AMPModel`.

Each submodule owns a single parameter group (backbone weights or the class
subspaces) and knows how to validate and serialize it. The configuration
loader lives here as well.
"""

# Import modules only when needed to avoid circular imports
__all__ = [
    'BackboneModule',
    'SubspaceModule',
    'ConfigLoader',
]
