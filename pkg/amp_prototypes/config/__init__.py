"""Embedded configuration data for :mod:`amp_prototypes`.

Defaults ship as Python data rather than files so the package behaves the
same from a wheel, a source checkout or a zipped environment.
"""

from .embedded_defaults import get_default_parameters

__all__ = ['get_default_parameters']
