# lattice/__init__.py
# Thiqa Lattice Package

from lattice.core import (
    Arc,
    Lattice,
    Node,
    align,
    build_lattice,
    parse_lattice,
    serialize_lattice,
    topological_order,
)
from lattice.posterior import PosteriorAnnotatedLattice, forward_backward
from lattice.hwcn import (
    Hwcn,
    HwcnArc,
    build_hwcn,
    enumerate_segmentations,
    label_arcs,
    parse_hwcn,
    serialize_hwcn,
)
from lattice.decoder import DecodeResult, decode_max_mean, map_onebest
from lattice.errors import ThiqaError

__all__ = [
    'Arc',
    'Lattice',
    'Node',
    'align',
    'build_lattice',
    'parse_lattice',
    'serialize_lattice',
    'topological_order',
    'PosteriorAnnotatedLattice',
    'forward_backward',
    'Hwcn',
    'HwcnArc',
    'build_hwcn',
    'enumerate_segmentations',
    'label_arcs',
    'parse_hwcn',
    'serialize_hwcn',
    'DecodeResult',
    'decode_max_mean',
    'map_onebest',
    'ThiqaError'
]
