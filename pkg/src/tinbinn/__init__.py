"""Bit-exact functional model of a binarized-weight CNN inference overlay."""

from .engine import classify, forward
from .fxcore import Accum16Plane, Accum32Plane, PackedDenseRow, PackedKernel3x3, Plane
from .model_io import Model, gen_random_model, read_model, write_model
from .netgraph import NetworkSpec, builtin_network, count_ops, infer_shapes, parse_network, render_network

__version__ = "0.1.0"
