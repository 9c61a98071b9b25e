"""Minimal reverse-mode autodiff over flat parameter vectors."""
from .graph import CompGraph, GraphBuilder, Node, Sym
from .tape import MemoryMeter, Tape, evaluate, gradient, hessian_vector_product

__all__ = [
    "CompGraph", "GraphBuilder", "Node", "Sym", "MemoryMeter", "Tape",
    "evaluate", "gradient", "hessian_vector_product",
]
