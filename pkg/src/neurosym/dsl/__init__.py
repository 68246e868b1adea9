"""Typed differentiable DSL over trajectories."""

from .ast import (FRAME, HEAD_KEY, SEQ, Affine, Architecture, FeatureSchema, Hole, IfThenElse,
                  Input, MapAverage, Node, Op, ParameterStore, Select, check_params, init_params,
                  is_complete, path_key, structural_cost)
from .grammar import Grammar, Rule, child_rule, enumerate_children, trajectory_grammar
from .printing import (ProgramSyntaxError, ProgramTypeError, UnknownFeatureError,
                       format_architecture, parse_program, pretty_print)
from .semantics import DEFAULT_ITE_TEMPERATURE, Program, evaluate, make_standins, smooth_ite

__all__ = [
    "FRAME", "HEAD_KEY", "SEQ", "Affine", "Architecture", "FeatureSchema", "Hole", "IfThenElse",
    "Input", "MapAverage", "Node", "Op", "ParameterStore", "Select", "check_params",
    "init_params", "is_complete", "path_key", "structural_cost", "Grammar", "Rule",
    "child_rule", "enumerate_children", "trajectory_grammar", "ProgramSyntaxError",
    "ProgramTypeError", "UnknownFeatureError", "format_architecture", "parse_program",
    "pretty_print", "DEFAULT_ITE_TEMPERATURE", "Program", "evaluate", "make_standins",
    "smooth_ite",
]
