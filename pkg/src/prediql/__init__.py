"""Adaptive GraphQL fuzzing: introspection, bandit-selected prompting strategies,
trace retrieval, self-correction, coverage tracking and vulnerability detection."""

from prediql.schema import (
    ArgDef,
    FieldDef,
    ObjectDef,
    OperationDef,
    SchemaIR,
    TypeRef,
    build_schema_ir,
    enumerate_nodes,
    run_introspection,
    serialize_schema_yaml,
)

__version__ = "0.1.0"

__all__ = [
    "ArgDef",
    "FieldDef",
    "ObjectDef",
    "OperationDef",
    "SchemaIR",
    "TypeRef",
    "build_schema_ir",
    "enumerate_nodes",
    "run_introspection",
    "serialize_schema_yaml",
]
