"""Strict validation base for every value that crosses a module boundary.

Provides StrictBaseModel - a Pydantic BaseModel configured for numerical code where
a silently coerced or mutated value would corrupt a training trajectory. Classifier
parameters, Bayesian networks, datasets, configs and reports all derive from it.

Key guarantees:
- Immutable after creation (frozen=True)
- No type coercion (strict=True)
- No silent data loss (extra='forbid')
- No NaN/Inf in float fields (allow_inf_nan=False)

numpy arrays are accepted as field types; models holding them copy the array and
clear its ``writeable`` flag during validation (see ``bnmr._internal.arrays``), so the
guarantee extends to array contents.
"""

from pydantic import BaseModel, ConfigDict

__all__ = ["StrictBaseModel"]


class StrictBaseModel(BaseModel):
    """Pydantic base with maximum validation strictness for numerical state.

    Every "update" in this package (a gradient step, an online network refresh,
    a dataset split) returns a new instance instead of mutating one, which is
    what keeps seeded runs bit-reproducible.

    Example:
        >>> from bnmr.strict_base_model import StrictBaseModel

        >>> class Step(StrictBaseModel):
        ...     index: int
        ...     loss: float

        >>> Step(index="3", loss=0.1)  # ValidationError: no str -> int coercion
        >>> Step(index=3, loss=float("nan"))  # ValidationError: NaN rejected
        >>> Step(index=3, loss=0.1).loss = 0.2  # ValidationError: frozen

    Text boundaries (config files) opt out of strictness explicitly with
    ``Model.model_validate(data, strict=False)``.

    """

    model_config = ConfigDict(
        # Immutability
        frozen=True,
        # Type strictness: "16" won't become 16 outside explicit text boundaries
        strict=True,
        # Schema enforcement: unknown config keys and typos fail immediately
        extra="forbid",
        # Frozen instances are trusted once validated
        revalidate_instances="never",
        # A NaN loss or learning rate is a bug, never a value
        allow_inf_nan=False,
        validate_default=True,
        # numpy arrays, numpy generators
        arbitrary_types_allowed=True,
        use_enum_values=False,
        populate_by_name=False,
        str_strip_whitespace=False,
    )
